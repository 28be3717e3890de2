#include "genepanel/synth.hpp"

#include "genepanel/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace genepanel;

namespace {

SynthConfig tiny() {
    SynthConfig cfg;
    cfg.n_cells = 60;
    cfg.n_genes = 24;
    cfg.n_informative = 6;
    cfg.n_clusters = 3;
    cfg.seed = 11;
    return cfg;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_stat(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        const double fa = static_cast<double>(i) / a.size();
        const double fb = static_cast<double>(j) / b.size();
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

std::vector<double> gene_column(const ExpressionMatrix& m, std::size_t gene) {
    const auto cols = to_dense_columns(m);
    return {cols.begin() + gene * m.n_cells, cols.begin() + (gene + 1) * m.n_cells};
}

}  // namespace

TEST_CASE("generation is bitwise deterministic") {
    SynthResult a = generate_planted(tiny());
    SynthResult b = generate_planted(tiny());
    CHECK(a.matrix.values == b.matrix.values);
    CHECK(a.matrix.col_idx == b.matrix.col_idx);
    CHECK(a.matrix.row_ptr == b.matrix.row_ptr);
    CHECK(a.true_labels.labels == b.true_labels.labels);
    CHECK(a.informative.bits == b.informative.bits);

    SynthConfig other = tiny();
    other.seed = 12;
    SynthResult c = generate_planted(other);
    CHECK(a.matrix.values != c.matrix.values);
}

TEST_CASE("output shapes and labels follow the config") {
    SynthConfig cfg = tiny();
    SynthResult r = generate_planted(cfg);
    CHECK(r.matrix.n_cells == cfg.n_cells);
    CHECK(r.matrix.n_genes == cfg.n_genes);
    CHECK(r.true_labels.labels.size() == cfg.n_cells);
    CHECK(r.true_labels.n_clusters == cfg.n_clusters);
    CHECK(r.informative.size() == cfg.n_genes);
    CHECK(r.informative.count() == cfg.n_informative);

    // round-robin assignment: cell i belongs to cluster i mod k
    for (std::size_t i = 0; i < cfg.n_cells; ++i)
        CHECK(r.true_labels.labels[i] == static_cast<std::uint32_t>(i % cfg.n_clusters));

    for (double v : r.matrix.values) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
    }
}

TEST_CASE("dropout controls sparsity") {
    SynthConfig cfg = tiny();
    SynthResult dense = generate_planted(cfg);
    CHECK(dense.matrix.nnz() == cfg.n_cells * cfg.n_genes);

    cfg.dropout_rate = 0.99;
    SynthResult sparse = generate_planted(cfg);
    CHECK(sparse.matrix.sparsity() >= 0.95);
}

TEST_CASE("effect size zero removes the planted signal") {
    SynthConfig cfg;
    cfg.n_cells = 1000;
    cfg.n_genes = 10;
    cfg.n_informative = 5;
    cfg.n_clusters = 2;
    cfg.seed = 3;

    // split one informative gene's values by true cluster and compare laws
    auto cluster_split_ks = [&](double effect) {
        SynthConfig c = cfg;
        c.effect_size = effect;
        SynthResult r = generate_planted(c);
        const std::size_t gene = r.informative.indices()[0];
        const auto col = gene_column(r.matrix, gene);
        std::vector<double> lo, hi;
        for (std::size_t i = 0; i < c.n_cells; ++i)
            (r.true_labels.labels[i] == 0 ? lo : hi).push_back(std::log(col[i]));
        return ks_stat(std::move(lo), std::move(hi));
    };

    CHECK(cluster_split_ks(0.0) < 0.15);   // identical laws up to sampling noise
    CHECK(cluster_split_ks(2.0) > 0.5);    // planted shift dominates
}

TEST_CASE("larger effect sizes separate the planted clusters more") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig weak = tiny();
        weak.seed = seed;
        weak.effect_size = 0.1;
        SynthConfig strong = weak;
        strong.effect_size = 2.0;

        auto score = [](const SynthResult& r) {
            ExpressionMatrix sub = subset_genes(normalize(r.matrix), r.informative);
            return silhouette(sub, r.true_labels);
        };
        CHECK(score(generate_planted(strong)) > score(generate_planted(weak)));
    }
}

TEST_CASE("invalid configs are rejected") {
    SynthConfig cfg = tiny();
    cfg.n_informative = cfg.n_genes + 1;
    CHECK_THROWS_AS(generate_planted(cfg), DataError);

    cfg = tiny();
    cfg.n_clusters = static_cast<std::uint32_t>(cfg.n_cells + 1);
    CHECK_THROWS_AS(generate_planted(cfg), DataError);

    cfg = tiny();
    cfg.n_clusters = 1;
    CHECK_THROWS_AS(generate_planted(cfg), DataError);

    cfg = tiny();
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(generate_planted(cfg), DataError);

    cfg = tiny();
    cfg.noise_scale = -0.1;
    CHECK_THROWS_AS(generate_planted(cfg), DataError);
}
