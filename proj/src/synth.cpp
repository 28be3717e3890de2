#include "genepanel/synth.hpp"

#include "genepanel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace genepanel {

namespace {

// Stream tags; each (tag, index...) pair owns an independent substream so the
// draw order never depends on loop structure elsewhere.
constexpr std::uint64_t kTagPick = 0x5049434bULL;    // informative gene choice
constexpr std::uint64_t kTagBase = 0x42415345ULL;    // per-gene base log-mean
constexpr std::uint64_t kTagOffset = 0x4f464653ULL;  // per (cluster, gene) offset
constexpr std::uint64_t kTagCell = 0x43454c4cULL;    // per-cell noise stream
constexpr std::uint64_t kTagDrop = 0x44524f50ULL;    // per-cell dropout stream

}  // namespace

SynthResult generate_planted(const SynthConfig& cfg) {
    if (cfg.n_cells < 2) throw DataError("planted data needs at least 2 cells");
    if (cfg.n_genes < 1) throw DataError("planted data needs at least 1 gene");
    if (cfg.n_informative > cfg.n_genes)
        throw DataError("n_informative exceeds n_genes");
    if (cfg.n_clusters < 2) throw DataError("planted data needs at least 2 clusters");
    if (cfg.n_clusters > cfg.n_cells) throw DataError("more clusters than cells");
    if (cfg.effect_size < 0.0) throw DataError("effect_size must be non-negative");
    if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
        throw DataError("dropout_rate must lie in [0, 1)");
    if (cfg.noise_scale < 0.0) throw DataError("noise_scale must be non-negative");

    SynthResult out;

    out.true_labels.labels.resize(cfg.n_cells);
    for (std::size_t i = 0; i < cfg.n_cells; ++i)
        out.true_labels.labels[i] = static_cast<std::uint32_t>(i % cfg.n_clusters);
    out.true_labels.n_clusters = cfg.n_clusters;

    // Informative genes are a seeded scattered subset.
    std::vector<std::size_t> perm(cfg.n_genes);
    std::iota(perm.begin(), perm.end(), 0);
    {
        Rng rng(derive_seed(cfg.seed, kTagPick));
        rng.shuffle(perm);
    }
    std::vector<std::size_t> informative(perm.begin(), perm.begin() + cfg.n_informative);
    std::sort(informative.begin(), informative.end());
    out.informative = GeneMask::from_indices(cfg.n_genes, informative);

    std::vector<double> base(cfg.n_genes);
    for (std::size_t g = 0; g < cfg.n_genes; ++g) {
        Rng rng(derive_seed(cfg.seed, kTagBase, g));
        base[g] = rng.next_double(1.0, 3.0);
    }

    // Each informative gene shifts its log-mean by exactly +/- effect_size per
    // cluster, with signs forming a balanced split (half the clusters up, half
    // down, shuffled per gene). Equal magnitudes and balanced splits keep
    // genes interchangeable and spread separation evenly over cluster pairs,
    // so the number of genes needed to recover the planted partition is a
    // sharp threshold rather than a property of whichever genes or cluster
    // pairs drew large offsets.
    std::vector<double> offset(static_cast<std::size_t>(cfg.n_clusters) * cfg.n_genes, 0.0);
    for (const std::size_t g : informative) {
        Rng rng(derive_seed(cfg.seed, kTagOffset, g));
        std::vector<double> pattern(cfg.n_clusters, 1.0);
        std::size_t n_down = cfg.n_clusters / 2;
        if (cfg.n_clusters % 2 != 0 && rng.next_double() < 0.5) ++n_down;
        std::fill_n(pattern.begin(), n_down, -1.0);
        rng.shuffle(pattern);
        for (std::uint32_t c = 0; c < cfg.n_clusters; ++c)
            offset[static_cast<std::size_t>(c) * cfg.n_genes + g] =
                cfg.effect_size * pattern[c];
    }

    std::vector<double> dense(cfg.n_cells * cfg.n_genes);
    for (std::size_t i = 0; i < cfg.n_cells; ++i) {
        Rng noise(derive_seed(cfg.seed, kTagCell, i));
        Rng drop(derive_seed(cfg.seed, kTagDrop, i));
        const std::uint32_t c = out.true_labels.labels[i];
        const double* off_row = offset.data() + static_cast<std::size_t>(c) * cfg.n_genes;
        double* row = dense.data() + i * cfg.n_genes;
        for (std::size_t g = 0; g < cfg.n_genes; ++g) {
            const double logval = base[g] + off_row[g] + cfg.noise_scale * noise.next_normal();
            double v = std::exp(logval);
            if (cfg.dropout_rate > 0.0 && drop.next_double() < cfg.dropout_rate) v = 0.0;
            row[g] = v;
        }
    }

    std::vector<std::string> gene_ids(cfg.n_genes), cell_ids(cfg.n_cells);
    for (std::size_t g = 0; g < cfg.n_genes; ++g) gene_ids[g] = "g" + std::to_string(g);
    for (std::size_t i = 0; i < cfg.n_cells; ++i) cell_ids[i] = "c" + std::to_string(i);
    out.matrix = matrix_from_dense(cfg.n_cells, cfg.n_genes, dense, std::move(gene_ids),
                                   std::move(cell_ids));
    return out;
}

}  // namespace genepanel
