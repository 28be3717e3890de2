#include "genepanel/metrics.hpp"

#include "genepanel/kernels.hpp"
#include "genepanel/parallel.hpp"

#include <cmath>
#include <limits>

namespace genepanel {

ContingencyTable contingency(const ClusterAssignment& a, const ClusterAssignment& b) {
    if (a.labels.size() != b.labels.size())
        throw DataError("partitions cover different item counts");
    if (a.labels.empty()) throw DataError("contingency of empty partitions");

    std::uint32_t ra = 0, rb = 0;
    for (const auto l : a.labels) ra = std::max(ra, l + 1);
    for (const auto l : b.labels) rb = std::max(rb, l + 1);

    ContingencyTable t;
    t.rows = ra;
    t.cols = rb;
    t.n = a.labels.size();
    t.counts.assign(static_cast<std::size_t>(ra) * rb, 0);
    t.row_sums.assign(ra, 0);
    t.col_sums.assign(rb, 0);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        ++t.counts[static_cast<std::size_t>(a.labels[i]) * rb + b.labels[i]];
        ++t.row_sums[a.labels[i]];
        ++t.col_sums[b.labels[i]];
    }
    return t;
}

namespace {

double entropy(const std::vector<std::uint64_t>& sums, double n) {
    double h = 0.0;
    for (const auto s : sums) {
        if (s == 0) continue;
        const double p = static_cast<double>(s) / n;
        h -= p * std::log(p);
    }
    return h;
}

// True when the contingency table is a (partial) permutation matrix: each
// cluster of a maps onto exactly one cluster of b and vice versa.
bool identical_partition(const ContingencyTable& t) {
    for (std::size_t i = 0; i < t.rows; ++i) {
        std::size_t nonzero = 0;
        for (std::size_t j = 0; j < t.cols; ++j)
            if (t.at(i, j) != 0) ++nonzero;
        if (nonzero > 1) return false;
    }
    for (std::size_t j = 0; j < t.cols; ++j) {
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < t.rows; ++i)
            if (t.at(i, j) != 0) ++nonzero;
        if (nonzero > 1) return false;
    }
    return true;
}

}  // namespace

double nmi(const ClusterAssignment& a, const ClusterAssignment& b) {
    const ContingencyTable t = contingency(a, b);
    const double n = static_cast<double>(t.n);
    const double ha = entropy(t.row_sums, n);
    const double hb = entropy(t.col_sums, n);

    const bool a_const = ha == 0.0;
    const bool b_const = hb == 0.0;
    if (a_const && b_const) return 1.0;  // both single-cluster: identical
    if (a_const || b_const) return 0.0;  // exactly one side carries no information

    // Partitions equal up to relabeling share all information; return exactly
    // 1 rather than a log-rounded value.
    if (identical_partition(t)) return 1.0;

    double mi = 0.0;
    for (std::size_t i = 0; i < t.rows; ++i) {
        for (std::size_t j = 0; j < t.cols; ++j) {
            const std::uint64_t c = t.at(i, j);
            if (c == 0) continue;
            const double pij = static_cast<double>(c) / n;
            const double pi = static_cast<double>(t.row_sums[i]) / n;
            const double pj = static_cast<double>(t.col_sums[j]) / n;
            mi += pij * std::log(pij / (pi * pj));
        }
    }
    return 2.0 * mi / (ha + hb);
}

double ari(const ClusterAssignment& a, const ClusterAssignment& b) {
    const ContingencyTable t = contingency(a, b);
    const auto comb2 = [](std::uint64_t x) -> double {
        return 0.5 * static_cast<double>(x) * static_cast<double>(x > 0 ? x - 1 : 0);
    };

    double sum_cells = 0.0;
    for (const auto c : t.counts) sum_cells += comb2(c);
    double sum_a = 0.0, sum_b = 0.0;
    for (const auto s : t.row_sums) sum_a += comb2(s);
    for (const auto s : t.col_sums) sum_b += comb2(s);

    const double pairs = comb2(t.n);
    const double expected = pairs > 0.0 ? sum_a * sum_b / pairs : 0.0;
    const double maximum = 0.5 * (sum_a + sum_b);
    const double denom = maximum - expected;
    if (denom == 0.0) return 1.0;  // both partitions trivial and identical
    return (sum_cells - expected) / denom;
}

double silhouette(const ExpressionMatrix& m, const ClusterAssignment& labels, int n_threads) {
    if (labels.size() != m.n_cells) throw DataError("label count does not match cell count");
    if (m.n_cells < 3) throw DataError("silhouette requires at least 3 cells");

    std::uint32_t n_clusters = 0;
    for (const auto l : labels.labels) n_clusters = std::max(n_clusters, l + 1);
    if (n_clusters < 2) throw DataError("silhouette undefined for a single cluster");

    std::vector<std::uint64_t> cluster_size(n_clusters, 0);
    for (const auto l : labels.labels) ++cluster_size[l];

    const std::size_t n = m.n_cells;
    const std::size_t d = m.n_genes;
    const std::vector<double> dense = to_dense_rows(m);

    std::vector<double> scores(n, 0.0);
    parallel_for(0, n, n_threads, [&](std::size_t i) {
        const std::uint32_t ci = labels.labels[i];
        if (cluster_size[ci] <= 1) {
            scores[i] = 0.0;  // singleton convention
            return;
        }
        std::vector<double> dist_sum(n_clusters, 0.0);
        const double* ri = dense.data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dist_sum[labels.labels[j]] +=
                std::sqrt(kernels::squared_distance(ri, dense.data() + j * d, d));
        }
        const double a = dist_sum[ci] / static_cast<double>(cluster_size[ci] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < n_clusters; ++c) {
            if (c == ci || cluster_size[c] == 0) continue;
            b = std::min(b, dist_sum[c] / static_cast<double>(cluster_size[c]));
        }
        const double denom = std::max(a, b);
        scores[i] = denom > 0.0 ? (b - a) / denom : 0.0;
    });

    double total = 0.0;
    for (const auto s : scores) total += s;
    return total / static_cast<double>(n);
}

}  // namespace genepanel
