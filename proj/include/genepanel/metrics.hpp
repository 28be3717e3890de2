#pragma once

#include "genepanel/clustering.hpp"
#include "genepanel/expression_matrix.hpp"

#include <cstdint>
#include <vector>

// Clustering agreement and cohesion metrics.

namespace genepanel {

struct ContingencyTable {
    std::size_t rows = 0;  // clusters of a
    std::size_t cols = 0;  // clusters of b
    std::vector<std::uint64_t> counts;  // rows x cols, row-major
    std::vector<std::uint64_t> row_sums;
    std::vector<std::uint64_t> col_sums;
    std::uint64_t n = 0;

    std::uint64_t at(std::size_t i, std::size_t j) const { return counts[i * cols + j]; }
};

/// Joint label-count table of two partitions of the same items.
ContingencyTable contingency(const ClusterAssignment& a, const ClusterAssignment& b);

/// Normalized mutual information with arithmetic-mean normalization,
/// 2*I(a;b) / (H(a)+H(b)), natural logarithms.  Conventions: identical
/// partitions (including both single-cluster) give 1; if exactly one side is
/// a single cluster the score is 0.
double nmi(const ClusterAssignment& a, const ClusterAssignment& b);

/// Adjusted Rand index (pair-counting, unclamped).  When the maximum index
/// equals the expected index (both partitions trivial and identical) the
/// score is 1.
double ari(const ClusterAssignment& a, const ClusterAssignment& b);

/// Mean silhouette coefficient over all cells, euclidean distance on the
/// dense rows of m.  Cells in singleton clusters contribute 0.  Requires at
/// least 2 clusters and at least 3 cells.
double silhouette(const ExpressionMatrix& m, const ClusterAssignment& labels, int n_threads = 1);

}  // namespace genepanel
