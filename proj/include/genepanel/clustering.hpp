#pragma once

#include "genepanel/expression_matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

// Graph-based clustering of cells: kNN graph construction, shared-nearest-
// neighbour reweighting and Louvain community detection.  The composition of
// the three stages provides the pseudo-labels used as the clustering
// reference throughout the pipeline.

namespace genepanel {

struct ClusterAssignment {
    std::vector<std::uint32_t> labels;  // one per cell, compact 0..n_clusters-1
    std::uint32_t n_clusters = 0;

    std::size_t size() const { return labels.size(); }
};

/// Loads one integer label per line; count must equal expected_n when nonzero.
/// Labels are compacted to 0..K-1 by first appearance.
ClusterAssignment load_labels(const std::filesystem::path& path, std::size_t expected_n = 0);

void save_labels(const ClusterAssignment& c, const std::filesystem::path& path);

/// Undirected weighted graph without self-loops.  Neighbour lists are sorted
/// by index and mirror each other exactly.
struct NeighborGraph {
    struct Edge {
        std::uint32_t to;
        double weight;
    };
    std::size_t n_nodes = 0;
    std::vector<std::vector<Edge>> adj;

    std::size_t n_edges() const;
    double total_weight() const;  // sum over undirected edges
};

enum class DistanceMetric { euclidean, cosine };

/// k-nearest-neighbour graph over cells, symmetrized by union, edge weight 1.
/// Distance ties break toward the lower cell index.  k >= n_cells-1 yields
/// the complete graph.  k must be >= 1 and n_cells >= 2.
NeighborGraph knn_graph(const ExpressionMatrix& m, std::size_t k,
                        DistanceMetric metric = DistanceMetric::euclidean, int n_threads = 1);

/// Rebuilds edge weights as the Jaccard overlap of closed neighbourhoods
/// (node plus its neighbours in g).  Pairs with overlap below min_weight are
/// dropped; pairs above it gain an edge even if not adjacent in g.
NeighborGraph snn_weights(const NeighborGraph& g, double min_weight = 1.0 / 15.0);

/// Weighted modularity of a partition:
///   Q = (1/2m) * sum_uv [A_uv - d_u*d_v/(2m)] * [c_u == c_v].
/// Zero total weight raises DataError.
double modularity(const NeighborGraph& g, const ClusterAssignment& c);

struct LouvainStats {
    std::vector<double> pass_modularity;  // after each local-move pass, non-decreasing
};

/// Louvain community detection: seeded-shuffle local moving followed by graph
/// aggregation, repeated until no move improves modularity.  Gain ties move
/// to the lowest community id.  Labels are compacted by first appearance.
ClusterAssignment louvain(const NeighborGraph& g, double resolution = 1.0,
                          std::uint64_t seed = 0, LouvainStats* stats = nullptr);

struct ClusterParams {
    std::size_t k_neighbors = 15;
    DistanceMetric metric = DistanceMetric::euclidean;
    double snn_min_weight = 1.0 / 15.0;
    double resolution = 1.0;
    std::uint64_t seed = 0;
    int n_threads = 1;
};

/// knn -> snn -> louvain over the cells of m.
ClusterAssignment pseudo_labels(const ExpressionMatrix& m, const ClusterParams& params);

}  // namespace genepanel
