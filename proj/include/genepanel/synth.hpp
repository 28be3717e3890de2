#pragma once

#include "genepanel/clustering.hpp"
#include "genepanel/expression_matrix.hpp"

#include <cstdint>

// Planted-structure synthetic expression data for calibration and testing.

namespace genepanel {

struct SynthConfig {
    std::size_t n_cells = 300;
    std::size_t n_genes = 200;
    std::size_t n_informative = 30;
    std::uint32_t n_clusters = 4;
    double effect_size = 2.0;    // scale of cluster-specific log-mean offsets
    double dropout_rate = 0.0;   // per-entry zeroing probability, [0, 1)
    double noise_scale = 0.5;    // per-entry log-space noise std
    std::uint64_t seed = 0;
};

struct SynthResult {
    ExpressionMatrix matrix;      // raw positive expression values
    ClusterAssignment true_labels;
    GeneMask informative;
};

/// Generates a cells x genes matrix with n_clusters planted groups
/// (round-robin cell assignment).  Every gene is log-normal with a seeded
/// base log-mean; informative genes additionally receive a cluster-specific
/// log-mean offset drawn from the seed and scaled by effect_size, so
/// effect_size 0 makes informative genes indistinguishable from noise genes.
/// Output is bitwise-deterministic in the config.
SynthResult generate_planted(const SynthConfig& cfg);

}  // namespace genepanel
