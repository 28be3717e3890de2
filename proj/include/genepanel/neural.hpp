#pragma once

#include "genepanel/expression_matrix.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Minimal dense networks: fully-connected layers with ReLU hidden
// activations, identity or softmax output, Adam optimization.  Everything is
// written against the vector kernels so the same code path serves the
// autoencoder state encoder and the per-gene actor/critic heads.

namespace genepanel::nn {

enum class OutputActivation { identity, softmax, relu };

struct DenseNet {
    struct Layer {
        std::size_t in = 0, out = 0;
        std::vector<double> w;  // out x in, row-major
        std::vector<double> b;  // out
    };

    std::vector<std::size_t> dims;  // e.g. {64, 8, 2}
    OutputActivation out_act = OutputActivation::identity;
    std::vector<Layer> layers;

    std::size_t input_dim() const { return dims.front(); }
    std::size_t output_dim() const { return dims.back(); }
    std::size_t parameter_count() const;
};

/// Builds a network with uniform init scaled by 1/sqrt(fan_in): weights drawn
/// from U(-1,1)/sqrt(fan_in), biases zero.  dims needs at least two entries.
DenseNet make_net(std::vector<std::size_t> dims, OutputActivation out_act, std::uint64_t seed);

/// Post-activation values per layer; acts[0] is the input copy.
struct ForwardCache {
    std::vector<std::vector<double>> acts;
};

/// Runs the network on one input vector.  The cache, when supplied, holds
/// what backward() needs.
std::vector<double> forward(const DenseNet& net, std::span<const double> x,
                            ForwardCache* cache = nullptr);

struct Gradients {
    std::vector<DenseNet::Layer> layers;  // same shapes, gradient values

    void zero();
};

Gradients make_gradients(const DenseNet& net);

/// Backpropagates out_grad (gradient of a scalar loss w.r.t. the network
/// output, post-softmax when applicable) through the cached forward pass.
/// Parameter gradients accumulate into grads; the return value is the
/// gradient w.r.t. the network input, for chaining through composed nets.
std::vector<double> backward(const DenseNet& net, const ForwardCache& cache,
                             std::span<const double> out_grad, Gradients& grads);

struct AdamState {
    double lr = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<DenseNet::Layer> m;  // first moments, same shapes
    std::vector<DenseNet::Layer> v;  // second moments
};

AdamState make_adam(const DenseNet& net, double lr = 0.005);

/// One Adam step over every parameter of the net.  Non-finite gradients raise
/// DataError("numeric blowup...") and leave parameters untouched.
void adam_step(DenseNet& net, AdamState& state, const Gradients& grads);

/// Compares analytic gradients against central finite differences of an
/// internal seeded linear probe loss sum_i c_i * out_i.  Returns the largest
/// relative error over the checked parameters.  When max_params > 0 and the
/// net has more parameters than that, a seeded subsample is checked.
double finite_diff_check(const DenseNet& net, std::span<const double> x, double h,
                         std::uint64_t probe_seed = 17, std::size_t max_params = 0);

inline constexpr std::size_t kStateDim = 64;

struct Autoencoder {
    DenseNet encoder;  // 7 -> 256 -> 128 -> 64
    DenseNet decoder;  // 64 -> 128 -> 256 -> 7
};

/// Trains a fresh seeded autoencoder on the per-gene statistics rows
/// (standardized per column) with full-batch Adam for the given epochs.
/// epoch_loss, when supplied, receives the mean reconstruction MSE after
/// each epoch.
Autoencoder train_autoencoder(const GeneStatsBlock& stats, int epochs, std::uint64_t seed,
                              std::vector<double>* epoch_loss = nullptr);

/// State representation of a gene selection: trains an autoencoder on the
/// descriptive statistics of the selected-gene submatrix and averages the
/// encoder outputs over genes.  An empty selection (n_genes == 0) returns the
/// zero vector, which doubles as the terminal-state marker.
std::vector<double> encode_state(const ExpressionMatrix& m_selected, std::uint64_t seed,
                                 int ae_epochs = 10);

/// True when every entry is exactly zero (the terminal-state marker).
bool is_zero_state(std::span<const double> s);

}  // namespace genepanel::nn
