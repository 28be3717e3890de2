#include "genepanel/neural.hpp"

#include "genepanel/kernels.hpp"
#include "genepanel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace genepanel::nn {

std::size_t DenseNet::parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.w.size() + l.b.size();
    return total;
}

DenseNet make_net(std::vector<std::size_t> dims, OutputActivation out_act, std::uint64_t seed) {
    if (dims.size() < 2) throw DataError("network needs at least input and output dims");
    DenseNet net;
    net.dims = std::move(dims);
    net.out_act = out_act;
    net.layers.resize(net.dims.size() - 1);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        layer.in = net.dims[l];
        layer.out = net.dims[l + 1];
        layer.w.resize(layer.out * layer.in);
        layer.b.assign(layer.out, 0.0);
        Rng rng(derive_seed(seed, 0x4e455457ULL, l));
        const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (auto& w : layer.w) w = rng.next_double(-1.0, 1.0) * scale;
    }
    return net;
}

namespace {

void apply_softmax(std::vector<double>& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (auto& v : z) {
        v = std::exp(v - zmax);
        total += v;
    }
    for (auto& v : z) v /= total;
}

}  // namespace

std::vector<double> forward(const DenseNet& net, std::span<const double> x, ForwardCache* cache) {
    if (x.size() != net.input_dim()) throw DataError("input size does not match network");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.acts.resize(net.layers.size() + 1);
    c.acts[0].assign(x.begin(), x.end());

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        const auto& in = c.acts[l];
        auto& out = c.acts[l + 1];
        out.resize(layer.out);
        for (std::size_t r = 0; r < layer.out; ++r)
            out[r] = layer.b[r] + kernels::dot(layer.w.data() + r * layer.in, in.data(), layer.in);

        const bool last = l + 1 == net.layers.size();
        if (!last || net.out_act == OutputActivation::relu) {
            for (auto& v : out) v = v > 0.0 ? v : 0.0;
        } else if (net.out_act == OutputActivation::softmax) {
            apply_softmax(out);
        }
    }
    return c.acts.back();
}

void Gradients::zero() {
    for (auto& l : layers) {
        std::fill(l.w.begin(), l.w.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
}

Gradients make_gradients(const DenseNet& net) {
    Gradients g;
    g.layers.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        g.layers[l].in = net.layers[l].in;
        g.layers[l].out = net.layers[l].out;
        g.layers[l].w.assign(net.layers[l].w.size(), 0.0);
        g.layers[l].b.assign(net.layers[l].b.size(), 0.0);
    }
    return g;
}

std::vector<double> backward(const DenseNet& net, const ForwardCache& cache,
                             std::span<const double> out_grad, Gradients& grads) {
    if (cache.acts.size() != net.layers.size() + 1)
        throw DataError("forward cache does not match network depth");
    if (out_grad.size() != net.output_dim())
        throw DataError("output gradient size does not match network");

    std::vector<double> delta(out_grad.begin(), out_grad.end());

    // Output activation.
    const auto& y = cache.acts.back();
    if (net.out_act == OutputActivation::softmax) {
        // dL/dz_i = p_i * (g_i - sum_j g_j p_j)
        const double mix = kernels::dot(delta.data(), y.data(), y.size());
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = y[i] * (delta[i] - mix);
    } else if (net.out_act == OutputActivation::relu) {
        for (std::size_t i = 0; i < delta.size(); ++i)
            if (y[i] <= 0.0) delta[i] = 0.0;
    }

    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const auto& layer = net.layers[l];
        auto& g = grads.layers[l];
        const auto& in = cache.acts[l];

        for (std::size_t r = 0; r < layer.out; ++r) {
            const double d = delta[r];
            if (d != 0.0) kernels::axpy(d, in.data(), g.w.data() + r * layer.in, layer.in);
            g.b[r] += d;
        }

        if (l == 0) {
            std::vector<double> dx(layer.in, 0.0);
            for (std::size_t r = 0; r < layer.out; ++r)
                if (delta[r] != 0.0)
                    kernels::axpy(delta[r], layer.w.data() + r * layer.in, dx.data(), layer.in);
            return dx;
        }

        std::vector<double> prev(layer.in, 0.0);
        for (std::size_t r = 0; r < layer.out; ++r)
            if (delta[r] != 0.0)
                kernels::axpy(delta[r], layer.w.data() + r * layer.in, prev.data(), layer.in);
        // Hidden layers are ReLU; a zero activation means a zero subgradient.
        const auto& act = cache.acts[l];
        for (std::size_t i = 0; i < prev.size(); ++i)
            if (act[i] <= 0.0) prev[i] = 0.0;
        delta = std::move(prev);
    }
    return {};
}

AdamState make_adam(const DenseNet& net, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.resize(net.layers.size());
    s.v.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        s.m[l].in = s.v[l].in = net.layers[l].in;
        s.m[l].out = s.v[l].out = net.layers[l].out;
        s.m[l].w.assign(net.layers[l].w.size(), 0.0);
        s.m[l].b.assign(net.layers[l].b.size(), 0.0);
        s.v[l].w.assign(net.layers[l].w.size(), 0.0);
        s.v[l].b.assign(net.layers[l].b.size(), 0.0);
    }
    return s;
}

void adam_step(DenseNet& net, AdamState& state, const Gradients& grads) {
    if (grads.layers.size() != net.layers.size())
        throw DataError("gradient shapes do not match network");
    for (const auto& l : grads.layers) {
        for (const double g : l.w)
            if (!std::isfinite(g)) throw DataError("numeric blowup: non-finite weight gradient");
        for (const double g : l.b)
            if (!std::isfinite(g)) throw DataError("numeric blowup: non-finite bias gradient");
    }

    ++state.step;
    const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        kernels::adam_update(layer.w.data(), state.m[l].w.data(), state.v[l].w.data(),
                             grads.layers[l].w.data(), layer.w.size(), state.lr, state.beta1,
                             state.beta2, state.eps, bias1, bias2);
        kernels::adam_update(layer.b.data(), state.m[l].b.data(), state.v[l].b.data(),
                             grads.layers[l].b.data(), layer.b.size(), state.lr, state.beta1,
                             state.beta2, state.eps, bias1, bias2);
    }
}

namespace {

// Loss and hidden activation pattern for the finite-difference probe.  The
// pattern lets the checker skip parameters whose +/-h evaluations land on
// different sides of a ReLU kink, where a central difference estimates
// nothing meaningful.
std::pair<double, std::vector<std::uint8_t>> probe_loss(const DenseNet& net,
                                                        std::span<const double> x,
                                                        std::span<const double> coeffs) {
    ForwardCache cache;
    const auto out = forward(net, x, &cache);
    std::vector<std::uint8_t> pattern;
    for (std::size_t l = 1; l < cache.acts.size(); ++l) {
        const bool last = l == cache.acts.size() - 1;
        if (last && net.out_act == OutputActivation::softmax) continue;
        for (const double a : cache.acts[l]) pattern.push_back(a > 0.0 ? 1 : 0);
    }
    return {kernels::dot(out.data(), coeffs.data(), out.size()), std::move(pattern)};
}

}  // namespace

double finite_diff_check(const DenseNet& net, std::span<const double> x, double h,
                         std::uint64_t probe_seed, std::size_t max_params) {
    Rng rng(probe_seed);
    std::vector<double> coeffs(net.output_dim());
    for (auto& c : coeffs) c = rng.next_double(-1.0, 1.0);

    ForwardCache cache;
    forward(net, x, &cache);
    Gradients grads = make_gradients(net);
    backward(net, cache, coeffs, grads);

    // Flat parameter indexing: per layer all weights then biases.
    std::size_t total = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        total += net.layers[l].w.size() + net.layers[l].b.size();

    std::vector<std::size_t> selected(total);
    std::iota(selected.begin(), selected.end(), 0);
    if (max_params > 0 && total > max_params) {
        Rng pick(derive_seed(probe_seed, 0xFD5EEDULL));
        pick.shuffle(selected);
        selected.resize(max_params);
        std::sort(selected.begin(), selected.end());
    }

    DenseNet probe = net;
    const auto param_ref = [&probe](std::size_t flat) -> double& {
        for (auto& layer : probe.layers) {
            if (flat < layer.w.size()) return layer.w[flat];
            flat -= layer.w.size();
            if (flat < layer.b.size()) return layer.b[flat];
            flat -= layer.b.size();
        }
        throw DataError("parameter index out of range");
    };
    const auto grad_at = [&grads](std::size_t flat) -> double {
        for (auto& layer : grads.layers) {
            if (flat < layer.w.size()) return layer.w[flat];
            flat -= layer.w.size();
            if (flat < layer.b.size()) return layer.b[flat];
            flat -= layer.b.size();
        }
        throw DataError("parameter index out of range");
    };

    double max_err = 0.0;
    for (const std::size_t idx : selected) {
        double& p = param_ref(idx);
        const double saved = p;
        p = saved + h;
        const auto [f_plus, pat_plus] = probe_loss(probe, x, coeffs);
        p = saved - h;
        const auto [f_minus, pat_minus] = probe_loss(probe, x, coeffs);
        p = saved;
        if (pat_plus != pat_minus) continue;  // kink inside [p-h, p+h]
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double analytic = grad_at(idx);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
        max_err = std::max(max_err, std::fabs(numeric - analytic) / denom);
    }
    return max_err;
}

namespace {

// Column-standardized copies of the stats rows; zero-variance columns stay 0.
std::vector<double> standardize_rows(const GeneStatsBlock& stats) {
    constexpr std::size_t d = GeneStatsBlock::kStatsPerGene;
    const std::size_t n = stats.n_rows;
    std::vector<double> out(n * d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = stats.data[i * d + j];
            s += v;
            s2 += v * v;
        }
        const double mean = s / static_cast<double>(n);
        const double var = std::max(0.0, s2 / static_cast<double>(n) - mean * mean);
        const double sd = std::sqrt(var);
        if (sd == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i)
            out[i * d + j] = (stats.data[i * d + j] - mean) / sd;
    }
    return out;
}

}  // namespace

Autoencoder train_autoencoder(const GeneStatsBlock& stats, int epochs, std::uint64_t seed,
                              std::vector<double>* epoch_loss) {
    constexpr std::size_t d = GeneStatsBlock::kStatsPerGene;
    if (stats.n_rows == 0) throw DataError("autoencoder training needs at least one row");
    if (epoch_loss) epoch_loss->clear();

    Autoencoder ae;
    ae.encoder = make_net({d, 256, 128, kStateDim}, OutputActivation::relu, derive_seed(seed, 1));
    ae.decoder = make_net({kStateDim, 128, 256, d}, OutputActivation::identity, derive_seed(seed, 2));

    const std::vector<double> samples = standardize_rows(stats);
    const std::size_t n = stats.n_rows;
    const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(d));

    AdamState enc_opt = make_adam(ae.encoder);
    AdamState dec_opt = make_adam(ae.decoder);
    Gradients enc_g = make_gradients(ae.encoder);
    Gradients dec_g = make_gradients(ae.decoder);
    ForwardCache enc_c, dec_c;
    std::vector<double> residual(d);

    for (int e = 0; e < epochs; ++e) {
        enc_g.zero();
        dec_g.zero();
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::span<const double> x{samples.data() + i * d, d};
            const auto latent = forward(ae.encoder, x, &enc_c);
            const auto recon = forward(ae.decoder, latent, &dec_c);
            for (std::size_t j = 0; j < d; ++j) {
                const double r = recon[j] - x[j];
                loss += r * r;
                residual[j] = 2.0 * r * inv;
            }
            const auto latent_grad = backward(ae.decoder, dec_c, residual, dec_g);
            backward(ae.encoder, enc_c, latent_grad, enc_g);
        }
        adam_step(ae.encoder, enc_opt, enc_g);
        adam_step(ae.decoder, dec_opt, dec_g);
        if (epoch_loss) epoch_loss->push_back(loss * inv);
    }
    return ae;
}

std::vector<double> encode_state(const ExpressionMatrix& m_selected, std::uint64_t seed,
                                 int ae_epochs) {
    std::vector<double> state(kStateDim, 0.0);
    if (m_selected.n_genes == 0) return state;  // terminal marker

    const GeneStatsBlock stats = descriptive_stats(m_selected);
    const Autoencoder ae = train_autoencoder(stats, ae_epochs, seed);
    const std::vector<double> samples = standardize_rows(stats);

    constexpr std::size_t d = GeneStatsBlock::kStatsPerGene;
    ForwardCache cache;
    for (std::size_t i = 0; i < stats.n_rows; ++i) {
        const auto latent = forward(ae.encoder, {samples.data() + i * d, d}, &cache);
        for (std::size_t j = 0; j < kStateDim; ++j) state[j] += latent[j];
    }
    const double inv = 1.0 / static_cast<double>(stats.n_rows);
    for (auto& v : state) v *= inv;
    return state;
}

bool is_zero_state(std::span<const double> s) {
    for (const double v : s)
        if (v != 0.0) return false;
    return true;
}

}  // namespace genepanel::nn
