#include "genepanel/neural.hpp"

#include "genepanel/rng.hpp"
#include "genepanel/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace genepanel;
using namespace genepanel::nn;

namespace {

std::vector<double> random_input(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (double& v : x) v = rng.next_double(-1.0, 1.0);
    return x;
}

void fill_zero(DenseNet& net) {
    for (auto& layer : net.layers) {
        std::fill(layer.w.begin(), layer.w.end(), 0.0);
        std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
}

}  // namespace

TEST_CASE("forward through zero weights") {
    DenseNet net = make_net({3, 4, 2}, OutputActivation::identity, 1);
    fill_zero(net);
    const auto out = forward(net, random_input(3, 2));
    CHECK(out == std::vector<double>{0.0, 0.0});

    DenseNet soft = make_net({3, 4, 2}, OutputActivation::softmax, 1);
    fill_zero(soft);
    const auto probs = forward(soft, random_input(3, 2));
    // equal logits split the mass evenly
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("forward computes a hand-sized linear layer") {
    DenseNet net = make_net({1, 1}, OutputActivation::identity, 1);
    net.layers[0].w = {2.0};
    net.layers[0].b = {1.0};
    CHECK(forward(net, std::vector<double>{3.0}) == std::vector<double>{7.0});

    // two-layer composition with ReLU in between
    DenseNet deep = make_net({1, 2, 1}, OutputActivation::identity, 1);
    deep.layers[0].w = {1.0, -1.0};  // hidden = relu(x), relu(-x)
    deep.layers[0].b = {0.0, 0.0};
    deep.layers[1].w = {3.0, 5.0};
    deep.layers[1].b = {0.5};
    CHECK(forward(deep, std::vector<double>{2.0}) == std::vector<double>{6.5});
    CHECK(forward(deep, std::vector<double>{-2.0}) == std::vector<double>{10.5});
}

TEST_CASE("softmax output sums to one and orders by logit") {
    DenseNet net = make_net({4, 6, 3}, OutputActivation::softmax, 9);
    const auto probs = forward(net, random_input(4, 10));
    double sum = 0.0;
    for (double p : probs) {
        CHECK(p > 0.0);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("make_net shapes and init scale") {
    DenseNet net = make_net({7, 256, 128, 64}, OutputActivation::identity, 3);
    REQUIRE(net.layers.size() == 3);
    CHECK(net.layers[0].in == 7);
    CHECK(net.layers[0].out == 256);
    CHECK(net.layers[2].out == 64);
    CHECK(net.parameter_count() ==
          7 * 256 + 256 + 256 * 128 + 128 + 128 * 64 + 64);
    for (const auto& layer : net.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (double w : layer.w) {
            CHECK(w >= -bound);
            CHECK(w <= bound);
        }
        for (double b : layer.b) CHECK(b == 0.0);
    }
    // deterministic in the seed, different across seeds
    CHECK(make_net({7, 256, 128, 64}, OutputActivation::identity, 3).layers[0].w ==
          net.layers[0].w);
    CHECK(make_net({7, 256, 128, 64}, OutputActivation::identity, 4).layers[0].w !=
          net.layers[0].w);
}

TEST_CASE("analytic gradients match finite differences") {
    const auto x = random_input(5, 99);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        DenseNet ident = make_net({5, 8, 4}, OutputActivation::identity, seed);
        CHECK(finite_diff_check(ident, x, 1e-5) < 1e-8);

        DenseNet soft = make_net({5, 8, 3}, OutputActivation::softmax, seed);
        CHECK(finite_diff_check(soft, x, 1e-5) < 1e-4);

        // a crude step size visibly degrades the agreement on the smooth net
        // (the ReLU-identity net is piecewise linear, so any h inside one
        // linear region differentiates it exactly)
        CHECK(finite_diff_check(soft, x, 0.5) > finite_diff_check(soft, x, 1e-5));
    }
}

TEST_CASE("backward gradient properties") {
    DenseNet net = make_net({4, 6, 2}, OutputActivation::identity, 21);
    const auto x = random_input(4, 22);
    ForwardCache cache;
    forward(net, x, &cache);

    Gradients grads = make_gradients(net);
    const auto ig_zero = backward(net, cache, std::vector<double>{0.0, 0.0}, grads);
    for (const auto& layer : grads.layers) {
        for (double g : layer.w) CHECK(g == 0.0);
        for (double g : layer.b) CHECK(g == 0.0);
    }
    for (double g : ig_zero) CHECK(g == 0.0);

    // backward is linear in out_grad and accumulates across calls
    Gradients g1 = make_gradients(net);
    backward(net, cache, std::vector<double>{1.0, 0.0}, g1);
    Gradients g2 = make_gradients(net);
    backward(net, cache, std::vector<double>{0.0, 1.0}, g2);
    Gradients both = make_gradients(net);
    backward(net, cache, std::vector<double>{1.0, 1.0}, both);
    for (std::size_t l = 0; l < both.layers.size(); ++l)
        for (std::size_t i = 0; i < both.layers[l].w.size(); ++i)
            CHECK(both.layers[l].w[i] ==
                  doctest::Approx(g1.layers[l].w[i] + g2.layers[l].w[i]).epsilon(1e-12));

    // accumulation: two identical calls double the gradient
    Gradients acc = make_gradients(net);
    backward(net, cache, std::vector<double>{1.0, 0.0}, acc);
    backward(net, cache, std::vector<double>{1.0, 0.0}, acc);
    for (std::size_t l = 0; l < acc.layers.size(); ++l)
        for (std::size_t i = 0; i < acc.layers[l].w.size(); ++i)
            CHECK(acc.layers[l].w[i] == doctest::Approx(2.0 * g1.layers[l].w[i]).epsilon(1e-12));
}

TEST_CASE("adam first step moves each parameter by about lr") {
    DenseNet net = make_net({2, 2}, OutputActivation::identity, 5);
    const auto before = net.layers[0].w;
    AdamState opt = make_adam(net, 0.01);

    Gradients grads = make_gradients(net);
    grads.layers[0].w = {0.3, -0.7, 1.5, -2.0};
    grads.layers[0].b = {0.0, 0.0};
    adam_step(net, opt, grads);
    CHECK(opt.step == 1);
    // bias corrections cancel on the first step: delta = -lr * sign(g)
    for (std::size_t i = 0; i < 4; ++i) {
        const double delta = net.layers[0].w[i] - before[i];
        const double expect = -0.01 * (grads.layers[0].w[i] > 0 ? 1.0 : -1.0);
        CHECK(delta == doctest::Approx(expect).epsilon(1e-6));
    }
    // zero-gradient parameters stay exactly put
    CHECK(net.layers[0].b == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adam is deterministic and rejects non-finite gradients") {
    auto run = [] {
        DenseNet net = make_net({3, 4, 1}, OutputActivation::identity, 8);
        AdamState opt = make_adam(net);
        const auto x = random_input(3, 9);
        for (int i = 0; i < 5; ++i) {
            ForwardCache cache;
            forward(net, x, &cache);
            Gradients grads = make_gradients(net);
            backward(net, cache, std::vector<double>{1.0}, grads);
            adam_step(net, opt, grads);
        }
        return net.layers[0].w;
    };
    CHECK(run() == run());

    DenseNet net = make_net({2, 1}, OutputActivation::identity, 4);
    AdamState opt = make_adam(net);
    const auto before_w = net.layers[0].w;
    Gradients bad = make_gradients(net);
    bad.layers[0].w = {1.0, std::nan("")};
    CHECK_THROWS_WITH_AS(adam_step(net, opt, bad), doctest::Contains("numeric blowup"),
                         DataError);
    CHECK(net.layers[0].w == before_w);
    CHECK(opt.step == 0);
}

TEST_CASE("autoencoder training reduces reconstruction loss") {
    SynthConfig cfg;
    cfg.n_cells = 50;
    cfg.n_genes = 40;
    cfg.n_informative = 8;
    cfg.n_clusters = 2;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cfg.seed = seed;
        GeneStatsBlock stats = descriptive_stats(generate_planted(cfg).matrix);
        std::vector<double> loss;
        train_autoencoder(stats, 12, seed, &loss);
        REQUIRE(loss.size() == 12);
        CHECK(loss.back() <= loss.front());
        for (double l : loss) CHECK(std::isfinite(l));
    }

    // deterministic weights
    cfg.seed = 2;
    GeneStatsBlock stats = descriptive_stats(generate_planted(cfg).matrix);
    Autoencoder a = train_autoencoder(stats, 4, 7);
    Autoencoder b = train_autoencoder(stats, 4, 7);
    CHECK(a.encoder.layers[0].w == b.encoder.layers[0].w);
    CHECK(a.decoder.layers[2].w == b.decoder.layers[2].w);
    CHECK(a.encoder.dims == std::vector<std::size_t>{7, 256, 128, 64});
    CHECK(a.decoder.dims == std::vector<std::size_t>{64, 128, 256, 7});
}

TEST_CASE("encode_state maps selections to fixed-width vectors") {
    SynthConfig cfg;
    cfg.n_cells = 40;
    cfg.n_genes = 20;
    cfg.n_informative = 5;
    cfg.n_clusters = 2;
    cfg.seed = 12;
    ExpressionMatrix m = generate_planted(cfg).matrix;

    const auto empty = encode_state(subset_genes(m, GeneMask::none(20)), 3, 4);
    REQUIRE(empty.size() == kStateDim);
    CHECK(is_zero_state(empty));

    // a single gene standardizes its stats row to all zeros, so the encoding
    // stays at the zero fixed point; only the width is guaranteed
    const auto one = encode_state(subset_genes(m, GeneMask::from_indices(20, std::vector<std::size_t>{4})), 3, 4);
    REQUIRE(one.size() == kStateDim);

    const auto two = encode_state(
        subset_genes(m, GeneMask::from_indices(20, std::vector<std::size_t>{4, 9})), 3, 4);
    REQUIRE(two.size() == kStateDim);
    CHECK(!is_zero_state(two));

    const auto ten = encode_state(subset_genes(m, GeneMask::full(20)), 3, 4);
    REQUIRE(ten.size() == kStateDim);
    CHECK(!is_zero_state(ten));
    for (double v : ten) CHECK(std::isfinite(v));

    // deterministic in (matrix, seed)
    CHECK(encode_state(subset_genes(m, GeneMask::full(20)), 3, 4) == ten);

    CHECK(is_zero_state(std::vector<double>(kStateDim, 0.0)));
    std::vector<double> near_zero(kStateDim, 0.0);
    near_zero[10] = 1e-300;
    CHECK(!is_zero_state(near_zero));
}
