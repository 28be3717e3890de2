#include "genepanel/selection.hpp"

#include "genepanel/metrics.hpp"
#include "genepanel/rng.hpp"
#include "genepanel/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace genepanel;

namespace {

// One small planted problem shared by the heavier cases; prefiltering it once
// keeps the suite fast.
struct TinyProblem {
    ExpressionMatrix norm;
    PrefilterConfig pcfg;
    PrefilterResult pre;
    SelectConfig cfg;
    SelectionEnv env;
};

const TinyProblem& tiny() {
    static const TinyProblem t = [] {
        SynthConfig s;
        s.n_cells = 90;
        s.n_genes = 36;
        s.n_informative = 8;
        s.n_clusters = 3;
        s.seed = 5;

        TinyProblem t;
        t.norm = normalize(generate_planted(s).matrix);
        t.pcfg.min_genes = 12;
        t.pre = prefilter_pipeline(t.norm, t.pcfg);

        t.cfg.epochs = 20;
        t.cfg.minibatch = 8;
        t.cfg.warmup_experiences = 8;
        t.cfg.buffer_capacity = 50;
        t.cfg.ae_epochs = 4;
        t.env = make_selection_env(t.norm, t.pre.mask, t.cfg);
        return t;
    }();
    return t;
}

GeneAgent make_test_agent(std::uint64_t seed) {
    GeneAgent a{0,
                nn::make_net({nn::kStateDim, 8, 2}, nn::OutputActivation::softmax, seed),
                nn::make_net({nn::kStateDim, 8, 1}, nn::OutputActivation::identity, seed + 1),
                {},
                {},
                PrioritizedBuffer(400, 0.6)};
    a.actor_opt = nn::make_adam(a.actor);
    a.critic_opt = nn::make_adam(a.critic);
    return a;
}

void zero_net(nn::DenseNet& net) {
    for (auto& layer : net.layers) {
        std::fill(layer.w.begin(), layer.w.end(), 0.0);
        std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
}

// Pins the post-softmax output to fixed logits regardless of state.
void force_logits(nn::DenseNet& actor, double discard_logit, double select_logit) {
    zero_net(actor);
    actor.layers.back().b = {discard_logit, select_logit};
}

Experience make_exp(double reward, bool terminal, std::uint64_t seed) {
    Rng rng(seed);
    Experience e;
    e.state.resize(nn::kStateDim);
    for (double& v : e.state) v = rng.next_double(-1.0, 1.0);
    e.next_state.assign(nn::kStateDim, 0.0);
    if (!terminal)
        for (double& v : e.next_state) v = rng.next_double(-1.0, 1.0);
    e.action = Action::select;
    e.reward = reward;
    e.priority = 1.0;
    return e;
}

}  // namespace

TEST_CASE("compactness reward boundaries and worked value") {
    CHECK(reward_compact(100, 0, 0.7) == 1.0);
    CHECK(reward_compact(100, 100, 0.7) == 0.0);
    CHECK(reward_compact(100, 50, 0.7) == doctest::Approx(50.0 / 135.0).epsilon(1e-12));
    // strictly decreasing in the panel size
    for (std::size_t n = 0; n < 40; ++n)
        CHECK(reward_compact(40, n, 0.7) > reward_compact(40, n + 1, 0.7));
    // lambda only rescales the denominator
    CHECK(reward_compact(10, 5, 0.0) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(reward_compact(0, 0, 0.7), DataError);
    CHECK_THROWS_AS(reward_compact(10, 11, 0.7), DataError);
    CHECK_THROWS_AS(reward_compact(10, 5, -0.1), DataError);
}

TEST_CASE("total reward blends the two terms") {
    RewardBreakdown b = reward_total(0.3, 0.9, 0.5);
    CHECK(b.r_s == 0.3);
    CHECK(b.r_c == 0.9);
    CHECK(b.r_total == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(reward_total(1.0, 0.0, 1.0).r_total == 1.0);
    CHECK(reward_total(1.0, 0.0, 0.0).r_total == 0.0);
    CHECK(reward_total(0.25, 0.75, 0.4).r_total ==
          doctest::Approx(0.4 * 0.25 + 0.6 * 0.75).epsilon(1e-14));

    CHECK_THROWS_AS(reward_total(1.2, 0.5, 0.5), DataError);
    CHECK_THROWS_AS(reward_total(0.5, -0.1, 0.5), DataError);
    CHECK_THROWS_AS(reward_total(0.5, 0.5, 1.5), DataError);
}

TEST_CASE("spatial reward endpoints") {
    const auto& t = tiny();
    const std::size_t p = t.env.m_pre.n_genes;
    CHECK(reward_spatial(subset_genes(t.env.m_pre, GeneMask::none(p)), t.env.reference,
                         t.env.reward_params) == 0.0);
    // re-clustering the full reference set reproduces the reference exactly
    CHECK(reward_spatial(t.env.m_pre, t.env.reference, t.env.reward_params) == 1.0);
}

TEST_CASE("prioritized buffer is a ring over insertion order") {
    PrioritizedBuffer buf(3, 0.6);
    for (double r : {0.1, 0.2, 0.3}) buf.push(make_exp(r, true, 1));
    CHECK(buf.size() == 3);
    CHECK(buf.total_pushed() == 3);
    CHECK(buf.at(0).reward == 0.1);

    buf.push(make_exp(0.4, true, 1));
    CHECK(buf.size() == 3);
    CHECK(buf.total_pushed() == 4);
    // the oldest slot was overwritten in place
    CHECK(buf.at(0).reward == 0.4);
    CHECK(buf.at(1).reward == 0.2);
    CHECK(buf.at(2).reward == 0.3);
}

TEST_CASE("prioritized buffer rejects invalid use") {
    PrioritizedBuffer buf(2, 0.6);
    Experience bad = make_exp(0.5, true, 2);
    bad.priority = 0.0;
    CHECK_THROWS_AS(buf.push(bad), DataError);
    bad.priority = -1.0;
    CHECK_THROWS_AS(buf.push(bad), DataError);

    Rng rng(3);
    CHECK_THROWS_AS(buf.sample(1, rng), DataError);

    buf.push(make_exp(0.5, true, 2));
    CHECK_THROWS_AS(buf.set_priority(5, 1.0), DataError);
    CHECK_THROWS_AS(buf.set_priority(0, 0.0), DataError);
}

TEST_CASE("prioritized sampling follows the exponent-damped weights") {
    PrioritizedBuffer buf(4, 0.6);
    const double priorities[4] = {1.0, 2.0, 4.0, 8.0};
    for (double p : priorities) {
        Experience e = make_exp(p, true, 4);
        e.priority = p;
        buf.push(e);
    }

    Rng rng(99);
    const std::size_t draws = 100000;
    const auto idx = buf.sample(draws, rng);
    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto i : idx) ++counts[i];

    double total = 0.0;
    for (double p : priorities) total += std::pow(p, 0.6);
    double chi2 = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double expected = draws * std::pow(priorities[i], 0.6) / total;
        const double diff = counts[i] - expected;
        chi2 += diff * diff / expected;
    }
    // 99th percentile of chi-squared with 3 degrees of freedom
    CHECK(chi2 < 11.3449);
}

TEST_CASE("act follows the actor's probabilities") {
    Rng rng(7);
    GeneAgent agent = make_test_agent(11);

    // a flat actor ties; greedy resolves the tie to select
    zero_net(agent.actor);
    CHECK(act(agent, std::vector<double>(nn::kStateDim, 0.3), ActMode::greedy, rng) ==
          Action::select);

    force_logits(agent.actor, -10.0, 10.0);
    std::size_t selects = 0;
    const std::vector<double> state(nn::kStateDim, 0.5);
    for (int i = 0; i < 10000; ++i)
        selects += act(agent, state, ActMode::sample, rng) == Action::select;
    CHECK(selects > 9900);
    CHECK(act(agent, state, ActMode::greedy, rng) == Action::select);

    force_logits(agent.actor, 10.0, -10.0);
    selects = 0;
    for (int i = 0; i < 10000; ++i)
        selects += act(agent, state, ActMode::sample, rng) == Action::select;
    CHECK(selects < 100);
    CHECK(act(agent, state, ActMode::greedy, rng) == Action::discard);

    // sampling is deterministic given the rng stream
    Rng a(5), b(5);
    force_logits(agent.actor, 0.3, 0.6);
    for (int i = 0; i < 50; ++i)
        CHECK(act(agent, state, ActMode::sample, a) == act(agent, state, ActMode::sample, b));
}

TEST_CASE("selection environment construction and validation") {
    const auto& t = tiny();
    CHECK(t.env.m_pre.n_genes == t.pre.mask.count());
    CHECK(t.env.pre_indices == t.pre.mask.indices());
    CHECK(t.env.n_genes_full == t.norm.n_genes);
    CHECK(t.env.reference.size() == t.norm.n_cells);

    CHECK_THROWS_AS(make_selection_env(t.norm, GeneMask::none(t.norm.n_genes), t.cfg),
                    DataError);

    SelectConfig bad = t.cfg;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.lambda = -0.2;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.gamma = 1.1;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.minibatch = 0;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.minibatch = bad.buffer_capacity + 1;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.buffer_capacity = 0;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.priority_exponent = -0.5;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.ae_epochs = 0;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
    bad = t.cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(make_selection_env(t.norm, t.pre.mask, bad), DataError);
}

TEST_CASE("agents and the initial state") {
    const auto& t = tiny();
    const auto agents = make_agents(t.env);
    REQUIRE(agents.size() == t.env.m_pre.n_genes);
    for (std::size_t i = 0; i < agents.size(); ++i) {
        CHECK(agents[i].gene == i);
        CHECK(agents[i].actor.dims == std::vector<std::size_t>{nn::kStateDim, 8, 2});
        CHECK(agents[i].critic.dims == std::vector<std::size_t>{nn::kStateDim, 8, 1});
        CHECK(agents[i].buffer.size() == 0);
    }
    // distinct agents get distinct initializations
    CHECK(agents[0].actor.layers[0].w != agents[1].actor.layers[0].w);

    const auto s0 = initial_state(t.env);
    REQUIRE(s0.size() == nn::kStateDim);
    CHECK(!nn::is_zero_state(s0));
    CHECK(initial_state(t.env) == s0);
}

TEST_CASE("knowledge injection seeds every agent once per method") {
    const auto& t = tiny();
    auto agents = make_agents(t.env);
    const auto s0 = initial_state(t.env);

    const std::size_t injected = inject_knowledge(t.env, agents, s0);
    CHECK(injected == t.cfg.inject_methods.size());

    const std::size_t p = t.env.m_pre.n_genes;
    const std::size_t half = static_cast<std::size_t>(std::llround(p / 2.0));
    for (std::size_t j = 0; j < injected; ++j) {
        std::size_t selected = 0;
        for (const auto& agent : agents) {
            const Experience& e = agent.buffer.at(j);
            CHECK(e.priority == 1.0);
            CHECK(e.state == s0);
            CHECK(e.reward >= 0.0);
            CHECK(e.reward <= 1.0);
            // the shared transition differs only in the agent's own action
            CHECK(e.reward == agents[0].buffer.at(j).reward);
            CHECK(e.next_state == agents[0].buffer.at(j).next_state);
            selected += e.action == Action::select;
        }
        // each method contributes its top half of the pre-filtered genes
        CHECK(selected == half);
    }
    for (const auto& agent : agents) CHECK(agent.buffer.size() == injected);
}

TEST_CASE("exploration step with forced unanimous actions") {
    const auto& t = tiny();
    const auto s0 = initial_state(t.env);
    const std::size_t p = t.env.m_pre.n_genes;

    auto agents = make_agents(t.env);
    for (auto& agent : agents) {
        force_logits(agent.actor, 50.0, -50.0);  // always discard
        zero_net(agent.critic);
    }
    ExploreOutcome out = explore_step(t.env, agents, s0, 1, t.env.reference);
    REQUIRE(out.actions.size() == p);
    CHECK(out.mask.count() == 0);
    CHECK(out.reward.r_s == 0.0);
    CHECK(out.reward.r_c == 1.0);
    CHECK(out.reward.r_total == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(out.nmi == 0.0);
    CHECK(out.labels.size() == 0);
    CHECK(nn::is_zero_state(out.next_state));
    for (const auto& agent : agents) {
        CHECK(agent.buffer.size() == 1);
        CHECK(agent.buffer.at(0).action == Action::discard);
        // terminal next state, zero critic: |td| = reward itself
        CHECK(agent.buffer.at(0).priority == doctest::Approx(0.501).epsilon(1e-12));
        CHECK(agent.buffer.at(0).reward == doctest::Approx(0.5).epsilon(1e-14));
    }

    auto greedy_agents = make_agents(t.env);
    for (auto& agent : greedy_agents) {
        force_logits(agent.actor, -50.0, 50.0);  // always select
        zero_net(agent.critic);
    }
    ExploreOutcome full = explore_step(t.env, greedy_agents, s0, 1, t.env.reference);
    CHECK(full.mask.count() == p);
    CHECK(full.reward.r_s == 1.0);
    CHECK(full.reward.r_c == 0.0);
    CHECK(full.nmi == 1.0);
    CHECK(full.labels.labels == t.env.reference.labels);
    CHECK(!nn::is_zero_state(full.next_state));
    for (const auto& agent : greedy_agents) {
        CHECK(agent.buffer.at(0).action == Action::select);
        CHECK(agent.buffer.at(0).priority == doctest::Approx(0.501).epsilon(1e-12));
    }
}

TEST_CASE("optimize_agent skips undersized buffers") {
    GeneAgent agent = make_test_agent(3);
    agent.buffer.push(make_exp(0.5, true, 5));
    SelectConfig cfg;
    cfg.minibatch = 32;
    Rng rng(1);
    OptimizeResult res = optimize_agent(agent, cfg, rng);
    CHECK(res.skipped);
    CHECK(res.critic_loss == 0.0);
    CHECK(res.actor_loss == 0.0);
}

TEST_CASE("optimize_agent refreshes priorities from the td error") {
    SelectConfig cfg;
    cfg.minibatch = 1;
    cfg.gamma = 0.9;

    auto run_once = [&](Experience e, double gamma) {
        GeneAgent agent = make_test_agent(8);
        zero_net(agent.critic);
        agent.critic.layers.back().b = {0.5};  // V(s) = 0.5 for every state
        agent.buffer.push(std::move(e));
        SelectConfig local = cfg;
        local.gamma = gamma;
        Rng rng(2);
        OptimizeResult res = optimize_agent(agent, local, rng);
        CHECK(!res.skipped);
        return agent.buffer.at(0).priority;
    };

    // bootstrapped: |r + gamma V(s') - V(s)| = |1 + 0.45 - 0.5| = 0.95
    CHECK(run_once(make_exp(1.0, false, 21), 0.9) == doctest::Approx(0.951).epsilon(1e-12));
    // gamma 0 drops the bootstrap: |1 - 0.5| = 0.5
    CHECK(run_once(make_exp(1.0, false, 21), 0.0) == doctest::Approx(0.501).epsilon(1e-12));
    // terminal state never bootstraps: |0.7 - 0.5| = 0.2
    CHECK(run_once(make_exp(0.7, true, 22), 0.9) == doctest::Approx(0.201).epsilon(1e-12));
}

TEST_CASE("the critic converges on a single repeated experience") {
    GeneAgent agent = make_test_agent(17);
    agent.buffer.push(make_exp(0.8, true, 30));
    SelectConfig cfg;
    cfg.minibatch = 1;
    Rng rng(4);
    OptimizeResult last;
    for (int i = 0; i < 500; ++i) last = optimize_agent(agent, cfg, rng);
    CHECK(!last.skipped);
    CHECK(last.critic_loss < 1e-4);

    const auto v = nn::forward(agent.critic, agent.buffer.at(0).state);
    CHECK(v[0] == doctest::Approx(0.8).epsilon(1e-2));
}

TEST_CASE("run_selection produces a consistent deterministic trace") {
    const auto& t = tiny();
    SelectionResult a = run_selection(t.norm, t.pre, t.cfg);
    SelectionResult b = run_selection(t.norm, t.pre, t.cfg);

    REQUIRE(a.trace.size() == static_cast<std::size_t>(t.cfg.epochs));
    CHECK(a.n_prefiltered == t.pre.mask.count());
    CHECK(!a.aborted);

    // bitwise reproducibility
    CHECK(a.best_mask.bits == b.best_mask.bits);
    CHECK(a.greedy_mask.bits == b.greedy_mask.bits);
    CHECK(a.best_iter == b.best_iter);
    CHECK(a.best_r_s == b.best_r_s);
    REQUIRE(b.trace.size() == a.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].r_s == b.trace[i].r_s);
        CHECK(a.trace[i].r_c == b.trace[i].r_c);
        CHECK(a.trace[i].n_selected == b.trace[i].n_selected);
    }

    const std::size_t p = t.pre.mask.count();
    double best_total = -1.0;
    int best_iter = 0;
    double best_rs = -1.0;
    int best_rs_iter = 0;
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        const TraceRow& row = a.trace[i];
        CHECK(row.iter == static_cast<int>(i) + 1);
        CHECK(row.r_c == doctest::Approx(reward_compact(p, row.n_selected, t.cfg.lambda))
                             .epsilon(1e-12));
        CHECK(row.r_total ==
              doctest::Approx(t.cfg.alpha * row.r_s + (1.0 - t.cfg.alpha) * row.r_c)
                  .epsilon(1e-12));
        // with the fixed reference the trace nmi is the spatial reward
        CHECK(row.nmi == row.r_s);
        if (row.r_total > best_total) {
            best_total = row.r_total;
            best_iter = row.iter;
        }
        if (row.r_s > best_rs) {
            best_rs = row.r_s;
            best_rs_iter = row.iter;
        }
    }
    CHECK(a.best_iter == best_iter);
    CHECK(a.best.r_total == doctest::Approx(best_total).epsilon(1e-12));
    CHECK(a.best_r_s == best_rs);
    CHECK(a.best_r_s_iter == best_rs_iter);

    // panels live in the original gene space, within the pre-filtered set
    for (const auto g : a.best_mask.indices()) CHECK(t.pre.mask.test(g));
    for (const auto g : a.greedy_mask.indices()) CHECK(t.pre.mask.test(g));
    CHECK(a.best_mask.size() == t.norm.n_genes);
    CHECK(a.seconds > 0.0);
}

TEST_CASE("run_selection honors the wall-clock budget") {
    const auto& t = tiny();
    SelectConfig cfg = t.cfg;
    cfg.budget_seconds = 1e-9;
    SelectionResult res = run_selection(t.norm, t.pre, cfg);
    CHECK(res.aborted);
    CHECK(res.trace.size() >= 1);
    CHECK(res.trace.size() < static_cast<std::size_t>(cfg.epochs));
    // the best seen so far is still reported
    CHECK(res.best_mask.size() == t.norm.n_genes);
}

TEST_CASE("greedy forward baseline accounting") {
    const auto& t = tiny();
    const std::size_t p = t.pre.mask.count();
    GreedyForwardResult g = greedy_forward(t.norm, t.pre.mask, 3, t.cfg);

    REQUIRE(g.step_r_s.size() == 3);
    CHECK(g.mask.count() == 3);
    CHECK(g.evals_total == p + (p - 1) + (p - 2));
    CHECK(g.best_r_s == *std::max_element(g.step_r_s.begin(), g.step_r_s.end()));

    // evals_to_best corresponds to the earliest step reaching the maximum
    std::size_t consumed = 0, expect = 0;
    for (std::size_t step = 0; step < 3; ++step) {
        consumed += p - step;
        if (g.step_r_s[step] == g.best_r_s) {
            expect = consumed;
            break;
        }
    }
    CHECK(g.evals_to_best == expect);

    for (const auto i : g.mask.indices()) CHECK(t.pre.mask.test(i));

    GreedyForwardResult again = greedy_forward(t.norm, t.pre.mask, 3, t.cfg);
    CHECK(again.mask.bits == g.mask.bits);
    CHECK(again.step_r_s == g.step_r_s);

    // budget above the candidate count saturates
    GreedyForwardResult all = greedy_forward(t.norm, t.pre.mask, p + 10, t.cfg);
    CHECK(all.mask.count() == p);
}

TEST_CASE("fixed panel runs score their own reference") {
    const auto& t = tiny();
    SelectionResult full = fixed_panel_run(t.norm, GeneMask::full(t.norm.n_genes), t.cfg);
    CHECK(full.best.r_s == 1.0);
    CHECK(full.best.r_c == 0.0);
    CHECK(full.best_mask.count() == t.norm.n_genes);
    CHECK(full.n_prefiltered == t.norm.n_genes);

    SelectionResult sub = fixed_panel_run(t.norm, t.pre.mask, t.cfg);
    CHECK(sub.best.r_s == 1.0);
    CHECK(sub.best_mask.bits == t.pre.mask.bits);
}

TEST_CASE("ablation variants parse and compose") {
    for (const auto v : {AblationVariant::full, AblationVariant::no_rl,
                         AblationVariant::no_knowledge, AblationVariant::no_filter,
                         AblationVariant::all_genes})
        CHECK(variant_from_name(variant_name(v)) == v);
    CHECK(variant_from_name("no-rl") == AblationVariant::no_rl);
    CHECK(variant_from_name("no-knowledge") == AblationVariant::no_knowledge);
    CHECK(variant_from_name("no-filter") == AblationVariant::no_filter);
    CHECK(variant_from_name("all-genes") == AblationVariant::all_genes);
    CHECK_THROWS_AS(variant_from_name("bogus"), DataError);

    const auto& t = tiny();
    SelectionResult keep_all = ablation_run(t.norm, AblationVariant::all_genes, t.pcfg, t.cfg);
    SelectionResult fixed_all = fixed_panel_run(t.norm, GeneMask::full(t.norm.n_genes), t.cfg);
    CHECK(keep_all.best_mask.bits == fixed_all.best_mask.bits);
    CHECK(keep_all.best.r_s == fixed_all.best.r_s);
    CHECK(keep_all.best.r_c == fixed_all.best.r_c);

    SelectionResult no_rl = ablation_run(t.norm, AblationVariant::no_rl, t.pcfg, t.cfg);
    CHECK(no_rl.best_mask.bits == t.pre.mask.bits);
    CHECK(no_rl.best.r_s == 1.0);
}

TEST_CASE("the unfiltered variant refuses oversized gene spaces") {
    SynthConfig s;
    s.n_cells = 10;
    s.n_genes = kNoFilterGeneCap + 1;
    s.n_informative = 5;
    s.n_clusters = 2;
    s.seed = 1;
    ExpressionMatrix m = normalize(generate_planted(s).matrix);
    const auto& t = tiny();
    CHECK_THROWS_AS(ablation_run(m, AblationVariant::no_filter, t.pcfg, t.cfg), DataError);
}
