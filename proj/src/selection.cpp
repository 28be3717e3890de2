#include "genepanel/selection.hpp"

#include "genepanel/metrics.hpp"
#include "genepanel/parallel.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <utility>

namespace genepanel {

namespace {

// Seed stream tags.  Every random decision draws from its own derived stream
// keyed by (purpose, agent, iteration) so results never depend on thread
// count or evaluation order.
constexpr std::uint64_t kTagCluster = 0x434c5553;  // reward clustering
constexpr std::uint64_t kTagState = 0x53544154;    // state autoencoder per iteration
constexpr std::uint64_t kTagActor = 0x4143544f;
constexpr std::uint64_t kTagCritic = 0x43524954;
constexpr std::uint64_t kTagAct = 0x41435448;      // per-agent action draws
constexpr std::uint64_t kTagOpt = 0x4f505449;      // per-agent replay sampling
constexpr std::uint64_t kTagInject = 0x494e4a53;   // injected panel states
constexpr std::uint64_t kTagScore = 0x494e4a51;    // injected panel scoring

double critic_value(const GeneAgent& agent, std::span<const double> s) {
    if (nn::is_zero_state(s)) return 0.0;
    return nn::forward(agent.critic, s)[0];
}

void validate_config(const SelectConfig& cfg) {
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw DataError("alpha must lie in [0, 1]");
    if (cfg.lambda < 0.0) throw DataError("lambda must be non-negative");
    if (cfg.gamma < 0.0 || cfg.gamma > 1.0) throw DataError("gamma must lie in [0, 1]");
    if (cfg.epochs < 1) throw DataError("epochs must be at least 1");
    if (cfg.minibatch == 0) throw DataError("minibatch size must be positive");
    if (cfg.buffer_capacity == 0) throw DataError("replay capacity must be positive");
    if (cfg.minibatch > cfg.buffer_capacity)
        throw DataError("minibatch size cannot exceed the replay capacity");
    if (cfg.priority_exponent < 0.0) throw DataError("priority exponent must be non-negative");
    if (cfg.ae_epochs < 1) throw DataError("autoencoder epochs must be at least 1");
    if (cfg.lr <= 0.0) throw DataError("learning rate must be positive");
}

}  // namespace

void PrioritizedBuffer::push(Experience e) {
    if (capacity_ == 0) throw DataError("replay capacity must be positive");
    if (!(e.priority > 0.0)) throw DataError("experience priority must be positive");
    if (items_.size() < capacity_) {
        items_.push_back(std::move(e));
    } else {
        items_[next_] = std::move(e);
    }
    next_ = (next_ + 1) % capacity_;
    ++pushed_;
}

void PrioritizedBuffer::set_priority(std::size_t i, double p) {
    if (i >= items_.size()) throw DataError("replay index out of range");
    if (!(p > 0.0)) throw DataError("experience priority must be positive");
    items_[i].priority = p;
}

std::vector<std::size_t> PrioritizedBuffer::sample(std::size_t count, Rng& rng) const {
    if (items_.empty()) throw DataError("cannot sample from an empty replay buffer");
    std::vector<double> cum(items_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        total += std::pow(items_[i].priority, exponent_);
        cum[i] = total;
    }
    std::vector<std::size_t> out(count);
    for (std::size_t k = 0; k < count; ++k) {
        double u = rng.next_double() * total;
        std::size_t i = static_cast<std::size_t>(
            std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        out[k] = std::min(i, items_.size() - 1);
    }
    return out;
}

double reward_compact(std::size_t n_prefilter, std::size_t n_selected, double lambda) {
    if (n_prefilter == 0) throw DataError("compactness reward needs a non-empty candidate set");
    if (n_selected > n_prefilter)
        throw DataError("selected panel cannot exceed the candidate set");
    if (lambda < 0.0) throw DataError("lambda must be non-negative");
    const double p = static_cast<double>(n_prefilter);
    const double n = static_cast<double>(n_selected);
    return (p - n) / (p + lambda * n);
}

double reward_spatial(const ExpressionMatrix& m_selected, const ClusterAssignment& reference,
                      const ClusterParams& params) {
    if (m_selected.n_genes == 0) return 0.0;
    ClusterAssignment labels = pseudo_labels(m_selected, params);
    return nmi(labels, reference);
}

RewardBreakdown reward_total(double r_s, double r_c, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw DataError("alpha must lie in [0, 1]");
    const double eps = 1e-9;
    if (r_s < -eps || r_s > 1.0 + eps) throw DataError("spatial reward outside [0, 1]");
    if (r_c < -eps || r_c > 1.0 + eps) throw DataError("compactness reward outside [0, 1]");
    RewardBreakdown b;
    b.r_s = std::clamp(r_s, 0.0, 1.0);
    b.r_c = std::clamp(r_c, 0.0, 1.0);
    b.r_total = alpha * b.r_s + (1.0 - alpha) * b.r_c;
    return b;
}

Action act(const GeneAgent& agent, std::span<const double> state, ActMode mode, Rng& rng) {
    std::vector<double> probs = nn::forward(agent.actor, state);
    if (mode == ActMode::greedy)
        return probs[1] >= probs[0] ? Action::select : Action::discard;
    return rng.next_double() < probs[1] ? Action::select : Action::discard;
}

SelectionEnv make_selection_env(const ExpressionMatrix& m, const GeneMask& pre_mask,
                                const SelectConfig& cfg) {
    validate_config(cfg);
    SelectionEnv env;
    env.cfg = cfg;
    env.pre_indices = pre_mask.indices();
    if (env.pre_indices.empty()) throw DataError("pre-filtered gene set is empty");
    env.n_genes_full = m.n_genes;
    env.m_pre = subset_genes(m, pre_mask);
    env.reward_params = cfg.cluster;
    env.reward_params.seed = derive_seed(cfg.seed, kTagCluster);
    env.reward_params.n_threads = cfg.n_threads;
    env.reference = pseudo_labels(env.m_pre, env.reward_params);
    return env;
}

std::vector<GeneAgent> make_agents(const SelectionEnv& env) {
    const SelectConfig& cfg = env.cfg;
    const std::size_t p = env.m_pre.n_genes;
    std::vector<GeneAgent> agents;
    agents.reserve(p);
    for (std::size_t j = 0; j < p; ++j) {
        GeneAgent a{j,
                    nn::make_net({nn::kStateDim, 8, 2}, nn::OutputActivation::softmax,
                                 derive_seed(cfg.seed, kTagActor, j)),
                    nn::make_net({nn::kStateDim, 8, 1}, nn::OutputActivation::identity,
                                 derive_seed(cfg.seed, kTagCritic, j)),
                    nn::AdamState{},
                    nn::AdamState{},
                    PrioritizedBuffer(cfg.buffer_capacity, cfg.priority_exponent)};
        a.actor_opt = nn::make_adam(a.actor, cfg.lr);
        a.critic_opt = nn::make_adam(a.critic, cfg.lr);
        agents.push_back(std::move(a));
    }
    return agents;
}

std::vector<double> initial_state(const SelectionEnv& env) {
    return nn::encode_state(env.m_pre, derive_seed(env.cfg.seed, kTagState, 0),
                            env.cfg.ae_epochs);
}

std::size_t inject_knowledge(const SelectionEnv& env, std::vector<GeneAgent>& agents,
                             std::span<const double> s0) {
    const SelectConfig& cfg = env.cfg;
    const std::size_t p = env.m_pre.n_genes;
    if (agents.size() != p) throw DataError("agent count must match the pre-filtered gene count");

    // Each method proposes its top half of the candidate set.
    std::size_t q = static_cast<std::size_t>(std::llround(static_cast<double>(p) / 2.0));
    q = std::clamp<std::size_t>(q, 1, p);

    const std::vector<ScoreMethod>& methods = cfg.inject_methods;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        PrefilterConfig scfg;
        scfg.seed = derive_seed(cfg.seed, kTagScore, mi);
        scfg.n_threads = cfg.n_threads;
        GeneScores gs = score_genes(env.m_pre, env.reference, methods[mi], scfg);

        std::vector<std::size_t> order(p);
        for (std::size_t g = 0; g < p; ++g) order[g] = g;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return gs.scores[a] > gs.scores[b];
        });
        order.resize(q);
        GeneMask panel = GeneMask::from_indices(p, order);

        ExpressionMatrix m_panel = subset_genes(env.m_pre, panel);
        const double r_s = reward_spatial(m_panel, env.reference, env.reward_params);
        const double r_c = reward_compact(p, q, cfg.lambda);
        const RewardBreakdown rb = reward_total(r_s, r_c, cfg.alpha);
        std::vector<double> s1 =
            nn::encode_state(m_panel, derive_seed(cfg.seed, kTagInject, mi), cfg.ae_epochs);

        for (std::size_t j = 0; j < p; ++j) {
            Experience e;
            e.state.assign(s0.begin(), s0.end());
            e.next_state = s1;
            e.action = panel.test(j) ? Action::select : Action::discard;
            e.reward = rb.r_total;
            e.priority = 1.0;
            agents[j].buffer.push(std::move(e));
        }
    }
    return methods.size();
}

ExploreOutcome explore_step(const SelectionEnv& env, std::vector<GeneAgent>& agents,
                            std::span<const double> state, int iter,
                            const ClusterAssignment& reward_reference) {
    const SelectConfig& cfg = env.cfg;
    const std::size_t p = agents.size();
    ExploreOutcome out;
    out.actions.resize(p);

    parallel_for(std::size_t{0}, p, cfg.n_threads, [&](std::size_t j) {
        Rng rng(derive_seed(cfg.seed, kTagAct, agents[j].gene, static_cast<std::uint64_t>(iter)));
        out.actions[j] = act(agents[j], state, ActMode::sample, rng);
    });

    std::vector<std::size_t> sel;
    for (std::size_t j = 0; j < p; ++j)
        if (out.actions[j] == Action::select) sel.push_back(j);
    out.mask = GeneMask::from_indices(p, sel);

    double r_s = 0.0;
    if (!sel.empty()) {
        ExpressionMatrix m_sel = subset_genes(env.m_pre, out.mask);
        out.labels = pseudo_labels(m_sel, env.reward_params);
        r_s = nmi(out.labels, reward_reference);
        out.nmi = &reward_reference == &env.reference ? r_s : nmi(out.labels, env.reference);
        out.next_state = nn::encode_state(
            m_sel, derive_seed(cfg.seed, kTagState, static_cast<std::uint64_t>(iter)),
            cfg.ae_epochs);
    } else {
        out.next_state.assign(nn::kStateDim, 0.0);
    }
    const double r_c = reward_compact(p, sel.size(), cfg.lambda);
    out.reward = reward_total(r_s, r_c, cfg.alpha);

    // The same shared transition lands in every buffer; only the action and
    // the TD-error priority are the agent's own.
    parallel_for(std::size_t{0}, p, cfg.n_threads, [&](std::size_t j) {
        const double v_s = critic_value(agents[j], state);
        const double v_n = critic_value(agents[j], out.next_state);
        const double td = out.reward.r_total + cfg.gamma * v_n - v_s;
        Experience e;
        e.state.assign(state.begin(), state.end());
        e.next_state = out.next_state;
        e.action = out.actions[j];
        e.reward = out.reward.r_total;
        e.priority = std::abs(td) + 1e-3;
        agents[j].buffer.push(std::move(e));
    });
    return out;
}

OptimizeResult optimize_agent(GeneAgent& agent, const SelectConfig& cfg, Rng& rng) {
    OptimizeResult res;
    if (agent.buffer.size() < cfg.minibatch) {
        res.skipped = true;
        return res;
    }
    const std::vector<std::size_t> idx = agent.buffer.sample(cfg.minibatch, rng);
    const double b = static_cast<double>(idx.size());

    // Critic first: targets and advantages come from the pre-update critic.
    std::vector<double> targets(idx.size());
    std::vector<double> advantages(idx.size());
    nn::Gradients cgrads = nn::make_gradients(agent.critic);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Experience& e = agent.buffer.at(idx[k]);
        nn::ForwardCache cache;
        const double v_s = nn::forward(agent.critic, e.state, &cache)[0];
        const double v_n =
            nn::is_zero_state(e.next_state) ? 0.0 : nn::forward(agent.critic, e.next_state)[0];
        targets[k] = e.reward + cfg.gamma * v_n;
        advantages[k] = targets[k] - v_s;
        res.critic_loss += (v_s - targets[k]) * (v_s - targets[k]) / b;
        const std::array<double, 1> og{2.0 * (v_s - targets[k]) / b};
        nn::backward(agent.critic, cache, og, cgrads);
    }
    nn::adam_step(agent.critic, agent.critic_opt, cgrads);

    nn::Gradients agrads = nn::make_gradients(agent.actor);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Experience& e = agent.buffer.at(idx[k]);
        nn::ForwardCache cache;
        const std::vector<double> probs = nn::forward(agent.actor, e.state, &cache);
        const std::size_t a = static_cast<std::size_t>(e.action);
        const double pa = std::max(probs[a], 1e-8);
        res.actor_loss += -std::log(pa) * advantages[k] / b;
        std::vector<double> og(probs.size(), 0.0);
        og[a] = -advantages[k] / (pa * b);
        nn::backward(agent.actor, cache, og, agrads);
    }
    nn::adam_step(agent.actor, agent.actor_opt, agrads);

    for (std::size_t k = 0; k < idx.size(); ++k)
        agent.buffer.set_priority(idx[k], std::abs(advantages[k]) + 1e-3);
    return res;
}

SelectionResult run_selection(const ExpressionMatrix& m, const PrefilterResult& pre,
                              const SelectConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    SelectionEnv env = make_selection_env(m, pre.mask, cfg);
    std::vector<GeneAgent> agents = make_agents(env);
    std::vector<double> state = initial_state(env);
    if (cfg.inject) inject_knowledge(env, agents, state);

    SelectionResult res;
    res.n_prefiltered = env.m_pre.n_genes;
    res.trace.reserve(static_cast<std::size_t>(cfg.epochs));
    double best_total = -1.0;
    GeneMask best_pre = GeneMask::none(env.m_pre.n_genes);
    // In per-step mode the reward reference follows the previous panel's
    // clustering; it starts from (and in fixed mode stays) the pre-filter
    // pseudo-labels.
    ClusterAssignment rolling_reference = env.reference;

    for (int iter = 1; iter <= cfg.epochs; ++iter) {
        const ClusterAssignment& ref = cfg.per_step_reference ? rolling_reference : env.reference;
        ExploreOutcome out = explore_step(env, agents, state, iter, ref);
        if (cfg.per_step_reference && out.mask.count() > 0) rolling_reference = out.labels;
        res.trace.push_back({iter, out.mask.count(), out.reward.r_s, out.reward.r_c,
                             out.reward.r_total, out.nmi});
        if (out.reward.r_total > best_total) {
            best_total = out.reward.r_total;
            best_pre = out.mask;
            res.best = out.reward;
            res.best_iter = iter;
        }
        if (out.reward.r_s > res.best_r_s) {
            res.best_r_s = out.reward.r_s;
            res.best_r_s_iter = iter;
        }
        if (agents[0].buffer.total_pushed() >= cfg.warmup_experiences) {
            parallel_for(std::size_t{0}, agents.size(), cfg.n_threads, [&](std::size_t j) {
                Rng rng(derive_seed(cfg.seed, kTagOpt, agents[j].gene,
                                    static_cast<std::uint64_t>(iter)));
                optimize_agent(agents[j], cfg, rng);
            });
        }
        state = std::move(out.next_state);
        if (cfg.budget_seconds > 0.0 && iter < cfg.epochs) {
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
            if (elapsed.count() > cfg.budget_seconds) {
                res.aborted = true;
                break;
            }
        }
    }

    std::vector<std::size_t> best_full;
    for (std::size_t j : best_pre.indices()) best_full.push_back(env.pre_indices[j]);
    res.best_mask = GeneMask::from_indices(env.n_genes_full, best_full);

    Rng unused(0);
    std::vector<std::size_t> greedy_full;
    for (std::size_t j = 0; j < agents.size(); ++j)
        if (act(agents[j], state, ActMode::greedy, unused) == Action::select)
            greedy_full.push_back(env.pre_indices[j]);
    res.greedy_mask = GeneMask::from_indices(env.n_genes_full, greedy_full);

    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

AblationVariant variant_from_name(std::string_view name) {
    if (name == "full") return AblationVariant::full;
    if (name == "-r" || name == "no-rl") return AblationVariant::no_rl;
    if (name == "-k" || name == "no-knowledge") return AblationVariant::no_knowledge;
    if (name == "-f" || name == "no-filter") return AblationVariant::no_filter;
    if (name == "-a" || name == "all-genes") return AblationVariant::all_genes;
    throw DataError("unknown ablation variant: " + std::string(name));
}

std::string_view variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::full: return "full";
        case AblationVariant::no_rl: return "-r";
        case AblationVariant::no_knowledge: return "-k";
        case AblationVariant::no_filter: return "-f";
        case AblationVariant::all_genes: return "-a";
    }
    return "full";
}

SelectionResult fixed_panel_run(const ExpressionMatrix& m, const GeneMask& mask,
                                const SelectConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    SelectionEnv env = make_selection_env(m, mask, cfg);
    SelectionResult res;
    res.n_prefiltered = env.m_pre.n_genes;
    const double r_s = reward_spatial(env.m_pre, env.reference, env.reward_params);
    const double r_c = reward_compact(res.n_prefiltered, res.n_prefiltered, cfg.lambda);
    res.best = reward_total(r_s, r_c, cfg.alpha);
    res.best_r_s = res.best.r_s;
    res.best_mask = mask;
    res.greedy_mask = mask;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

SelectionResult ablation_run(const ExpressionMatrix& m, AblationVariant variant,
                             const PrefilterConfig& pcfg, const SelectConfig& scfg) {
    switch (variant) {
        case AblationVariant::full: {
            PrefilterResult pre = prefilter_pipeline(m, pcfg);
            return run_selection(m, pre, scfg);
        }
        case AblationVariant::no_knowledge: {
            PrefilterResult pre = prefilter_pipeline(m, pcfg);
            SelectConfig cfg = scfg;
            cfg.inject = false;
            return run_selection(m, pre, cfg);
        }
        case AblationVariant::no_rl: {
            PrefilterResult pre = prefilter_pipeline(m, pcfg);
            return fixed_panel_run(m, pre.mask, scfg);
        }
        case AblationVariant::no_filter: {
            if (m.n_genes > kNoFilterGeneCap)
                throw DataError("unfiltered selection needs one agent per gene; " +
                                std::to_string(m.n_genes) + " genes exceeds the cap of " +
                                std::to_string(kNoFilterGeneCap));
            PrefilterResult pre;
            pre.mask = GeneMask::full(m.n_genes);
            return run_selection(m, pre, scfg);
        }
        case AblationVariant::all_genes:
            return fixed_panel_run(m, GeneMask::full(m.n_genes), scfg);
    }
    throw DataError("unknown ablation variant");
}

GreedyForwardResult greedy_forward(const ExpressionMatrix& m, const GeneMask& pre_mask,
                                   std::size_t budget, const SelectConfig& cfg) {
    SelectionEnv env = make_selection_env(m, pre_mask, cfg);
    const std::size_t p = env.m_pre.n_genes;
    if (budget == 0) throw DataError("greedy panel budget must be positive");
    budget = std::min(budget, p);

    GreedyForwardResult res;
    std::vector<std::size_t> selected;
    std::vector<char> used(p, 0);
    double best_adopted = -1.0;

    // Candidates run in parallel, so each clustering stays single-threaded.
    ClusterParams candidate_params = env.reward_params;
    candidate_params.n_threads = 1;

    for (std::size_t step = 0; step < budget; ++step) {
        // Score every candidate extension; ties keep the lowest gene index.
        std::vector<double> vals(p, -std::numeric_limits<double>::infinity());
        parallel_for(std::size_t{0}, p, cfg.n_threads, [&](std::size_t g) {
            if (used[g]) return;
            std::vector<std::size_t> trial = selected;
            trial.push_back(g);
            GeneMask mask = GeneMask::from_indices(p, trial);
            ClusterAssignment labels =
                pseudo_labels(subset_genes(env.m_pre, mask), candidate_params);
            vals[g] = nmi(labels, env.reference);
        });
        std::size_t best_g = p;
        double best_val = -std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < p; ++g) {
            if (used[g]) continue;
            ++res.evals_total;
            if (vals[g] > best_val) {
                best_val = vals[g];
                best_g = g;
            }
        }
        used[best_g] = 1;
        selected.push_back(best_g);
        res.step_r_s.push_back(best_val);
        if (best_val > best_adopted) {
            best_adopted = best_val;
            res.evals_to_best = res.evals_total;
        }
    }
    res.best_r_s = best_adopted;

    std::vector<std::size_t> full;
    for (std::size_t g : selected) full.push_back(env.pre_indices[g]);
    std::sort(full.begin(), full.end());
    res.mask = GeneMask::from_indices(env.n_genes_full, full);
    return res;
}

}  // namespace genepanel
