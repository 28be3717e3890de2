#pragma once

#include "genepanel/clustering.hpp"
#include "genepanel/expression_matrix.hpp"
#include "genepanel/neural.hpp"
#include "genepanel/prefilter.hpp"
#include "genepanel/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Reinforced panel selection.  One actor-critic agent per pre-filtered gene
// decides select/discard against a shared state (the autoencoder embedding of
// the currently selected submatrix); all agents share one reward combining
// clustering agreement with panel compactness.  Experiences go through
// per-agent prioritized replay, seeded first with the panels of the scoring
// methods so the agents start from the ensemble's knowledge.

namespace genepanel {

enum class Action : std::uint8_t { discard = 0, select = 1 };

struct Experience {
    std::vector<double> state;       // shared state when acting
    std::vector<double> next_state;  // zero vector marks the terminal state
    Action action = Action::discard;
    double reward = 0.0;
    double priority = 1.0;
};

/// Ring buffer with priority-proportional sampling: P(i) ~ priority_i^exponent,
/// drawn with replacement.  Pushing past capacity overwrites the oldest entry.
class PrioritizedBuffer {
public:
    PrioritizedBuffer(std::size_t capacity, double exponent)
        : capacity_(capacity), exponent_(exponent) {}

    void push(Experience e);
    std::size_t size() const { return items_.size(); }
    std::uint64_t total_pushed() const { return pushed_; }
    const Experience& at(std::size_t i) const { return items_[i]; }
    void set_priority(std::size_t i, double p);
    std::vector<std::size_t> sample(std::size_t count, Rng& rng) const;

private:
    std::size_t capacity_;
    double exponent_;
    std::vector<Experience> items_;
    std::size_t next_ = 0;
    std::uint64_t pushed_ = 0;
};

struct GeneAgent {
    std::size_t gene = 0;  // index within the pre-filtered set
    nn::DenseNet actor;    // state -> 8 -> 2, softmax over {discard, select}
    nn::DenseNet critic;   // state -> 8 -> 1
    nn::AdamState actor_opt;
    nn::AdamState critic_opt;
    PrioritizedBuffer buffer;
};

struct SelectConfig {
    double alpha = 0.5;    // weight of the spatial reward
    double lambda = 0.7;   // compactness denominator scale
    double gamma = 0.9;    // discount
    double lr = 0.005;
    int epochs = 400;
    std::size_t minibatch = 32;
    std::size_t warmup_experiences = 64;  // stored experiences before optimization starts
    std::size_t buffer_capacity = 400;
    double priority_exponent = 0.6;
    int ae_epochs = 10;
    bool inject = true;
    std::vector<ScoreMethod> inject_methods = all_methods();
    // Reward reference: fixed pseudo-labels of the pre-filtered matrix, or
    // re-derived each step from the previously selected panel.
    bool per_step_reference = false;
    double budget_seconds = 0.0;  // 0 disables the wall-clock budget
    std::uint64_t seed = 0;
    int n_threads = 1;
    ClusterParams cluster;  // template for reward clustering; seed is derived
};

/// Compactness reward (P - n) / (P + lambda * n) for n of P genes kept.
/// 1 when nothing is kept, 0 when everything is; strictly decreasing in n.
double reward_compact(std::size_t n_prefilter, std::size_t n_selected, double lambda);

/// Spatial separability reward: NMI between the clustering of the selected
/// submatrix and the reference labels.  Empty selections score 0; selecting
/// the full reference set reproduces the identical pipeline and scores 1.
double reward_spatial(const ExpressionMatrix& m_selected, const ClusterAssignment& reference,
                      const ClusterParams& params);

struct RewardBreakdown {
    double r_s = 0.0;
    double r_c = 0.0;
    double r_total = 0.0;
};

/// r_total = alpha * r_s + (1 - alpha) * r_c.  Inputs must lie in [0, 1].
RewardBreakdown reward_total(double r_s, double r_c, double alpha);

enum class ActMode { sample, greedy };

/// Draws or argmaxes the agent's action for the given state.  Greedy ties
/// resolve to select.
Action act(const GeneAgent& agent, std::span<const double> state, ActMode mode, Rng& rng);

/// Fixed selection environment: pre-filtered submatrix, reward clustering
/// parameters (seeded once, shared by the reference and every re-clustering)
/// and the reference pseudo-labels.
struct SelectionEnv {
    ExpressionMatrix m_pre;
    std::vector<std::size_t> pre_indices;  // positions in the original gene space
    std::size_t n_genes_full = 0;
    ClusterParams reward_params;
    ClusterAssignment reference;
    SelectConfig cfg;
};

SelectionEnv make_selection_env(const ExpressionMatrix& m, const GeneMask& pre_mask,
                                const SelectConfig& cfg);

/// Fresh seeded agents, one per pre-filtered gene.
std::vector<GeneAgent> make_agents(const SelectionEnv& env);

/// Shared state of the full pre-filtered selection (iteration 0).
std::vector<double> initial_state(const SelectionEnv& env);

/// Pushes one experience per agent for each configured injection method:
/// starting from s0 (the full pre-filter state), adopt the method's top-half
/// panel, collect the combined reward, land in the panel's encoded state.
/// Priority 1.  Returns the number of methods injected (0 is a no-op; the
/// caller decides whether that deserves a warning).
std::size_t inject_knowledge(const SelectionEnv& env, std::vector<GeneAgent>& agents,
                             std::span<const double> s0);

struct ExploreOutcome {
    std::vector<Action> actions;      // one per agent
    GeneMask mask;                    // over the pre-filtered gene space
    RewardBreakdown reward;
    double nmi = 0.0;                 // vs the fixed pseudo-labels (== r_s unless
                                      // the reward reference is per-step)
    ClusterAssignment labels;         // clustering of the selection; empty mask -> empty
    std::vector<double> next_state;
};

/// One shared exploration step at iteration iter (1-based): every agent
/// samples an action from its actor, the joint mask is rewarded once against
/// reward_reference, and the same transition (with its own action) is pushed
/// into every agent's buffer with priority |TD error| + 1e-3.
ExploreOutcome explore_step(const SelectionEnv& env, std::vector<GeneAgent>& agents,
                            std::span<const double> state, int iter,
                            const ClusterAssignment& reward_reference);

struct OptimizeResult {
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    bool skipped = false;  // buffer smaller than the minibatch
};

/// One prioritized replay update: sample a minibatch, move the critic toward
/// the one-step targets r + gamma * V(s') (zero bootstrap on terminal
/// states), step the actor along advantage-weighted log-likelihood, and
/// refresh the sampled priorities to |TD error| + 1e-3.
OptimizeResult optimize_agent(GeneAgent& agent, const SelectConfig& cfg, Rng& rng);

struct TraceRow {
    int iter = 0;
    std::size_t n_selected = 0;
    double r_s = 0.0;
    double r_c = 0.0;
    double r_total = 0.0;
    double nmi = 0.0;
};

struct SelectionResult {
    GeneMask best_mask;        // over the original gene space
    RewardBreakdown best;      // reward of best_mask
    int best_iter = 0;         // iteration that produced best_mask
    double best_r_s = 0.0;     // highest spatial reward seen
    int best_r_s_iter = 0;
    GeneMask greedy_mask;      // greedy policy decode at the final state
    std::vector<TraceRow> trace;
    std::size_t n_prefiltered = 0;
    bool aborted = false;      // wall-clock budget exhausted
    double seconds = 0.0;
};

/// Full reinforced selection over the pre-filtered genes: knowledge
/// injection, epochs alternating exploration and per-agent optimization,
/// best-mask tracking by total reward (ties keep the earliest iteration).
SelectionResult run_selection(const ExpressionMatrix& m, const PrefilterResult& pre,
                              const SelectConfig& cfg);

enum class AblationVariant {
    full,
    no_rl,         // -r: stop after pre-filtering
    no_knowledge,  // -k: no injected experiences
    no_filter,     // -f: agents over every gene, capped
    all_genes,     // -a: keep the full gene set
};

AblationVariant variant_from_name(std::string_view name);
std::string_view variant_name(AblationVariant v);

/// Degenerate run whose panel is fixed up front (no agents).  Rewards are
/// still measured honestly against the panel's own reference clustering, so
/// the full panel scores r_s = 1 and r_c = 0.
SelectionResult fixed_panel_run(const ExpressionMatrix& m, const GeneMask& mask,
                                const SelectConfig& cfg);

/// Maximum gene count for the -f variant (one agent per gene).
inline constexpr std::size_t kNoFilterGeneCap = 2000;

SelectionResult ablation_run(const ExpressionMatrix& m, AblationVariant variant,
                             const PrefilterConfig& pcfg, const SelectConfig& scfg);

struct GreedyForwardResult {
    GeneMask mask;                  // over the original gene space
    std::vector<double> step_r_s;   // adopted panel reward after each added gene
    double best_r_s = 0.0;
    std::size_t evals_total = 0;
    std::size_t evals_to_best = 0;  // candidate evaluations consumed when best was reached
};

/// Greedy forward baseline over the pre-filtered genes: grow the panel one
/// gene at a time, always adding the candidate whose panel clusters closest
/// to the reference (ties toward the lower gene index), up to budget genes.
GreedyForwardResult greedy_forward(const ExpressionMatrix& m, const GeneMask& pre_mask,
                                   std::size_t budget, const SelectConfig& cfg);

}  // namespace genepanel
