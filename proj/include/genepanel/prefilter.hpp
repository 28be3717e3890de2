#pragma once

#include "genepanel/clustering.hpp"
#include "genepanel/expression_matrix.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

// Ensemble gene pre-filtering: several scoring methods rank genes against
// pseudo-labels, each method is weighted by how well its own top panel
// reproduces the reference clustering, and the weighted meta-vote is cut at
// two standard deviations above its mean.

namespace genepanel {

enum class ScoreMethod {
    variance,      // population variance of the gene
    f_statistic,   // one-way ANOVA F against pseudo-labels
    mutual_info,   // binned mutual information with pseudo-labels
    stump_forest,  // Gini importance across a forest of depth-2 trees
    rfe_linear,    // elimination round under one-vs-rest logistic regression
};

std::string_view method_name(ScoreMethod m);
ScoreMethod method_from_name(std::string_view name);
std::vector<ScoreMethod> all_methods();

/// Min-max normalized scores in [0,1], one per gene.  Unless every raw score
/// is equal (then all become 0.5), at least one gene scores exactly 1.
struct GeneScores {
    ScoreMethod method;
    std::vector<double> scores;
};

struct PrefilterConfig {
    std::vector<ScoreMethod> methods = all_methods();
    std::size_t min_genes = 30;        // fallback floor for the two-sigma cut
    std::size_t reliability_top_k = 0; // 0 = min(500, n_genes/10), at least 1
    ClusterParams cluster;
    std::uint64_t seed = 0;
    int n_threads = 1;

    // method internals
    std::size_t mi_bins = 8;
    std::size_t forest_trees = 50;
    std::size_t rfe_iters = 100;
    double rfe_lr = 0.1;
    double rfe_l2 = 1e-4;
};

/// Scores every gene with one method.  pseudo supplies the supervision for
/// the label-aware methods.
GeneScores score_genes(const ExpressionMatrix& m, const ClusterAssignment& pseudo,
                       ScoreMethod method, const PrefilterConfig& cfg);

/// Reliability of a scoring method: cluster the matrix restricted to the
/// method's top_k genes (ties toward the lower index) and report NMI against
/// the reference labels.
double evaluate_reliability(const ExpressionMatrix& m, const GeneScores& scores,
                            std::size_t top_k, const ClusterAssignment& reference,
                            const ClusterParams& params);

/// Normalizes reliabilities into weights (w_i = p_i / sum_j p_j; uniform when
/// every reliability is zero) and returns the weighted per-gene score
/// aggregate.  When every method assigns gene g the same score s, the
/// aggregate reproduces s up to rounding.
struct MetaVote {
    std::vector<double> weights;     // per method, sums to 1
    std::vector<double> agg_scores;  // per gene
};
MetaVote meta_vote(const std::vector<GeneScores>& scores,
                   const std::vector<double>& reliabilities);

/// Keeps genes whose aggregate exceeds mean + 2 std (population std,
/// strict >).  If fewer than min_genes qualify, falls back to the top
/// min_genes by score, ties toward the lower index.
struct TwoSigmaCut {
    GeneMask mask;
    double mu = 0.0;
    double sigma = 0.0;
    bool fallback_used = false;
};
TwoSigmaCut two_sigma_filter(const std::vector<double>& agg_scores, std::size_t min_genes);

struct MethodOutcome {
    ScoreMethod method;
    GeneScores scores;
    double reliability = 0.0;
    double weight = 0.0;
};

struct PrefilterResult {
    std::vector<MethodOutcome> methods;
    std::vector<double> agg_scores;
    double mu = 0.0;
    double sigma = 0.0;
    bool fallback_used = false;
    GeneMask mask;                // the pre-filtered gene set
    ClusterAssignment reference;  // pseudo-labels of the full matrix
};

/// Full pre-filtering stage: reference pseudo-labels on the full matrix,
/// per-method scores and reliabilities, meta-vote, two-sigma cut.
PrefilterResult prefilter_pipeline(const ExpressionMatrix& m, const PrefilterConfig& cfg);

}  // namespace genepanel
