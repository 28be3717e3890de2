#include "genepanel/prefilter.hpp"

#include "genepanel/metrics.hpp"
#include "genepanel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace genepanel {

namespace {

constexpr std::uint64_t kTagTree = 0x54524545ULL;

const char* kMethodNames[] = {"variance", "f_statistic", "mutual_info", "stump_forest",
                              "rfe_linear"};

std::vector<double> minmax_normalize(std::vector<double> raw) {
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    if (*lo == *hi) {
        std::fill(raw.begin(), raw.end(), 0.5);
        return raw;
    }
    const double span = *hi - *lo;
    const double base = *lo;
    for (auto& v : raw) v = (v - base) / span;
    return raw;
}

std::vector<double> variance_raw(const ExpressionMatrix& m) {
    std::vector<double> s(m.n_genes, 0.0), s2(m.n_genes, 0.0);
    for (std::size_t i = 0; i < m.n_cells; ++i) {
        for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) {
            s[m.col_idx[k]] += m.values[k];
            s2[m.col_idx[k]] += m.values[k] * m.values[k];
        }
    }
    const double n = static_cast<double>(m.n_cells);
    std::vector<double> raw(m.n_genes);
    for (std::size_t g = 0; g < m.n_genes; ++g) {
        const double mean = s[g] / n;
        raw[g] = std::max(0.0, s2[g] / n - mean * mean);
    }
    return raw;
}

std::vector<double> f_statistic_raw(const ExpressionMatrix& m, const ClusterAssignment& pseudo) {
    const std::uint32_t k = pseudo.n_clusters;
    const double n = static_cast<double>(m.n_cells);
    std::vector<double> raw(m.n_genes, 0.0);
    if (k < 2 || static_cast<double>(k) >= n) return raw;

    std::vector<double> group_n(k, 0.0);
    for (const auto l : pseudo.labels) group_n[l] += 1.0;

    const std::vector<double> cols = to_dense_columns(m);
    std::vector<double> gs(k), gs2(k);
    for (std::size_t g = 0; g < m.n_genes; ++g) {
        const double* col = cols.data() + g * m.n_cells;
        std::fill(gs.begin(), gs.end(), 0.0);
        std::fill(gs2.begin(), gs2.end(), 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < m.n_cells; ++i) {
            const double v = col[i];
            gs[pseudo.labels[i]] += v;
            gs2[pseudo.labels[i]] += v * v;
            total += v;
        }
        const double grand_mean = total / n;
        double ssb = 0.0, ssw = 0.0;
        for (std::uint32_t c = 0; c < k; ++c) {
            if (group_n[c] == 0.0) continue;
            const double gm = gs[c] / group_n[c];
            ssb += group_n[c] * (gm - grand_mean) * (gm - grand_mean);
            ssw += std::max(0.0, gs2[c] - group_n[c] * gm * gm);
        }
        const double msb = ssb / static_cast<double>(k - 1);
        const double msw = ssw / (n - static_cast<double>(k));
        raw[g] = msb / (msw + 1e-12);
    }
    return raw;
}

std::vector<double> mutual_info_raw(const ExpressionMatrix& m, const ClusterAssignment& pseudo,
                                    std::size_t n_bins) {
    const std::uint32_t k = pseudo.n_clusters;
    const double n = static_cast<double>(m.n_cells);
    std::vector<double> raw(m.n_genes, 0.0);
    if (k < 2) return raw;

    std::vector<double> label_p(k, 0.0);
    for (const auto l : pseudo.labels) label_p[l] += 1.0 / n;

    const std::vector<double> cols = to_dense_columns(m);
    std::vector<double> joint(n_bins * k);
    std::vector<double> bin_p(n_bins);
    for (std::size_t g = 0; g < m.n_genes; ++g) {
        const double* col = cols.data() + g * m.n_cells;
        const auto [lo_it, hi_it] = std::minmax_element(col, col + m.n_cells);
        const double lo = *lo_it, hi = *hi_it;
        if (lo == hi) continue;  // constant gene carries no information
        const double width = (hi - lo) / static_cast<double>(n_bins);
        std::fill(joint.begin(), joint.end(), 0.0);
        std::fill(bin_p.begin(), bin_p.end(), 0.0);
        for (std::size_t i = 0; i < m.n_cells; ++i) {
            std::size_t b = static_cast<std::size_t>((col[i] - lo) / width);
            if (b >= n_bins) b = n_bins - 1;
            joint[b * k + pseudo.labels[i]] += 1.0 / n;
            bin_p[b] += 1.0 / n;
        }
        double mi = 0.0;
        for (std::size_t b = 0; b < n_bins; ++b) {
            if (bin_p[b] == 0.0) continue;
            for (std::uint32_t c = 0; c < k; ++c) {
                const double p = joint[b * k + c];
                if (p > 0.0) mi += p * std::log(p / (bin_p[b] * label_p[c]));
            }
        }
        raw[g] = std::max(0.0, mi);
    }
    return raw;
}

// One node split for the stump forest: exhaustive threshold scan over a
// random feature subset, maximizing weighted Gini decrease.
struct SplitResult {
    bool valid = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double gain = 0.0;  // impurity decrease weighted by node fraction
};

double gini(const std::vector<double>& counts, double total) {
    if (total <= 0.0) return 0.0;
    double g = 1.0;
    for (const double c : counts) {
        const double p = c / total;
        g -= p * p;
    }
    return g;
}

SplitResult best_split(const std::vector<double>& cols, std::size_t n_cells,
                       const std::vector<std::uint32_t>& labels, std::uint32_t n_classes,
                       const std::vector<std::uint32_t>& node, double node_fraction,
                       const std::vector<std::size_t>& features) {
    SplitResult best;
    const double n_node = static_cast<double>(node.size());

    std::vector<double> total_counts(n_classes, 0.0);
    for (const auto i : node) total_counts[labels[i]] += 1.0;
    const double node_gini = gini(total_counts, n_node);
    if (node_gini == 0.0) return best;

    std::vector<std::pair<double, std::uint32_t>> vals(node.size());
    std::vector<double> left_counts(n_classes);
    for (const std::size_t f : features) {
        const double* col = cols.data() + f * n_cells;
        for (std::size_t t = 0; t < node.size(); ++t)
            vals[t] = {col[node[t]], labels[node[t]]};
        std::sort(vals.begin(), vals.end());
        if (vals.front().first == vals.back().first) continue;

        std::fill(left_counts.begin(), left_counts.end(), 0.0);
        double n_left = 0.0;
        for (std::size_t t = 0; t + 1 < vals.size(); ++t) {
            left_counts[vals[t].second] += 1.0;
            n_left += 1.0;
            if (vals[t].first == vals[t + 1].first) continue;
            const double n_right = n_node - n_left;
            double gl = 1.0, gr = 1.0;
            for (std::uint32_t c = 0; c < n_classes; ++c) {
                const double pl = left_counts[c] / n_left;
                const double pr = (total_counts[c] - left_counts[c]) / n_right;
                gl -= pl * pl;
                gr -= pr * pr;
            }
            const double child = (n_left / n_node) * gl + (n_right / n_node) * gr;
            const double gain = node_fraction * (node_gini - child);
            // Features ascend and thresholds ascend within a feature, so
            // requiring strict improvement keeps the lowest (feature,
            // threshold) pair on ties.
            if (gain > best.gain) {
                best.valid = true;
                best.feature = f;
                best.threshold = 0.5 * (vals[t].first + vals[t + 1].first);
                best.gain = gain;
            }
        }
    }
    return best;
}

std::vector<double> stump_forest_raw(const ExpressionMatrix& m, const ClusterAssignment& pseudo,
                                     std::size_t n_trees, std::uint64_t seed) {
    std::vector<double> raw(m.n_genes, 0.0);
    const std::vector<double> cols = to_dense_columns(m);
    const std::size_t n = m.n_cells;
    const std::size_t mtry = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(m.n_genes))));

    std::vector<std::size_t> gene_pool(m.n_genes);
    std::iota(gene_pool.begin(), gene_pool.end(), 0);

    for (std::size_t t = 0; t < n_trees; ++t) {
        Rng rng(derive_seed(seed, kTagTree, t));
        std::vector<std::uint32_t> sample(n);
        for (auto& s : sample) s = static_cast<std::uint32_t>(rng.next_index(n));

        const auto sample_features = [&]() {
            std::vector<std::size_t> pool = gene_pool;
            std::vector<std::size_t> chosen;
            chosen.reserve(mtry);
            for (std::size_t j = 0; j < mtry && j < pool.size(); ++j) {
                const std::size_t pick = j + rng.next_index(pool.size() - j);
                std::swap(pool[j], pool[pick]);
                chosen.push_back(pool[j]);
            }
            std::sort(chosen.begin(), chosen.end());
            return chosen;
        };

        // Root split plus one split per child: depth-2 trees.
        struct NodeTask {
            std::vector<std::uint32_t> items;
            int depth;
        };
        std::vector<NodeTask> stack;
        stack.push_back({sample, 0});
        while (!stack.empty()) {
            NodeTask task = std::move(stack.back());
            stack.pop_back();
            if (task.items.size() < 2) continue;
            const double frac = static_cast<double>(task.items.size()) / static_cast<double>(n);
            const SplitResult split = best_split(cols, n, pseudo.labels, pseudo.n_clusters,
                                                 task.items, frac, sample_features());
            if (!split.valid) continue;
            raw[split.feature] += split.gain;
            if (task.depth + 1 >= 2) continue;
            NodeTask left{{}, task.depth + 1}, right{{}, task.depth + 1};
            const double* col = cols.data() + split.feature * n;
            for (const auto i : task.items)
                (col[i] <= split.threshold ? left.items : right.items).push_back(i);
            // Push right first so the left child is processed first.
            stack.push_back(std::move(right));
            stack.push_back(std::move(left));
        }
    }
    return raw;
}

std::vector<double> rfe_linear_raw(const ExpressionMatrix& m, const ClusterAssignment& pseudo,
                                   const PrefilterConfig& cfg) {
    const std::size_t n = m.n_cells;
    const std::size_t p = m.n_genes;
    std::vector<double> raw(p, 0.0);
    if (p == 1) {
        raw[0] = 1.0;
        return raw;
    }

    // Standardized feature columns.
    std::vector<double> cols = to_dense_columns(m);
    for (std::size_t g = 0; g < p; ++g) {
        double* col = cols.data() + g * n;
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += col[i];
            s2 += col[i] * col[i];
        }
        const double mean = s / static_cast<double>(n);
        const double var = std::max(0.0, s2 / static_cast<double>(n) - mean * mean);
        const double sd = std::sqrt(var);
        for (std::size_t i = 0; i < n; ++i) col[i] = sd > 0.0 ? (col[i] - mean) / sd : 0.0;
    }

    const std::uint32_t n_classes = std::max<std::uint32_t>(pseudo.n_clusters, 1);
    std::vector<std::size_t> active(p);
    std::iota(active.begin(), active.end(), 0);

    std::size_t round = 1;
    while (active.size() > 1) {
        const std::size_t pa = active.size();
        std::vector<double> importance(pa, 0.0);

        // One-vs-rest logistic regression, plain gradient descent from zero.
        std::vector<double> w(pa), z(n), margin(n);
        for (std::uint32_t cls = 0; cls < n_classes; ++cls) {
            std::fill(w.begin(), w.end(), 0.0);
            double b = 0.0;
            for (std::size_t it = 0; it < cfg.rfe_iters; ++it) {
                std::fill(z.begin(), z.end(), b);
                for (std::size_t j = 0; j < pa; ++j) {
                    const double* col = cols.data() + active[j] * n;
                    const double wj = w[j];
                    if (wj != 0.0)
                        for (std::size_t i = 0; i < n; ++i) z[i] += wj * col[i];
                }
                double gb = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double target = pseudo.labels[i] == cls ? 1.0 : 0.0;
                    margin[i] = 1.0 / (1.0 + std::exp(-z[i])) - target;
                    gb += margin[i];
                }
                gb /= static_cast<double>(n);
                for (std::size_t j = 0; j < pa; ++j) {
                    const double* col = cols.data() + active[j] * n;
                    double gw = 0.0;
                    for (std::size_t i = 0; i < n; ++i) gw += margin[i] * col[i];
                    gw = gw / static_cast<double>(n) + cfg.rfe_l2 * w[j];
                    w[j] -= cfg.rfe_lr * gw;
                }
                b -= cfg.rfe_lr * gb;
            }
            for (std::size_t j = 0; j < pa; ++j) importance[j] += std::fabs(w[j]);
        }

        std::vector<std::size_t> order(pa);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b2) {
            if (importance[a] != importance[b2]) return importance[a] < importance[b2];
            return active[a] < active[b2];
        });

        std::size_t n_drop = pa / 2;
        if (n_drop == 0) n_drop = 1;
        std::vector<std::size_t> dropped, kept;
        for (std::size_t r = 0; r < pa; ++r)
            (r < n_drop ? dropped : kept).push_back(active[order[r]]);
        for (const auto g : dropped) raw[g] = static_cast<double>(round);
        std::sort(kept.begin(), kept.end());
        active = std::move(kept);
        ++round;
    }
    raw[active.front()] = static_cast<double>(round);
    return raw;
}

}  // namespace

std::string_view method_name(ScoreMethod m) { return kMethodNames[static_cast<int>(m)]; }

ScoreMethod method_from_name(std::string_view name) {
    for (int i = 0; i < 5; ++i)
        if (name == kMethodNames[i]) return static_cast<ScoreMethod>(i);
    throw DataError("unknown scoring method '" + std::string(name) + "'");
}

std::vector<ScoreMethod> all_methods() {
    return {ScoreMethod::variance, ScoreMethod::f_statistic, ScoreMethod::mutual_info,
            ScoreMethod::stump_forest, ScoreMethod::rfe_linear};
}

GeneScores score_genes(const ExpressionMatrix& m, const ClusterAssignment& pseudo,
                       ScoreMethod method, const PrefilterConfig& cfg) {
    if (m.n_genes == 0 || m.n_cells == 0) throw DataError("cannot score an empty matrix");
    if (pseudo.labels.size() != m.n_cells)
        throw DataError("pseudo-label count does not match cell count");
    if (pseudo.n_clusters < 2)
        throw DataError("degenerate labels: scoring needs at least 2 pseudo-clusters");

    std::vector<double> raw;
    switch (method) {
        case ScoreMethod::variance:
            raw = variance_raw(m);
            break;
        case ScoreMethod::f_statistic:
            raw = f_statistic_raw(m, pseudo);
            break;
        case ScoreMethod::mutual_info:
            raw = mutual_info_raw(m, pseudo, cfg.mi_bins);
            break;
        case ScoreMethod::stump_forest:
            raw = stump_forest_raw(m, pseudo, cfg.forest_trees, cfg.seed);
            break;
        case ScoreMethod::rfe_linear:
            raw = rfe_linear_raw(m, pseudo, cfg);
            break;
    }
    return GeneScores{method, minmax_normalize(std::move(raw))};
}

double evaluate_reliability(const ExpressionMatrix& m, const GeneScores& scores,
                            std::size_t top_k, const ClusterAssignment& reference,
                            const ClusterParams& params) {
    if (scores.scores.size() != m.n_genes)
        throw DataError("score count does not match gene count");
    if (top_k == 0) throw DataError("reliability evaluation needs top_k >= 1");

    const std::size_t k = std::min(top_k, m.n_genes);
    std::vector<std::size_t> order(m.n_genes);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores.scores[a] > scores.scores[b];
    });
    order.resize(k);

    const GeneMask mask = GeneMask::from_indices(m.n_genes, order);
    const ExpressionMatrix sub = subset_genes(m, mask);
    const ClusterAssignment labels = pseudo_labels(sub, params);
    return nmi(labels, reference);
}

MetaVote meta_vote(const std::vector<GeneScores>& scores,
                   const std::vector<double>& reliabilities) {
    if (scores.empty()) throw DataError("meta vote needs at least one method");
    if (scores.size() != reliabilities.size())
        throw DataError("method and reliability counts differ");
    const std::size_t n_genes = scores.front().scores.size();
    for (const auto& s : scores)
        if (s.scores.size() != n_genes) throw DataError("score vectors differ in length");
    for (const double p : reliabilities)
        if (!(p >= 0.0)) throw DataError("reliabilities must be non-negative");

    MetaVote out;
    out.weights.resize(scores.size());
    double total = 0.0;
    for (const double p : reliabilities) total += p;
    if (total > 0.0) {
        for (std::size_t j = 0; j < scores.size(); ++j) out.weights[j] = reliabilities[j] / total;
    } else {
        // No method demonstrated any reliability; fall back to equal voice.
        std::fill(out.weights.begin(), out.weights.end(), 1.0 / static_cast<double>(scores.size()));
    }

    out.agg_scores.assign(n_genes, 0.0);
    for (std::size_t j = 0; j < scores.size(); ++j) {
        const double w = out.weights[j];
        for (std::size_t g = 0; g < n_genes; ++g) out.agg_scores[g] += w * scores[j].scores[g];
    }
    return out;
}

TwoSigmaCut two_sigma_filter(const std::vector<double>& agg_scores, std::size_t min_genes) {
    if (agg_scores.empty()) throw DataError("two-sigma filter on empty scores");
    const std::size_t n = agg_scores.size();
    double s = 0.0, s2 = 0.0;
    for (const double v : agg_scores) {
        s += v;
        s2 += v * v;
    }
    TwoSigmaCut cut;
    cut.mu = s / static_cast<double>(n);
    cut.sigma = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - cut.mu * cut.mu));
    const double threshold = cut.mu + 2.0 * cut.sigma;

    cut.mask = GeneMask::none(n);
    std::size_t count = 0;
    for (std::size_t g = 0; g < n; ++g) {
        if (agg_scores[g] > threshold) {
            cut.mask.set(g);
            ++count;
        }
    }

    const std::size_t floor_count = std::min(min_genes, n);
    if (count < floor_count) {
        cut.fallback_used = true;
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return agg_scores[a] > agg_scores[b];
        });
        cut.mask = GeneMask::none(n);
        for (std::size_t r = 0; r < floor_count; ++r) cut.mask.set(order[r]);
    }
    return cut;
}

PrefilterResult prefilter_pipeline(const ExpressionMatrix& m, const PrefilterConfig& cfg) {
    if (cfg.methods.empty()) throw DataError("prefilter needs at least one method");

    PrefilterResult out;
    out.reference = pseudo_labels(m, cfg.cluster);

    std::size_t top_k = cfg.reliability_top_k;
    if (top_k == 0) top_k = std::max<std::size_t>(1, std::min<std::size_t>(500, m.n_genes / 10));

    std::vector<GeneScores> all_scores;
    std::vector<double> reliabilities;
    for (const auto method : cfg.methods) {
        MethodOutcome outcome;
        outcome.method = method;
        outcome.scores = score_genes(m, out.reference, method, cfg);
        outcome.reliability =
            evaluate_reliability(m, outcome.scores, top_k, out.reference, cfg.cluster);
        all_scores.push_back(outcome.scores);
        reliabilities.push_back(outcome.reliability);
        out.methods.push_back(std::move(outcome));
    }

    const MetaVote vote = meta_vote(all_scores, reliabilities);
    for (std::size_t j = 0; j < out.methods.size(); ++j) out.methods[j].weight = vote.weights[j];
    out.agg_scores = vote.agg_scores;

    const TwoSigmaCut cut = two_sigma_filter(out.agg_scores, cfg.min_genes);
    out.mu = cut.mu;
    out.sigma = cut.sigma;
    out.fallback_used = cut.fallback_used;
    out.mask = cut.mask;
    return out;
}

}  // namespace genepanel
