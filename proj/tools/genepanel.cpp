// Command-line surface for the gene panel selection pipeline.
//
// Subcommands: synth, prefilter, select, evaluate, compare.
// Exit codes: 0 success, 2 usage error, 4 wall-clock budget abort,
// 3 everything the data can do wrong (parse errors, invariant violations).

#include "genepanel/clustering.hpp"
#include "genepanel/expression_matrix.hpp"
#include "genepanel/kernels.hpp"
#include "genepanel/metrics.hpp"
#include "genepanel/prefilter.hpp"
#include "genepanel/rng.hpp"
#include "genepanel/selection.hpp"
#include "genepanel/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace gp = genepanel;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitBudget = 4;
constexpr int kReportSchema = 1;

constexpr std::uint64_t kTagEval = 0x4556414c;      // CLI-level evaluation clustering
constexpr std::uint64_t kTagRandomK = 0x524e444b;   // compare's random panel

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// shared option bundles

struct MatrixOpts {
    std::string path;
    std::string genes_in = "columns";
    bool raw = false;
    double target_sum = 1e4;
};

void add_matrix_opts(CLI::App* cmd, MatrixOpts& o) {
    cmd->add_option("--matrix", o.path,
                    "expression matrix: dense CSV, or MatrixMarket when the path ends in .mtx "
                    "(sidecars <path>.genes.txt and <path>.cells.txt)")
        ->required();
    cmd->add_option("--genes-in", o.genes_in, "CSV orientation: genes in columns or rows")
        ->check(CLI::IsMember({"columns", "rows"}))
        ->capture_default_str();
    cmd->add_flag("--raw", o.raw, "skip library-size normalization and log1p");
    cmd->add_option("--target-sum", o.target_sum, "per-cell sum for library-size normalization")
        ->capture_default_str();
}

gp::ExpressionMatrix load_matrix(const MatrixOpts& o) {
    std::filesystem::path p = o.path;
    gp::ExpressionMatrix m;
    if (p.extension() == ".mtx") {
        m = gp::load_matrix_market(p, o.path + ".genes.txt", o.path + ".cells.txt");
    } else {
        m = gp::load_csv(p, o.genes_in == "rows" ? gp::GeneAxis::rows : gp::GeneAxis::columns);
    }
    if (!o.raw) m = gp::normalize(m, o.target_sum);
    return m;
}

struct ClusterOpts {
    std::size_t k_neighbors = 15;
    double snn_min_weight = 1.0 / 15.0;
    double resolution = 1.0;
    std::string metric = "euclidean";
};

void add_cluster_opts(CLI::App* cmd, ClusterOpts& o) {
    cmd->add_option("--k-neighbors", o.k_neighbors, "kNN graph neighbor count")
        ->capture_default_str();
    cmd->add_option("--snn-min-weight", o.snn_min_weight,
                    "prune shared-neighbor edges below this Jaccard weight")
        ->capture_default_str();
    cmd->add_option("--resolution", o.resolution, "community detection resolution")
        ->capture_default_str();
    cmd->add_option("--metric", o.metric, "kNN distance metric")
        ->check(CLI::IsMember({"euclidean", "cosine"}))
        ->capture_default_str();
}

gp::ClusterParams to_params(const ClusterOpts& o, std::uint64_t seed, int threads) {
    gp::ClusterParams p;
    p.k_neighbors = o.k_neighbors;
    p.snn_min_weight = o.snn_min_weight;
    p.resolution = o.resolution;
    p.metric = o.metric == "cosine" ? gp::DistanceMetric::cosine : gp::DistanceMetric::euclidean;
    p.seed = seed;
    p.n_threads = threads;
    return p;
}

ordered_json cluster_echo(const ClusterOpts& o) {
    ordered_json j;
    j["k_neighbors"] = o.k_neighbors;
    j["snn_min_weight"] = o.snn_min_weight;
    j["resolution"] = o.resolution;
    j["metric"] = o.metric;
    return j;
}

ordered_json matrix_echo(const MatrixOpts& o) {
    ordered_json j;
    j["matrix"] = o.path;
    j["genes_in"] = o.genes_in;
    j["raw"] = o.raw;
    j["target_sum"] = o.target_sum;
    return j;
}

struct PrefilterOpts {
    std::vector<std::string> methods;  // empty = all
    std::size_t min_genes = 30;
    std::size_t top_k = 0;  // 0 = auto
};

void add_prefilter_opts(CLI::App* cmd, PrefilterOpts& o) {
    std::vector<std::string> names;
    for (gp::ScoreMethod m : gp::all_methods()) names.emplace_back(gp::method_name(m));
    cmd->add_option("--methods", o.methods, "scoring methods for the ensemble")
        ->delimiter(',')
        ->check(CLI::IsMember(names));
    cmd->add_option("--min-genes", o.min_genes,
                    "fallback panel size when the two-sigma cut selects fewer genes")
        ->capture_default_str();
    cmd->add_option("--top-k", o.top_k,
                    "panel size for reliability evaluation (0 = min(500, n_genes/10))")
        ->capture_default_str();
}

std::vector<gp::ScoreMethod> parse_methods(const std::vector<std::string>& names) {
    if (names.empty()) return gp::all_methods();
    std::vector<gp::ScoreMethod> out;
    for (const std::string& n : names) out.push_back(gp::method_from_name(n));
    return out;
}

gp::PrefilterConfig to_prefilter_config(const PrefilterOpts& o, const ClusterOpts& c,
                                        std::uint64_t seed, int threads) {
    gp::PrefilterConfig cfg;
    cfg.methods = parse_methods(o.methods);
    cfg.min_genes = o.min_genes;
    cfg.reliability_top_k = o.top_k;
    cfg.cluster = to_params(c, seed, threads);
    cfg.seed = seed;
    cfg.n_threads = threads;
    return cfg;
}

ordered_json prefilter_echo(const PrefilterOpts& o) {
    ordered_json j;
    ordered_json names = ordered_json::array();
    for (gp::ScoreMethod m : parse_methods(o.methods)) names.push_back(gp::method_name(m));
    j["methods"] = names;
    j["min_genes"] = o.min_genes;
    j["reliability_top_k"] = o.top_k;
    return j;
}

struct SelectOpts {
    double alpha = 0.5;
    double lambda = 0.7;
    double gamma = 0.9;
    double lr = 0.005;
    int epochs = 400;
    std::size_t minibatch = 32;
    std::size_t warmup = 64;
    std::size_t capacity = 400;
    double priority_exponent = 0.6;
    int ae_epochs = 10;
    bool no_inject = false;
    bool per_step_reference = false;
    double budget_seconds = 0.0;
};

void add_select_opts(CLI::App* cmd, SelectOpts& o) {
    cmd->add_option("--alpha", o.alpha, "weight of the spatial reward in [0,1]")
        ->capture_default_str();
    cmd->add_option("--lambda", o.lambda, "compactness reward scale")->capture_default_str();
    cmd->add_option("--gamma", o.gamma, "discount factor")->capture_default_str();
    cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--epochs", o.epochs, "exploration/optimization iterations")
        ->capture_default_str();
    cmd->add_option("--minibatch", o.minibatch, "replay minibatch size")->capture_default_str();
    cmd->add_option("--warmup", o.warmup, "stored experiences before optimization starts")
        ->capture_default_str();
    cmd->add_option("--capacity", o.capacity, "replay buffer capacity")->capture_default_str();
    cmd->add_option("--priority-exponent", o.priority_exponent,
                    "replay sampling probability exponent")
        ->capture_default_str();
    cmd->add_option("--ae-epochs", o.ae_epochs, "autoencoder epochs per state encoding")
        ->capture_default_str();
    cmd->add_flag("--no-inject", o.no_inject, "skip knowledge injection");
    cmd->add_flag("--per-step-reference", o.per_step_reference,
                  "re-derive the reward reference from the previous panel each step");
    cmd->add_option("--budget-seconds", o.budget_seconds,
                    "wall-clock budget; exceeding it aborts with a partial trace (0 = off)")
        ->capture_default_str();
}

gp::SelectConfig to_select_config(const SelectOpts& o, const ClusterOpts& c,
                                  const PrefilterOpts& p, std::uint64_t seed, int threads) {
    gp::SelectConfig cfg;
    cfg.alpha = o.alpha;
    cfg.lambda = o.lambda;
    cfg.gamma = o.gamma;
    cfg.lr = o.lr;
    cfg.epochs = o.epochs;
    cfg.minibatch = o.minibatch;
    cfg.warmup_experiences = o.warmup;
    cfg.buffer_capacity = o.capacity;
    cfg.priority_exponent = o.priority_exponent;
    cfg.ae_epochs = o.ae_epochs;
    cfg.inject = !o.no_inject;
    cfg.inject_methods = parse_methods(p.methods);
    cfg.per_step_reference = o.per_step_reference;
    cfg.budget_seconds = o.budget_seconds;
    cfg.seed = seed;
    cfg.n_threads = threads;
    cfg.cluster = to_params(c, seed, threads);
    return cfg;
}

ordered_json select_echo(const SelectOpts& o) {
    ordered_json j;
    j["alpha"] = o.alpha;
    j["lambda"] = o.lambda;
    j["gamma"] = o.gamma;
    j["lr"] = o.lr;
    j["epochs"] = o.epochs;
    j["minibatch"] = o.minibatch;
    j["warmup"] = o.warmup;
    j["capacity"] = o.capacity;
    j["priority_exponent"] = o.priority_exponent;
    j["ae_epochs"] = o.ae_epochs;
    j["inject"] = !o.no_inject;
    j["per_step_reference"] = o.per_step_reference;
    j["budget_seconds"] = o.budget_seconds;
    return j;
}

// ---------------------------------------------------------------------------
// output helpers

std::vector<std::string> panel_ids(const gp::GeneMask& mask,
                                   const std::vector<std::string>& gene_ids) {
    std::vector<std::string> out;
    for (std::size_t i : mask.indices()) out.push_back(gene_ids[i]);
    return out;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<gp::TraceRow>& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw gp::DataError("cannot open trace file for writing: " + path.string());
    out << "iter,n_selected,r_s,r_c,r_total,nmi\n";
    for (const gp::TraceRow& r : trace) {
        out << r.iter << ',' << r.n_selected << ',' << fmt_g17(r.r_s) << ',' << fmt_g17(r.r_c)
            << ',' << fmt_g17(r.r_total) << ',' << fmt_g17(r.nmi) << '\n';
    }
    if (!out) throw gp::DataError("failed writing trace file: " + path.string());
}

void write_json(const std::filesystem::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw gp::DataError("cannot open report file for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw gp::DataError("failed writing report file: " + path.string());
}

ordered_json prefilter_summary(const gp::PrefilterResult& pre,
                               const std::vector<std::string>& gene_ids) {
    ordered_json j;
    ordered_json methods = ordered_json::array();
    for (const gp::MethodOutcome& mo : pre.methods) {
        ordered_json row;
        row["method"] = gp::method_name(mo.method);
        row["reliability"] = mo.reliability;
        row["weight"] = mo.weight;
        methods.push_back(row);
    }
    j["methods"] = methods;
    j["mu"] = pre.mu;
    j["sigma"] = pre.sigma;
    j["fallback_used"] = pre.fallback_used;
    j["n_genes"] = pre.mask.bits.size();
    j["n_selected"] = pre.mask.count();
    j["reference_clusters"] = pre.reference.n_clusters;
    j["panel"] = panel_ids(pre.mask, gene_ids);
    return j;
}

// Clusters the panel submatrix and reports agreement with the labels plus
// silhouette cohesion.  Single-cluster results make silhouette undefined:
// null in the JSON, warning on stderr.
ordered_json metrics_block(const gp::ExpressionMatrix& m, const gp::GeneMask& panel,
                           const gp::ClusterAssignment& labels, const gp::ClusterParams& params,
                           int threads) {
    gp::ExpressionMatrix sub = gp::subset_genes(m, panel);
    gp::ClusterAssignment found = gp::pseudo_labels(sub, params);
    ordered_json j;
    j["panel_size"] = panel.count();
    j["n_clusters"] = found.n_clusters;
    j["n_reference_clusters"] = labels.n_clusters;
    j["nmi"] = gp::nmi(found, labels);
    j["ari"] = gp::ari(found, labels);
    if (found.n_clusters < 2) {
        std::cerr << "warning: clustering produced a single cluster; silhouette undefined\n";
        j["silhouette"] = nullptr;
    } else {
        j["silhouette"] = gp::silhouette(sub, found, threads);
    }
    return j;
}

// ---------------------------------------------------------------------------
// subcommands

struct SynthCmd {
    gp::SynthConfig cfg;
    std::string out_dir = ".";
};

int run_synth(const SynthCmd& c) {
    gp::SynthResult r = gp::generate_planted(c.cfg);
    std::filesystem::path dir = c.out_dir;
    std::filesystem::create_directories(dir);
    gp::save_csv(r.matrix, dir / "matrix.csv");
    gp::save_labels(r.true_labels, dir / "labels.csv");
    gp::write_panel(r.informative, r.matrix.gene_ids, dir / "informative.txt");
    return 0;
}

struct PrefilterCmd {
    MatrixOpts matrix;
    ClusterOpts cluster;
    PrefilterOpts pf;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out = "panel.txt";
    std::string report;
};

int run_prefilter(const PrefilterCmd& c) {
    const auto t0 = std::chrono::steady_clock::now();
    gp::ExpressionMatrix m = load_matrix(c.matrix);
    gp::PrefilterConfig cfg = to_prefilter_config(c.pf, c.cluster, c.seed, c.threads);
    gp::PrefilterResult pre = gp::prefilter_pipeline(m, cfg);
    gp::write_panel(pre.mask, m.gene_ids, c.out);

    ordered_json report;
    report["schema_version"] = kReportSchema;
    report["command"] = "prefilter";
    report["version"] = kVersion;
    report["seed"] = c.seed;
    ordered_json config = matrix_echo(c.matrix);
    config["threads"] = c.threads;
    config["prefilter"] = prefilter_echo(c.pf);
    config["cluster"] = cluster_echo(c.cluster);
    report["config"] = config;
    report["prefilter"] = prefilter_summary(pre, m.gene_ids);
    report["outputs"] = ordered_json{{"panel", c.out}};
    report["timing"] = ordered_json{
        {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};

    if (c.report.empty()) {
        std::cout << report.dump(2) << '\n';
    } else {
        write_json(c.report, report);
    }
    return 0;
}

struct SelectCmd {
    MatrixOpts matrix;
    ClusterOpts cluster;
    PrefilterOpts pf;
    SelectOpts sel;
    std::string variant = "full";
    std::string labels_path;
    std::string panel_path;  // reuse an existing panel as the pre-filtered set
    std::uint64_t seed = 0;
    int threads = 1;
    std::size_t gene_cap = gp::kNoFilterGeneCap;
    std::string out = "panel.txt";
    std::string trace = "trace.csv";
    std::string report_path = "report.json";
};

int run_select(const SelectCmd& c) {
    const auto t0 = std::chrono::steady_clock::now();
    gp::ExpressionMatrix m = load_matrix(c.matrix);
    gp::AblationVariant variant = gp::variant_from_name(c.variant);
    gp::PrefilterConfig pcfg = to_prefilter_config(c.pf, c.cluster, c.seed, c.threads);
    gp::SelectConfig scfg = to_select_config(c.sel, c.cluster, c.pf, c.seed, c.threads);

    std::optional<gp::ClusterAssignment> labels;
    if (!c.labels_path.empty()) labels = gp::load_labels(c.labels_path, m.n_cells);

    // Resolve the candidate gene set for the variant.
    std::optional<gp::PrefilterResult> pre;
    gp::GeneMask base = gp::GeneMask::none(m.n_genes);
    switch (variant) {
        case gp::AblationVariant::full:
        case gp::AblationVariant::no_knowledge:
        case gp::AblationVariant::no_rl:
            if (!c.panel_path.empty()) {
                base = gp::read_panel(c.panel_path, m.gene_ids);
            } else {
                pre = gp::prefilter_pipeline(m, pcfg);
                base = pre->mask;
            }
            break;
        case gp::AblationVariant::no_filter:
            if (m.n_genes > c.gene_cap)
                throw gp::DataError("unfiltered selection needs one agent per gene; " +
                                    std::to_string(m.n_genes) + " genes exceeds the cap of " +
                                    std::to_string(c.gene_cap));
            base = gp::GeneMask::full(m.n_genes);
            break;
        case gp::AblationVariant::all_genes:
            base = gp::GeneMask::full(m.n_genes);
            break;
    }

    gp::SelectionResult sel;
    if (variant == gp::AblationVariant::no_rl || variant == gp::AblationVariant::all_genes) {
        sel = gp::fixed_panel_run(m, base, scfg);
    } else {
        if (variant == gp::AblationVariant::no_knowledge) scfg.inject = false;
        if (scfg.inject && scfg.inject_methods.empty())
            std::cerr << "warning: no injection methods enabled; skipping knowledge injection\n";
        gp::PrefilterResult stage;
        stage.mask = base;
        sel = gp::run_selection(m, stage, scfg);
    }

    gp::write_panel(sel.best_mask, m.gene_ids, c.out);
    write_trace_csv(c.trace, sel.trace);

    ordered_json report;
    report["schema_version"] = kReportSchema;
    report["command"] = "select";
    report["version"] = kVersion;
    report["seed"] = c.seed;
    ordered_json config = matrix_echo(c.matrix);
    config["variant"] = std::string(gp::variant_name(variant));
    config["labels"] = c.labels_path;
    config["panel"] = c.panel_path;
    config["threads"] = c.threads;
    config["prefilter"] = prefilter_echo(c.pf);
    config["cluster"] = cluster_echo(c.cluster);
    config["select"] = select_echo(c.sel);
    report["config"] = config;
    if (pre) report["prefilter"] = prefilter_summary(*pre, m.gene_ids);

    ordered_json selection;
    selection["n_candidates"] = sel.n_prefiltered;
    selection["best_iter"] = sel.best_iter;
    selection["best"] = ordered_json{
        {"r_s", sel.best.r_s}, {"r_c", sel.best.r_c}, {"r_total", sel.best.r_total}};
    selection["best_r_s"] = sel.best_r_s;
    selection["best_r_s_iter"] = sel.best_r_s_iter;
    selection["best_panel_size"] = sel.best_mask.count();
    selection["best_panel"] = panel_ids(sel.best_mask, m.gene_ids);
    selection["greedy_panel_size"] = sel.greedy_mask.count();
    selection["greedy_panel"] = panel_ids(sel.greedy_mask, m.gene_ids);
    selection["aborted"] = sel.aborted;
    report["selection"] = selection;

    if (labels) {
        report["metrics"] = metrics_block(m, sel.best_mask, *labels,
                                          to_params(c.cluster, gp::derive_seed(c.seed, kTagEval),
                                                    c.threads),
                                          c.threads);
    }
    report["outputs"] = ordered_json{{"panel", c.out}, {"trace", c.trace}};
    report["timing"] = ordered_json{
        {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
        {"selection_seconds", sel.seconds}};
    write_json(c.report_path, report);

    return sel.aborted ? kExitBudget : 0;
}

struct EvaluateCmd {
    MatrixOpts matrix;
    ClusterOpts cluster;
    std::string panel_path;
    std::string labels_path;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string report;
};

int run_evaluate(const EvaluateCmd& c) {
    gp::ExpressionMatrix m = load_matrix(c.matrix);
    gp::GeneMask panel = gp::read_panel(c.panel_path, m.gene_ids);
    if (panel.count() == 0) throw gp::DataError("panel file selects no genes");
    gp::ClusterAssignment labels = gp::load_labels(c.labels_path, m.n_cells);
    ordered_json j = metrics_block(m, panel, labels, to_params(c.cluster, c.seed, c.threads),
                                   c.threads);
    if (c.report.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(c.report, j);
    }
    return 0;
}

struct CompareCmd {
    MatrixOpts matrix;
    ClusterOpts cluster;
    PrefilterOpts pf;
    SelectOpts sel;
    std::string labels_path;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out;  // empty = stdout
};

struct CompareRow {
    std::string method;
    gp::GeneMask panel;
    std::size_t iterations_to_best = 1;
};

int run_compare(const CompareCmd& c) {
    gp::ExpressionMatrix m = load_matrix(c.matrix);
    gp::PrefilterConfig pcfg = to_prefilter_config(c.pf, c.cluster, c.seed, c.threads);
    gp::SelectConfig scfg = to_select_config(c.sel, c.cluster, c.pf, c.seed, c.threads);

    std::optional<gp::ClusterAssignment> labels;
    if (!c.labels_path.empty()) labels = gp::load_labels(c.labels_path, m.n_cells);

    gp::PrefilterResult pre = gp::prefilter_pipeline(m, pcfg);
    gp::SelectionResult rl = gp::run_selection(m, pre, scfg);
    const std::size_t budget = std::max<std::size_t>(1, rl.best_mask.count());

    gp::GreedyForwardResult greedy = gp::greedy_forward(m, pre.mask, budget, scfg);

    std::vector<CompareRow> rows;
    rows.push_back({"rl", rl.best_mask, static_cast<std::size_t>(rl.best_r_s_iter)});
    rows.push_back({"greedy_forward", greedy.mask, greedy.evals_to_best});

    {
        // Uniform random panel of matching size over the full gene set.
        gp::Rng rng(gp::derive_seed(c.seed, kTagRandomK));
        std::vector<std::size_t> all(m.n_genes);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        rng.shuffle(all);
        all.resize(std::min(budget, m.n_genes));
        std::sort(all.begin(), all.end());
        rows.push_back({"random_k", gp::GeneMask::from_indices(m.n_genes, all), 1});
    }

    for (gp::ScoreMethod method : pcfg.methods) {
        gp::GeneScores gs = gp::score_genes(m, pre.reference, method, pcfg);
        std::vector<std::size_t> order(m.n_genes);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return gs.scores[a] > gs.scores[b];
        });
        order.resize(std::min(budget, m.n_genes));
        std::sort(order.begin(), order.end());
        rows.push_back({std::string(gp::method_name(method)) + "_top_k",
                        gp::GeneMask::from_indices(m.n_genes, order), 1});
    }

    const gp::ClusterAssignment& reference = labels ? *labels : pre.reference;
    gp::ClusterParams eval_params =
        to_params(c.cluster, gp::derive_seed(c.seed, kTagEval), c.threads);

    std::string csv = "method,panel_size,nmi,ari,silhouette,iterations_to_best\n";
    for (const CompareRow& row : rows) {
        gp::ExpressionMatrix sub = gp::subset_genes(m, row.panel);
        gp::ClusterAssignment found = gp::pseudo_labels(sub, eval_params);
        const double v_nmi = gp::nmi(found, reference);
        const double v_ari = gp::ari(found, reference);
        std::string sil = "nan";
        if (found.n_clusters >= 2) sil = fmt_g17(gp::silhouette(sub, found, c.threads));
        csv += row.method + ',' + std::to_string(row.panel.count()) + ',' + fmt_g17(v_nmi) + ',' +
               fmt_g17(v_ari) + ',' + sil + ',' + std::to_string(row.iterations_to_best) + '\n';
    }

    if (c.out.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(c.out, std::ios::binary);
        if (!out) throw gp::DataError("cannot open comparison file for writing: " + c.out);
        out << csv;
        if (!out) throw gp::DataError("failed writing comparison file: " + c.out);
    }
    return rl.aborted ? kExitBudget : 0;
}

// Flat key=value config file, applied after parsing with command-line
// precedence: flags > file > defaults.  Unknown keys are usage errors.
struct ConfigFileOpt {
    std::string path;
};

void add_config_file(CLI::App* cmd, ConfigFileOpt& o) {
    cmd->add_option("--config", o.path,
                    "flat key=value config file (flags override file values)");
}

void apply_config(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::FileError::Missing(path);
    const auto trim = [](const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CLI::ParseError(
                "config line " + std::to_string(line_no) + " is not key=value",
                CLI::ExitCodes::InvalidError);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config")
            throw CLI::ParseError("unknown config key '" + key + "'",
                                  CLI::ExitCodes::InvalidError);
        if (opt->count() > 0) continue;  // command line wins
        opt->add_result(value);
        opt->run_callback();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compact gene panel selection for expression matrices"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    ConfigFileOpt synth_cfg, pf_cfg, sel_cfg, ev_cfg, cp_cfg;

    SynthCmd synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a planted-cluster dataset");
    synth_cmd->add_option("--cells", synth.cfg.n_cells, "number of cells")->capture_default_str();
    synth_cmd->add_option("--genes", synth.cfg.n_genes, "number of genes")->capture_default_str();
    synth_cmd->add_option("--informative", synth.cfg.n_informative,
                          "genes carrying cluster signal")
        ->capture_default_str();
    synth_cmd->add_option("--clusters", synth.cfg.n_clusters, "number of planted clusters")
        ->capture_default_str();
    synth_cmd->add_option("--effect-size", synth.cfg.effect_size,
                          "scale of cluster-specific expression offsets")
        ->capture_default_str();
    synth_cmd->add_option("--dropout", synth.cfg.dropout_rate, "per-entry zeroing probability")
        ->capture_default_str();
    synth_cmd->add_option("--noise", synth.cfg.noise_scale, "log-space noise level")
        ->capture_default_str();
    synth_cmd->add_option("--seed", synth.cfg.seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--out", synth.out_dir, "output directory")->capture_default_str();
    add_config_file(synth_cmd, synth_cfg);

    PrefilterCmd pf;
    CLI::App* pf_cmd = app.add_subcommand("prefilter", "ensemble gene pre-filtering");
    add_matrix_opts(pf_cmd, pf.matrix);
    add_cluster_opts(pf_cmd, pf.cluster);
    add_prefilter_opts(pf_cmd, pf.pf);
    pf_cmd->add_option("--seed", pf.seed, "master seed")->capture_default_str();
    pf_cmd->add_option("--threads", pf.threads, "worker threads")->capture_default_str();
    pf_cmd->add_option("--out", pf.out, "panel output path")->capture_default_str();
    pf_cmd->add_option("--report", pf.report, "JSON report path (default: stdout)");
    add_config_file(pf_cmd, pf_cfg);

    SelectCmd sc;
    CLI::App* sel_cmd = app.add_subcommand("select", "reinforced panel selection");
    add_matrix_opts(sel_cmd, sc.matrix);
    add_cluster_opts(sel_cmd, sc.cluster);
    add_prefilter_opts(sel_cmd, sc.pf);
    add_select_opts(sel_cmd, sc.sel);
    sel_cmd->add_option("--variant", sc.variant,
                        "pipeline variant: full, -r (pre-filter only), -k (no injection), "
                        "-f (no pre-filter), -a (all genes)")
        ->check(CLI::IsMember({"full", "-r", "-k", "-f", "-a", "no-rl", "no-knowledge",
                               "no-filter", "all-genes"}))
        ->capture_default_str();
    sel_cmd->add_option("--labels", sc.labels_path,
                        "true labels, one integer per line; adds metrics to the report");
    sel_cmd->add_option("--panel", sc.panel_path,
                        "reuse this panel as the pre-filtered set (skips pre-filtering)");
    sel_cmd->add_option("--seed", sc.seed, "master seed")->capture_default_str();
    sel_cmd->add_option("--threads", sc.threads, "worker threads")->capture_default_str();
    sel_cmd->add_option("--gene-cap", sc.gene_cap,
                        "maximum gene count for the no-pre-filter variant")
        ->capture_default_str();
    sel_cmd->add_option("--out", sc.out, "best panel output path")->capture_default_str();
    sel_cmd->add_option("--trace", sc.trace, "per-iteration trace CSV path")
        ->capture_default_str();
    sel_cmd->add_option("--report", sc.report_path, "JSON report path")->capture_default_str();
    add_config_file(sel_cmd, sel_cfg);

    EvaluateCmd ev;
    CLI::App* ev_cmd = app.add_subcommand("evaluate", "cluster a panel and score it");
    add_matrix_opts(ev_cmd, ev.matrix);
    add_cluster_opts(ev_cmd, ev.cluster);
    ev_cmd->add_option("--panel", ev.panel_path, "panel file, one gene id per line")->required();
    ev_cmd->add_option("--labels", ev.labels_path, "reference labels, one integer per line")
        ->required();
    ev_cmd->add_option("--seed", ev.seed, "clustering seed")->capture_default_str();
    ev_cmd->add_option("--threads", ev.threads, "worker threads")->capture_default_str();
    ev_cmd->add_option("--report", ev.report, "JSON report path (default: stdout)");
    add_config_file(ev_cmd, ev_cfg);

    CompareCmd cp;
    CLI::App* cp_cmd = app.add_subcommand("compare", "compare selectors at a matched panel size");
    add_matrix_opts(cp_cmd, cp.matrix);
    add_cluster_opts(cp_cmd, cp.cluster);
    add_prefilter_opts(cp_cmd, cp.pf);
    add_select_opts(cp_cmd, cp.sel);
    cp_cmd->add_option("--labels", cp.labels_path,
                       "reference labels; defaults to the pre-filter pseudo-labels");
    cp_cmd->add_option("--seed", cp.seed, "master seed")->capture_default_str();
    cp_cmd->add_option("--threads", cp.threads, "worker threads")->capture_default_str();
    cp_cmd->add_option("--out", cp.out, "comparison CSV path (default: stdout)");
    add_config_file(cp_cmd, cp_cfg);

    try {
        app.parse(argc, argv);
        if (*synth_cmd && !synth_cfg.path.empty()) apply_config(synth_cmd, synth_cfg.path);
        if (*pf_cmd && !pf_cfg.path.empty()) apply_config(pf_cmd, pf_cfg.path);
        if (*sel_cmd && !sel_cfg.path.empty()) apply_config(sel_cmd, sel_cfg.path);
        if (*ev_cmd && !ev_cfg.path.empty()) apply_config(ev_cmd, ev_cfg.path);
        if (*cp_cmd && !cp_cfg.path.empty()) apply_config(cp_cmd, cp_cfg.path);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*pf_cmd) return run_prefilter(pf);
        if (*sel_cmd) return run_select(sc);
        if (*ev_cmd) return run_evaluate(ev);
        if (*cp_cmd) return run_compare(cp);
    } catch (const gp::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
