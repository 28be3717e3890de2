#include "genepanel/clustering.hpp"

#include "genepanel/kernels.hpp"
#include "genepanel/parallel.hpp"
#include "genepanel/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

namespace genepanel {

ClusterAssignment load_labels(const std::filesystem::path& path, std::size_t expected_n) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<long long> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        long long v = 0;
        const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc() || ptr != line.data() + line.size())
            throw DataError("non-integer label '" + line + "' at line " + std::to_string(line_no));
        raw.push_back(v);
    }
    if (expected_n != 0 && raw.size() != expected_n)
        throw DataError("label count " + std::to_string(raw.size()) +
                        " does not match cell count " + std::to_string(expected_n));

    ClusterAssignment c;
    c.labels.reserve(raw.size());
    std::vector<long long> seen;
    for (const long long v : raw) {
        const auto it = std::find(seen.begin(), seen.end(), v);
        std::uint32_t id;
        if (it == seen.end()) {
            id = static_cast<std::uint32_t>(seen.size());
            seen.push_back(v);
        } else {
            id = static_cast<std::uint32_t>(it - seen.begin());
        }
        c.labels.push_back(id);
    }
    c.n_clusters = static_cast<std::uint32_t>(seen.size());
    return c;
}

void save_labels(const ClusterAssignment& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    for (const auto l : c.labels) out << l << '\n';
}

std::size_t NeighborGraph::n_edges() const {
    std::size_t total = 0;
    for (const auto& a : adj) total += a.size();
    return total / 2;
}

double NeighborGraph::total_weight() const {
    double total = 0.0;
    for (const auto& a : adj)
        for (const auto& e : a) total += e.weight;
    return total / 2.0;
}

NeighborGraph knn_graph(const ExpressionMatrix& m, std::size_t k, DistanceMetric metric,
                        int n_threads) {
    if (m.n_cells < 2) throw DataError("knn graph requires at least 2 cells");
    if (k < 1) throw DataError("knn graph requires k >= 1");
    const std::size_t n = m.n_cells;
    const std::size_t d = m.n_genes;
    const std::size_t kk = std::min(k, n - 1);

    const std::vector<double> dense = to_dense_rows(m);
    std::vector<double> norms;
    if (metric == DistanceMetric::cosine) {
        norms.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = dense.data() + i * d;
            norms[i] = std::sqrt(kernels::dot(row, row, d));
        }
    }

    std::vector<std::vector<std::uint32_t>> directed(n);
    parallel_for(0, n, n_threads, [&](std::size_t i) {
        const double* ri = dense.data() + i * d;
        std::vector<std::pair<double, std::uint32_t>> cand;
        cand.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dist;
            if (metric == DistanceMetric::euclidean) {
                dist = kernels::squared_distance(ri, dense.data() + j * d, d);
            } else {
                const double nn = norms[i] * norms[j];
                const double sim = nn > 0.0 ? kernels::dot(ri, dense.data() + j * d, d) / nn : 0.0;
                dist = 1.0 - sim;
            }
            cand.emplace_back(dist, static_cast<std::uint32_t>(j));
        }
        std::nth_element(cand.begin(), cand.begin() + (kk - 1), cand.end());
        directed[i].reserve(kk);
        for (std::size_t t = 0; t < kk; ++t) directed[i].push_back(cand[t].second);
    });

    // Symmetrize by union with unit weights.
    std::vector<std::vector<std::uint32_t>> sets(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto j : directed[i]) {
            sets[i].push_back(j);
            sets[j].push_back(static_cast<std::uint32_t>(i));
        }
    }
    NeighborGraph g;
    g.n_nodes = n;
    g.adj.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& s = sets[i];
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        g.adj[i].reserve(s.size());
        for (const auto j : s) g.adj[i].push_back({j, 1.0});
    }
    return g;
}

NeighborGraph snn_weights(const NeighborGraph& g, double min_weight) {
    const std::size_t n = g.n_nodes;

    // Closed neighbourhoods, sorted.
    std::vector<std::vector<std::uint32_t>> nbhd(n);
    for (std::size_t u = 0; u < n; ++u) {
        nbhd[u].reserve(g.adj[u].size() + 1);
        nbhd[u].push_back(static_cast<std::uint32_t>(u));
        for (const auto& e : g.adj[u]) nbhd[u].push_back(e.to);
        std::sort(nbhd[u].begin(), nbhd[u].end());
    }

    NeighborGraph out;
    out.n_nodes = n;
    out.adj.resize(n);

    std::vector<std::uint8_t> candidate(n, 0);
    std::vector<std::uint32_t> cand_list;
    for (std::size_t u = 0; u < n; ++u) {
        // Nodes sharing at least one member with nbhd[u] are within two hops.
        cand_list.clear();
        for (const auto w : nbhd[u]) {
            for (const auto v : nbhd[w]) {
                if (v > u && !candidate[v]) {
                    candidate[v] = 1;
                    cand_list.push_back(v);
                }
            }
        }
        for (const auto v : cand_list) {
            candidate[v] = 0;
            const auto& a = nbhd[u];
            const auto& b = nbhd[v];
            std::size_t ia = 0, ib = 0, inter = 0;
            while (ia < a.size() && ib < b.size()) {
                if (a[ia] < b[ib])
                    ++ia;
                else if (a[ia] > b[ib])
                    ++ib;
                else {
                    ++inter;
                    ++ia;
                    ++ib;
                }
            }
            const double uni = static_cast<double>(a.size() + b.size() - inter);
            const double jac = inter == 0 ? 0.0 : static_cast<double>(inter) / uni;
            if (jac >= min_weight) {
                out.adj[u].push_back({v, jac});
                out.adj[v].push_back({static_cast<std::uint32_t>(u), jac});
            }
        }
    }
    for (auto& a : out.adj)
        std::sort(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.to < y.to; });
    return out;
}

double modularity(const NeighborGraph& g, const ClusterAssignment& c) {
    if (c.labels.size() != g.n_nodes)
        throw DataError("partition size does not match graph size");
    const double w = g.total_weight();
    if (w <= 0.0) throw DataError("modularity undefined: graph has zero total weight");
    const double two_m = 2.0 * w;

    std::uint32_t n_comm = 0;
    for (const auto l : c.labels) n_comm = std::max(n_comm, l + 1);
    std::vector<double> internal(n_comm, 0.0), tot(n_comm, 0.0);
    for (std::size_t u = 0; u < g.n_nodes; ++u) {
        double deg = 0.0;
        for (const auto& e : g.adj[u]) {
            deg += e.weight;
            if (c.labels[u] == c.labels[e.to]) internal[c.labels[u]] += e.weight;
        }
        tot[c.labels[u]] += deg;
    }
    double q = 0.0;
    for (std::uint32_t cm = 0; cm < n_comm; ++cm) {
        // internal[] accumulated both directions, so it already equals 2x the
        // undirected internal weight.
        q += internal[cm] / two_m - (tot[cm] / two_m) * (tot[cm] / two_m);
    }
    return q;
}

namespace {

// Louvain working graph: symmetric adjacency plus per-node self-loop weight
// (created by aggregation).  A self-loop of weight s contributes 2s to the
// node degree, which keeps modularity invariant across aggregation levels.
struct WorkGraph {
    std::size_t n = 0;
    std::vector<std::vector<NeighborGraph::Edge>> adj;
    std::vector<double> self;
};

double work_modularity(const WorkGraph& wg, const std::vector<std::uint32_t>& comm,
                       double two_m) {
    std::uint32_t n_comm = 0;
    for (const auto c : comm) n_comm = std::max(n_comm, c + 1);
    std::vector<double> internal(n_comm, 0.0), tot(n_comm, 0.0);
    for (std::size_t u = 0; u < wg.n; ++u) {
        double deg = 2.0 * wg.self[u];
        internal[comm[u]] += 2.0 * wg.self[u];
        for (const auto& e : wg.adj[u]) {
            deg += e.weight;
            if (comm[u] == comm[e.to]) internal[comm[u]] += e.weight;
        }
        tot[comm[u]] += deg;
    }
    double q = 0.0;
    for (std::uint32_t c = 0; c < n_comm; ++c)
        q += internal[c] / two_m - (tot[c] / two_m) * (tot[c] / two_m);
    return q;
}

}  // namespace

ClusterAssignment louvain(const NeighborGraph& g, double resolution, std::uint64_t seed,
                          LouvainStats* stats) {
    const std::size_t n_orig = g.n_nodes;
    if (stats) stats->pass_modularity.clear();

    // node_of_cell maps original cells to current working-graph nodes.
    std::vector<std::uint32_t> node_of_cell(n_orig);
    std::iota(node_of_cell.begin(), node_of_cell.end(), 0);

    WorkGraph wg;
    wg.n = n_orig;
    wg.adj = g.adj;
    wg.self.assign(n_orig, 0.0);

    double two_m = 0.0;
    for (std::size_t u = 0; u < wg.n; ++u) {
        two_m += 2.0 * wg.self[u];
        for (const auto& e : wg.adj[u]) two_m += e.weight;
    }

    if (two_m <= 0.0) {
        // No edges: every node stays a singleton.
        ClusterAssignment c;
        c.labels = node_of_cell;
        c.n_clusters = static_cast<std::uint32_t>(n_orig);
        return c;
    }

    constexpr int kMaxLevels = 32;
    constexpr int kMaxPasses = 64;

    for (int level = 0; level < kMaxLevels; ++level) {
        const std::size_t n = wg.n;
        std::vector<std::uint32_t> comm(n);
        std::iota(comm.begin(), comm.end(), 0);
        std::vector<double> degree(n, 0.0), comm_tot(n, 0.0);
        for (std::size_t u = 0; u < n; ++u) {
            degree[u] = 2.0 * wg.self[u];
            for (const auto& e : wg.adj[u]) degree[u] += e.weight;
            comm_tot[u] = degree[u];
        }

        Rng rng(derive_seed(seed, 0x4c4f55u, static_cast<std::uint64_t>(level)));
        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0);

        bool level_moved = false;
        std::vector<double> link(n, 0.0);
        std::vector<std::uint32_t> touched;

        for (int pass = 0; pass < kMaxPasses; ++pass) {
            rng.shuffle(order);
            std::size_t moves = 0;
            for (const auto u : order) {
                const std::uint32_t cu = comm[u];

                touched.clear();
                for (const auto& e : wg.adj[u]) {
                    const std::uint32_t cv = comm[e.to];
                    if (link[cv] == 0.0 && e.weight != 0.0) touched.push_back(cv);
                    link[cv] += e.weight;
                }
                if (link[cu] == 0.0) touched.push_back(cu);  // staying is always a candidate

                comm_tot[cu] -= degree[u];
                const double stay_gain = link[cu] - resolution * degree[u] * comm_tot[cu] / two_m;

                std::uint32_t best = cu;
                double best_gain = stay_gain;
                std::sort(touched.begin(), touched.end());
                for (const auto cv : touched) {
                    if (cv == cu) continue;
                    const double gain = link[cv] - resolution * degree[u] * comm_tot[cv] / two_m;
                    // Strict improvement required; among improving targets the
                    // lowest community id wins (touched is sorted).
                    if (gain > best_gain) {
                        best_gain = gain;
                        best = cv;
                    }
                }
                comm_tot[best] += degree[u];
                if (best != cu) {
                    comm[u] = best;
                    ++moves;
                }
                for (const auto cv : touched) link[cv] = 0.0;
                link[cu] = 0.0;
            }
            if (stats) stats->pass_modularity.push_back(work_modularity(wg, comm, two_m));
            if (moves == 0) break;
            level_moved = true;
        }

        if (!level_moved) break;

        // Compact community ids by first appearance in node order.
        std::vector<std::uint32_t> new_id(n, UINT32_MAX);
        std::uint32_t next = 0;
        for (std::size_t u = 0; u < n; ++u)
            if (new_id[comm[u]] == UINT32_MAX) new_id[comm[u]] = next++;
        for (std::size_t u = 0; u < n; ++u) comm[u] = new_id[comm[u]];

        for (auto& c : node_of_cell) c = comm[c];

        // Aggregate communities into a new working graph.
        WorkGraph next_wg;
        next_wg.n = next;
        next_wg.adj.resize(next);
        next_wg.self.assign(next, 0.0);
        std::vector<double> acc(next, 0.0);
        std::vector<std::uint32_t> acc_touched;
        for (std::uint32_t cbase = 0; cbase < next; ++cbase) acc[cbase] = 0.0;
        std::vector<std::vector<std::uint32_t>> members(next);
        for (std::size_t u = 0; u < n; ++u) members[comm[u]].push_back(static_cast<std::uint32_t>(u));
        for (std::uint32_t c = 0; c < next; ++c) {
            acc_touched.clear();
            double self_w = 0.0;
            for (const auto u : members[c]) {
                self_w += wg.self[u];
                for (const auto& e : wg.adj[u]) {
                    const std::uint32_t cv = comm[e.to];
                    if (cv == c) {
                        self_w += e.weight * 0.5;  // each internal edge visited twice
                    } else {
                        if (acc[cv] == 0.0) acc_touched.push_back(cv);
                        acc[cv] += e.weight;
                    }
                }
            }
            next_wg.self[c] = self_w;
            std::sort(acc_touched.begin(), acc_touched.end());
            for (const auto cv : acc_touched) {
                next_wg.adj[c].push_back({cv, acc[cv]});
                acc[cv] = 0.0;
            }
        }
        wg = std::move(next_wg);
        if (wg.n == n) break;  // no reduction; fixed point
    }

    // Compact final labels by first appearance over original cell order.
    ClusterAssignment out;
    out.labels.resize(n_orig);
    std::vector<std::uint32_t> remap;
    std::vector<std::uint32_t> remap_table(wg.n, UINT32_MAX);
    std::uint32_t next = 0;
    for (std::size_t i = 0; i < n_orig; ++i) {
        const std::uint32_t c = node_of_cell[i];
        if (remap_table[c] == UINT32_MAX) remap_table[c] = next++;
        out.labels[i] = remap_table[c];
    }
    out.n_clusters = next;
    return out;
}

ClusterAssignment pseudo_labels(const ExpressionMatrix& m, const ClusterParams& params) {
    const NeighborGraph knn = knn_graph(m, params.k_neighbors, params.metric, params.n_threads);
    const NeighborGraph snn = snn_weights(knn, params.snn_min_weight);
    return louvain(snn, params.resolution, params.seed);
}

}  // namespace genepanel
