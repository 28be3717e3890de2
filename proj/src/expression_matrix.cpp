#include "genepanel/expression_matrix.hpp"

#include "genepanel/kernels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace genepanel {

namespace {

void check_value(double v, const std::string& where) {
    if (std::isnan(v) || std::isinf(v)) throw DataError("non-finite value " + where);
    if (v < 0.0) throw DataError("negative value " + where);
}

double parse_double(std::string_view field, const std::string& where) {
    const char* first = field.data();
    const char* last = field.data() + field.size();
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last)
        throw DataError("non-numeric entry '" + std::string(field) + "' " + where);
    return out;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

// Strips a trailing '\r' so CRLF files parse identically to LF files.
bool get_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

void check_unique(const std::vector<std::string>& ids, const char* axis) {
    std::unordered_set<std::string_view> seen;
    seen.reserve(ids.size());
    for (const auto& id : ids) {
        if (!seen.insert(id).second)
            throw DataError(std::string("duplicate ") + axis + " identifier '" + id + "'");
    }
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

GeneMask GeneMask::from_indices(std::size_t n_genes, std::span<const std::size_t> indices) {
    GeneMask m = GeneMask::none(n_genes);
    for (const std::size_t i : indices) {
        if (i >= n_genes) throw DataError("gene index out of range in mask construction");
        m.bits[i] = 1;
    }
    return m;
}

std::size_t GeneMask::count() const {
    std::size_t c = 0;
    for (const auto b : bits) c += b != 0;
    return c;
}

std::vector<std::size_t> GeneMask::indices() const {
    std::vector<std::size_t> out;
    out.reserve(count());
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) out.push_back(i);
    return out;
}

ExpressionMatrix matrix_from_dense(std::size_t n_cells, std::size_t n_genes,
                                   std::span<const double> dense,
                                   std::vector<std::string> gene_ids,
                                   std::vector<std::string> cell_ids) {
    if (dense.size() != n_cells * n_genes)
        throw DataError("dense buffer size does not match matrix dimensions");
    ExpressionMatrix m;
    m.n_cells = n_cells;
    m.n_genes = n_genes;
    m.row_ptr.assign(n_cells + 1, 0);
    for (std::size_t i = 0; i < n_cells; ++i) {
        for (std::size_t j = 0; j < n_genes; ++j) {
            const double v = dense[i * n_genes + j];
            check_value(v, "at cell " + std::to_string(i) + ", gene " + std::to_string(j));
            if (v != 0.0) {
                m.col_idx.push_back(static_cast<std::uint32_t>(j));
                m.values.push_back(v);
            }
        }
        m.row_ptr[i + 1] = m.values.size();
    }
    if (gene_ids.empty()) {
        gene_ids.reserve(n_genes);
        for (std::size_t j = 0; j < n_genes; ++j) gene_ids.push_back("g" + std::to_string(j));
    }
    if (cell_ids.empty()) {
        cell_ids.reserve(n_cells);
        for (std::size_t i = 0; i < n_cells; ++i) cell_ids.push_back("c" + std::to_string(i));
    }
    if (gene_ids.size() != n_genes) throw DataError("gene identifier count mismatch");
    if (cell_ids.size() != n_cells) throw DataError("cell identifier count mismatch");
    check_unique(gene_ids, "gene");
    check_unique(cell_ids, "cell");
    m.gene_ids = std::move(gene_ids);
    m.cell_ids = std::move(cell_ids);
    return m;
}

ExpressionMatrix load_csv(const std::filesystem::path& path, GeneAxis genes_in) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");

    std::string line;
    if (!get_line(in, line)) throw DataError("empty matrix file '" + path.string() + "'");
    const auto header = split_csv_line(line);
    if (header.size() < 2) throw DataError("header with no data columns at line 1");

    std::vector<std::string> col_ids(header.begin() + 1, header.end());
    std::vector<std::string> row_ids;
    std::vector<double> dense;
    const std::size_t n_cols = col_ids.size();

    std::size_t line_no = 1;
    while (get_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != n_cols + 1)
            throw DataError("ragged row at line " + std::to_string(line_no) + ": expected " +
                            std::to_string(n_cols + 1) + " fields, got " +
                            std::to_string(fields.size()));
        row_ids.emplace_back(fields[0]);
        for (std::size_t j = 0; j < n_cols; ++j) {
            const std::string where =
                "at line " + std::to_string(line_no) + ", column '" + col_ids[j] + "'";
            const double v = parse_double(fields[j + 1], where);
            check_value(v, where);
            dense.push_back(v);
        }
    }
    if (row_ids.empty()) throw DataError("empty matrix: no data rows in '" + path.string() + "'");

    const std::size_t n_rows = row_ids.size();
    if (genes_in == GeneAxis::columns)
        return matrix_from_dense(n_rows, n_cols, dense, std::move(col_ids), std::move(row_ids));

    // genes_in == rows: the file is genes x cells; transpose into cells x genes.
    const std::size_t n_genes = row_ids.size();
    const std::size_t n_cells = n_cols;
    std::vector<double> t(dense.size());
    for (std::size_t g = 0; g < n_genes; ++g)
        for (std::size_t c = 0; c < n_cells; ++c) t[c * n_genes + g] = dense[g * n_cells + c];
    return matrix_from_dense(n_cells, n_genes, t, std::move(row_ids), std::move(col_ids));
}

void save_csv(const ExpressionMatrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    for (const auto& g : m.gene_ids) out << ',' << g;
    out << '\n';
    std::vector<double> row(m.n_genes);
    for (std::size_t i = 0; i < m.n_cells; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) row[m.col_idx[k]] = m.values[k];
        out << m.cell_ids[i];
        for (std::size_t j = 0; j < m.n_genes; ++j) {
            out << ',';
            if (row[j] == 0.0)
                out << '0';
            else
                out << format_value(row[j]);
        }
        out << '\n';
    }
}

namespace {

std::vector<std::string> load_id_file(const std::filesystem::path& path, const char* axis) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<std::string> ids;
    std::string line;
    while (get_line(in, line)) {
        if (line.empty()) continue;
        ids.push_back(line);
    }
    check_unique(ids, axis);
    return ids;
}

}  // namespace

ExpressionMatrix load_matrix_market(const std::filesystem::path& matrix_path,
                                    const std::filesystem::path& gene_ids_path,
                                    const std::filesystem::path& cell_ids_path) {
    std::ifstream in(matrix_path);
    if (!in) throw DataError("cannot open '" + matrix_path.string() + "'");

    std::string line;
    if (!get_line(in, line)) throw DataError("empty matrix file '" + matrix_path.string() + "'");
    if (line.rfind("%%MatrixMarket", 0) != 0 || line.find("coordinate") == std::string::npos ||
        line.find("real") == std::string::npos || line.find("general") == std::string::npos)
        throw DataError("unsupported MatrixMarket header: '" + line + "'");

    std::size_t line_no = 1;
    while (get_line(in, line)) {
        ++line_no;
        if (!line.empty() && line[0] != '%') break;
    }
    std::istringstream dims(line);
    std::size_t n_rows = 0, n_cols = 0, n_entries = 0;
    if (!(dims >> n_rows >> n_cols >> n_entries))
        throw DataError("malformed size line at line " + std::to_string(line_no));
    if (n_rows == 0 || n_cols == 0) throw DataError("empty matrix: zero dimension in size line");

    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> entries;
    entries.reserve(n_entries);
    for (std::size_t e = 0; e < n_entries; ++e) {
        if (!get_line(in, line))
            throw DataError("unexpected end of file: expected " + std::to_string(n_entries) +
                            " entries, got " + std::to_string(e));
        ++line_no;
        std::istringstream row(line);
        std::size_t i = 0, j = 0;
        double v = 0.0;
        if (!(row >> i >> j >> v))
            throw DataError("malformed entry at line " + std::to_string(line_no));
        if (i < 1 || i > n_rows || j < 1 || j > n_cols)
            throw DataError("coordinate out of range at line " + std::to_string(line_no));
        check_value(v, "at line " + std::to_string(line_no));
        if (v == 0.0) continue;  // explicit zeros are dropped
        entries.emplace_back(static_cast<std::uint32_t>(i - 1), static_cast<std::uint32_t>(j - 1), v);
    }

    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    for (std::size_t k = 1; k < entries.size(); ++k) {
        if (std::get<0>(entries[k]) == std::get<0>(entries[k - 1]) &&
            std::get<1>(entries[k]) == std::get<1>(entries[k - 1]))
            throw DataError("duplicate coordinate (" + std::to_string(std::get<0>(entries[k]) + 1) +
                            ", " + std::to_string(std::get<1>(entries[k]) + 1) + ")");
    }

    ExpressionMatrix m;
    m.n_cells = n_rows;
    m.n_genes = n_cols;
    m.row_ptr.assign(n_rows + 1, 0);
    m.col_idx.reserve(entries.size());
    m.values.reserve(entries.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_rows; ++i) {
        while (k < entries.size() && std::get<0>(entries[k]) == i) {
            m.col_idx.push_back(std::get<1>(entries[k]));
            m.values.push_back(std::get<2>(entries[k]));
            ++k;
        }
        m.row_ptr[i + 1] = m.values.size();
    }

    m.gene_ids = load_id_file(gene_ids_path, "gene");
    m.cell_ids = load_id_file(cell_ids_path, "cell");
    if (m.gene_ids.size() != m.n_genes)
        throw DataError("gene identifier count " + std::to_string(m.gene_ids.size()) +
                        " does not match matrix columns " + std::to_string(m.n_genes));
    if (m.cell_ids.size() != m.n_cells)
        throw DataError("cell identifier count " + std::to_string(m.cell_ids.size()) +
                        " does not match matrix rows " + std::to_string(m.n_cells));
    return m;
}

void save_matrix_market(const ExpressionMatrix& m, const std::filesystem::path& matrix_path,
                        const std::filesystem::path& gene_ids_path,
                        const std::filesystem::path& cell_ids_path) {
    std::ofstream out(matrix_path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + matrix_path.string() + "'");
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << m.n_cells << ' ' << m.n_genes << ' ' << m.nnz() << '\n';
    for (std::size_t i = 0; i < m.n_cells; ++i)
        for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
            out << i + 1 << ' ' << m.col_idx[k] + 1 << ' ' << format_value(m.values[k]) << '\n';

    std::ofstream gout(gene_ids_path, std::ios::binary);
    if (!gout) throw DataError("cannot write '" + gene_ids_path.string() + "'");
    for (const auto& g : m.gene_ids) gout << g << '\n';
    std::ofstream cout_(cell_ids_path, std::ios::binary);
    if (!cout_) throw DataError("cannot write '" + cell_ids_path.string() + "'");
    for (const auto& c : m.cell_ids) cout_ << c << '\n';
}

ExpressionMatrix normalize(const ExpressionMatrix& m, double target_sum) {
    if (!(target_sum > 0.0)) throw DataError("normalization target must be positive");
    ExpressionMatrix out = m;
    for (std::size_t i = 0; i < m.n_cells; ++i) {
        const std::size_t lo = m.row_ptr[i], hi = m.row_ptr[i + 1];
        if (lo == hi) continue;  // all-zero cell passes through
        const double row_sum = kernels::sum(m.values.data() + lo, hi - lo);
        const double factor = target_sum / row_sum;
        for (std::size_t k = lo; k < hi; ++k) out.values[k] = std::log1p(m.values[k] * factor);
    }
    return out;
}

ExpressionMatrix subset_genes(const ExpressionMatrix& m, const GeneMask& mask) {
    if (mask.size() != m.n_genes)
        throw DataError("mask length " + std::to_string(mask.size()) +
                        " does not match gene count " + std::to_string(m.n_genes));
    std::vector<std::uint32_t> remap(m.n_genes, UINT32_MAX);
    std::uint32_t next = 0;
    for (std::size_t j = 0; j < m.n_genes; ++j)
        if (mask.test(j)) remap[j] = next++;

    ExpressionMatrix out;
    out.n_cells = m.n_cells;
    out.n_genes = next;
    out.cell_ids = m.cell_ids;
    out.gene_ids.reserve(next);
    for (std::size_t j = 0; j < m.n_genes; ++j)
        if (mask.test(j)) out.gene_ids.push_back(m.gene_ids[j]);
    out.row_ptr.assign(m.n_cells + 1, 0);
    for (std::size_t i = 0; i < m.n_cells; ++i) {
        for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) {
            const std::uint32_t nj = remap[m.col_idx[k]];
            if (nj != UINT32_MAX) {
                out.col_idx.push_back(nj);
                out.values.push_back(m.values[k]);
            }
        }
        out.row_ptr[i + 1] = out.values.size();
    }
    return out;
}

GeneStatsBlock descriptive_stats(const ExpressionMatrix& m) {
    if (m.n_genes < 1 || m.n_cells < 2)
        throw DataError("descriptive statistics require at least 1 gene and 2 cells");

    // Explicit values per gene, via a counting pass then a scatter pass.
    std::vector<std::size_t> counts(m.n_genes, 0);
    for (const auto j : m.col_idx) ++counts[j];
    std::vector<std::size_t> offsets(m.n_genes + 1, 0);
    for (std::size_t j = 0; j < m.n_genes; ++j) offsets[j + 1] = offsets[j] + counts[j];
    std::vector<double> colvals(m.nnz());
    {
        std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
        for (std::size_t i = 0; i < m.n_cells; ++i)
            for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
                colvals[cursor[m.col_idx[k]]++] = m.values[k];
    }

    GeneStatsBlock block;
    block.n_rows = m.n_genes;
    block.data.assign(m.n_genes * GeneStatsBlock::kStatsPerGene, 0.0);
    const double n = static_cast<double>(m.n_cells);

    for (std::size_t j = 0; j < m.n_genes; ++j) {
        double* vals = colvals.data() + offsets[j];
        const std::size_t nv = counts[j];
        std::sort(vals, vals + nv);
        const std::size_t n_zero = m.n_cells - nv;

        // Stored values are strictly positive, so the dense sorted column is
        // n_zero zeros followed by the sorted explicit values.
        const auto at = [&](std::size_t rank) -> double {
            return rank < n_zero ? 0.0 : vals[rank - n_zero];
        };
        const auto quantile = [&](double q) -> double {
            const double pos = q * (n - 1.0);
            const std::size_t lo = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(lo);
            if (lo + 1 >= m.n_cells) return at(m.n_cells - 1);
            return at(lo) + frac * (at(lo + 1) - at(lo));
        };

        double s = 0.0, s2 = 0.0;
        for (std::size_t k = 0; k < nv; ++k) {
            s += vals[k];
            s2 += vals[k] * vals[k];
        }
        const double mean = s / n;
        const double var = std::max(0.0, s2 / n - mean * mean);

        double* row = block.data.data() + j * GeneStatsBlock::kStatsPerGene;
        row[0] = std::sqrt(var);
        row[1] = at(0);
        row[2] = at(m.n_cells - 1);
        row[3] = quantile(0.25);
        row[4] = quantile(0.50);
        row[5] = quantile(0.75);
        row[6] = mean;
    }
    return block;
}

void write_panel(const GeneMask& mask, std::span<const std::string> gene_ids,
                 const std::filesystem::path& path) {
    if (mask.size() != gene_ids.size())
        throw DataError("mask length does not match gene identifier count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask.test(j)) out << gene_ids[j] << '\n';
}

GeneMask read_panel(const std::filesystem::path& path, std::span<const std::string> gene_ids) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::unordered_map<std::string_view, std::size_t> index;
    index.reserve(gene_ids.size());
    for (std::size_t j = 0; j < gene_ids.size(); ++j) index.emplace(gene_ids[j], j);

    GeneMask mask = GeneMask::none(gene_ids.size());
    std::string line;
    std::size_t line_no = 0;
    while (get_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto it = index.find(line);
        if (it == index.end())
            throw DataError("unknown gene identifier '" + line + "' at line " +
                            std::to_string(line_no));
        if (mask.test(it->second))
            throw DataError("duplicate gene identifier '" + line + "' at line " +
                            std::to_string(line_no));
        mask.set(it->second);
    }
    return mask;
}

std::vector<double> to_dense_rows(const ExpressionMatrix& m) {
    std::vector<double> dense(m.n_cells * m.n_genes, 0.0);
    for (std::size_t i = 0; i < m.n_cells; ++i)
        for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
            dense[i * m.n_genes + m.col_idx[k]] = m.values[k];
    return dense;
}

std::vector<double> to_dense_columns(const ExpressionMatrix& m) {
    std::vector<double> dense(m.n_cells * m.n_genes, 0.0);
    for (std::size_t i = 0; i < m.n_cells; ++i)
        for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k)
            dense[static_cast<std::size_t>(m.col_idx[k]) * m.n_cells + i] = m.values[k];
    return dense;
}

}  // namespace genepanel
