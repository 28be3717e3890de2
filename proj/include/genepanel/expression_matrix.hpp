#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Sparse cell-by-gene expression container and the preprocessing operations
// the rest of the pipeline builds on.  Values are stored CSR (row = cell,
// column = gene) with implicit zeros; every stored value is finite and
// strictly positive.

namespace genepanel {

/// Raised for malformed or contradictory input data (parse errors, identifier
/// mismatches, out-of-domain values).  The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct ExpressionMatrix {
    std::size_t n_cells = 0;
    std::size_t n_genes = 0;
    std::vector<std::size_t> row_ptr;   // n_cells + 1
    std::vector<std::uint32_t> col_idx; // nnz, ascending within each row
    std::vector<double> values;         // nnz, finite, > 0
    std::vector<std::string> gene_ids;  // n_genes, unique
    std::vector<std::string> cell_ids;  // n_cells, unique

    std::size_t nnz() const { return values.size(); }
    double sparsity() const {
        const std::size_t total = n_cells * n_genes;
        return total == 0 ? 0.0 : 1.0 - static_cast<double>(nnz()) / static_cast<double>(total);
    }
};

/// Builds a matrix from dense row-major data (zeros become implicit).
/// Negative, NaN or infinite entries raise DataError.
ExpressionMatrix matrix_from_dense(std::size_t n_cells, std::size_t n_genes,
                                   std::span<const double> dense,
                                   std::vector<std::string> gene_ids = {},
                                   std::vector<std::string> cell_ids = {});

/// Boolean selection over the gene axis.
struct GeneMask {
    std::vector<std::uint8_t> bits;  // one per gene

    static GeneMask none(std::size_t n_genes) { return GeneMask{std::vector<std::uint8_t>(n_genes, 0)}; }
    static GeneMask full(std::size_t n_genes) { return GeneMask{std::vector<std::uint8_t>(n_genes, 1)}; }
    static GeneMask from_indices(std::size_t n_genes, std::span<const std::size_t> indices);

    std::size_t size() const { return bits.size(); }
    std::size_t count() const;
    bool test(std::size_t i) const { return bits[i] != 0; }
    void set(std::size_t i, bool on = true) { bits[i] = on ? 1 : 0; }
    std::vector<std::size_t> indices() const;
};

/// Per-gene descriptive statistics over the dense column (implicit zeros
/// included), one row per gene: std, min, max, q1, q2, q3, mean.
/// std is the population standard deviation; quantiles interpolate linearly
/// between closest ranks.
struct GeneStatsBlock {
    static constexpr std::size_t kStatsPerGene = 7;

    std::size_t n_rows = 0;
    std::vector<double> data;  // n_rows * kStatsPerGene, row-major

    std::span<const double> row(std::size_t i) const {
        return {data.data() + i * kStatsPerGene, kStatsPerGene};
    }
};

enum class GeneAxis { columns, rows };

/// Loads a dense CSV matrix.  With genes_in == columns the header row carries
/// gene identifiers and each following row is "cell_id,v1,v2,...";  with
/// genes_in == rows the layout is transposed.  Diagnoses ragged rows,
/// non-numeric fields, negative values and duplicate identifiers, naming the
/// offending line.
ExpressionMatrix load_csv(const std::filesystem::path& path, GeneAxis genes_in = GeneAxis::columns);

/// Writes a dense CSV with genes in columns; inverse of load_csv.  Values are
/// printed with enough digits to round-trip bit-exactly.
void save_csv(const ExpressionMatrix& m, const std::filesystem::path& path);

/// Loads a MatrixMarket "coordinate real general" file (rows = cells) plus
/// sidecar identifier files, one id per line.  Explicit zeros are dropped;
/// duplicate coordinates raise DataError.
ExpressionMatrix load_matrix_market(const std::filesystem::path& matrix_path,
                                    const std::filesystem::path& gene_ids_path,
                                    const std::filesystem::path& cell_ids_path);

/// Inverse of load_matrix_market; round-trips bit-exactly.
void save_matrix_market(const ExpressionMatrix& m, const std::filesystem::path& matrix_path,
                        const std::filesystem::path& gene_ids_path,
                        const std::filesystem::path& cell_ids_path);

/// Library-size normalization followed by log1p: each cell's counts are
/// scaled to sum to target_sum, then x -> log(1 + x).  All-zero cells pass
/// through unchanged and the sparsity pattern is preserved exactly.
ExpressionMatrix normalize(const ExpressionMatrix& m, double target_sum = 1e4);

/// Keeps the genes selected in the mask, preserving order and remapping
/// column indices.  Mask length must equal m.n_genes.
ExpressionMatrix subset_genes(const ExpressionMatrix& m, const GeneMask& mask);

/// Computes per-gene descriptive statistics.  Requires n_genes >= 1 and
/// n_cells >= 2.
GeneStatsBlock descriptive_stats(const ExpressionMatrix& m);

/// Writes the selected gene identifiers, one per line in original gene order,
/// with a trailing newline.  An empty selection produces an empty file.
void write_panel(const GeneMask& mask, std::span<const std::string> gene_ids,
                 const std::filesystem::path& path);

/// Reads a panel written by write_panel and resolves it against gene_ids.
/// Unknown or duplicate identifiers raise DataError.
GeneMask read_panel(const std::filesystem::path& path, std::span<const std::string> gene_ids);

/// Densifies to row-major n_cells x n_genes.
std::vector<double> to_dense_rows(const ExpressionMatrix& m);

/// Densifies to gene-major n_genes x n_cells (each gene's column contiguous).
std::vector<double> to_dense_columns(const ExpressionMatrix& m);

}  // namespace genepanel
