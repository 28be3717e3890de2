#include "genepanel/expression_matrix.hpp"
#include "genepanel/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace genepanel;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("genepanel_test_" + std::to_string(Rng(std::random_device{}()).next_u64()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ExpressionMatrix random_matrix(std::size_t cells, std::size_t genes, std::uint64_t seed,
                               double density = 0.4) {
    Rng rng(seed);
    std::vector<double> dense(cells * genes, 0.0);
    for (double& v : dense)
        if (rng.next_double() < density) v = rng.next_double(0.1, 9.0);
    return matrix_from_dense(cells, genes, dense);
}

}  // namespace

TEST_CASE("load_csv reads a minimal matrix") {
    TempDir tmp;
    write_file(tmp.path / "m.csv", ",g1,g2\nc1,0,5\nc2,1,0\n");
    ExpressionMatrix m = load_csv(tmp.path / "m.csv");
    CHECK(m.n_cells == 2);
    CHECK(m.n_genes == 2);
    CHECK(m.nnz() == 2);
    CHECK(m.gene_ids == std::vector<std::string>{"g1", "g2"});
    CHECK(m.cell_ids == std::vector<std::string>{"c1", "c2"});
    const auto dense = to_dense_rows(m);
    CHECK(dense == std::vector<double>{0, 5, 1, 0});
}

TEST_CASE("load_csv supports genes in rows") {
    TempDir tmp;
    write_file(tmp.path / "m.csv", ",c1,c2\ng1,0,1\ng2,5,0\n");
    ExpressionMatrix m = load_csv(tmp.path / "m.csv", GeneAxis::rows);
    CHECK(m.n_cells == 2);
    CHECK(m.n_genes == 2);
    CHECK(to_dense_rows(m) == std::vector<double>{0, 5, 1, 0});
}

TEST_CASE("load_csv diagnoses malformed input by line") {
    TempDir tmp;
    write_file(tmp.path / "ragged.csv", ",g1,g2\nc1,0,5\nc2,1\n");
    CHECK_THROWS_WITH_AS(load_csv(tmp.path / "ragged.csv"),
                         doctest::Contains("ragged row at line 3"), DataError);

    write_file(tmp.path / "neg.csv", ",g1,g2\nc1,0,-1\n");
    CHECK_THROWS_WITH_AS(load_csv(tmp.path / "neg.csv"), doctest::Contains("negative value"),
                         DataError);

    write_file(tmp.path / "nonnum.csv", ",g1,g2\nc1,0,abc\n");
    CHECK_THROWS_AS(load_csv(tmp.path / "nonnum.csv"), DataError);

    write_file(tmp.path / "dup.csv", ",g1,g1\nc1,0,5\n");
    CHECK_THROWS_WITH_AS(load_csv(tmp.path / "dup.csv"), doctest::Contains("duplicate"),
                         DataError);

    write_file(tmp.path / "empty.csv", "");
    CHECK_THROWS_AS(load_csv(tmp.path / "empty.csv"), DataError);
}

TEST_CASE("csv round-trip is bit-exact") {
    TempDir tmp;
    ExpressionMatrix m = random_matrix(10, 20, 321);
    save_csv(m, tmp.path / "m.csv");
    ExpressionMatrix r = load_csv(tmp.path / "m.csv");
    CHECK(r.n_cells == m.n_cells);
    CHECK(r.n_genes == m.n_genes);
    CHECK(r.values == m.values);
    CHECK(r.col_idx == m.col_idx);
    CHECK(r.row_ptr == m.row_ptr);
    CHECK(r.gene_ids == m.gene_ids);
    CHECK(r.cell_ids == m.cell_ids);
}

TEST_CASE("matrix market reads coordinates and validates ids") {
    TempDir tmp;
    write_file(tmp.path / "m.mtx",
               "%%MatrixMarket matrix coordinate real general\n3 2 2\n1 2 4.5\n3 1 2\n");
    write_file(tmp.path / "genes.txt", "g1\ng2\n");
    write_file(tmp.path / "cells.txt", "c1\nc2\nc3\n");
    ExpressionMatrix m =
        load_matrix_market(tmp.path / "m.mtx", tmp.path / "genes.txt", tmp.path / "cells.txt");
    CHECK(m.n_cells == 3);
    CHECK(m.n_genes == 2);
    CHECK(m.nnz() == 2);
    CHECK(to_dense_rows(m) == std::vector<double>{0, 4.5, 0, 0, 2, 0});

    write_file(tmp.path / "genes4.txt", "g1\ng2\ng3\ng4\n");
    CHECK_THROWS_AS(
        load_matrix_market(tmp.path / "m.mtx", tmp.path / "genes4.txt", tmp.path / "cells.txt"),
        DataError);

    write_file(tmp.path / "dup.mtx",
               "%%MatrixMarket matrix coordinate real general\n3 2 2\n1 2 4.5\n1 2 1\n");
    CHECK_THROWS_WITH_AS(
        load_matrix_market(tmp.path / "dup.mtx", tmp.path / "genes.txt", tmp.path / "cells.txt"),
        doctest::Contains("duplicate"), DataError);
}

TEST_CASE("matrix market round-trip is bit-exact") {
    TempDir tmp;
    ExpressionMatrix m = random_matrix(10, 20, 99);
    save_matrix_market(m, tmp.path / "m.mtx", tmp.path / "g.txt", tmp.path / "c.txt");
    ExpressionMatrix r = load_matrix_market(tmp.path / "m.mtx", tmp.path / "g.txt",
                                            tmp.path / "c.txt");
    CHECK(r.values == m.values);
    CHECK(r.col_idx == m.col_idx);
    CHECK(r.row_ptr == m.row_ptr);
    CHECK(r.gene_ids == m.gene_ids);
    CHECK(r.cell_ids == m.cell_ids);
}

TEST_CASE("matrix_from_dense rejects out-of-domain values") {
    CHECK_THROWS_AS(matrix_from_dense(1, 2, std::vector<double>{1.0, -0.5}), DataError);
    CHECK_THROWS_AS(matrix_from_dense(1, 1, std::vector<double>{std::nan("")}), DataError);
    CHECK_THROWS_AS(matrix_from_dense(1, 1, std::vector<double>{INFINITY}), DataError);
}

TEST_CASE("normalize scales each cell then applies log1p") {
    ExpressionMatrix m = matrix_from_dense(2, 2, std::vector<double>{1, 3, 0, 0});
    ExpressionMatrix n = normalize(m, 1e4);
    const auto dense = to_dense_rows(n);
    CHECK(dense[0] == doctest::Approx(std::log(1.0 + 2500.0)).epsilon(1e-14));
    CHECK(dense[1] == doctest::Approx(std::log(1.0 + 7500.0)).epsilon(1e-14));
    // all-zero cell passes through untouched, no NaN
    CHECK(dense[2] == 0.0);
    CHECK(dense[3] == 0.0);
}

TEST_CASE("normalize preserves the sparsity pattern and hits the target sum") {
    ExpressionMatrix m = random_matrix(8, 15, 1234);
    ExpressionMatrix n = normalize(m, 1e4);
    CHECK(n.col_idx == m.col_idx);
    CHECK(n.row_ptr == m.row_ptr);
    for (double v : n.values) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
    }
    // undoing the log recovers rows that sum to the target
    for (std::size_t c = 0; c < n.n_cells; ++c) {
        double s = 0.0;
        for (std::size_t i = n.row_ptr[c]; i < n.row_ptr[c + 1]; ++i)
            s += std::exp(n.values[i]) - 1.0;
        if (n.row_ptr[c] != n.row_ptr[c + 1]) CHECK(s == doctest::Approx(1e4).epsilon(1e-9));
    }
}

TEST_CASE("subset_genes keeps order and composes") {
    ExpressionMatrix m = random_matrix(6, 5, 7);
    ExpressionMatrix same = subset_genes(m, GeneMask::full(5));
    CHECK(same.values == m.values);
    CHECK(same.col_idx == m.col_idx);
    CHECK(same.gene_ids == m.gene_ids);

    ExpressionMatrix empty = subset_genes(m, GeneMask::none(5));
    CHECK(empty.n_genes == 0);
    CHECK(empty.n_cells == 6);
    CHECK(empty.nnz() == 0);

    const std::vector<std::size_t> pick{0, 2};
    ExpressionMatrix two = subset_genes(m, GeneMask::from_indices(5, pick));
    CHECK(two.n_genes == 2);
    CHECK(two.gene_ids[0] == m.gene_ids[0]);
    CHECK(two.gene_ids[1] == m.gene_ids[2]);
    const auto full_dense = to_dense_rows(m);
    const auto sub_dense = to_dense_rows(two);
    for (std::size_t c = 0; c < 6; ++c) {
        CHECK(sub_dense[c * 2 + 0] == full_dense[c * 5 + 0]);
        CHECK(sub_dense[c * 2 + 1] == full_dense[c * 5 + 2]);
    }

    GeneMask length_mismatch = GeneMask::full(4);
    CHECK_THROWS_AS(subset_genes(m, length_mismatch), DataError);

    // two-step subset equals one intersection mask
    GeneMask a = GeneMask::from_indices(5, std::vector<std::size_t>{0, 1, 3});
    GeneMask b = GeneMask::from_indices(3, std::vector<std::size_t>{0, 2});
    ExpressionMatrix via_two = subset_genes(subset_genes(m, a), b);
    GeneMask combined = GeneMask::from_indices(5, std::vector<std::size_t>{0, 3});
    ExpressionMatrix via_one = subset_genes(m, combined);
    CHECK(via_two.values == via_one.values);
    CHECK(via_two.gene_ids == via_one.gene_ids);
}

TEST_CASE("descriptive_stats matches hand-computed columns") {
    // column 0: (1,2,3,4); column 1: constant 2; column 2: (0,0,0,4) with the
    // zeros implicit in storage
    ExpressionMatrix m = matrix_from_dense(
        4, 3, std::vector<double>{1, 2, 0, 2, 2, 0, 3, 2, 0, 4, 2, 4});
    GeneStatsBlock stats = descriptive_stats(m);
    REQUIRE(stats.n_rows == 3);

    auto row = stats.row(0);  // std, min, max, q1, q2, q3, mean
    CHECK(row[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-14));
    CHECK(row[1] == 1.0);
    CHECK(row[2] == 4.0);
    CHECK(row[3] == doctest::Approx(1.75).epsilon(1e-14));
    CHECK(row[4] == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(row[5] == doctest::Approx(3.25).epsilon(1e-14));
    CHECK(row[6] == doctest::Approx(2.5).epsilon(1e-14));

    auto constant = stats.row(1);
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(constant[i] == (i == 0 ? 0.0 : 2.0));

    auto sparse = stats.row(2);
    CHECK(sparse[1] == 0.0);             // min counts implicit zeros
    CHECK(sparse[4] == 0.0);             // median too
    CHECK(sparse[2] == 4.0);
    CHECK(sparse[6] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("descriptive_stats orders quantiles on random input") {
    ExpressionMatrix m = random_matrix(37, 11, 2024);
    GeneStatsBlock stats = descriptive_stats(m);
    for (std::size_t g = 0; g < 11; ++g) {
        auto r = stats.row(g);
        CHECK(r[0] >= 0.0);
        CHECK(r[1] <= r[3]);
        CHECK(r[3] <= r[4]);
        CHECK(r[4] <= r[5]);
        CHECK(r[5] <= r[2]);
    }
    CHECK_THROWS_AS(descriptive_stats(matrix_from_dense(1, 2, std::vector<double>{1, 2})),
                    DataError);
}

TEST_CASE("panel files round-trip") {
    TempDir tmp;
    std::vector<std::string> ids{"g1", "g2", "g3"};
    GeneMask mask = GeneMask::from_indices(3, std::vector<std::size_t>{1});
    write_panel(mask, ids, tmp.path / "panel.txt");
    CHECK(read_file(tmp.path / "panel.txt") == "g2\n");

    GeneMask back = read_panel(tmp.path / "panel.txt", ids);
    CHECK(back.bits == mask.bits);

    write_panel(GeneMask::none(3), ids, tmp.path / "empty.txt");
    CHECK(read_file(tmp.path / "empty.txt").empty());
    CHECK(read_panel(tmp.path / "empty.txt", ids).count() == 0);

    write_file(tmp.path / "unknown.txt", "g9\n");
    CHECK_THROWS_AS(read_panel(tmp.path / "unknown.txt", ids), DataError);
    write_file(tmp.path / "dup.txt", "g2\ng2\n");
    CHECK_THROWS_AS(read_panel(tmp.path / "dup.txt", ids), DataError);
}

TEST_CASE("gene mask basics") {
    GeneMask m = GeneMask::from_indices(6, std::vector<std::size_t>{5, 1});
    CHECK(m.count() == 2);
    CHECK(m.test(1));
    CHECK(m.test(5));
    CHECK(!m.test(0));
    CHECK(m.indices() == std::vector<std::size_t>{1, 5});
    m.set(0);
    CHECK(m.count() == 3);
    m.set(0, false);
    CHECK(m.count() == 2);
}

TEST_CASE("dense conversions agree") {
    ExpressionMatrix m = random_matrix(5, 4, 31);
    const auto rows = to_dense_rows(m);
    const auto cols = to_dense_columns(m);
    for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t g = 0; g < 4; ++g) CHECK(rows[c * 4 + g] == cols[g * 5 + c]);
}
