#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cbcflow/core.hpp"

namespace cbcflow {

struct Triplet {
    int r = 0;
    int c = 0;
    double v = 0.0;
};

class SingularMatrixError : public SolveError {
public:
    SingularMatrixError(const std::string& msg, int pivot_) : SolveError(msg), pivot(pivot_) {}
    int pivot = -1;  // offending pivot row/column if known, else -1
};

// Immutable CSR sparse matrix. Duplicate triplets are summed at construction;
// column indices within each row are sorted and unique. Entries that sum to
// zero are kept (the sparsity pattern is the union of the inputs).
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(int rows, int cols, std::vector<Triplet> triplets);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t nnz() const { return vals_.size(); }

    const std::vector<int>& row_ptr() const { return row_ptr_; }
    const std::vector<int>& col_idx() const { return col_idx_; }
    const std::vector<double>& values() const { return vals_; }

    void matvec(std::span<const double> x, std::span<double> y) const;  // y = A x
    std::vector<double> operator*(std::span<const double> x) const;

    // y += alpha * A x (or A^T x), used for residual checks and block ops.
    void matvec_add(std::span<const double> x, std::span<double> y, double alpha = 1.0,
                    bool transpose = false) const;

    std::vector<Triplet> to_triplets() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<int> row_ptr_;
    std::vector<int> col_idx_;
    std::vector<double> vals_;
};

// Reusable sparse LU factorization (one factorization, many right-hand
// sides). Every solve verifies the relative residual
// ||Ax-b|| / max(||b||, eps) <= 1e-10 and throws SolveError on violation;
// factorization failures throw SingularMatrixError with the pivot index
// when the backend reports one.
class LuSolver {
public:
    explicit LuSolver(const SparseMatrix& a);
    ~LuSolver();
    LuSolver(LuSolver&&) noexcept;
    LuSolver& operator=(LuSolver&&) noexcept;

    std::vector<double> solve(std::span<const double> b) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::vector<double> lu_solve(const SparseMatrix& a, std::span<const double> b);

// MatrixMarket coordinate dump, for debugging.
void save_matrix_market(const SparseMatrix& a, std::ostream& out);
void save_matrix_market_file(const SparseMatrix& a, const std::string& path);

// Appends scale * M (or M^T) into a triplet list at a block offset.
void append_block(std::vector<Triplet>& out, const SparseMatrix& m, int row_offset, int col_offset,
                  double scale = 1.0, bool transpose = false);

}  // namespace cbcflow
