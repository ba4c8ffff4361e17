#include "cbcflow/linalg.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace cbcflow {

SparseMatrix::SparseMatrix(int rows, int cols, std::vector<Triplet> triplets)
    : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw SolveError("negative matrix dimensions");
    for (const auto& t : triplets) {
        if (t.r < 0 || t.r >= rows || t.c < 0 || t.c >= cols)
            throw SolveError("triplet (" + std::to_string(t.r) + "," + std::to_string(t.c) +
                             ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.r != b.r ? a.r < b.r : a.c < b.c;
    });
    row_ptr_.assign(rows + 1, 0);
    col_idx_.reserve(triplets.size());
    vals_.reserve(triplets.size());
    std::size_t i = 0;
    for (int r = 0; r < rows; ++r) {
        while (i < triplets.size() && triplets[i].r == r) {
            const int c = triplets[i].c;
            double v = 0.0;
            while (i < triplets.size() && triplets[i].r == r && triplets[i].c == c)
                v += triplets[i++].v;
            col_idx_.push_back(c);
            vals_.push_back(v);
        }
        row_ptr_[r + 1] = static_cast<int>(col_idx_.size());
    }
}

void SparseMatrix::matvec(std::span<const double> x, std::span<double> y) const {
    if (static_cast<int>(x.size()) != cols_ || static_cast<int>(y.size()) != rows_)
        throw SolveError("matvec dimension mismatch");
    for (int r = 0; r < rows_; ++r) {
        double s = 0.0;
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += vals_[k] * x[col_idx_[k]];
        y[r] = s;
    }
}

std::vector<double> SparseMatrix::operator*(std::span<const double> x) const {
    std::vector<double> y(rows_);
    matvec(x, y);
    return y;
}

void SparseMatrix::matvec_add(std::span<const double> x, std::span<double> y, double alpha,
                              bool transpose) const {
    const int nx = transpose ? rows_ : cols_;
    const int ny = transpose ? cols_ : rows_;
    if (static_cast<int>(x.size()) != nx || static_cast<int>(y.size()) != ny)
        throw SolveError("matvec_add dimension mismatch");
    if (!transpose) {
        for (int r = 0; r < rows_; ++r) {
            double s = 0.0;
            for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += vals_[k] * x[col_idx_[k]];
            y[r] += alpha * s;
        }
    } else {
        for (int r = 0; r < rows_; ++r) {
            const double xr = alpha * x[r];
            if (xr == 0.0) continue;
            for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) y[col_idx_[k]] += vals_[k] * xr;
        }
    }
}

std::vector<Triplet> SparseMatrix::to_triplets() const {
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (int r = 0; r < rows_; ++r)
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.push_back({r, col_idx_[k], vals_[k]});
    return out;
}

namespace {

constexpr double kResidualTol = 1e-10;

// Eigen's failure messages name the offending column; pull the index out.
int parse_pivot(const std::string& msg) {
    for (std::size_t i = 0; i < msg.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(msg[i]))) {
            std::size_t j = i;
            long v = 0;
            while (j < msg.size() && std::isdigit(static_cast<unsigned char>(msg[j])))
                v = v * 10 + (msg[j++] - '0');
            return static_cast<int>(v);
        }
    }
    return -1;
}

}  // namespace

struct LuSolver::Impl {
    const SparseMatrix* a = nullptr;
    Eigen::SparseMatrix<double> ea;
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
};

LuSolver::LuSolver(const SparseMatrix& a) : impl_(std::make_unique<Impl>()) {
    if (a.rows() != a.cols()) throw SolveError("lu_solve requires a square matrix");
    impl_->a = &a;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(a.nnz());
    const auto& rp = a.row_ptr();
    const auto& ci = a.col_idx();
    const auto& vv = a.values();
    for (int r = 0; r < a.rows(); ++r)
        for (int k = rp[r]; k < rp[r + 1]; ++k) trips.emplace_back(r, ci[k], vv[k]);
    impl_->ea.resize(a.rows(), a.cols());
    impl_->ea.setFromTriplets(trips.begin(), trips.end());
    impl_->ea.makeCompressed();
    impl_->lu.isSymmetric(false);
    impl_->lu.analyzePattern(impl_->ea);
    impl_->lu.factorize(impl_->ea);
    if (impl_->lu.info() != Eigen::Success) {
        const std::string msg = impl_->lu.lastErrorMessage();
        throw SingularMatrixError("sparse LU factorization failed: " + msg, parse_pivot(msg));
    }
}

LuSolver::~LuSolver() = default;
LuSolver::LuSolver(LuSolver&&) noexcept = default;
LuSolver& LuSolver::operator=(LuSolver&&) noexcept = default;

std::vector<double> LuSolver::solve(std::span<const double> b) const {
    const int n = impl_->a->rows();
    if (static_cast<int>(b.size()) != n) throw SolveError("lu solve dimension mismatch");
    Eigen::VectorXd eb(n);
    for (int i = 0; i < n; ++i) eb[i] = b[i];
    Eigen::VectorXd ex = impl_->lu.solve(eb);
    if (impl_->lu.info() != Eigen::Success)
        throw SolveError("sparse LU back substitution failed");

    // One refinement pass, then enforce the residual contract.
    const double bnorm = eb.norm();
    for (int pass = 0; pass < 2; ++pass) {
        Eigen::VectorXd r = eb - impl_->ea * ex;
        if (r.norm() <= kResidualTol * std::max(bnorm, 1e-300) || pass == 1) break;
        ex += impl_->lu.solve(r);
    }
    const double rel = (eb - impl_->ea * ex).norm() / std::max(bnorm, 1e-300);
    if (!(rel <= kResidualTol))
        throw SolveError("linear solve residual " + std::to_string(rel) +
                         " exceeds tolerance (ill-conditioned or singular system)");
    return std::vector<double>(ex.data(), ex.data() + n);
}

std::vector<double> lu_solve(const SparseMatrix& a, std::span<const double> b) {
    return LuSolver(a).solve(b);
}

void save_matrix_market(const SparseMatrix& a, std::ostream& out) {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << a.rows() << " " << a.cols() << " " << a.nnz() << "\n";
    char buf[64];
    const auto& rp = a.row_ptr();
    const auto& ci = a.col_idx();
    const auto& vv = a.values();
    for (int r = 0; r < a.rows(); ++r) {
        for (int k = rp[r]; k < rp[r + 1]; ++k) {
            std::snprintf(buf, sizeof(buf), "%d %d %.17g\n", r + 1, ci[k] + 1, vv[k]);
            out << buf;
        }
    }
}

void save_matrix_market_file(const SparseMatrix& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SolveError("cannot open '" + path + "' for writing");
    save_matrix_market(a, out);
}

void append_block(std::vector<Triplet>& out, const SparseMatrix& m, int row_offset, int col_offset,
                  double scale, bool transpose) {
    const auto& rp = m.row_ptr();
    const auto& ci = m.col_idx();
    const auto& vv = m.values();
    for (int r = 0; r < m.rows(); ++r) {
        for (int k = rp[r]; k < rp[r + 1]; ++k) {
            if (!transpose)
                out.push_back({row_offset + r, col_offset + ci[k], scale * vv[k]});
            else
                out.push_back({row_offset + ci[k], col_offset + r, scale * vv[k]});
        }
    }
}

}  // namespace cbcflow
