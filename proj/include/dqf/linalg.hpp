#pragma once

// Small dense linear algebra for the analysis tools: a general real
// eigensolver (Householder reduction to Hessenberg form followed by
// Francis double-shift QR), eigenvectors by inverse iteration, LU
// factorization, and minimal-cost assignment.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "dqf/tensor.hpp"

namespace dqf::linalg {

using cplx = std::complex<double>;

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix from_tensor(const ad::Tensor& t);

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    bool square() const { return rows == cols; }
};

Matrix matmul(const Matrix& x, const Matrix& y);
Matrix transpose(const Matrix& x);
std::vector<double> matvec(const Matrix& x, std::span<const double> v);
double trace(const Matrix& x);
double frobenius_norm(const Matrix& x);
// Largest absolute row sum.
double inf_norm(const Matrix& x);
double determinant(const Matrix& x);

// Householder reduction Q^T A Q = H with H upper Hessenberg.
Matrix hessenberg(const Matrix& x);

struct EigenOptions {
    int max_iterations_per_value = 60;
};

// All n eigenvalues, complex pairs adjacent with the positive imaginary part
// first. Throws NumericalError (with the size of the unconverged subdiagonal
// entry) if an eigenvalue fails to converge.
std::vector<cplx> eigenvalues(const Matrix& x, const EigenOptions& opts = {});

struct EigenSystem {
    std::vector<cplx> values;
    std::vector<std::vector<cplx>> vectors;  // unit 2-norm, vectors[k] pairs with values[k]
};

// Eigenvalues plus eigenvectors by inverse iteration. Numerically equal
// eigenvalues get mutually orthogonalized vectors so a diagonalizable
// matrix yields a full basis.
EigenSystem eigensystem(const Matrix& x, const EigenOptions& opts = {});
// max_k ||A v_k - lambda_k v_k|| / ||A||_F (0 for the zero matrix).
double eigen_residual(const Matrix& x, const EigenSystem& es);

// Complex LU with partial pivoting. Pivots smaller than `min_pivot` are
// replaced by it; solve() throws BasisError on an exactly zero pivot.
class ComplexLu {
   public:
    explicit ComplexLu(std::vector<std::vector<cplx>> columns_or_rows, bool columns = false,
                       double min_pivot = 0.0);

    std::vector<cplx> solve(std::span<const cplx> b) const;
    // Smallest |pivot| / largest |pivot|.
    double pivot_ratio() const { return pivot_ratio_; }

   private:
    std::size_t n_ = 0;
    std::vector<cplx> lu_;
    std::vector<std::size_t> perm_;
    double pivot_ratio_ = 0.0;
};

// Coordinates of x in the basis formed by es.vectors. Throws BasisError if
// the vectors do not form a basis (defective matrix).
std::vector<cplx> basis_coordinates(const EigenSystem& es, std::span<const double> x,
                                    double rcond = 1e-10);

// Minimal-cost perfect matching on a square cost matrix; result[i] is the
// column assigned to row i.
std::vector<std::size_t> min_cost_assignment(const Matrix& cost);

}  // namespace dqf::linalg
