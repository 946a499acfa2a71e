#pragma once

// Reference computations that share no code with the library's numerics:
// finite differences, characteristic-polynomial roots, a Jacobi symmetric
// eigensolver, and brute-force multiset matching.

#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace dqf::oracle {

using cplx = std::complex<double>;

// Central differences of f with respect to every entry of x (restored
// afterwards).
std::vector<double> central_difference(const std::function<double()>& f, std::span<double> x, double h = 1e-5);
// Five-point central stencil, truncation error O(h^4).
std::vector<double> central_difference5(const std::function<double()>& f, std::span<double> x, double h = 1e-3);

// max |a - b| / max(max |a|, max |b|, floor)
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-300);

// Row-major n x n matrices.
// Coefficients c[0..n] of det(lambda I - A) = sum c_k lambda^(n-k), c[0] = 1,
// by the Faddeev-LeVerrier recursion.
std::vector<double> charpoly(std::span<const double> a, std::size_t n);
// All roots of a monic polynomial by Durand-Kerner iteration.
std::vector<cplx> polynomial_roots(std::span<const double> coeffs);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n);
// Largest singular value as sqrt of the top eigenvalue of A^T A.
double sigma_max(std::span<const double> a, std::size_t rows, std::size_t cols);

// Smallest achievable max |x_i - y_p(i)| over all permutations p (n <= 8).
double multiset_distance(std::span<const cplx> x, std::span<const cplx> y);

}  // namespace dqf::oracle
