#include "dqf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "dqf/error.hpp"

namespace dqf::linalg {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), a(std::move(values)) {
    if (a.size() != r * c) throw DimensionError("matrix data does not match its shape");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_tensor(const ad::Tensor& t) {
    if (t.rank() != 2) throw DimensionError("expected a matrix, got shape " + ad::shape_string(t.shape()));
    return {t.shape()[0], t.shape()[1], std::vector<double>(t.data().begin(), t.data().end())};
}

Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols != y.rows) throw DimensionError("matmul: inner dimensions differ");
    Matrix c(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t p = 0; p < x.cols; ++p) {
            const double s = x(i, p);
            for (std::size_t j = 0; j < y.cols; ++j) c(i, j) += s * y(p, j);
        }
    return c;
}

Matrix transpose(const Matrix& x) {
    Matrix t(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) t(j, i) = x(i, j);
    return t;
}

std::vector<double> matvec(const Matrix& x, std::span<const double> v) {
    if (v.size() != x.cols) throw DimensionError("matvec: length mismatch");
    std::vector<double> out(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out[i] += x(i, j) * v[j];
    return out;
}

double trace(const Matrix& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(x.rows, x.cols); ++i) s += x(i, i);
    return s;
}

double frobenius_norm(const Matrix& x) {
    double s = 0.0;
    for (double v : x.a) s += v * v;
    return std::sqrt(s);
}

double inf_norm(const Matrix& x) {
    double best = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) s += std::abs(x(i, j));
        best = std::max(best, s);
    }
    return best;
}

double determinant(const Matrix& x) {
    if (!x.square()) throw DimensionError("determinant of a non-square matrix");
    Matrix m = x;
    const std::size_t n = m.rows;
    double det = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
        if (m(piv, k) == 0.0) return 0.0;
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
            det = -det;
        }
        det *= m(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = m(i, k) / m(k, k);
            for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
        }
    }
    return det;
}

Matrix hessenberg(const Matrix& x) {
    if (!x.square()) throw DimensionError("hessenberg: matrix must be square");
    Matrix h = x;
    const std::size_t n = h.rows;
    std::vector<double> v(n);
    for (std::size_t k = 0; k + 2 < n; ++k) {
        double norm = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) norm += h(i, k) * h(i, k);
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        const double alpha = h(k + 1, k) > 0 ? -norm : norm;
        double vnorm = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) {
            v[i] = h(i, k);
            if (i == k + 1) v[i] -= alpha;
            vnorm += v[i] * v[i];
        }
        if (vnorm == 0.0) continue;
        // H <- P H P with P = I - 2 v v^T / (v^T v)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = k + 1; i < n; ++i) s += v[i] * h(i, j);
            s *= 2.0 / vnorm;
            for (std::size_t i = k + 1; i < n; ++i) h(i, j) -= s * v[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) s += h(i, j) * v[j];
            s *= 2.0 / vnorm;
            for (std::size_t j = k + 1; j < n; ++j) h(i, j) -= s * v[j];
        }
        h(k + 1, k) = alpha;
        for (std::size_t i = k + 2; i < n; ++i) h(i, k) = 0.0;
    }
    return h;
}

namespace {

double sign_of(double a, double b) { return b >= 0.0 ? std::abs(a) : -std::abs(a); }

// Francis double-shift QR on an upper Hessenberg matrix, after the
// EISPACK hqr routine.
void hqr(Matrix& a, std::vector<double>& wr, std::vector<double>& wi, int max_its) {
    const int n = static_cast<int>(a.rows);
    double anorm = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = std::max(i - 1, 0); j < n; ++j) anorm += std::abs(a(i, j));
    int nn = n - 1;
    double t = 0.0;
    double p = 0, q = 0, r = 0, s = 0, w = 0, x = 0, y = 0, z = 0;
    while (nn >= 0) {
        int its = 0, l = 0;
        do {
            for (l = nn; l >= 1; --l) {
                s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
                if (s == 0.0) s = anorm;
                if (std::abs(a(l, l - 1)) + s == s) {
                    a(l, l - 1) = 0.0;
                    break;
                }
            }
            x = a(nn, nn);
            if (l == nn) {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                --nn;
            } else {
                y = a(nn - 1, nn - 1);
                w = a(nn, nn - 1) * a(nn - 1, nn);
                if (l == nn - 1) {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = std::sqrt(std::abs(q));
                    x += t;
                    if (q >= 0.0) {
                        z = p + sign_of(z, p);
                        wr[nn - 1] = wr[nn] = x + z;
                        if (z != 0.0) wr[nn] = x - w / z;
                        wi[nn - 1] = wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = wr[nn] = x + p;
                        wi[nn - 1] = z;
                        wi[nn] = -z;
                    }
                    nn -= 2;
                } else {
                    if (its == max_its) {
                        std::ostringstream os;
                        os << "eigenvalues: no convergence after " << its << " iterations; subdiagonal residual "
                           << std::abs(a(nn, nn - 1)) << " relative to norm " << anorm;
                        throw NumericalError(os.str());
                    }
                    if (its > 0 && its % 10 == 0) {
                        t += x;
                        for (int i = 0; i <= nn; ++i) a(i, i) -= x;
                        s = std::abs(a(nn, nn - 1)) + std::abs(a(nn - 1, nn - 2));
                        y = x = 0.75 * s;
                        w = -0.4375 * s * s;
                    }
                    ++its;
                    int m = nn - 2;
                    for (; m >= l; --m) {
                        z = a(m, m);
                        r = x - z;
                        s = y - z;
                        p = (r * s - w) / a(m + 1, m) + a(m, m + 1);
                        q = a(m + 1, m + 1) - z - r - s;
                        r = a(m + 2, m + 1);
                        s = std::abs(p) + std::abs(q) + std::abs(r);
                        p /= s;
                        q /= s;
                        r /= s;
                        if (m == l) break;
                        const double u = std::abs(a(m, m - 1)) * (std::abs(q) + std::abs(r));
                        const double v = std::abs(p) * (std::abs(a(m - 1, m - 1)) + std::abs(z) + std::abs(a(m + 1, m + 1)));
                        if (u + v == v) break;
                    }
                    for (int i = m + 2; i <= nn; ++i) {
                        a(i, i - 2) = 0.0;
                        if (i != m + 2) a(i, i - 3) = 0.0;
                    }
                    for (int k = m; k <= nn - 1; ++k) {
                        if (k != m) {
                            p = a(k, k - 1);
                            q = a(k + 1, k - 1);
                            r = 0.0;
                            if (k != nn - 1) r = a(k + 2, k - 1);
                            if ((x = std::abs(p) + std::abs(q) + std::abs(r)) != 0.0) {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        if ((s = sign_of(std::sqrt(p * p + q * q + r * r), p)) != 0.0) {
                            if (k == m) {
                                if (l != m) a(k, k - 1) = -a(k, k - 1);
                            } else {
                                a(k, k - 1) = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for (int j = k; j <= nn; ++j) {
                                p = a(k, j) + q * a(k + 1, j);
                                if (k != nn - 1) {
                                    p += r * a(k + 2, j);
                                    a(k + 2, j) -= p * z;
                                }
                                a(k + 1, j) -= p * y;
                                a(k, j) -= p * x;
                            }
                            const int mmin = nn < k + 3 ? nn : k + 3;
                            for (int i = l; i <= mmin; ++i) {
                                p = x * a(i, k) + y * a(i, k + 1);
                                if (k != nn - 1) {
                                    p += z * a(i, k + 2);
                                    a(i, k + 2) -= p * r;
                                }
                                a(i, k + 1) -= p * q;
                                a(i, k) -= p;
                            }
                        }
                    }
                }
            }
        } while (nn >= 0 && l < nn - 1);
    }
}

}  // namespace

std::vector<cplx> eigenvalues(const Matrix& x, const EigenOptions& opts) {
    if (!x.square()) throw DimensionError("eigenvalues: matrix must be square");
    for (double v : x.a)
        if (!std::isfinite(v)) throw NumericalError("eigenvalues: non-finite matrix entry");
    const std::size_t n = x.rows;
    if (n == 0) return {};
    Matrix h = hessenberg(x);
    std::vector<double> wr(n), wi(n);
    hqr(h, wr, wi, opts.max_iterations_per_value);
    std::vector<cplx> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {wr[i], wi[i]};
    // hqr leaves complex pairs adjacent; order each pair positive-imaginary first
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (out[i].imag() != 0.0 && out[i + 1].imag() == -out[i].imag()) {
            if (out[i].imag() < 0) std::swap(out[i], out[i + 1]);
            ++i;
        }
    return out;
}

ComplexLu::ComplexLu(std::vector<std::vector<cplx>> m, bool columns, double min_pivot) : n_(m.size()) {
    lu_.assign(n_ * n_, cplx{});
    for (std::size_t i = 0; i < n_; ++i) {
        if (m[i].size() != n_) throw DimensionError("ComplexLu: matrix must be square");
        for (std::size_t j = 0; j < n_; ++j) {
            if (columns)
                lu_[j * n_ + i] = m[i][j];
            else
                lu_[i * n_ + j] = m[i][j];
        }
    }
    perm_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
    double pmin = std::numeric_limits<double>::infinity(), pmax = 0.0;
    for (std::size_t k = 0; k < n_; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n_; ++i)
            if (std::abs(lu_[i * n_ + k]) > std::abs(lu_[piv * n_ + k])) piv = i;
        if (piv != k) {
            for (std::size_t j = 0; j < n_; ++j) std::swap(lu_[k * n_ + j], lu_[piv * n_ + j]);
            std::swap(perm_[k], perm_[piv]);
        }
        const double mag = std::abs(lu_[k * n_ + k]);
        pmin = std::min(pmin, mag);
        pmax = std::max(pmax, mag);
        if (mag < min_pivot) lu_[k * n_ + k] = min_pivot;
        else if (mag == 0.0) continue;
        for (std::size_t i = k + 1; i < n_; ++i) {
            const cplx f = lu_[i * n_ + k] / lu_[k * n_ + k];
            lu_[i * n_ + k] = f;
            for (std::size_t j = k + 1; j < n_; ++j) lu_[i * n_ + j] -= f * lu_[k * n_ + j];
        }
    }
    pivot_ratio_ = pmax > 0.0 ? pmin / pmax : 0.0;
}

std::vector<cplx> ComplexLu::solve(std::span<const cplx> b) const {
    if (b.size() != n_) throw DimensionError("ComplexLu::solve: length mismatch");
    std::vector<cplx> y(n_);
    for (std::size_t i = 0; i < n_; ++i) {
        cplx s = b[perm_[i]];
        for (std::size_t j = 0; j < i; ++j) s -= lu_[i * n_ + j] * y[j];
        y[i] = s;
    }
    for (std::size_t ii = n_; ii-- > 0;) {
        cplx s = y[ii];
        for (std::size_t j = ii + 1; j < n_; ++j) s -= lu_[ii * n_ + j] * y[j];
        const cplx d = lu_[ii * n_ + ii];
        if (d == cplx{}) throw BasisError("singular system");
        y[ii] = s / d;
    }
    return y;
}

namespace {

double norm2(const std::vector<cplx>& v) {
    double s = 0.0;
    for (const auto& z : v) s += std::norm(z);
    return std::sqrt(s);
}

void normalize(std::vector<cplx>& v) {
    const double nv = norm2(v);
    if (nv > 0.0)
        for (auto& z : v) z /= nv;
}

// Removes the components of v along the orthonormal vectors in `basis`.
void orthogonalize(std::vector<cplx>& v, const std::vector<const std::vector<cplx>*>& basis) {
    for (const auto* b : basis) {
        cplx proj{};
        for (std::size_t i = 0; i < v.size(); ++i) proj += std::conj((*b)[i]) * v[i];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * (*b)[i];
    }
}

}  // namespace

namespace {

double vector_residual(const Matrix& x, cplx lambda, const std::vector<cplx>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        cplx av{};
        for (std::size_t j = 0; j < x.cols; ++j) av += x(i, j) * v[j];
        s += std::norm(av - lambda * v[i]);
    }
    return std::sqrt(s);
}

}  // namespace

EigenSystem eigensystem(const Matrix& x, const EigenOptions& opts) {
    EigenSystem es;
    es.values = eigenvalues(x, opts);
    const std::size_t n = x.rows;
    const double norm = frobenius_norm(x);
    const double scale = norm > 0.0 ? norm : 1.0;
    const double same = 1e-8 * scale;
    const double tiny = std::numeric_limits<double>::epsilon() * scale;
    es.vectors.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const cplx lambda = es.values[k];
        std::vector<std::vector<cplx>> m(n, std::vector<cplx>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) m[i][j] = x(i, j) - (i == j ? lambda : cplx{});
        // A - lambda I is singular up to rounding; pivots that vanish are
        // raised to eps * ||A|| so the solve amplifies the eigendirection.
        const ComplexLu lu(m, false, tiny);
        std::vector<const std::vector<cplx>*> group;
        for (std::size_t j = 0; j < k; ++j)
            if (std::abs(es.values[j] - lambda) <= same) group.push_back(&es.vectors[j]);
        auto iterate = [&](const std::vector<const std::vector<cplx>*>& against) {
            std::mt19937_64 rng(0x5eed + k);
            std::uniform_real_distribution<double> unif(-1.0, 1.0);
            std::vector<cplx> v(n);
            for (auto& z : v) z = {unif(rng), 0.0};
            orthogonalize(v, against);
            normalize(v);
            for (int it = 0; it < 4; ++it) {
                std::vector<cplx> w = lu.solve(v);
                for (auto& z : w)
                    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
                        throw NumericalError("inverse iteration overflow");
                orthogonalize(w, against);
                normalize(w);
                v = std::move(w);
            }
            return v;
        };
        auto v = iterate(group);
        // A defective eigenvalue has fewer independent eigenvectors than its
        // multiplicity; forcing orthogonality would then produce a vector
        // that is not an eigenvector at all. Keep the true (parallel)
        // direction so basis checks see the defect.
        if (!group.empty() && vector_residual(x, lambda, v) > 1e-6 * scale) v = iterate({});
        es.vectors[k] = std::move(v);
    }
    return es;
}

double eigen_residual(const Matrix& x, const EigenSystem& es) {
    const double norm = frobenius_norm(x);
    if (norm == 0.0) return 0.0;
    double worst = 0.0;
    for (std::size_t k = 0; k < es.values.size(); ++k)
        worst = std::max(worst, vector_residual(x, es.values[k], es.vectors[k]) / norm);
    return worst;
}

std::vector<cplx> basis_coordinates(const EigenSystem& es, std::span<const double> x, double rcond) {
    const std::size_t n = es.vectors.size();
    if (x.size() != n) throw DimensionError("basis_coordinates: length mismatch");
    ComplexLu lu(es.vectors, true);
    if (lu.pivot_ratio() < rcond) throw BasisError("eigenvectors do not form a basis (defective matrix)");
    std::vector<cplx> b(x.begin(), x.end());
    return lu.solve(b);
}

std::vector<std::size_t> min_cost_assignment(const Matrix& cost) {
    if (!cost.square()) throw DimensionError("assignment needs a square cost matrix");
    const std::size_t n = cost.rows;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> result(n);
    for (std::size_t j = 1; j <= n; ++j) result[p[j] - 1] = j - 1;
    return result;
}

}  // namespace dqf::linalg
