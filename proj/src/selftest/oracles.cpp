#include "selftest/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dqf::oracle {

std::vector<double> central_difference(const std::function<double()>& f, std::span<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

std::vector<double> central_difference5(const std::function<double()>& f, std::span<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        double v[4];
        const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
        for (int k = 0; k < 4; ++k) {
            x[i] = keep + offsets[k] * h;
            v[k] = f();
        }
        x[i] = keep;
        g[i] = (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
    }
    return g;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw std::invalid_argument("relative_error: size mismatch");
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

std::vector<double> charpoly(std::span<const double> a, std::size_t n) {
    // M_0 = 0, c_0 = 1; M_k = A M_{k-1} + c_{k-1} I, c_k = -tr(A M_k) / k
    std::vector<double> c(n + 1, 0.0), m(n * n, 0.0);
    c[0] = 1.0;
    for (std::size_t k = 1; k <= n; ++k) {
        std::vector<double> next(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < n; ++p) s += a[i * n + p] * m[p * n + j];
                next[i * n + j] = s + (i == j ? c[k - 1] : 0.0);
            }
        m = next;
        double tr = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < n; ++p) tr += a[i * n + p] * m[p * n + i];
        c[k] = -tr / static_cast<double>(k);
    }
    return c;
}

std::vector<cplx> polynomial_roots(std::span<const double> coeffs) {
    const std::size_t n = coeffs.size() - 1;
    if (n == 0) return {};
    double radius = 0.0;
    for (std::size_t k = 1; k <= n; ++k) radius = std::max(radius, std::abs(coeffs[k]));
    radius += 1.0;
    auto eval = [&](cplx z) {
        cplx v = coeffs[0];
        for (std::size_t k = 1; k <= n; ++k) v = v * z + coeffs[k];
        return v;
    };
    std::vector<cplx> z(n);
    const cplx seed(0.4, 0.9);
    for (std::size_t i = 0; i < n; ++i) z[i] = radius * std::pow(seed, static_cast<double>(i));
    for (int it = 0; it < 5000; ++it) {
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cplx denom = 1.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) denom *= z[i] - z[j];
            if (std::abs(denom) == 0.0) denom = 1e-300;
            const cplx step = eval(z[i]) / denom;
            z[i] -= step;
            change = std::max(change, std::abs(step));
        }
        if (change < 1e-15 * radius) break;
    }
    // Polish each root with Newton steps on the original polynomial.
    for (auto& r : z)
        for (int it = 0; it < 3; ++it) {
            cplx v = coeffs[0], dv = 0.0;
            for (std::size_t k = 1; k <= n; ++k) {
                dv = dv * r + v;
                v = v * r + coeffs[k];
            }
            if (std::abs(dv) > 0.0) r -= v / dv;
        }
    return z;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a[i * n + j] * a[i * n + j];
                if (i != j) off += a[i * n + j] * a[i * n + j];
            }
        if (off <= 1e-30 * total || off == 0.0) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
    std::sort(ev.begin(), ev.end());
    return ev;
}

double sigma_max(std::span<const double> a, std::size_t rows, std::size_t cols) {
    std::vector<double> g(cols * cols, 0.0);
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += a[r * cols + i] * a[r * cols + j];
            g[i * cols + j] = s;
        }
    const auto ev = symmetric_eigenvalues(std::move(g), cols);
    return std::sqrt(std::max(0.0, ev.back()));
}

double multiset_distance(std::span<const cplx> x, std::span<const cplx> y) {
    if (x.size() != y.size() || x.size() > 8) throw std::invalid_argument("multiset_distance: bad sizes");
    std::vector<std::size_t> perm(x.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double worst = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[perm[i]]));
        best = std::min(best, worst);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace dqf::oracle
