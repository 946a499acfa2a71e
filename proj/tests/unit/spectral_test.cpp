#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dqf/error.hpp"
#include "dqf/linalg.hpp"
#include "dqf/spectral.hpp"
#include "helpers.hpp"
#include "selftest/oracles.hpp"

using namespace dqf;
using linalg::cplx;
using linalg::Matrix;

namespace {

std::vector<cplx> sorted(std::vector<cplx> v) {
    std::sort(v.begin(), v.end(), [](cplx a, cplx b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return v;
}

Matrix random_matrix(std::size_t n, Rng& rng) {
    std::normal_distribution<double> nd;
    Matrix m(n, n);
    for (auto& x : m.a) x = nd(rng);
    return m;
}

}  // namespace

TEST_CASE("eigenvalue examples") {
    const auto d = sorted(linalg::eigenvalues(Matrix(3, 3, {1, 0, 0, 0, 2, 0, 0, 0, 3})));
    for (int i = 0; i < 3; ++i) {
        CHECK(d[i].real() == doctest::Approx(i + 1.0).epsilon(1e-14));
        CHECK(d[i].imag() == 0.0);
    }
    const auto r = linalg::eigenvalues(Matrix(2, 2, {0, -1, 1, 0}));
    REQUIRE(r.size() == 2);
    CHECK(std::abs(r[0] - cplx(0, 1)) < 1e-14);
    CHECK(std::abs(r[1] - cplx(0, -1)) < 1e-14);
}

TEST_CASE("eigenvalues agree with characteristic-polynomial roots") {
    Rng rng(3);
    for (std::size_t n : {2, 3, 4, 5}) {
        const auto a = random_matrix(n, rng);
        const auto ours = linalg::eigenvalues(a);
        const auto ref = oracle::polynomial_roots(oracle::charpoly(a.a, n));
        CHECK(oracle::multiset_distance(ours, ref) < 1e-8);
    }
}

TEST_CASE("eigensystem residuals, closure and trace/determinant") {
    Rng rng(4);
    for (int rep = 0; rep < 10; ++rep) {
        const auto a = random_matrix(8, rng);
        const auto es = linalg::eigensystem(a);
        CHECK(linalg::eigen_residual(a, es) < 1e-8);
        cplx sum = 0.0, prod = 1.0;
        for (auto l : es.values) sum += l, prod *= l;
        CHECK(std::abs(sum - linalg::trace(a)) < 1e-10 * (1.0 + std::abs(linalg::trace(a))));
        const double det = linalg::determinant(a);
        CHECK(std::abs(prod - det) < 1e-9 * (1.0 + std::abs(det)));
        for (auto l : es.values) {
            if (l.imag() == 0.0) continue;
            const bool has_conj = std::any_of(es.values.begin(), es.values.end(),
                                              [&](cplx m) { return std::abs(m - std::conj(l)) < 1e-10; });
            CHECK(has_conj);
        }
    }
}

TEST_CASE("assignment is optimal on small costs") {
    const Matrix cost(3, 3, {4, 1, 3, 2, 0, 5, 3, 2, 2});
    const auto a = linalg::min_cost_assignment(cost);
    // Brute force over the six permutations gives 1 + 2 + 2 = 5.
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) total += cost(i, a[i]);
    CHECK(total == 5.0);
}

TEST_CASE("eigenvalue matching threads tracks") {
    const std::vector<cplx> prev{{1, 0}, {2, 0}, {0, 1}, {0, -1}};
    const std::vector<cplx> next{{0.1, -1}, {2.05, 0}, {0.1, 1}, {0.95, 0}};
    const auto m = match_eigenvalues(prev, next);
    CHECK(m[0] == cplx(0.95, 0));
    CHECK(m[1] == cplx(2.05, 0));
    CHECK(m[2] == cplx(0.1, 1));
    CHECK(m[3] == cplx(0.1, -1));
}

TEST_CASE("circuit examples") {
    auto cfg = testing::tiny_config();
    Rng rng(5);
    auto w = testing::random_weights(cfg, rng);
    const std::size_t dh = cfg.d_head, d = cfg.d_model;

    auto zq = w;
    zq.q = ad::Tensor::zeros(w.q.shape());
    zq.k = ad::Tensor::zeros(w.k.shape());
    const auto qk0 = qk_matrix(zq, 0, dh);
    for (double x : qk0.a) CHECK(x == 0.0);
    for (auto l : linalg::eigenvalues(qk0)) CHECK(std::abs(l) == 0.0);

    auto zv = w;
    zv.v = ad::Tensor::zeros(w.v.shape());
    for (double x : ov_matrix(zv, 1, dh).a) CHECK(x == 0.0);

    // Orthonormal rows for head 0 from a Gram-Schmidt pass on random rows.
    std::vector<double> rows(dh * d);
    std::normal_distribution<double> nd;
    for (std::size_t r = 0; r < dh; ++r) {
        for (std::size_t c = 0; c < d; ++c) rows[r * d + c] = nd(rng);
        for (std::size_t p = 0; p < r; ++p) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += rows[r * d + c] * rows[p * d + c];
            for (std::size_t c = 0; c < d; ++c) rows[r * d + c] -= dot * rows[p * d + c];
        }
        double n = 0.0;
        for (std::size_t c = 0; c < d; ++c) n += rows[r * d + c] * rows[r * d + c];
        for (std::size_t c = 0; c < d; ++c) rows[r * d + c] /= std::sqrt(n);
    }
    auto proj = w;
    std::vector<double> q(w.q.data().begin(), w.q.data().end());
    std::copy(rows.begin(), rows.end(), q.begin());
    proj.q = ad::Tensor::from(w.q.shape(), q);
    proj.k = proj.q;
    auto ev = linalg::eigenvalues(qk_matrix(proj, 0, dh));
    std::sort(ev.begin(), ev.end(), [](cplx a, cplx b) { return a.real() > b.real(); });
    for (std::size_t i = 0; i < d; ++i) {
        CHECK(std::abs(ev[i].imag()) < 1e-12);
        CHECK(ev[i].real() == doctest::Approx(i < dh ? 1.0 : 0.0).epsilon(1e-10).scale(1.0));
    }

    // O_h = V_h^T gives a Gram matrix.
    auto gram = w;
    std::vector<double> o(w.o.data().begin(), w.o.data().end());
    const std::size_t aw = cfg.attn_width();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < dh; ++j) o[i * aw + dh + j] = w.v.at(dh + j, i);
    gram.o = ad::Tensor::from(w.o.shape(), o);
    const auto ov = ov_matrix(gram, 1, dh);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) CHECK(ov(i, j) == doctest::Approx(ov(j, i)).epsilon(1e-12));
    for (auto l : linalg::eigenvalues(ov)) {
        CHECK(std::abs(l.imag()) < 1e-10);
        CHECK(l.real() > -1e-10);
    }
}

TEST_CASE("constant factory gives identical spectra at all times") {
    auto m = testing::tiny_model();
    for (auto& p : m.factory().parameters()) {
        if (p.name.starts_with("factory.proj.") && p.name.ends_with(".w")) {
            auto t = p.tensor;
            std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
        }
    }
    const auto tr = spectral_trace(m, 1, Circuit::ov, 9);
    REQUIRE(tr.values.size() == 9);
    for (const auto& v : tr.values)
        for (std::size_t k = 0; k < v.size(); ++k) CHECK(v[k] == tr.values[0][k]);
    CHECK(tr.max_matched_jump() == 0.0);
    for (const auto& top : tr.top) CHECK(std::count(top.begin(), top.end(), true) == 4);
}

TEST_CASE("variance identity examples") {
    const auto id = variance_identity_check(Matrix::identity(2), 100000, 1);
    CHECK(id.expected == 2.0);
    CHECK(id.normal_matrix);
    CHECK(id.pass);
    const auto zero = variance_identity_check(Matrix(3, 3, 0.0), 10000, 1);
    CHECK(zero.mc_variance == 0.0);
    CHECK(zero.pass);
    CHECK_THROWS_AS(variance_identity_check(Matrix::identity(2), 100, 1), ContractError);
}

TEST_CASE("squared eigenvalues differ from the Frobenius norm for non-normal matrices") {
    const Matrix a(2, 2, {1, 5, 0, 2});
    const auto r = variance_identity_check(a, 10000, 3);
    CHECK(r.expected == 30.0);
    CHECK(r.eig_square_sum == doctest::Approx(5.0));
    CHECK_FALSE(r.normal_matrix);
}

TEST_CASE("eigenbasis Euler step") {
    Rng rng(9);
    const std::vector<double> xi{1.0, -2.0, 0.5}, xj{0.3, 0.1, -1.0};
    const auto zero = euler_step_eigview(Matrix::identity(3), xi, xj, 0.0);
    for (std::size_t k = 0; k < 3; ++k) CHECK(zero.reconstructed[k] == doctest::Approx(xi[k]).epsilon(1e-13));

    const Matrix nil(3, 3, 0.0);
    const auto z = euler_step_eigview(nil, xi, xj, 0.7);
    for (std::size_t k = 0; k < 3; ++k) CHECK(z.reconstructed[k] == doctest::Approx(xi[k]).epsilon(1e-13));

    const auto a = random_matrix(3, rng);
    const auto v = euler_step_eigview(a, xi, xj, 0.25);
    CHECK(v.max_abs_diff < 1e-12);
    CHECK(v.max_imag < 1e-12);

    CHECK_THROWS_AS(euler_step_eigview(Matrix(2, 2, {1, 1, 0, 1}), std::vector<double>{1, 2},
                                       std::vector<double>{0, 1}, 0.1),
                    BasisError);
}

TEST_CASE("spectral traces converge under refinement") {
    const auto m = testing::tiny_model(13);
    for (auto c : {Circuit::qk, Circuit::ov}) {
        const double coarse = spectral_trace(m, 0, c, 17).max_matched_jump();
        const double fine = spectral_trace(m, 0, c, 33).max_matched_jump();
        CHECK(fine < coarse);
    }
}
