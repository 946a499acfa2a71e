#pragma once

// Eigenvalue dynamics of the per-head QK and OV circuits over depth, the
// bilinear-form variance identity, and the eigenbasis view of one Euler
// step.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dqf/linalg.hpp"
#include "dqf/model.hpp"

namespace dqf {

enum class Circuit { qk, ov };
std::string to_string(Circuit c);
Circuit circuit_from_string(std::string_view s);

// Q_h^T K_h and O_h V_h, both d x d.
linalg::Matrix qk_matrix(const WeightSet& w, std::size_t head, std::size_t d_head);
linalg::Matrix ov_matrix(const WeightSet& w, std::size_t head, std::size_t d_head);
linalg::Matrix circuit_matrix(const WeightSet& w, Circuit c, std::size_t head, std::size_t d_head);

// Continuous model: weights materialized at t in [0, T].
linalg::Matrix qk_matrix(const OdeModel& m, std::size_t head, double t);
linalg::Matrix ov_matrix(const OdeModel& m, std::size_t head, double t);

struct SpectralTrace {
    std::size_t head = 0;
    Circuit circuit = Circuit::qk;
    std::vector<double> times;
    // values[i][k]: eigenvalue k at times[i]; column k is threaded through
    // time by minimal-cost matching of adjacent sets.
    std::vector<std::vector<std::complex<double>>> values;
    // top[i][k]: among the d_head largest magnitudes at times[i].
    std::vector<std::vector<bool>> top;

    // Largest |lambda_k(t_{i+1}) - lambda_k(t_i)| over the matched tracks.
    double max_matched_jump() const;
};

using WeightsAt = std::function<WeightSet(double t)>;

SpectralTrace spectral_trace(const WeightsAt& weights, std::size_t head, Circuit c,
                             std::span<const double> times, std::size_t d_head);
// Continuous models: `grid_points` uniform times covering [0, T]. Discrete
// models: one point per layer at its layer time.
SpectralTrace spectral_trace(const LanguageModel& m, std::size_t head, Circuit c, std::size_t grid_points);

// Reorders `next` so that element k continues track k of `prev`.
std::vector<std::complex<double>> match_eigenvalues(std::span<const std::complex<double>> prev,
                                                    std::span<const std::complex<double>> next);

// circuit,head,t,re,im,rank_tag
void write_spectral_csv(const std::string& path, const std::vector<SpectralTrace>& traces);
std::string spectral_svg(const SpectralTrace& trace);

struct VarianceReport {
    std::size_t samples = 0;
    double mc_variance = 0.0;     // mean of (x^T A y)^2
    double standard_error = 0.0;  // std((x^T A y)^2) / sqrt(n)
    double expected = 0.0;        // trace(A^T A)
    double abs_diff = 0.0;
    double eig_square_sum = 0.0;  // Re sum lambda_i^2 = trace(A^2); equals `expected` iff A is normal
    bool normal_matrix = false;
    bool pass = false;  // abs_diff <= 4 standard errors
};

// x, y ~ N(0, I) independent. Requires n_samples >= 10^4.
VarianceReport variance_identity_check(const linalg::Matrix& a, std::size_t n_samples, std::uint64_t seed);

struct EigenStepView {
    std::vector<double> reconstructed;  // sum_k (lambda_k w_k^j dt + w_k^i) v_k
    std::vector<double> direct;         // x_i + dt * A x_j
    double max_abs_diff = 0.0;
    double max_imag = 0.0;  // imaginary residue of the reconstruction
};

// Reconstruction from coordinates in a given eigenbasis.
std::vector<std::complex<double>> eigen_step(std::span<const std::complex<double>> w_i,
                                             std::span<const std::complex<double>> w_j,
                                             const linalg::EigenSystem& es, double dt);
// Full pipeline: eigendecompose A (BasisError when defective), express x_i
// and x_j in the eigenbasis, reconstruct, and compare with the direct
// update. Throws NumericalError if they disagree beyond 1e-10 (relative to
// the state's scale).
EigenStepView euler_step_eigview(const linalg::Matrix& a, std::span<const double> x_i,
                                 std::span<const double> x_j, double dt);

}  // namespace dqf
