#pragma once

// Attention-only particle dynamics with one head and no layer norm:
//     dx_i/dt = sum_j softmax_j(<Q(t) x_i, K(t) x_j> / sqrt(d)) V(t) x_j
// with Q(t) = K(t) = f(t) A0 and V(t) = f(t) V0, integrated with Euler.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dqf {

// f0 = 1/2, f_k = (1/2)(t/T)^k for k = 1..4, f5 = (1/2)(1 - t/T)^2.
double magnitude_fn(int id, double t, double horizon);
int magnitude_fn_from_string(const std::string& s);  // "f0".."f5" or "0".."5"

struct SimConfig {
    std::size_t n = 40;
    std::size_t dim = 3;
    double horizon = 20.0;
    double dt = 0.1;
    int fn = 0;
    std::uint64_t seed = 0;
    double init_range = 2.0;          // particles ~ U[-r, r]^d
    bool identity_weights = false;    // A0 = V0 = I instead of Gaussian draws
    bool zero_values = false;         // V0 = 0
    double cluster_threshold = 0.05;  // fraction of the initial mean distance

    void validate() const;
    std::size_t steps() const;
};

struct DispersionPoint {
    double t = 0.0;
    double mean_dist = 0.0;  // mean pairwise Euclidean distance
    double ang_disp = 0.0;   // mean pairwise angle between normalized particles
    std::size_t clusters = 0;
};

struct SimTrajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;  // per time, n*dim row-major
    std::vector<DispersionPoint> metrics;
    std::size_t n = 0, dim = 0;

    // Terminal over initial mean pairwise distance.
    double dispersion_ratio() const;
};

SimTrajectory simulate(const SimConfig& cfg);

// Metrics for every state; the cluster threshold is `threshold` times the
// mean distance of the first state.
std::vector<DispersionPoint> dispersion_metrics(const std::vector<double>& times,
                                                const std::vector<std::vector<double>>& states, std::size_t n,
                                                std::size_t dim, double threshold = 0.05);

// t,particle,x0,x1,...
void write_trajectory_csv(const std::string& path, const SimTrajectory& traj);
// t,mean_dist,ang_disp,clusters
void write_metrics_csv(const std::string& path, const SimTrajectory& traj);
// First two coordinates of every particle path.
std::string trajectory_svg(const SimTrajectory& traj, const std::string& title);

}  // namespace dqf
