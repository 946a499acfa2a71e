#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include "dqf/cluster_sim.hpp"
#include "dqf/error.hpp"
#include "helpers.hpp"

using namespace dqf;

TEST_CASE("magnitude functions") {
    CHECK(magnitude_fn(0, 3.0, 20.0) == 0.5);
    CHECK(magnitude_fn(2, 10.0, 20.0) == doctest::Approx(0.125));
    CHECK(magnitude_fn(4, 20.0, 20.0) == 0.5);
    CHECK(magnitude_fn(5, 20.0, 20.0) == 0.0);
    CHECK(magnitude_fn(5, 0.0, 20.0) == 0.5);
    CHECK(magnitude_fn_from_string("f3") == 3);
    CHECK(magnitude_fn_from_string("2") == 2);
    CHECK_THROWS_AS(magnitude_fn_from_string("f9"), ConfigError);
    CHECK_THROWS_AS(magnitude_fn(6, 0.0, 1.0), ConfigError);
}

TEST_CASE("default simulation shape and determinism") {
    SimConfig c;
    CHECK(c.steps() == 200);
    const auto a = simulate(c);
    CHECK(a.times.size() == 201);
    CHECK(a.states.size() == 201);
    CHECK(a.metrics.size() == 201);
    CHECK(a.times.back() == doctest::Approx(20.0));
    for (double x : a.states[0]) {
        CHECK(x >= -2.0);
        CHECK(x <= 2.0);
    }
    const auto b = simulate(c);
    CHECK(testing::bitwise_equal(a.states.back(), b.states.back()));
    c.seed = 1;
    CHECK_FALSE(testing::bitwise_equal(a.states.back(), simulate(c).states.back()));
}

TEST_CASE("zero values freeze the particles") {
    SimConfig c;
    c.zero_values = true;
    const auto t = simulate(c);
    CHECK(testing::bitwise_equal(t.states.front(), t.states.back()));
    CHECK(t.dispersion_ratio() == 1.0);
}

TEST_CASE("f5 slows to a stop at the horizon") {
    SimConfig c;
    c.fn = 5;
    const auto t = simulate(c);
    const auto& a = t.states[t.states.size() - 2];
    const auto& b = t.states.back();
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        last = std::max(last, std::abs(b[i] - a[i]));
        first = std::max(first, std::abs(t.states[1][i] - t.states[0][i]));
    }
    CHECK(last < 0.05 * first);
}

TEST_CASE("metric examples") {
    const std::vector<double> times{0.0};
    const std::vector<std::vector<double>> same{{1, 2, 1, 2, 1, 2}};
    const auto m = dispersion_metrics(times, same, 3, 2);
    CHECK(m[0].mean_dist == 0.0);
    CHECK(m[0].ang_disp == 0.0);
    CHECK(m[0].clusters == 1);

    const std::vector<std::vector<double>> anti{{1, 0, -1, 0}};
    const auto p = dispersion_metrics(times, anti, 2, 2);
    CHECK(p[0].ang_disp == doctest::Approx(std::numbers::pi).epsilon(1e-15));
    CHECK(p[0].mean_dist == 2.0);
    CHECK(p[0].clusters == 2);
}

TEST_CASE("trajectory CSV has one row per particle and time") {
    SimConfig c;
    c.n = 5;
    const auto t = simulate(c);
    const auto dir = std::filesystem::temp_directory_path() / "dqf_unit_sim";
    std::filesystem::create_directories(dir);
    write_trajectory_csv((dir / "trajectory.csv").string(), t);
    std::ifstream in(dir / "trajectory.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,particle,x0,x1,x2");
    std::map<std::string, int> rows;
    while (std::getline(in, line)) {
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        ++rows[line.substr(a + 1, b - a - 1)];
    }
    CHECK(rows.size() == 5);
    for (const auto& [p, n] : rows) CHECK(n == 201);
    CHECK(trajectory_svg(t, "f0").find("<svg") != std::string::npos);
}

TEST_CASE("simulation config validation") {
    SimConfig c;
    c.dt = 0.3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SimConfig{};
    c.n = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
