#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "qsd/stats.hpp"

using namespace qsd;

namespace {

std::vector<double> lcg_samples(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.3, 1.7);
    std::vector<double> out(n);
    for (auto& x : out) x = dist(rng);
    return out;
}

} // namespace

TEST_CASE("running moments match the two-pass formulas") {
    const auto xs = lcg_samples(10007, 5);
    RunningMoments acc;
    for (double x : xs) acc.add(x);

    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);

    REQUIRE(acc.n == static_cast<std::int64_t>(xs.size()));
    REQUIRE(acc.mean == Catch::Approx(mean).epsilon(1e-12));
    REQUIRE(acc.variance() == Catch::Approx(var).epsilon(1e-12));
    REQUIRE(acc.stddev() == Catch::Approx(std::sqrt(var)).epsilon(1e-12));
    REQUIRE(acc.ci_halfwidth() ==
            Catch::Approx(2.0 * std::sqrt(var / static_cast<double>(xs.size()))).epsilon(1e-12));
}

TEST_CASE("degenerate moment counts") {
    RunningMoments acc;
    REQUIRE(acc.variance() == 0.0);
    REQUIRE(acc.ci_halfwidth() == 0.0);
    acc.add(4.2);
    REQUIRE(acc.mean == Catch::Approx(4.2));
    REQUIRE(acc.variance() == 0.0);
}

TEST_CASE("merging partial accumulators reproduces the pooled result") {
    const auto xs = lcg_samples(4096, 11);
    RunningMoments whole;
    for (double x : xs) whole.add(x);

    // Uneven chunk sizes, including an empty chunk.
    const std::size_t cuts[] = {0, 1, 1, 700, 1500, 4096};
    RunningMoments merged;
    for (std::size_t c = 0; c + 1 < std::size(cuts); ++c) {
        RunningMoments part;
        for (std::size_t i = cuts[c]; i < cuts[c + 1]; ++i) part.add(xs[i]);
        merged.merge(part);
    }
    REQUIRE(merged.n == whole.n);
    REQUIRE(merged.mean == Catch::Approx(whole.mean).epsilon(1e-12));
    REQUIRE(merged.variance() == Catch::Approx(whole.variance()).epsilon(1e-12));
}

TEST_CASE("moment grids merge cellwise") {
    MomentGrid a(3, 2), b(3, 2);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist;
    MomentGrid whole(3, 2);
    for (int rep = 0; rep < 200; ++rep) {
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t o = 0; o < 2; ++o) {
                const double x = dist(rng);
                (rep % 3 == 0 ? a : b).add(t, o, x);
                whole.add(t, o, x);
            }
    }
    a.merge(b);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t o = 0; o < 2; ++o) {
            REQUIRE(a.cell(t, o).n == whole.cell(t, o).n);
            REQUIRE(a.cell(t, o).mean == Catch::Approx(whole.cell(t, o).mean).epsilon(1e-12));
            REQUIRE(a.cell(t, o).variance() ==
                    Catch::Approx(whole.cell(t, o).variance()).epsilon(1e-12));
        }
    MomentGrid wrong(2, 2);
    REQUIRE_THROWS_AS(a.merge(wrong), DimensionMismatch);
}

TEST_CASE("series assembly from a grid") {
    MomentGrid grid(2, 2);
    grid.add(0, 0, 1.0);
    grid.add(0, 0, 3.0);
    grid.add(0, 1, -1.0);
    grid.add(0, 1, -1.0);
    grid.add(1, 0, 10.0);
    grid.add(1, 0, 14.0);
    grid.add(1, 1, 0.0);
    grid.add(1, 1, 2.0);
    const EnsembleSeries s =
        series_from_grid({0.0, 0.5}, {"energy", "position"}, grid);
    REQUIRE(s.times.size() == 2);
    REQUIRE(s.n_samples == 2);
    REQUIRE(s.obs_index("position") == 1);
    REQUIRE_THROWS_AS(s.obs_index("momentum"), ConfigError);
    REQUIRE(s.mean[0][0] == Catch::Approx(2.0));
    REQUIRE(s.mean[1][0] == Catch::Approx(12.0));
    REQUIRE(s.stddev[1][0] == Catch::Approx(std::sqrt(8.0)).epsilon(1e-12));
    REQUIRE(s.ci_halfwidth[1][0] == Catch::Approx(2.0 * std::sqrt(8.0 / 2.0)).epsilon(1e-12));
    REQUIRE(s.value(1, 1) == Catch::Approx(1.0));
}

TEST_CASE("least squares recovers an exact line") {
    std::vector<double> x, y;
    for (int i = 0; i < 7; ++i) {
        x.push_back(0.3 * i - 1.0);
        y.push_back(-2.25 * x.back() + 0.875);
    }
    const LinearFit fit = linear_fit(x, y);
    REQUIRE(fit.slope == Catch::Approx(-2.25).epsilon(1e-12));
    REQUIRE(fit.intercept == Catch::Approx(0.875).epsilon(1e-12));
    REQUIRE_THROWS_AS(linear_fit({1.0}, {2.0}), DimensionMismatch);
    REQUIRE_THROWS_AS(linear_fit({1.0, 1.0}, {2.0, 3.0}), DimensionMismatch);
}
