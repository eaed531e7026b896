#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qsd/experiments.hpp"
#include "qsd/models.hpp"

using namespace qsd;

TEST_CASE("integral audit passes for one channel") {
    AuditOptions opt;
    opt.n_lindblad = 1;
    opt.dt = 0.25;
    opt.n_draws = 200'000;
    opt.seed = 7;
    const AuditReport report = run_integral_audit(opt);

    // 2 deterministic rows, 5 means, 15 pairs each with a conjugated and a
    // plain second moment.
    REQUIRE(report.rows.size() == 2 + 5 + 15 * 2);
    REQUIRE(report.n_draws == opt.n_draws);
    REQUIRE(report.all_pass);

    REQUIRE(report.rows[0].cell == "I^0");
    REQUIRE(report.rows[0].deterministic);
    REQUIRE(report.rows[0].estimate.real() == 0.25);
    REQUIRE(report.rows[1].cell == "I^00");
    REQUIRE(report.rows[1].estimate.real() == 0.25 * 0.25 / 2.0);

    bool saw_variance = false, saw_cross = false, saw_mixed = false;
    for (const auto& r : report.rows) {
        if (r.cell == "E[I^a(0) conj(I^a(0))]") {
            saw_variance = true;
            REQUIRE(r.expected == Complex(2.0 * opt.dt, 0.0));
            REQUIRE(r.max_nse <= 5.0);
        }
        if (r.cell == "E[I^a(0) conj(I^a0(0))]") {
            saw_cross = true;
            REQUIRE(r.expected == Complex(opt.dt * opt.dt, 0.0));
        }
        if (r.cell == "E[I^a0(0) conj(I^0a(0))]") {
            saw_mixed = true;
            REQUIRE(r.expected == Complex(opt.dt * opt.dt * opt.dt / 3.0, 0.0));
        }
    }
    REQUIRE(saw_variance);
    REQUIRE(saw_cross);
    REQUIRE(saw_mixed);
}

TEST_CASE("integral audit covers channel pairs") {
    AuditOptions opt;
    opt.n_lindblad = 2;
    opt.dt = 0.1;
    opt.n_draws = 100'000;
    opt.seed = 3;
    const AuditReport report = run_integral_audit(opt);
    // nv = 3*2 + 2*4 = 14 variables.
    REQUIRE(report.rows.size() == 2 + 14 + (14 * 15 / 2) * 2);
    REQUIRE(report.all_pass);

    bool saw_double = false, saw_off = false;
    for (const auto& r : report.rows) {
        if (r.cell == "E[I^aa(0,1) conj(I^aa(0,1))]") {
            saw_double = true;
            REQUIRE(r.expected == Complex(2.0 * opt.dt * opt.dt, 0.0));
        }
        if (r.cell == "E[I^aa(0,1) conj(I^a*a(0,1))]") {
            saw_off = true;
            REQUIRE(r.expected == Complex(0.0, 0.0));
        }
    }
    REQUIRE(saw_double);
    REQUIRE(saw_off);

    opt.n_draws = 1;
    REQUIRE_THROWS_AS(run_integral_audit(opt), ConfigError);
}

TEST_CASE("weak-order fit recovers the first-order rate on the two-level model") {
    Model model = make_two_level(1.0, 1.0);
    ConvergenceOptions opt;
    opt.dt_list = {0.25, 0.125, 0.0625};
    opt.t_final = 1.0;
    opt.observable = "excited_population";
    // The first-order bias at the finest step is ~7e-4; two million samples
    // push the Monte-Carlo half-width safely below a third of that.
    opt.n_samples = 2'000'000;
    opt.seed = 21;
    opt.threads = 1;
    opt.oracle_dt = 1e-4;

    const ConvergenceReport report = run_convergence(model, SolverKind::Order1, opt);
    REQUIRE(report.points.size() == 3);
    REQUIRE(report.oracle_value == Catch::Approx(std::exp(-2.0)).margin(1e-6));
    int dominated = 0;
    for (const auto& p : report.points) {
        REQUIRE(p.mc_halfwidth > 0.0);
        if (p.bias_dominated) ++dominated;
    }
    REQUIRE(dominated >= 2);
    REQUIRE(report.fit_valid);
    REQUIRE(report.slope > 0.6);
    REQUIRE(report.slope < 1.4);
}

TEST_CASE("oracle self-comparison refuses a slope fit") {
    Model model = make_two_level(0.5, 1.0);
    ConvergenceOptions opt;
    opt.dt_list = {0.2, 0.1, 0.05};
    opt.t_final = 1.0;
    opt.observable = "excited_population";
    opt.oracle_dt = 1e-3;

    const ConvergenceReport report = run_convergence(model, std::nullopt, opt);
    REQUIRE_FALSE(report.fit_valid);
    REQUIRE(report.note.find("noise floor") != std::string::npos);
    for (const auto& p : report.points) {
        REQUIRE(p.abs_error < 1e-12);
        REQUIRE(p.mc_halfwidth == 0.0);
    }
}

TEST_CASE("noise-dominated data raises an insufficient-precision error") {
    Model model = make_two_level(1.0, 1.0);
    ConvergenceOptions opt;
    opt.dt_list = {0.1, 0.05, 0.025};
    opt.t_final = 1.0;
    opt.observable = "excited_population";
    opt.n_samples = 256;
    opt.seed = 4;
    opt.threads = 1;
    opt.oracle_dt = 1e-3;
    REQUIRE_THROWS_AS(run_convergence(model, SolverKind::Order2, opt), InsufficientPrecision);
}

TEST_CASE("convergence option validation") {
    Model model = make_two_level();
    ConvergenceOptions opt;
    opt.dt_list = {0.2, 0.1};
    REQUIRE_THROWS_AS(run_convergence(model, SolverKind::Order1, opt), ConfigError);
    opt.dt_list = {0.2, 0.1, 0.05};
    opt.observable = "momentum";
    REQUIRE_THROWS_AS(run_convergence(model, SolverKind::Order1, opt), ConfigError);
    opt.observable = "energy";
    opt.dt_list = {0.2, 0.1, 0.3};  // 1.0 / 0.3 is not an integer
    opt.n_samples = 128;
    opt.t_final = 1.0;
    REQUIRE_THROWS_AS(run_convergence(model, SolverKind::Order1, opt), ConfigError);
}

TEST_CASE("stability probe flags the unstable step size only") {
    Model model = make_two_level(20.0, 1.0);
    StabilityOptions opt;
    opt.dt_list = {0.5, 0.001};
    opt.t_final = 1.0;
    opt.n_samples = 64;
    opt.seed = 2;

    const auto rows = run_stability_probe(model, SolverKind::Order1, opt);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].dt == 0.5);
    REQUIRE(rows[0].diverged);
    REQUIRE(rows[0].divergence_time > 0.0);
    REQUIRE_FALSE(rows[1].diverged);
    REQUIRE(std::isnan(rows[1].divergence_time));
}
