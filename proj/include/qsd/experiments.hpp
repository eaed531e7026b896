#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qsd/ensemble.hpp"
#include "qsd/reference.hpp"

namespace qsd {

// ------------------------------ weak-order fits -------------------------------

struct ConvergencePoint {
    double dt = 0.0;
    double abs_error = 0.0;
    double mc_halfwidth = 0.0;
    bool bias_dominated = false;  // half-width < error/3
};

struct ConvergenceReport {
    std::vector<ConvergencePoint> points;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    bool fit_valid = false;
    std::string note;
    double oracle_value = 0.0;
};

struct ConvergenceOptions {
    std::vector<double> dt_list;
    double t_final = 7.0;
    std::string observable = "energy";
    std::int64_t n_samples = 1'000'000;
    std::uint64_t seed = 1;
    int threads = 0;
    double oracle_dt = 1e-3;
};

// Measures |ensemble mean - oracle| at t_final across step sizes and fits the
// log-log slope over bias-dominated points only, so the fit reads off the
// deterministic bias rather than Monte-Carlo noise. A solver of std::nullopt
// means "re-run the deterministic oracle itself" (self-comparison); errors at
// the numerical noise floor refuse the fit instead of producing one.
inline ConvergenceReport run_convergence(const Model& model, std::optional<SolverKind> solver,
                                         const ConvergenceOptions& opt) {
    if (opt.dt_list.size() < 3)
        throw ConfigError("run_convergence: need at least three step sizes");
    const std::size_t obs_idx = [&] {
        for (std::size_t i = 0; i < model.observables.size(); ++i)
            if (model.observables[i].name == opt.observable) return i;
        throw ConfigError("run_convergence: unknown observable '" + opt.observable + "'");
    }();
    const ComplexMatrix& obs_op = model.observables[obs_idx].op;

    const ComplexMatrix rho0 = density_from_state(model.psi0);
    ReferenceOptions ref_opt;
    ref_opt.dt = opt.oracle_dt;
    ref_opt.check_positivity = false;
    const ReferenceResult oracle = propagate_reference(model.sys, rho0, opt.t_final, 1, ref_opt);

    ConvergenceReport report;
    report.oracle_value = reference_expectation(obs_op, oracle.states.back());

    for (const double dt : opt.dt_list) {
        const double ratio = opt.t_final / dt;
        const auto steps = static_cast<Eigen::Index>(std::llround(ratio));
        if (steps < 1 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio)
            throw ConfigError("run_convergence: t_final must be an integer multiple of dt");

        ConvergencePoint p;
        p.dt = dt;
        if (solver) {
            EnsembleOptions eopt;
            eopt.dt = dt;
            eopt.steps_per_macro = steps;
            eopt.n_macro = 1;
            eopt.n_samples = opt.n_samples;
            eopt.seed = opt.seed;
            eopt.threads = opt.threads;
            const EnsembleSeries s = run_ensemble(model.sys, model.psi0, *solver,
                                                  {model.observables[obs_idx]}, eopt);
            p.abs_error = std::abs(s.mean[1][0] - report.oracle_value);
            p.mc_halfwidth = s.ci_halfwidth[1][0];
        } else {
            const ReferenceResult again =
                propagate_reference(model.sys, rho0, opt.t_final, 1, ref_opt);
            p.abs_error =
                std::abs(reference_expectation(obs_op, again.states.back()) - report.oracle_value);
            p.mc_halfwidth = 0.0;
        }
        p.bias_dominated = p.mc_halfwidth < p.abs_error / 3.0;
        report.points.push_back(p);
    }

    double max_err = 0.0;
    for (const auto& p : report.points) max_err = std::max(max_err, p.abs_error);
    const double noise_floor = 1e-10 * std::max(1.0, std::abs(report.oracle_value));
    if (max_err < noise_floor) {
        report.note = "errors at numerical noise floor; slope fit refused";
        return report;
    }

    std::vector<double> lx, ly;
    for (const auto& p : report.points)
        if (p.bias_dominated && p.abs_error > 0.0) {
            lx.push_back(std::log(p.dt));
            ly.push_back(std::log(p.abs_error));
        }
    if (lx.size() < 2)
        throw InsufficientPrecision(
            "run_convergence: fewer than two bias-dominated points; increase n_samples");
    const LinearFit fit = linear_fit(lx, ly);
    report.slope = fit.slope;
    report.intercept = fit.intercept;
    report.fit_valid = true;
    return report;
}

// ------------------------------ stability probe -------------------------------

struct StabilityRow {
    double dt = 0.0;
    bool diverged = false;
    double divergence_time = std::numeric_limits<double>::quiet_NaN();
};

struct StabilityOptions {
    std::vector<double> dt_list;
    double t_final = 7.0;
    std::int64_t n_samples = 64;
    std::uint64_t seed = 1;
};

// Runs a small fixed ensemble per step size and reports whether (and when)
// the first trajectory left its admissible norm window.
inline std::vector<StabilityRow> run_stability_probe(const Model& model, SolverKind kind,
                                                     const StabilityOptions& opt) {
    std::vector<StabilityRow> rows;
    for (const double dt : opt.dt_list) {
        const double ratio = opt.t_final / dt;
        const auto steps = static_cast<Eigen::Index>(std::llround(ratio));
        if (steps < 1 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * ratio)
            throw ConfigError("run_stability_probe: t_final must be an integer multiple of dt");
        EnsembleOptions eopt;
        eopt.dt = dt;
        eopt.steps_per_macro = steps;
        eopt.n_macro = 1;
        eopt.n_samples = opt.n_samples;
        eopt.seed = opt.seed;
        eopt.threads = 1;
        StabilityRow row;
        row.dt = dt;
        try {
            run_ensemble(model.sys, model.psi0, kind, {}, eopt);
        } catch (const Diverged& e) {
            row.diverged = true;
            row.divergence_time = e.time;
        }
        rows.push_back(row);
    }
    return rows;
}

// ------------------------------ integral audit --------------------------------

struct AuditRow {
    std::string cell;
    Complex estimate{0.0, 0.0};
    Complex expected{0.0, 0.0};
    double max_nse = 0.0;  // worst |deviation| / SE over real and imaginary parts
    bool pass = false;
    bool deterministic = false;
};

struct AuditReport {
    std::vector<AuditRow> rows;
    bool all_pass = false;
    std::int64_t n_draws = 0;
};

struct AuditOptions {
    Eigen::Index n_lindblad = 2;
    double dt = 0.25;
    std::int64_t n_draws = 1'000'000;
    std::uint64_t seed = 1;
    double n_se_limit = 5.0;
};

namespace detail {

// Stochastic integral families entering the per-step draw.
struct AuditVar {
    int family;  // 0: single, 1: mixed trailing-time, 2: mixed leading-time,
                 // 3: double, 4: conjugated double
    Eigen::Index a1 = 0, a2 = 0;
    std::string name;
};

inline std::vector<AuditVar> audit_variables(Eigen::Index nl) {
    std::vector<AuditVar> vars;
    for (Eigen::Index a = 0; a < nl; ++a)
        vars.push_back({0, a, 0, "I^a(" + std::to_string(a) + ")"});
    for (Eigen::Index a = 0; a < nl; ++a)
        vars.push_back({1, a, 0, "I^a0(" + std::to_string(a) + ")"});
    for (Eigen::Index a = 0; a < nl; ++a)
        vars.push_back({2, a, 0, "I^0a(" + std::to_string(a) + ")"});
    for (Eigen::Index a = 0; a < nl; ++a)
        for (Eigen::Index b = 0; b < nl; ++b)
            vars.push_back(
                {3, a, b, "I^aa(" + std::to_string(a) + "," + std::to_string(b) + ")"});
    for (Eigen::Index a = 0; a < nl; ++a)
        for (Eigen::Index b = 0; b < nl; ++b)
            vars.push_back(
                {4, a, b, "I^a*a(" + std::to_string(a) + "," + std::to_string(b) + ")"});
    return vars;
}

inline Complex audit_value(const AuditVar& v, const IntegralDraw& d) {
    switch (v.family) {
        case 0: return d.i_alpha(v.a1);
        case 1: return d.i_alpha0(v.a1);
        case 2: return d.i_0alpha(v.a1);
        case 3: return d.i_double(v.a1, v.a2);
        default: return d.i_conj_double(v.a1, v.a2);
    }
}

// E[v conj(w)] under the draw model; E[v w] vanishes for every pair.
inline Complex audit_expected_cov(const AuditVar& v, const AuditVar& w, double dt) {
    const bool vs = v.family <= 2, ws = w.family <= 2;
    if (vs != ws) return {0.0, 0.0};
    if (vs) {
        if (v.a1 != w.a1) return {0.0, 0.0};
        const int f = v.family, g = w.family;
        if (f == 0 && g == 0) return {2.0 * dt, 0.0};
        if (f == 0 || g == 0) return {dt * dt, 0.0};  // single against either mixed
        if (f == g) return {2.0 * dt * dt * dt / 3.0, 0.0};
        return {dt * dt * dt / 3.0, 0.0};  // trailing against leading
    }
    if (v.family != w.family) return {0.0, 0.0};  // double against conjugated double
    if (v.a1 == w.a1 && v.a2 == w.a2) return {2.0 * dt * dt, 0.0};
    return {0.0, 0.0};
}

struct MomentAcc {
    Complex sum{0.0, 0.0};
    double sum_re2 = 0.0, sum_im2 = 0.0;

    void add(Complex x) {
        sum += x;
        sum_re2 += x.real() * x.real();
        sum_im2 += x.imag() * x.imag();
    }
    Complex mean(std::int64_t n) const { return sum / static_cast<double>(n); }
    double se_re(std::int64_t n) const {
        const double m = sum.real() / static_cast<double>(n);
        const double var =
            std::max(0.0, (sum_re2 / static_cast<double>(n) - m * m)) *
            (static_cast<double>(n) / static_cast<double>(n - 1));
        return std::sqrt(var / static_cast<double>(n));
    }
    double se_im(std::int64_t n) const {
        const double m = sum.imag() / static_cast<double>(n);
        const double var =
            std::max(0.0, (sum_im2 / static_cast<double>(n) - m * m)) *
            (static_cast<double>(n) / static_cast<double>(n - 1));
        return std::sqrt(var / static_cast<double>(n));
    }
};

inline AuditRow finish_row(std::string name, const MomentAcc& acc, Complex expected,
                           std::int64_t n, double n_se_limit) {
    AuditRow row;
    row.cell = std::move(name);
    row.estimate = acc.mean(n);
    row.expected = expected;
    const double se_r = std::max(acc.se_re(n), 1e-300);
    const double se_i = std::max(acc.se_im(n), 1e-300);
    row.max_nse = std::max(std::abs(row.estimate.real() - expected.real()) / se_r,
                           std::abs(row.estimate.imag() - expected.imag()) / se_i);
    row.pass = row.max_nse <= n_se_limit;
    return row;
}

} // namespace detail

// Monte-Carlo check of every first and second moment of the per-step draw
// against its specified value: means, conjugated covariances, unconjugated
// (pseudo) covariances, and the two deterministic integrals.
inline AuditReport run_integral_audit(const AuditOptions& opt) {
    if (opt.n_draws < 2) throw ConfigError("run_integral_audit: need at least two draws");
    const auto vars = detail::audit_variables(opt.n_lindblad);
    const std::size_t nv = vars.size();

    std::vector<detail::MomentAcc> means(nv);
    std::vector<detail::MomentAcc> covs(nv * nv);    // i <= j used
    std::vector<detail::MomentAcc> pseudos(nv * nv); // i <= j used

    RngStream stream(opt.seed, 0);
    std::vector<Complex> vals(nv);
    for (std::int64_t k = 0; k < opt.n_draws; ++k) {
        const IntegralDraw draw = sample_draw(stream, opt.n_lindblad, opt.dt);
        for (std::size_t i = 0; i < nv; ++i) vals[i] = detail::audit_value(vars[i], draw);
        for (std::size_t i = 0; i < nv; ++i) {
            means[i].add(vals[i]);
            for (std::size_t j = i; j < nv; ++j) {
                covs[i * nv + j].add(vals[i] * std::conj(vals[j]));
                pseudos[i * nv + j].add(vals[i] * vals[j]);
            }
        }
    }

    AuditReport report;
    report.n_draws = opt.n_draws;
    const std::int64_t n = opt.n_draws;

    {
        const IntegralDraw probe = sample_draw(stream, opt.n_lindblad, opt.dt);
        AuditRow r0;
        r0.cell = "I^0";
        r0.estimate = Complex(probe.i_zero(), 0.0);
        r0.expected = Complex(opt.dt, 0.0);
        r0.pass = probe.i_zero() == opt.dt;
        r0.deterministic = true;
        report.rows.push_back(r0);
        AuditRow r00;
        r00.cell = "I^00";
        r00.estimate = Complex(probe.i_zerozero(), 0.0);
        r00.expected = Complex(opt.dt * opt.dt / 2.0, 0.0);
        r00.pass = probe.i_zerozero() == opt.dt * opt.dt / 2.0;
        r00.deterministic = true;
        report.rows.push_back(r00);
    }

    for (std::size_t i = 0; i < nv; ++i)
        report.rows.push_back(detail::finish_row("E[" + vars[i].name + "]", means[i],
                                                 {0.0, 0.0}, n, opt.n_se_limit));
    for (std::size_t i = 0; i < nv; ++i)
        for (std::size_t j = i; j < nv; ++j) {
            report.rows.push_back(detail::finish_row(
                "E[" + vars[i].name + " conj(" + vars[j].name + ")]", covs[i * nv + j],
                detail::audit_expected_cov(vars[i], vars[j], opt.dt), n, opt.n_se_limit));
            report.rows.push_back(detail::finish_row(
                "E[" + vars[i].name + " " + vars[j].name + "]", pseudos[i * nv + j],
                {0.0, 0.0}, n, opt.n_se_limit));
        }

    report.all_pass = true;
    for (const auto& r : report.rows) report.all_pass = report.all_pass && r.pass;
    return report;
}

} // namespace qsd
