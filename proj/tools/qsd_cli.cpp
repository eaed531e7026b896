// Command-line front end: deterministic reference runs, trajectory ensembles,
// weak-order fits, step-size stability probes and the stochastic-integral
// audit, all sharing one config surface (file first, flags override).

#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "qsd/config.hpp"
#include "qsd/csv.hpp"
#include "qsd/ensemble.hpp"
#include "qsd/experiments.hpp"
#include "qsd/reference.hpp"

namespace {

using namespace qsd;

struct FlagCapture {
    CLI::Option* opt = nullptr;
    std::string key;
    std::string value;
};

struct CommonFlags {
    std::string config_path;
    // deque: element references stay valid as options accumulate, and CLI11
    // binds each option to the capture's string by reference.
    std::deque<FlagCapture> captures;

    void add(CLI::App* sub, const std::string& flag, const std::string& key,
             const std::string& help) {
        captures.push_back({nullptr, key, ""});
        auto& cap = captures.back();
        cap.opt = sub->add_option(flag, cap.value, help);
    }

    // File first, then every flag the user actually passed.
    void apply(RunConfig& cfg) const {
        if (!config_path.empty()) load_config_file(cfg, config_path);
        for (const auto& cap : captures)
            if (cap.opt->count() > 0) apply_config_value(cfg, cap.key, cap.value);
    }
};

void add_model_flags(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--config", flags.config_path, "key = value file applied before flags");
    flags.add(sub, "--model", "model", "free | driven | two-level | custom");
    flags.add(sub, "--obs", "observables", "comma-separated observable subset");
    flags.add(sub, "--out", "out", "CSV output path (default: stdout)");
}

void add_grid_flags(CLI::App* sub, CommonFlags& flags) {
    flags.add(sub, "--dt", "dt", "integrator step");
    flags.add(sub, "--t-final", "t_final", "end of the simulated window");
    flags.add(sub, "--tau", "tau", "recording interval");
}

void add_sampling_flags(CLI::App* sub, CommonFlags& flags) {
    flags.add(sub, "--samples", "samples", "trajectory count");
    flags.add(sub, "--seed", "seed", "RNG seed; trajectory i uses stream (seed, i)");
    flags.add(sub, "--threads", "threads", "worker threads (0: hardware)");
}

void write_csv(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    if (path.empty()) {
        writer(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open output file '" + path + "'");
    writer(out);
}

std::vector<double> parse_dt_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : detail::split_list(text))
        out.push_back(detail::parse_double("dt", item));
    if (out.empty()) throw ConfigError("dt list is empty");
    return out;
}

int run_reference(const RunConfig& cfg) {
    validate_config(cfg);
    const Model model = build_model(cfg);
    ReferenceOptions opt;
    opt.dt = cfg.dt;
    const ReferenceResult ref = propagate_reference(
        model.sys, density_from_state(model.psi0), cfg.tau, config_n_macro(cfg), opt);
    write_csv(cfg.out, [&](std::ostream& os) { write_reference_csv(os, ref, model.observables); });
    std::fprintf(stderr,
                 "reference: model=%s t_final=%g tau=%g dt=%g trace_drift=%.3g "
                 "hermiticity=%.3g min_eig=%.3g\n",
                 cfg.model.c_str(), cfg.t_final, cfg.tau, cfg.dt, ref.max_trace_drift,
                 ref.max_hermiticity_defect, ref.min_eigenvalue);
    return 0;
}

int run_ensemble_cmd(const RunConfig& cfg) {
    validate_config(cfg);
    if (cfg.solver == "reference")
        throw ConfigError("solver 'reference' has no trajectories; use the reference subcommand");
    const Model model = build_model(cfg);
    EnsembleOptions opt;
    opt.dt = cfg.dt;
    opt.steps_per_macro = config_steps_per_macro(cfg);
    opt.n_macro = config_n_macro(cfg);
    opt.n_samples = cfg.samples;
    opt.seed = cfg.seed;
    opt.threads = cfg.threads;
    const EnsembleSeries series = run_ensemble(model.sys, model.psi0, parse_solver(cfg.solver),
                                               model.observables, opt);
    write_csv(cfg.out, [&](std::ostream& os) { write_ensemble_csv(os, series); });
    std::fprintf(stderr, "ensemble: model=%s solver=%s dt=%g samples=%lld times=%zu\n",
                 cfg.model.c_str(), cfg.solver.c_str(), cfg.dt,
                 static_cast<long long>(series.n_samples), series.times.size());
    return 0;
}

int run_converge(const RunConfig& cfg, const std::string& dt_text, double oracle_dt) {
    const Model model = build_model(cfg);
    ConvergenceOptions opt;
    opt.dt_list = parse_dt_list(dt_text.empty() ? detail::csv_num(cfg.dt) : dt_text);
    opt.t_final = cfg.t_final;
    opt.observable = cfg.observables.empty() ? std::string("energy") : cfg.observables.front();
    opt.n_samples = cfg.samples;
    opt.seed = cfg.seed;
    opt.threads = cfg.threads;
    opt.oracle_dt = oracle_dt;

    std::optional<SolverKind> solver;
    if (cfg.solver != "reference") solver = parse_solver(cfg.solver);
    const ConvergenceReport report = run_convergence(model, solver, opt);
    write_csv(cfg.out, [&](std::ostream& os) { write_convergence_csv(os, report); });
    if (report.fit_valid)
        std::fprintf(stderr, "converge: model=%s solver=%s observable=%s slope=%.4f\n",
                     cfg.model.c_str(), cfg.solver.c_str(), opt.observable.c_str(), report.slope);
    else
        std::fprintf(stderr, "converge: model=%s solver=%s observable=%s (no fit: %s)\n",
                     cfg.model.c_str(), cfg.solver.c_str(), opt.observable.c_str(),
                     report.note.c_str());
    return 0;
}

int run_stability(const RunConfig& cfg, const std::string& dt_text) {
    const Model model = build_model(cfg);
    StabilityOptions opt;
    opt.dt_list = parse_dt_list(dt_text.empty() ? detail::csv_num(cfg.dt) : dt_text);
    opt.t_final = cfg.t_final;
    opt.n_samples = cfg.samples;
    opt.seed = cfg.seed;
    const auto rows = run_stability_probe(model, parse_solver(cfg.solver), opt);
    write_csv(cfg.out, [&](std::ostream& os) { write_stability_csv(os, rows); });
    for (const auto& row : rows) {
        if (row.diverged)
            std::fprintf(stderr, "stability: dt=%g diverged at t=%g\n", row.dt,
                         row.divergence_time);
        else
            std::fprintf(stderr, "stability: dt=%g completed t_final=%g\n", row.dt, cfg.t_final);
    }
    return 0;
}

int run_audit(const AuditOptions& opt, const std::string& out) {
    const AuditReport report = run_integral_audit(opt);
    write_csv(out, [&](std::ostream& os) { write_audit_csv(os, report); });
    std::size_t passed = 0;
    for (const auto& r : report.rows) passed += r.pass ? 1 : 0;
    std::fprintf(stderr, "audit: %zu/%zu cells pass (%lld draws, dt=%g, channels=%lld)\n", passed,
                 report.rows.size(), static_cast<long long>(report.n_draws), opt.dt,
                 static_cast<long long>(opt.n_lindblad));
    if (!report.all_pass) throw InsufficientPrecision("stochastic-integral audit failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic unraveling toolkit for open-system dynamics"};
    app.require_subcommand(1);

    RunConfig cfg;

    auto* ref = app.add_subcommand("reference", "deterministic density-matrix evolution");
    CommonFlags ref_flags;
    add_model_flags(ref, ref_flags);
    add_grid_flags(ref, ref_flags);

    auto* ens = app.add_subcommand("ensemble", "Monte-Carlo trajectory ensemble");
    CommonFlags ens_flags;
    add_model_flags(ens, ens_flags);
    add_grid_flags(ens, ens_flags);
    add_sampling_flags(ens, ens_flags);
    ens_flags.add(ens, "--solver", "solver", "order1 | order2 | linear1 | linear2");

    auto* conv = app.add_subcommand("converge", "weak-order scan over step sizes");
    CommonFlags conv_flags;
    add_model_flags(conv, conv_flags);
    add_sampling_flags(conv, conv_flags);
    conv_flags.add(conv, "--t-final", "t_final", "comparison time");
    conv_flags.add(conv, "--solver", "solver",
                   "order1 | order2 | linear1 | linear2 | reference (self-comparison)");
    std::string conv_dts;
    conv->add_option("--dt", conv_dts, "comma-separated step sizes (at least three)");
    double oracle_dt = 1e-3;
    conv->add_option("--oracle-dt", oracle_dt, "step of the deterministic oracle");

    auto* stab = app.add_subcommand("stability", "divergence probe over step sizes");
    CommonFlags stab_flags;
    add_model_flags(stab, stab_flags);
    stab_flags.add(stab, "--t-final", "t_final", "end of the probed window");
    stab_flags.add(stab, "--samples", "samples", "trajectories per step size");
    stab_flags.add(stab, "--seed", "seed", "RNG seed");
    stab_flags.add(stab, "--solver", "solver", "order1 | order2 | linear1 | linear2");
    std::string stab_dts;
    stab->add_option("--dt", stab_dts, "comma-separated step sizes");

    auto* audit = app.add_subcommand("audit-integrals",
                                     "moment check of the per-step stochastic integrals");
    AuditOptions audit_opt;
    std::string audit_out;
    audit->add_option("--n-lindblad", audit_opt.n_lindblad, "channel count");
    audit->add_option("--draws", audit_opt.n_draws, "Monte-Carlo draw count");
    audit->add_option("--dt", audit_opt.dt, "step size entering the moments");
    std::int64_t audit_seed = 1;
    audit->add_option("--seed", audit_seed, "RNG seed");
    audit->add_option("--out", audit_out, "CSV output path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (ref->parsed()) {
            cfg.dt = 1e-3;  // deterministic runs default to a fine inner step
            ref_flags.apply(cfg);
            cfg.solver = "reference";
            return run_reference(cfg);
        }
        if (ens->parsed()) {
            ens_flags.apply(cfg);
            return run_ensemble_cmd(cfg);
        }
        if (conv->parsed()) {
            conv_flags.apply(cfg);
            return run_converge(cfg, conv_dts, oracle_dt);
        }
        if (stab->parsed()) {
            stab_flags.apply(cfg);
            return run_stability(cfg, stab_dts);
        }
        if (audit->parsed()) {
            audit_opt.seed = static_cast<std::uint64_t>(audit_seed);
            return run_audit(audit_opt, audit_out);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const Diverged& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const InsufficientPrecision& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 2;
}
