#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qsd/models.hpp"

namespace qsd {

// Run description shared by the CLI and the config file. The file is
// line-oriented `key = value`; CLI flags override file values.
struct RunConfig {
    std::string model = "free";    // free | driven | two-level | custom
    std::string solver = "order2"; // order1 | order2 | linear1 | linear2 | reference
    double dt = 0.25;
    double t_final = 7.0;
    double tau = 0.25;
    std::int64_t samples = 1024;
    std::uint64_t seed = 1;
    std::vector<std::string> observables; // empty: every observable the model provides
    std::string out;                      // CSV path; empty writes to stdout
    int threads = 0;                      // 0: hardware concurrency

    // Backing parameters for model = custom (a reparametrized Morse well).
    MorseParams morse;
    bool custom_driven = false;

    // Backing parameters for model = two-level.
    double two_level_gamma = 1.0;
    double two_level_omega0 = 1.0;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
    return v;
}

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

inline void apply_config_value(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    if (key == "model") cfg.model = value;
    else if (key == "solver") cfg.solver = value;
    else if (key == "dt") cfg.dt = parse_double(key, value);
    else if (key == "t_final") cfg.t_final = parse_double(key, value);
    else if (key == "tau") cfg.tau = parse_double(key, value);
    else if (key == "samples") cfg.samples = parse_int(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "observables") cfg.observables = detail::split_list(value);
    else if (key == "out") cfg.out = value;
    else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, value));
    else if (key == "custom_driven") cfg.custom_driven = parse_bool(key, value);
    else if (key == "morse_v_inf") cfg.morse.v_inf = parse_double(key, value);
    else if (key == "morse_a") cfg.morse.a = parse_double(key, value);
    else if (key == "morse_u_max") cfg.morse.u_max = parse_double(key, value);
    else if (key == "morse_mass") cfg.morse.mass = parse_double(key, value);
    else if (key == "morse_gamma0") cfg.morse.gamma0 = parse_double(key, value);
    else if (key == "morse_beta_e") cfg.morse.beta_e = parse_double(key, value);
    else if (key == "morse_t_avg") cfg.morse.t_avg = parse_double(key, value);
    else if (key == "morse_drive_amp") cfg.morse.drive_amp = parse_double(key, value);
    else if (key == "morse_drive_freq") cfg.morse.drive_freq = parse_double(key, value);
    else if (key == "two_level_gamma") cfg.two_level_gamma = parse_double(key, value);
    else if (key == "two_level_omega0") cfg.two_level_omega0 = parse_double(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config file " + path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        apply_config_value(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
}

namespace detail {
inline Eigen::Index integer_ratio(const std::string& what, double num, double den) {
    if (den <= 0.0 || num <= 0.0) throw ConfigError(what + ": values must be positive");
    const double ratio = num / den;
    const auto k = static_cast<Eigen::Index>(std::llround(ratio));
    if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9 * std::max(1.0, ratio))
        throw ConfigError(what);
    return k;
}
} // namespace detail

inline Eigen::Index config_steps_per_macro(const RunConfig& cfg) {
    return detail::integer_ratio("tau must be an integer multiple of dt", cfg.tau, cfg.dt);
}

inline Eigen::Index config_n_macro(const RunConfig& cfg) {
    return detail::integer_ratio("t_final must be an integer multiple of tau", cfg.t_final,
                                 cfg.tau);
}

inline void validate_config(const RunConfig& cfg) {
    if (cfg.model != "free" && cfg.model != "driven" && cfg.model != "two-level" &&
        cfg.model != "custom")
        throw ConfigError("unknown model '" + cfg.model +
                          "' (expected free, driven, two-level or custom)");
    if (cfg.solver != "order1" && cfg.solver != "order2" && cfg.solver != "linear1" &&
        cfg.solver != "linear2" && cfg.solver != "reference")
        throw ConfigError("unknown solver '" + cfg.solver +
                          "' (expected order1, order2, linear1, linear2 or reference)");
    if (cfg.dt <= 0.0) throw ConfigError("dt must be positive");
    if (cfg.samples < 2 && cfg.solver != "reference")
        throw ConfigError("samples must be at least 2");
    if (cfg.threads < 0) throw ConfigError("threads must be non-negative");
    config_steps_per_macro(cfg);
    config_n_macro(cfg);
}

// Instantiates the configured model with the configured observable subset.
inline Model build_model(const RunConfig& cfg) {
    Model model;
    if (cfg.model == "free") model = make_free_morse();
    else if (cfg.model == "driven") model = make_driven_morse();
    else if (cfg.model == "two-level")
        model = make_two_level(cfg.two_level_gamma, cfg.two_level_omega0);
    else if (cfg.model == "custom")
        model = cfg.custom_driven ? make_driven_morse(cfg.morse) : make_free_morse(cfg.morse);
    else
        throw ConfigError("unknown model '" + cfg.model + "'");

    if (cfg.observables.empty()) return model;
    std::vector<Observable> picked;
    for (const auto& name : cfg.observables) {
        bool found = false;
        for (const auto& o : model.observables)
            if (o.name == name) {
                picked.push_back(o);
                found = true;
                break;
            }
        if (!found)
            throw ConfigError("model '" + cfg.model + "' has no observable '" + name + "'");
    }
    model.observables = std::move(picked);
    return model;
}

} // namespace qsd
