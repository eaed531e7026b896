#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qsd/errors.hpp"

namespace qsd {

// Streaming first and second moments (Welford update, Chan merge). Merging
// partials in a fixed order gives bit-identical results regardless of how
// the samples were partitioned across workers.
struct RunningMoments {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }

    void merge(const RunningMoments& o) {
        if (o.n == 0) return;
        if (n == 0) {
            *this = o;
            return;
        }
        const double nt = static_cast<double>(n + o.n);
        const double d = o.mean - mean;
        mean += d * (static_cast<double>(o.n) / nt);
        m2 += o.m2 + d * d * (static_cast<double>(n) * static_cast<double>(o.n) / nt);
        n += o.n;
    }

    double variance() const { return n >= 2 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double stddev() const { return std::sqrt(variance()); }
    // ~95% band: the factor 2 is the large-sample t quantile.
    double ci_halfwidth() const {
        return n >= 2 ? 2.0 * stddev() / std::sqrt(static_cast<double>(n)) : 0.0;
    }
};

// Accumulator grid over (macro time, observable).
class MomentGrid {
  public:
    MomentGrid() = default;
    MomentGrid(std::size_t n_times, std::size_t n_obs)
        : n_times_(n_times), n_obs_(n_obs), cells_(n_times * n_obs) {}

    void add(std::size_t t, std::size_t obs, double x) { cell(t, obs).add(x); }

    void merge(const MomentGrid& o) {
        if (o.cells_.empty()) return;
        if (cells_.empty()) {
            *this = o;
            return;
        }
        if (o.n_times_ != n_times_ || o.n_obs_ != n_obs_)
            throw DimensionMismatch("MomentGrid::merge: shape mismatch");
        for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i].merge(o.cells_[i]);
    }

    const RunningMoments& cell(std::size_t t, std::size_t obs) const {
        return cells_.at(t * n_obs_ + obs);
    }
    RunningMoments& cell(std::size_t t, std::size_t obs) { return cells_.at(t * n_obs_ + obs); }

    std::size_t n_times() const { return n_times_; }
    std::size_t n_obs() const { return n_obs_; }

  private:
    std::size_t n_times_ = 0, n_obs_ = 0;
    std::vector<RunningMoments> cells_;
};

// Per-observable ensemble summary on the macro grid.
struct EnsembleSeries {
    std::vector<double> times;
    std::vector<std::string> observables;
    // Row-major [time][observable]
    std::vector<std::vector<double>> mean, stddev, ci_halfwidth;
    std::int64_t n_samples = 0;

    double value(std::size_t t, std::size_t obs) const { return mean.at(t).at(obs); }
    std::size_t obs_index(const std::string& name) const {
        for (std::size_t i = 0; i < observables.size(); ++i)
            if (observables[i] == name) return i;
        throw ConfigError("unknown observable '" + name + "'");
    }
};

inline EnsembleSeries series_from_grid(std::vector<double> times,
                                       std::vector<std::string> observables,
                                       const MomentGrid& grid) {
    EnsembleSeries s;
    s.times = std::move(times);
    s.observables = std::move(observables);
    const std::size_t nt = grid.n_times(), no = grid.n_obs();
    s.mean.assign(nt, std::vector<double>(no, 0.0));
    s.stddev = s.mean;
    s.ci_halfwidth = s.mean;
    for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t o = 0; o < no; ++o) {
            const auto& c = grid.cell(t, o);
            s.mean[t][o] = c.mean;
            s.stddev[t][o] = c.stddev();
            s.ci_halfwidth[t][o] = c.ci_halfwidth();
        }
    if (nt > 0 && no > 0) s.n_samples = grid.cell(0, 0).n;
    return s;
}

// Ordinary least squares y = slope x + intercept.
struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw DimensionMismatch("linear_fit: need at least two points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-300) throw DimensionMismatch("linear_fit: degenerate abscissae");
    LinearFit f;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    return f;
}

} // namespace qsd
