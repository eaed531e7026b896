#pragma once

#include <cstdio>
#include <ostream>
#include <string>

#include "qsd/experiments.hpp"
#include "qsd/models.hpp"
#include "qsd/reference.hpp"
#include "qsd/stats.hpp"

namespace qsd {

namespace detail {
inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}
} // namespace detail

inline void write_ensemble_csv(std::ostream& os, const EnsembleSeries& s) {
    os << "t,observable,mean,std,ci_halfwidth,n_samples\n";
    for (std::size_t t = 0; t < s.times.size(); ++t)
        for (std::size_t o = 0; o < s.observables.size(); ++o)
            os << detail::csv_num(s.times[t]) << ',' << s.observables[o] << ','
               << detail::csv_num(s.mean[t][o]) << ',' << detail::csv_num(s.stddev[t][o]) << ','
               << detail::csv_num(s.ci_halfwidth[t][o]) << ',' << s.n_samples << '\n';
}

inline void write_reference_csv(std::ostream& os, const ReferenceResult& ref,
                                const std::vector<Observable>& obs) {
    os << "t,observable,value\n";
    for (std::size_t t = 0; t < ref.times.size(); ++t)
        for (const auto& o : obs)
            os << detail::csv_num(ref.times[t]) << ',' << o.name << ','
               << detail::csv_num(reference_expectation(o.op, ref.states[t])) << '\n';
}

inline void write_convergence_csv(std::ostream& os, const ConvergenceReport& r) {
    os << "dt,abs_error,mc_halfwidth,bias_dominated\n";
    for (const auto& p : r.points)
        os << detail::csv_num(p.dt) << ',' << detail::csv_num(p.abs_error) << ','
           << detail::csv_num(p.mc_halfwidth) << ',' << (p.bias_dominated ? 1 : 0) << '\n';
}

inline void write_stability_csv(std::ostream& os, const std::vector<StabilityRow>& rows) {
    os << "dt,diverged,divergence_time\n";
    for (const auto& r : rows) {
        os << detail::csv_num(r.dt) << ',' << (r.diverged ? 1 : 0) << ',';
        if (r.diverged) os << detail::csv_num(r.divergence_time);
        os << '\n';
    }
}

inline void write_audit_csv(std::ostream& os, const AuditReport& report) {
    os << "cell,estimate_re,estimate_im,expected_re,expected_im,n_se,pass\n";
    for (const auto& r : report.rows)
        os << r.cell << ',' << detail::csv_num(r.estimate.real()) << ','
           << detail::csv_num(r.estimate.imag()) << ',' << detail::csv_num(r.expected.real())
           << ',' << detail::csv_num(r.expected.imag()) << ',' << detail::csv_num(r.max_nse)
           << ',' << (r.pass ? 1 : 0) << '\n';
}

} // namespace qsd
