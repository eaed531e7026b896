#pragma once

#include <cmath>
#include <vector>

#include "qsd/system.hpp"

namespace qsd {

// Deterministic propagation of the full density matrix, used as the oracle
// the stochastic solvers are judged against. Works in the eigenbasis; the
// bare-Hamiltonian commutator is applied elementwise through the Bohr matrix.

inline ComplexMatrix density_from_state(const ComplexVector& psi) {
    const double n2 = psi.squaredNorm();
    if (n2 < kZeroNormFloor) throw ZeroNorm("density_from_state: null state");
    return (psi * psi.adjoint()) / n2;
}

// sum_a ( 2 L_a rho L_a^dag - G_a rho - rho G_a ), G_a = L_a^dag L_a.
inline ComplexMatrix dissipator(const OpenSystem& sys, const ComplexMatrix& rho) {
    ComplexMatrix acc = ComplexMatrix::Zero(rho.rows(), rho.cols());
    for (Eigen::Index a = 0; a < sys.n_lindblad(); ++a) {
        const ComplexMatrix& l = sys.lindblads[static_cast<std::size_t>(a)];
        const ComplexMatrix& g = sys.grams[static_cast<std::size_t>(a)];
        acc.noalias() += 2.0 * (l * rho * l.adjoint());
        acc.noalias() -= g * rho;
        acc.noalias() -= rho * g;
    }
    return acc;
}

// d rho / dt = -i [H0 + theta(t) V, rho] + dissipator(rho).
inline ComplexMatrix lindblad_rhs(const OpenSystem& sys, double t, const ComplexMatrix& rho) {
    ComplexMatrix rhs = -kI * (sys.bohr.cast<Complex>().cwiseProduct(rho));
    if (sys.drive) {
        const double theta = sys.drive->envelope(t);
        const ComplexMatrix& v = sys.drive->op;
        rhs.noalias() -= kI * theta * (v * rho);
        rhs.noalias() += kI * theta * (rho * v);
    }
    rhs += dissipator(sys, rho);
    return rhs;
}

struct ReferenceOptions {
    double dt = 1e-3;             // inner step; snapped so tau is an integer multiple
    bool check_positivity = true; // track the smallest eigenvalue seen
};

struct ReferenceResult {
    std::vector<double> times;          // macro-time grid, starting at 0
    std::vector<ComplexMatrix> states;  // density matrices on that grid
    double max_trace_drift = 0.0;       // max |tr rho - tr rho0| over the grid
    double max_hermiticity_defect = 0.0;
    double min_eigenvalue = 0.0;        // most negative eigenvalue encountered
};

namespace detail {
inline void rk4_step(const OpenSystem& sys, double t, double h, ComplexMatrix& rho) {
    const ComplexMatrix k1 = lindblad_rhs(sys, t, rho);
    const ComplexMatrix k2 = lindblad_rhs(sys, t + 0.5 * h, rho + (0.5 * h) * k1);
    const ComplexMatrix k3 = lindblad_rhs(sys, t + 0.5 * h, rho + (0.5 * h) * k2);
    const ComplexMatrix k4 = lindblad_rhs(sys, t + h, rho + h * k3);
    rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}
} // namespace detail

// Classic fourth-order integration recorded every tau up to n_macro * tau.
inline ReferenceResult propagate_reference(const OpenSystem& sys, const ComplexMatrix& rho0,
                                           double tau, Eigen::Index n_macro,
                                           const ReferenceOptions& opts = {}) {
    if (tau <= 0.0 || opts.dt <= 0.0)
        throw ConfigError("propagate_reference: step sizes must be positive");
    const auto n_sub = static_cast<Eigen::Index>(std::ceil(tau / opts.dt - 1e-12));
    const double h = tau / static_cast<double>(std::max<Eigen::Index>(n_sub, 1));

    ReferenceResult out;
    out.times.reserve(static_cast<std::size_t>(n_macro) + 1);
    out.states.reserve(static_cast<std::size_t>(n_macro) + 1);

    ComplexMatrix rho = rho0;
    const double trace0 = trace(rho).real();
    double min_eig = 0.0;
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver;

    const auto record = [&](Eigen::Index k) {
        out.times.push_back(static_cast<double>(k) * tau);
        out.states.push_back(rho);
        out.max_trace_drift =
            std::max(out.max_trace_drift, std::abs(trace(rho).real() - trace0));
        out.max_hermiticity_defect =
            std::max(out.max_hermiticity_defect, max_abs(ComplexMatrix(rho - rho.adjoint())));
        if (opts.check_positivity) {
            solver.compute(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
            min_eig = std::min(min_eig, solver.eigenvalues().minCoeff());
        }
    };

    record(0);
    for (Eigen::Index k = 0; k < n_macro; ++k) {
        const double t_base = static_cast<double>(k) * tau;
        for (Eigen::Index s = 0; s < n_sub; ++s)
            detail::rk4_step(sys, t_base + static_cast<double>(s) * h, h, rho);
        record(k + 1);
    }
    out.min_eigenvalue = min_eig;
    return out;
}

// tr(op rho), returned with its (physically real) part only.
inline double reference_expectation(const ComplexMatrix& op, const ComplexMatrix& rho) {
    return trace(ComplexMatrix(op * rho)).real();
}

} // namespace qsd
