#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "qsd/linalg.hpp"

namespace qsd {

// Time-dependent scalar envelope theta(t) multiplying a Hermitian drive
// operator (stored in the bare-Hamiltonian eigenbasis).
struct Drive {
    ComplexMatrix op;
    std::function<double(double)> envelope;      // theta(t)
    std::function<double(double)> envelope_rate; // d theta / dt
};

// Open system pinned to the eigenbasis of its bare Hamiltonian: energies,
// jump operators, optional drive, and derived data the solvers reuse.
struct OpenSystem {
    EigenSystem eig;                     // bare-Hamiltonian spectral data
    std::vector<ComplexMatrix> lindblads; // eigenbasis, frame time 0
    std::optional<Drive> drive;

    // Derived, filled by make_open_system:
    RealMatrix bohr;                      // B_{mn} = E_m - E_n
    std::vector<ComplexMatrix> grams;     // G_a = L_a^dag L_a, frame time 0

    Eigen::Index dim() const { return eig.values.size(); }
    Eigen::Index n_lindblad() const { return static_cast<Eigen::Index>(lindblads.size()); }
    const RealVector& energies() const { return eig.values; }
};

inline OpenSystem make_open_system(EigenSystem eig, std::vector<ComplexMatrix> lindblads,
                                   std::optional<Drive> drive = std::nullopt) {
    OpenSystem sys;
    const Eigen::Index d = eig.values.size();
    for (const auto& l : lindblads)
        if (l.rows() != d || l.cols() != d)
            throw DimensionMismatch("make_open_system: jump operator shape mismatch");
    if (drive && (drive->op.rows() != d || drive->op.cols() != d))
        throw DimensionMismatch("make_open_system: drive operator shape mismatch");

    sys.eig = std::move(eig);
    sys.lindblads = std::move(lindblads);
    sys.drive = std::move(drive);
    sys.bohr.resize(d, d);
    for (Eigen::Index m = 0; m < d; ++m)
        for (Eigen::Index n = 0; n < d; ++n)
            sys.bohr(m, n) = sys.eig.values[m] - sys.eig.values[n];
    sys.grams.reserve(sys.lindblads.size());
    for (const auto& l : sys.lindblads) sys.grams.push_back(l.adjoint() * l);
    return sys;
}

// ----------------------------- rotating frame --------------------------------

// Operators rotated to an absolute frame time t. Rotation is always applied
// to the frame-0 operators (never accumulated step to step), so phases carry
// no drift over long runs.
struct RotatedFrame {
    double t = 0.0;
    std::vector<ComplexMatrix> lindblads_t;
    std::optional<ComplexMatrix> drive_t;
};

inline void rotate_frame_to(const OpenSystem& sys, RotatedFrame& frame, double t) {
    const ComplexVector p = phase_vector(sys.energies(), t);
    frame.t = t;
    frame.lindblads_t.resize(sys.lindblads.size());
    for (std::size_t a = 0; a < sys.lindblads.size(); ++a)
        phase_rotate_into(frame.lindblads_t[a], sys.lindblads[a], p);
    if (sys.drive) {
        if (!frame.drive_t) frame.drive_t.emplace();
        phase_rotate_into(*frame.drive_t, sys.drive->op, p);
    } else {
        frame.drive_t.reset();
    }
}

inline RotatedFrame make_frame(const OpenSystem& sys, double t = 0.0) {
    RotatedFrame frame;
    rotate_frame_to(sys, frame, t);
    return frame;
}

inline void advance_frame(const OpenSystem& sys, RotatedFrame& frame, double dt) {
    rotate_frame_to(sys, frame, frame.t + dt);
}

// ------------------------- normalized expectations ---------------------------

inline constexpr double kZeroNormFloor = 1e-30;

inline double norm2(const ComplexVector& phi) { return phi.squaredNorm(); }

// <phi|A|phi> / <phi|phi>; invariant under phi -> z phi.
inline Complex expectation(const ComplexMatrix& a, const ComplexVector& phi) {
    const double n2 = phi.squaredNorm();
    if (n2 < kZeroNormFloor)
        throw ZeroNorm("expectation: state norm below admissible floor");
    return phi.dot(matvec(a, phi)) / n2;
}

// ------------------------- fluctuation applications --------------------------

// (L_a(t) - <L_a(t)>) |phi> with the normalized expectation frozen at phi.
inline ComplexVector apply_lambda_alpha(const RotatedFrame& frame, Eigen::Index al,
                                        const ComplexVector& phi) {
    const ComplexMatrix& l = frame.lindblads_t.at(static_cast<std::size_t>(al));
    ComplexVector u = l * phi;
    const double n2 = phi.squaredNorm();
    if (n2 < kZeroNormFloor) throw ZeroNorm("apply_lambda_alpha: null state");
    const Complex ell = phi.dot(u) / n2;
    return u - ell * phi;
}

// Deterministic coefficient applied to |phi>:
//   -i theta(t) V(t) phi + sum_a [ 2 <L^dag> L phi - L^dag L phi - <L^dag><L> phi ]
// with all expectations normalized and frozen at phi.
inline ComplexVector apply_lambda_zero(const OpenSystem& sys, const RotatedFrame& frame,
                                       const ComplexVector& phi) {
    const double n2 = phi.squaredNorm();
    if (n2 < kZeroNormFloor) throw ZeroNorm("apply_lambda_zero: null state");
    ComplexVector acc = ComplexVector::Zero(phi.size());
    if (sys.drive) {
        const double theta = sys.drive->envelope(frame.t);
        acc.noalias() -= kI * theta * (*frame.drive_t * phi);
    }
    for (const auto& l : frame.lindblads_t) {
        const ComplexVector u = l * phi;
        const Complex ell = phi.dot(u) / n2;
        acc += 2.0 * std::conj(ell) * u;
        acc.noalias() -= l.adjoint() * u;
        acc -= (std::conj(ell) * ell) * phi;
    }
    return acc;
}

} // namespace qsd
