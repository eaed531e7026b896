#pragma once

#include <Eigen/Dense>
#include <complex>

#include "qsd/errors.hpp"

namespace qsd {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;

inline constexpr Complex kI{0.0, 1.0};

// ----------------------------- basic operations -----------------------------

// <x|y>, conjugate-linear in the first argument.
inline Complex inner(const ComplexVector& x, const ComplexVector& y) {
    if (x.size() != y.size())
        throw DimensionMismatch("inner: size " + std::to_string(x.size()) +
                                " vs " + std::to_string(y.size()));
    return x.dot(y);
}

inline ComplexVector matvec(const ComplexMatrix& a, const ComplexVector& x) {
    if (a.cols() != x.size())
        throw DimensionMismatch("matvec: " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " applied to length " +
                                std::to_string(x.size()));
    return a * x;
}

inline ComplexMatrix adjoint(const ComplexMatrix& a) { return a.adjoint(); }

inline Complex trace(const ComplexMatrix& a) {
    if (a.rows() != a.cols())
        throw DimensionMismatch("trace: matrix not square");
    return a.trace();
}

inline double frobenius_distance(const ComplexMatrix& a, const ComplexMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionMismatch("frobenius_distance: shape mismatch");
    return (a - b).norm();
}

inline double max_abs(const ComplexMatrix& a) { return a.cwiseAbs().maxCoeff(); }

// ------------------------------- eigensystem --------------------------------

// Spectral decomposition of a Hermitian operator, eigenvalues ascending.
struct EigenSystem {
    RealVector values;     // ascending
    ComplexMatrix vectors; // columns are orthonormal eigenvectors
};

// Diagonalizes a Hermitian matrix. Column phases are canonicalized so the
// largest-magnitude component of each eigenvector is real and positive,
// making downstream matrix elements reproducible across runs.
inline EigenSystem hermitian_eig(const ComplexMatrix& h, double hermitian_tol = 1e-12) {
    if (h.rows() != h.cols())
        throw DimensionMismatch("hermitian_eig: matrix not square");
    const double scale = std::max(1.0, max_abs(h));
    if (max_abs(h - h.adjoint()) > hermitian_tol * scale)
        throw NotHermitian("hermitian_eig: input deviates from H = H^dag beyond tolerance");

    Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h);
    if (solver.info() != Eigen::Success)
        throw ConvergenceFailure("hermitian_eig: eigensolver failed to converge");

    EigenSystem sys{solver.eigenvalues(), solver.eigenvectors()};
    for (Eigen::Index k = 0; k < sys.vectors.cols(); ++k) {
        Eigen::Index imax = 0;
        sys.vectors.col(k).cwiseAbs().maxCoeff(&imax);
        const Complex pivot = sys.vectors(imax, k);
        if (std::abs(pivot) > 0.0)
            sys.vectors.col(k) *= std::conj(pivot) / std::abs(pivot);
    }
    return sys;
}

// ------------------------------ phase rotation ------------------------------

// Phase vector p_m = exp(i E_m t).
inline ComplexVector phase_vector(const RealVector& energies, double t) {
    ComplexVector p(energies.size());
    for (Eigen::Index m = 0; m < energies.size(); ++m)
        p[m] = std::polar(1.0, energies[m] * t);
    return p;
}

// Entrywise A(t)_{mn} = exp(i (E_m - E_n) t) A_{mn}: conjugation of A by the
// diagonal propagator of a Hamiltonian whose eigenbasis carries A.
inline void phase_rotate_into(ComplexMatrix& out, const ComplexMatrix& a,
                              const ComplexVector& phases) {
    out = phases.asDiagonal() * a * phases.conjugate().asDiagonal();
}

inline ComplexMatrix phase_rotate(const ComplexMatrix& a, const RealVector& energies,
                                  double t) {
    if (a.rows() != a.cols() || a.rows() != energies.size())
        throw DimensionMismatch("phase_rotate: operator/energy size mismatch");
    ComplexMatrix out(a.rows(), a.cols());
    phase_rotate_into(out, a, phase_vector(energies, t));
    return out;
}

} // namespace qsd
