#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "qsd/system.hpp"

namespace qsd {

// ------------------------------ Morse oscillator -----------------------------
//
// Grid-discretized Morse well with thermal-contact jump operators built from
// time-averaged position couplings between eigenstates, plus an optional
// sinusoidal dipole drive. All operators live in the eigenbasis of the grid
// Hamiltonian.

struct MorseParams {
    // Potential and grid
    double v_inf = 4.0;   // well depth scale
    double a = 0.2;       // stiffness of the exponential wall
    double u_max = 6.0;   // cap applied to the potential on the grid
    double mass = 1.0;
    double x0 = -10.0;    // leftmost grid point
    double dx = 1.0;      // grid spacing
    int n_points = 31;

    // Thermal contact
    double gamma0 = 0.2;  // bare contact rate
    double beta_e = 4.0;  // environment inverse temperature
    double t_avg = 10.0;  // coupling time-average window

    // Drive
    double drive_amp = 0.2;   // force amplitude F in theta(t) F X
    double drive_freq = 0.49; // drive angular frequency
};

// sin(z)/z with the removable singularity filled in.
inline double sinc(double z) {
    if (std::abs(z) < 1e-8) return 1.0 - z * z / 6.0;
    return std::sin(z) / z;
}

// Finite-difference grid Hamiltonian: tridiagonal kinetic part plus the
// capped Morse potential on the diagonal. Real symmetric.
inline RealMatrix morse_grid_hamiltonian(const MorseParams& p) {
    const int n = p.n_points;
    RealMatrix h = RealMatrix::Zero(n, n);
    const double hop = 1.0 / (2.0 * p.mass * p.dx * p.dx);
    for (int i = 0; i < n; ++i) {
        const double x = p.x0 + i * p.dx;
        const double wall = 1.0 - std::exp(-p.a * x);
        const double u = std::min(p.u_max, p.v_inf * wall * wall);
        h(i, i) = 2.0 * hop + u;
        if (i + 1 < n) {
            h(i, i + 1) = -hop;
            h(i + 1, i) = -hop;
        }
    }
    return h;
}

// Position operator on the grid, transported to the eigenbasis.
inline ComplexMatrix position_in_eigenbasis(const MorseParams& p, const EigenSystem& eig) {
    const int n = p.n_points;
    RealVector x(n);
    for (int i = 0; i < n; ++i) x[i] = p.x0 + i * p.dx;
    return eig.vectors.adjoint() * x.asDiagonal() * eig.vectors;
}

// Upward/downward thermal rates at the fundamental transition frequency;
// their ratio is exactly exp(-beta_e * omega_b) (detailed balance).
inline double gamma_up(const MorseParams& p, double omega_b) {
    return p.gamma0 / (1.0 + std::exp(p.beta_e * omega_b));
}
inline double gamma_down(const MorseParams& p, double omega_b) {
    return p.gamma0 / (1.0 + std::exp(-p.beta_e * omega_b));
}

// Jump operators in the eigenbasis. Entry (m, n) couples n -> m when the
// transition detuning from +/- omega_b survives the time-average window:
//   (L_pm)_{mn} = sqrt(gamma_pm) X_{mn} sinc((E_m - E_n -/+ omega_b) t_avg)
// so L_plus transfers population up in energy with the Boltzmann-suppressed
// rate and L_minus down with the dominant one. Pairing the rates the other
// way round (gamma_plus on the kernel peaked at E_m = E_n - omega_b) makes
// absorption outrun emission and the bath pumps the well instead of cooling
// it; the zero-temperature limit is the giveaway, since gamma_plus -> 0 must
// switch off the *upward* channel, not the only cooling one.
inline std::vector<ComplexMatrix> morse_lindblads(const MorseParams& p, const EigenSystem& eig,
                                                  const ComplexMatrix& x_op, double omega_b) {
    const Eigen::Index d = eig.values.size();
    ComplexMatrix up(d, d), down(d, d);
    const double su = std::sqrt(gamma_up(p, omega_b));
    const double sd = std::sqrt(gamma_down(p, omega_b));
    for (Eigen::Index m = 0; m < d; ++m) {
        for (Eigen::Index n = 0; n < d; ++n) {
            const double gap = eig.values[m] - eig.values[n];
            up(m, n) = su * x_op(m, n) * sinc((gap - omega_b) * p.t_avg);
            down(m, n) = sd * x_op(m, n) * sinc((gap + omega_b) * p.t_avg);
        }
    }
    return {std::move(up), std::move(down)};
}

// Named observables for recording; matrices are in the eigenbasis.
struct Observable {
    std::string name;
    ComplexMatrix op;
};

// A ready-to-run model: system, initial state, and observables to record.
struct Model {
    OpenSystem sys;
    ComplexVector psi0;
    std::vector<Observable> observables;
};

inline Observable energy_observable(const OpenSystem& sys) {
    return {"energy", ComplexMatrix(sys.energies().cast<Complex>().asDiagonal())};
}

namespace detail {
inline Model assemble_morse(const MorseParams& p, bool driven) {
    const RealMatrix h = morse_grid_hamiltonian(p);
    EigenSystem eig = hermitian_eig(h.cast<Complex>());
    const double omega_b = eig.values[1] - eig.values[0];
    const ComplexMatrix x_op = position_in_eigenbasis(p, eig);
    std::vector<ComplexMatrix> ls = morse_lindblads(p, eig, x_op, omega_b);

    std::optional<Drive> drive;
    if (driven) {
        const double f = p.drive_amp;
        const double w = p.drive_freq;
        drive = Drive{ComplexMatrix(f * x_op),
                      [w](double t) { return std::sin(w * t); },
                      [w](double t) { return w * std::cos(w * t); }};
    }

    Model model;
    model.sys = make_open_system(std::move(eig), std::move(ls), std::move(drive));

    const Eigen::Index d = model.sys.dim();
    model.psi0 = ComplexVector::Zero(d);
    model.psi0[2] = model.psi0[3] = model.psi0[4] = 1.0 / std::sqrt(3.0);

    model.observables.push_back(energy_observable(model.sys));
    model.observables.push_back({"position", x_op});
    return model;
}
} // namespace detail

inline double morse_transition_frequency(const MorseParams& p = {}) {
    const RealMatrix h = morse_grid_hamiltonian(p);
    const EigenSystem eig = hermitian_eig(h.cast<Complex>());
    return eig.values[1] - eig.values[0];
}

inline Model make_free_morse(const MorseParams& p = {}) { return detail::assemble_morse(p, false); }
inline Model make_driven_morse(const MorseParams& p = {}) { return detail::assemble_morse(p, true); }

// ------------------------------ two-level system ------------------------------
//
// Amplitude damping at rate gamma: H0 = diag(0, omega0), one jump operator
// sqrt(gamma) |g><e|. The excited-state population relaxes as exp(-2 gamma t)
// under the factor-2 dissipator convention used throughout.

inline Model make_two_level(double gamma = 1.0, double omega0 = 1.0) {
    EigenSystem eig;
    eig.values = RealVector(2);
    eig.values << 0.0, omega0;
    eig.vectors = ComplexMatrix::Identity(2, 2);

    ComplexMatrix lower = ComplexMatrix::Zero(2, 2);
    lower(0, 1) = std::sqrt(gamma);

    Model model;
    model.sys = make_open_system(std::move(eig), {std::move(lower)});
    model.psi0 = ComplexVector::Zero(2);
    model.psi0[1] = 1.0;

    ComplexMatrix pe = ComplexMatrix::Zero(2, 2);
    pe(1, 1) = 1.0;
    model.observables.push_back(energy_observable(model.sys));
    model.observables.push_back({"excited_population", std::move(pe)});
    return model;
}

} // namespace qsd
