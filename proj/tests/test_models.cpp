#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qsd/models.hpp"

using namespace qsd;

TEST_CASE("grid Hamiltonian has the documented tridiagonal structure") {
    const MorseParams p;
    const RealMatrix h = morse_grid_hamiltonian(p);
    REQUIRE(h.rows() == 31);
    REQUIRE(h.cols() == 31);

    // Hopping term 1/(2 m dx^2) with m = dx = 1.
    for (int i = 0; i + 1 < 31; ++i) {
        REQUIRE(h(i, i + 1) == Catch::Approx(-0.5));
        REQUIRE(h(i + 1, i) == Catch::Approx(-0.5));
    }
    // Leftmost site: the potential wall exceeds the cap, so the diagonal is
    // kinetic 1 plus the capped value.
    REQUIRE(h(0, 0) == Catch::Approx(1.0 + p.u_max));
    // At x = 0 the well bottom contributes nothing.
    const int i0 = 10;  // x = -10 + 10
    REQUIRE(h(i0, i0) == Catch::Approx(1.0));
    // Far right tail approaches the dissociation plateau v_inf = 4 < cap.
    const double x30 = p.x0 + 30.0;
    const double wall = 1.0 - std::exp(-p.a * x30);
    REQUIRE(h(30, 30) == Catch::Approx(1.0 + p.v_inf * wall * wall));
    REQUIRE(frobenius_distance(h.cast<Complex>(), ComplexMatrix(h.transpose().cast<Complex>())) <
            1e-14);
}

TEST_CASE("fundamental transition frequency matches the published value") {
    const double omega_b = morse_transition_frequency();
    REQUIRE(std::abs(omega_b - 0.4903) < 1e-3);
}

TEST_CASE("thermal rates satisfy detailed balance to machine precision") {
    const MorseParams p;
    const double omega_b = morse_transition_frequency(p);
    const double up = gamma_up(p, omega_b);
    const double down = gamma_down(p, omega_b);
    REQUIRE(up / down == Catch::Approx(std::exp(-p.beta_e * omega_b)).epsilon(1e-14));
    REQUIRE(up + down == Catch::Approx(p.gamma0).epsilon(1e-14));
}

TEST_CASE("sinc fills the removable singularity") {
    REQUIRE(sinc(0.0) == 1.0);
    REQUIRE(sinc(1e-9) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(sinc(2.0) == Catch::Approx(std::sin(2.0) / 2.0));
}

TEST_CASE("jump operators follow the windowed-coupling formula") {
    const MorseParams p;
    Model model = make_free_morse(p);
    const OpenSystem& sys = model.sys;
    const EigenSystem& eig = sys.eig;
    const double omega_b = eig.values[1] - eig.values[0];
    const ComplexMatrix x_op = position_in_eigenbasis(p, eig);

    REQUIRE(sys.n_lindblad() == 2);
    const ComplexMatrix& up = sys.lindblads[0];
    const ComplexMatrix& down = sys.lindblads[1];

    // Spot-check entries against an independent recomputation.
    for (const auto [m, n] : {std::pair<int, int>{0, 1}, {1, 0}, {3, 5}, {7, 2}}) {
        const double gap = eig.values[m] - eig.values[n];
        const Complex eu =
            std::sqrt(gamma_up(p, omega_b)) * x_op(m, n) * sinc((gap - omega_b) * p.t_avg);
        const Complex ed =
            std::sqrt(gamma_down(p, omega_b)) * x_op(m, n) * sinc((gap + omega_b) * p.t_avg);
        REQUIRE(std::abs(up(m, n) - eu) < 1e-14);
        REQUIRE(std::abs(down(m, n) - ed) < 1e-14);
    }

    // The position matrix is real in this basis, so the two channels are
    // transposes up to the thermal weight.
    const double ratio = std::sqrt(gamma_down(p, omega_b) / gamma_up(p, omega_b));
    REQUIRE(frobenius_distance(ComplexMatrix(ratio * up.transpose()), down) < 1e-12);

    // The downward channel dominates at positive inverse temperature.
    REQUIRE(down.cwiseAbs().sum() > up.cwiseAbs().sum());

    // The raising channel really raises: it feeds the level above the
    // initially occupied one harder than the level below, and vice versa.
    REQUIRE(std::abs(up(3, 2)) > 5.0 * std::abs(up(1, 2)));
    REQUIRE(std::abs(down(1, 2)) > 5.0 * std::abs(down(3, 2)));
}

TEST_CASE("sinc kernel agrees with direct quadrature of the windowed average") {
    const MorseParams p;
    Model model = make_free_morse(p);
    const EigenSystem& eig = model.sys.eig;
    const double omega_b = eig.values[1] - eig.values[0];
    const ComplexMatrix x_op = position_in_eigenbasis(p, eig);
    const Eigen::Index d = model.sys.dim();

    // (1/2T) int_{-T}^{T} exp(-/+ i omega_b tau) X_H(tau) dtau by trapezoid
    // rule; X_H(tau) phases elementwise in the eigenbasis.
    const int n_tau = 10'000;
    const double h = 2.0 * p.t_avg / n_tau;
    ComplexMatrix raise_avg = ComplexMatrix::Zero(d, d);
    ComplexMatrix lower_avg = ComplexMatrix::Zero(d, d);
    for (int k = 0; k <= n_tau; ++k) {
        const double tau = -p.t_avg + k * h;
        const double w = (k == 0 || k == n_tau) ? 0.5 : 1.0;
        for (Eigen::Index m = 0; m < d; ++m)
            for (Eigen::Index n = 0; n < d; ++n) {
                const double gap = eig.values[m] - eig.values[n];
                raise_avg(m, n) += w * std::exp(Complex(0.0, (gap - omega_b) * tau)) * x_op(m, n);
                lower_avg(m, n) += w * std::exp(Complex(0.0, (gap + omega_b) * tau)) * x_op(m, n);
            }
    }
    raise_avg *= h / (2.0 * p.t_avg);
    lower_avg *= h / (2.0 * p.t_avg);

    const ComplexMatrix up_q = std::sqrt(gamma_up(p, omega_b)) * raise_avg;
    const ComplexMatrix down_q = std::sqrt(gamma_down(p, omega_b)) * lower_avg;
    REQUIRE(max_abs(ComplexMatrix(up_q - model.sys.lindblads[0])) < 1e-6);
    REQUIRE(max_abs(ComplexMatrix(down_q - model.sys.lindblads[1])) < 1e-6);
}

TEST_CASE("position operator is Hermitian and transported consistently") {
    const MorseParams p;
    const EigenSystem eig = hermitian_eig(morse_grid_hamiltonian(p).cast<Complex>());
    const ComplexMatrix x_op = position_in_eigenbasis(p, eig);
    REQUIRE(max_abs(ComplexMatrix(x_op - x_op.adjoint())) < 1e-12);

    // Transporting back to the grid recovers the diagonal coordinates.
    const ComplexMatrix back = eig.vectors * x_op * eig.vectors.adjoint();
    for (int i = 0; i < p.n_points; ++i)
        REQUIRE(std::abs(back(i, i) - Complex(p.x0 + i * p.dx, 0.0)) < 1e-10);
}

TEST_CASE("initial state is the uniform superposition of levels 2..4") {
    Model model = make_free_morse();
    REQUIRE(model.psi0.size() == 31);
    REQUIRE(model.psi0.squaredNorm() == Catch::Approx(1.0).epsilon(1e-14));
    const double amp = 1.0 / std::sqrt(3.0);
    for (Eigen::Index k = 0; k < 31; ++k) {
        const double expect = (k >= 2 && k <= 4) ? amp : 0.0;
        REQUIRE(std::abs(model.psi0[k] - Complex(expect, 0.0)) < 1e-15);
    }
}

TEST_CASE("free and driven variants differ only by the drive") {
    Model free = make_free_morse();
    Model driven = make_driven_morse();
    REQUIRE_FALSE(free.sys.drive.has_value());
    REQUIRE(driven.sys.drive.has_value());
    REQUIRE(frobenius_distance(free.sys.lindblads[0], driven.sys.lindblads[0]) < 1e-15);

    // V = F X with F = 0.2.
    const ComplexMatrix x_op = position_in_eigenbasis(MorseParams{}, free.sys.eig);
    REQUIRE(frobenius_distance(driven.sys.drive->op, ComplexMatrix(0.2 * x_op)) < 1e-13);
}

TEST_CASE("two-level model exposes the analytic benchmark pieces") {
    Model model = make_two_level(0.7, 1.9);
    REQUIRE(model.sys.dim() == 2);
    REQUIRE(model.sys.energies()[0] == 0.0);
    REQUIRE(model.sys.energies()[1] == 1.9);
    const ComplexMatrix& l = model.sys.lindblads[0];
    REQUIRE(std::abs(l(0, 1) - Complex(std::sqrt(0.7), 0.0)) < 1e-15);
    REQUIRE(std::abs(l(0, 0)) + std::abs(l(1, 0)) + std::abs(l(1, 1)) == 0.0);
    REQUIRE(model.psi0[1] == Complex(1.0, 0.0));
    REQUIRE(model.observables.size() == 2);
    REQUIRE(model.observables[1].name == "excited_population");
}

TEST_CASE("reparametrized wells move the spectrum") {
    MorseParams p;
    p.v_inf = 6.0;
    const double omega_custom = morse_transition_frequency(p);
    const double omega_default = morse_transition_frequency();
    REQUIRE(std::abs(omega_custom - omega_default) > 1e-3);
}
