#include <catch2/catch_amalgamated.hpp>

#include "qsd/models.hpp"
#include "qsd/system.hpp"

using namespace qsd;

namespace {
OpenSystem random_system(Eigen::Index d, Eigen::Index nl, unsigned seed) {
    std::srand(seed);
    EigenSystem eig;
    eig.values = RealVector::Random(d);
    std::sort(eig.values.data(), eig.values.data() + d);
    eig.vectors = ComplexMatrix::Identity(d, d);
    std::vector<ComplexMatrix> ls;
    for (Eigen::Index a = 0; a < nl; ++a) ls.push_back(ComplexMatrix::Random(d, d));
    return make_open_system(std::move(eig), std::move(ls));
}
} // namespace

TEST_CASE("make_open_system derives the Bohr matrix and Gram operators") {
    const OpenSystem sys = random_system(4, 2, 21);
    for (Eigen::Index m = 0; m < 4; ++m)
        for (Eigen::Index n = 0; n < 4; ++n)
            REQUIRE(sys.bohr(m, n) ==
                    Catch::Approx(sys.energies()[m] - sys.energies()[n]).margin(1e-15));
    for (Eigen::Index a = 0; a < 2; ++a) {
        const auto& l = sys.lindblads[static_cast<std::size_t>(a)];
        REQUIRE(frobenius_distance(sys.grams[static_cast<std::size_t>(a)],
                                   ComplexMatrix(l.adjoint() * l)) < 1e-13);
    }
    REQUIRE(sys.dim() == 4);
    REQUIRE(sys.n_lindblad() == 2);
}

TEST_CASE("make_open_system rejects shape mismatches") {
    EigenSystem eig;
    eig.values = RealVector::Zero(3);
    eig.vectors = ComplexMatrix::Identity(3, 3);
    REQUIRE_THROWS_AS(make_open_system(eig, {ComplexMatrix::Zero(2, 2)}), DimensionMismatch);
}

TEST_CASE("frame rotation matches the entrywise phase law and starts at identity") {
    const OpenSystem sys = random_system(5, 1, 4);
    RotatedFrame frame = make_frame(sys, 0.0);
    REQUIRE(frobenius_distance(frame.lindblads_t[0], sys.lindblads[0]) < 1e-15);

    const double t = 1.7;
    rotate_frame_to(sys, frame, t);
    REQUIRE(frame.t == t);
    const ComplexMatrix expect = phase_rotate(sys.lindblads[0], sys.energies(), t);
    REQUIRE(frobenius_distance(frame.lindblads_t[0], expect) < 1e-13);

    // advance_frame always rotates from the frame-0 operators, so two short
    // advances agree with one long rotation to machine precision.
    RotatedFrame two = make_frame(sys, 0.0);
    advance_frame(sys, two, 0.9);
    advance_frame(sys, two, 0.8);
    REQUIRE(frobenius_distance(two.lindblads_t[0], expect) < 1e-13);
}

TEST_CASE("expectation is scale-invariant and guards the null state") {
    const OpenSystem sys = random_system(3, 1, 8);
    const ComplexMatrix a = sys.grams[0];  // any fixed operator
    ComplexVector phi(3);
    phi << Complex(0.2, 0.4), Complex(-0.3, 0.1), Complex(0.5, -0.2);
    const Complex e1 = expectation(a, phi);
    const Complex e2 = expectation(a, ComplexVector(Complex(3.0, -2.0) * phi));
    REQUIRE(std::abs(e1 - e2) < 1e-13);
    REQUIRE_THROWS_AS(expectation(a, ComplexVector(ComplexVector::Zero(3))), ZeroNorm);
}

TEST_CASE("fluctuation kets are orthogonal to the state") {
    const OpenSystem sys = random_system(6, 3, 15);
    const RotatedFrame frame = make_frame(sys, 0.83);
    std::srand(3);
    const ComplexVector phi = ComplexVector::Random(6);
    for (Eigen::Index a = 0; a < 3; ++a) {
        const ComplexVector ket = apply_lambda_alpha(frame, a, phi);
        REQUIRE(std::abs(inner(phi, ket)) < 1e-13 * phi.norm() * ket.norm() + 1e-15);
    }
}

TEST_CASE("deterministic coefficient matches the two-level closed form") {
    // Single decay channel sqrt(g)|0><1|, no drive, frame time 0.
    const double g = 0.8;
    Model model = make_two_level(g, 1.3);
    const OpenSystem& sys = model.sys;
    const RotatedFrame frame = make_frame(sys, 0.0);

    ComplexVector phi(2);
    phi << Complex(0.6, 0.1), Complex(0.5, -0.7);
    const double n2 = phi.squaredNorm();
    const ComplexMatrix& l = sys.lindblads[0];
    const Complex ell = phi.dot(ComplexVector(l * phi)) / n2;
    const ComplexVector expect = 2.0 * std::conj(ell) * (l * phi) -
                                 ComplexVector(sys.grams[0] * phi) -
                                 std::conj(ell) * ell * phi;
    const ComplexVector got = apply_lambda_zero(sys, frame, phi);
    REQUIRE((got - expect).norm() < 1e-13);
}

TEST_CASE("drive enters the deterministic coefficient through the envelope") {
    Model model = make_driven_morse();
    const OpenSystem& sys = model.sys;
    const double t = 2.21;
    const RotatedFrame frame = make_frame(sys, t);
    const ComplexVector& phi = model.psi0;

    const ComplexVector with_drive = apply_lambda_zero(sys, frame, phi);

    OpenSystem undriven = make_open_system(sys.eig, sys.lindblads);
    const RotatedFrame frame2 = make_frame(undriven, t);
    const ComplexVector without = apply_lambda_zero(undriven, frame2, phi);

    const double theta = sys.drive->envelope(t);
    const ComplexVector drive_term = -kI * theta * (*frame.drive_t * phi);
    REQUIRE((with_drive - without - drive_term).norm() < 1e-12);
    REQUIRE(theta == Catch::Approx(std::sin(0.49 * t)));
    REQUIRE(sys.drive->envelope_rate(t) == Catch::Approx(0.49 * std::cos(0.49 * t)));
}
