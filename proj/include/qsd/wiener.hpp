#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>

#include "qsd/linalg.hpp"

namespace qsd {

// ------------------------------- random stream ------------------------------

// One deterministic Gaussian stream per trajectory. Streams are decorrelated
// by hashing (seed, stream id); Gaussians come from Box-Muller on the raw
// engine output so the draw count per call is fixed and the sequence is
// independent of the standard library implementation.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : engine_(mix(seed, stream)) {}

    // Two independent N(0,1) variates.
    std::pair<double, double> normal_pair() {
        const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1p-53;
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(ang), r * std::sin(ang)};
    }

    // Complex Gaussian with E[m] = E[m m] = 0 and E[m conj(m)] = 2 var2;
    // real and imaginary parts are independent N(0, var2).
    Complex complex_normal(double var2) {
        const auto [z1, z2] = normal_pair();
        const double s = std::sqrt(var2);
        return {s * z1, s * z2};
    }

  private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
        std::uint64_t s = splitmix64(x);
        s ^= splitmix64(x);
        return s;
    }

    std::mt19937_64 engine_;
};

// --------------------------- modeled Ito integrals --------------------------

// One micro-step's worth of stochastic integrals for N_L complex noise
// channels. The singles and the time-crossed integrals come from two
// independent complex Gaussians a, b per channel, each with
// E[m conj(m')] = 2 dt delta and E[m m'] = 0:
//   I^alpha     = a^alpha
//   I^{alpha 0} = (a^alpha + b^alpha/sqrt(3)) dt / 2
//   I^{0 alpha} = (a^alpha - b^alpha/sqrt(3)) dt / 2
// The double integrals are split into their symmetric parts, which are
// pathwise functions of the singles by the Ito product rule,
//   I^{a a'}  + I^{a' a}        = a^a a^a'
//   I^{a* a'} + conj(I^{a'* a}) = conj(a^a) a^a' - 2 dt delta^{a a'}
// plus independent area remainders carrying the antisymmetric fluctuation:
//   I^{alpha alpha'}  = a^alpha a^alpha' / 2 + A^{alpha alpha'}
//   I^{alpha* alpha'} = (conj(a^alpha) a^alpha' - 2 dt delta) / 2 + U^{alpha alpha'}
// with A antisymmetric (zero diagonal) and U anti-Hermitian. Off-diagonal
// remainders (alpha < alpha') are independent complex Gaussians with
// E[|.|^2] = dt^2 and E[.^2] = 0; U's diagonal is i y^alpha with independent
// real y ~ N(0, dt^2). This reproduces every first and second moment of the
// true integrals and - through the symmetric parts - their joint moments
// with the singles, which is what the second-order weak error depends on.
// Deterministic entries: I^0 = dt, I^{00} = dt^2/2.
struct IntegralDraw {
    ComplexVector a, b;
    ComplexMatrix lev;   // A: antisymmetric remainder of I^{alpha alpha'}
    ComplexMatrix clev;  // U: anti-Hermitian remainder of I^{alpha* alpha'}
    double dt = 0.0;

    Complex i_alpha(Eigen::Index al) const { return a[al]; }
    Complex i_alpha0(Eigen::Index al) const {
        return (a[al] + b[al] / std::sqrt(3.0)) * (dt / 2.0);
    }
    Complex i_0alpha(Eigen::Index al) const {
        return (a[al] - b[al] / std::sqrt(3.0)) * (dt / 2.0);
    }
    Complex i_double(Eigen::Index al, Eigen::Index alp) const {
        return 0.5 * a[al] * a[alp] + lev(al, alp);
    }
    Complex i_conj_double(Eigen::Index al, Eigen::Index alp) const {
        const double ito = al == alp ? 2.0 * dt : 0.0;
        return 0.5 * (std::conj(a[al]) * a[alp] - ito) + clev(al, alp);
    }
    double i_zero() const { return dt; }
    double i_zerozero() const { return dt * dt / 2.0; }
};

// Per-step draw. Consumes exactly 3 N_L + N_L (N_L - 1) engine Gaussian
// pairs, in the fixed order a[0..N), b[0..N), diag(U)[0..N), then the
// strictly upper triangles of A and of U in row-major pair order.
inline IntegralDraw sample_draw(RngStream& stream, Eigen::Index n_lindblad, double dt) {
    IntegralDraw out;
    out.dt = dt;
    out.a.resize(n_lindblad);
    out.b.resize(n_lindblad);
    out.lev = ComplexMatrix::Zero(n_lindblad, n_lindblad);
    out.clev = ComplexMatrix::Zero(n_lindblad, n_lindblad);
    for (Eigen::Index al = 0; al < n_lindblad; ++al) out.a[al] = stream.complex_normal(dt);
    for (Eigen::Index al = 0; al < n_lindblad; ++al) out.b[al] = stream.complex_normal(dt);
    for (Eigen::Index al = 0; al < n_lindblad; ++al)
        out.clev(al, al) = Complex(0.0, stream.normal_pair().first * dt);
    for (Eigen::Index al = 0; al < n_lindblad; ++al)
        for (Eigen::Index alp = al + 1; alp < n_lindblad; ++alp) {
            const Complex z = stream.complex_normal(dt * dt / 2.0);
            out.lev(al, alp) = z;
            out.lev(alp, al) = -z;
        }
    for (Eigen::Index al = 0; al < n_lindblad; ++al)
        for (Eigen::Index alp = al + 1; alp < n_lindblad; ++alp) {
            const Complex z = stream.complex_normal(dt * dt / 2.0);
            out.clev(al, alp) = z;
            out.clev(alp, al) = -std::conj(z);
        }
    return out;
}

// Deterministic integrals shared by every draw.
struct DeterministicIntegrals {
    double i_zero;
    double i_zerozero;
};

inline DeterministicIntegrals deterministic_integrals(double dt) {
    return {dt, dt * dt / 2.0};
}

// ------------------------------- batched draws -------------------------------

// Column j holds trajectory j's Gaussians; sampling order per column matches
// sample_draw so width-1 batches reproduce the scalar path draw-for-draw.
// The off-diagonal area remainders are stored packed: row pair_index(k, m)
// holds the (k, m) entry for k < m; the opposite triangles follow from
// antisymmetry (lev) and anti-Hermiticity (clev, whose diagonal is i y).
struct BatchDraw {
    ComplexMatrix a, b;       // n_lindblad x batch
    RealMatrix y;             // n_lindblad x batch
    ComplexMatrix lev, clev;  // pair_rows(n_lindblad) x batch
    double dt = 0.0;

    static Eigen::Index pair_rows(Eigen::Index n) { return n * (n - 1) / 2; }
    static Eigen::Index pair_index(Eigen::Index k, Eigen::Index m, Eigen::Index n) {
        return k * n - k * (k + 1) / 2 + (m - k - 1);
    }

    void resize(Eigen::Index n_lindblad, Eigen::Index batch) {
        a.resize(n_lindblad, batch);
        b.resize(n_lindblad, batch);
        y.resize(n_lindblad, batch);
        lev.resize(pair_rows(n_lindblad), batch);
        clev.resize(pair_rows(n_lindblad), batch);
    }

    // Fills column col from one stream; full draw (second-order solvers).
    void sample_column(Eigen::Index col, RngStream& stream) {
        const Eigen::Index n = a.rows();
        for (Eigen::Index al = 0; al < n; ++al) a(al, col) = stream.complex_normal(dt);
        for (Eigen::Index al = 0; al < n; ++al) b(al, col) = stream.complex_normal(dt);
        for (Eigen::Index al = 0; al < n; ++al) y(al, col) = stream.normal_pair().first * dt;
        for (Eigen::Index r = 0; r < lev.rows(); ++r)
            lev(r, col) = stream.complex_normal(dt * dt / 2.0);
        for (Eigen::Index r = 0; r < clev.rows(); ++r)
            clev(r, col) = stream.complex_normal(dt * dt / 2.0);
    }

    // First-order solvers consume only the a-draws.
    void sample_column_first_order(Eigen::Index col, RngStream& stream) {
        const Eigen::Index n = a.rows();
        for (Eigen::Index al = 0; al < n; ++al) a(al, col) = stream.complex_normal(dt);
    }

    void from_single(const IntegralDraw& draw) {
        dt = draw.dt;
        const Eigen::Index n = draw.a.size();
        resize(n, 1);
        a.col(0) = draw.a;
        b.col(0) = draw.b;
        for (Eigen::Index al = 0; al < n; ++al) y(al, 0) = draw.clev(al, al).imag();
        for (Eigen::Index k = 0; k < n; ++k)
            for (Eigen::Index m = k + 1; m < n; ++m) {
                lev(pair_index(k, m, n), 0) = draw.lev(k, m);
                clev(pair_index(k, m, n), 0) = draw.clev(k, m);
            }
    }
};

} // namespace qsd
