#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qsd/system.hpp"
#include "qsd/wiener.hpp"

namespace qsd {

// Weak Ito-Taylor propagators for the diffusive unraveling, implemented over
// column batches so every operator application is a small matrix-matrix
// product. States live in the rotating frame of the bare Hamiltonian; all
// frame rotations are taken from absolute time so phases never accumulate
// roundoff across steps.

enum class SolverKind { Order1, Order2, Linear1, Linear2 };

constexpr int solver_order(SolverKind k) {
    return (k == SolverKind::Order2 || k == SolverKind::Linear2) ? 2 : 1;
}
constexpr bool solver_is_linear(SolverKind k) {
    return k == SolverKind::Linear1 || k == SolverKind::Linear2;
}

inline const char* solver_name(SolverKind k) {
    switch (k) {
        case SolverKind::Order1: return "order1";
        case SolverKind::Order2: return "order2";
        case SolverKind::Linear1: return "linear1";
        case SolverKind::Linear2: return "linear2";
    }
    return "unknown";
}

inline SolverKind parse_solver(const std::string& name) {
    if (name == "order1") return SolverKind::Order1;
    if (name == "order2") return SolverKind::Order2;
    if (name == "linear1") return SolverKind::Linear1;
    if (name == "linear2") return SolverKind::Linear2;
    throw ConfigError("unknown solver '" + name +
                      "' (expected order1, order2, linear1 or linear2)");
}

// Admissible squared-norm windows relative to the initial squared norm. The
// norm-preserving solvers stay near 1 and anything far outside is numerical
// blow-up; the raw solvers decay or grow by design and get a wide window.
inline constexpr double kNormWindowLow = 0.1;
inline constexpr double kNormWindowHigh = 10.0;
inline constexpr double kRawWindowLow = 1e-6;
inline constexpr double kRawWindowHigh = 1e6;

// A batch of rotating-frame states: column j is trajectory j.
struct BatchState {
    double t = 0.0;
    ComplexMatrix phi;  // dim x batch
    RealVector norm0;   // squared norm of each column at initialization
    Eigen::Index batch() const { return phi.cols(); }
};

class StepEngine {
  public:
    StepEngine(const OpenSystem& sys, SolverKind kind)
        : sys_(&sys), kind_(kind), d_(sys.dim()), nl_(sys.n_lindblad()),
          driven_(sys.drive.has_value()) {
        build_stack();
    }

    SolverKind kind() const { return kind_; }
    const OpenSystem& system() const { return *sys_; }

    BatchState make_batch(const ComplexVector& psi0, Eigen::Index batch) const {
        if (psi0.size() != d_) throw DimensionMismatch("make_batch: state dimension mismatch");
        const double n0 = psi0.squaredNorm();
        if (n0 < kZeroNormFloor) throw ZeroNorm("make_batch: null initial state");
        BatchState st;
        st.t = 0.0;
        st.phi = psi0.replicate(1, batch);
        st.norm0 = RealVector::Constant(batch, n0);
        return st;
    }

    // Advances every column by one weak step of width draw.dt, reading all
    // operators at the pre-step frame time. Returns -1 if every column stays
    // inside its admissible norm window, else the smallest offending column.
    Eigen::Index step(BatchState& st, const BatchDraw& draw) {
        if (st.phi.rows() != d_ || draw.a.rows() != nl_ || draw.a.cols() != st.phi.cols())
            throw DimensionMismatch("step: batch shape mismatch");
        ensure_workspace(st.phi.cols());
        rotate_stack(st.t);
        if (rows_ > 0) yphi_.noalias() = rot_ * st.phi;

        if (solver_is_linear(kind_))
            step_linear(st, draw);
        else
            step_nonlinear(st, draw);

        st.phi += delta_;
        st.t += draw.dt;
        return window_violation(st);
    }

    // Schrodinger-picture states: row m scaled by exp(-i E_m t).
    ComplexMatrix schrodinger(const BatchState& st) const {
        const ComplexVector p = phase_vector(sys_->energies(), -st.t);
        return (st.phi.array().colwise() * p.array()).matrix();
    }

  private:
    using RowC = Eigen::RowVectorXcd;
    using RowD = Eigen::RowVectorXd;

    const OpenSystem* sys_;
    SolverKind kind_;
    Eigen::Index d_, nl_;
    bool driven_;

    // Stacked frame-0 operator blocks, rotated in one pass per step. Row
    // layout (absent blocks skipped, each block d_ rows per entry):
    //   L_a (nl) | sum_a G_a (1) | V (1) || C_a = B.*L_a (nl) | B.*sum G (1)
    //   | B.*V (1) | L_a^dag (nl) | C_a^dag (nl)
    // The first segment (through V) is all a second application needs, so
    // products against derived kets reuse the stack prefix.
    Eigen::Index rows_ = 0, off_l_ = -1, off_gs_ = -1, off_v_ = -1, off_c_ = -1,
                 off_bgs_ = -1, off_bv_ = -1, off_ld_ = -1, off_cd_ = -1, prefix2_ = 0;
    ComplexMatrix base_, rot_;
    ComplexVector row_phase_;

    // Workspace (sized on first step for a given batch width)
    Eigen::Index wb_ = -1;
    ComplexMatrix yphi_, in2_, y2_, in3_, y3_;
    std::vector<ComplexMatrix> A_, ka0_, kaf0_, pair_, e0a_;
    ComplexMatrix a0_, f0v_, e0v_, av_, g0_, gf0_, k00_, k0f0_, ke00_, dbl_, dl0_,
        delta_, tmp_;
    ComplexMatrix lmat_, cexp_, ia0_, i0a_;
    RowD nrm_;
    RowC invc_, lsq_, rw1_, rw2_, accw_;

    void build_stack() {
        const int order = solver_order(kind_);
        const bool nonlinear = !solver_is_linear(kind_);
        auto put = [this](Eigen::Index entries) {
            const Eigen::Index off = rows_;
            rows_ += entries * d_;
            return entries > 0 ? off : Eigen::Index{-1};
        };
        off_l_ = put(nl_);
        off_gs_ = put(nl_ > 0 ? 1 : 0);
        off_v_ = put(driven_ ? 1 : 0);
        prefix2_ = rows_;
        if (order == 2) {
            off_c_ = put(nl_);
            off_bgs_ = put(nl_ > 0 ? 1 : 0);
            off_bv_ = put(driven_ ? 1 : 0);
            if (nonlinear) {
                off_ld_ = put(nl_);
                off_cd_ = put(nl_);
            }
        }

        base_.resize(rows_, d_);
        const auto& b = sys_->bohr;
        ComplexMatrix gsum = ComplexMatrix::Zero(d_, d_);
        for (Eigen::Index a = 0; a < nl_; ++a) gsum += sys_->grams[static_cast<std::size_t>(a)];
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& l = sys_->lindblads[static_cast<std::size_t>(a)];
            base_.middleRows(off_l_ + a * d_, d_) = l;
            if (off_c_ >= 0) base_.middleRows(off_c_ + a * d_, d_) = b.cast<Complex>().cwiseProduct(l);
            if (off_ld_ >= 0) base_.middleRows(off_ld_ + a * d_, d_) = l.adjoint();
            if (off_cd_ >= 0)
                base_.middleRows(off_cd_ + a * d_, d_) =
                    ComplexMatrix(b.cast<Complex>().cwiseProduct(l)).adjoint();
        }
        if (off_gs_ >= 0) base_.middleRows(off_gs_, d_) = gsum;
        if (off_bgs_ >= 0) base_.middleRows(off_bgs_, d_) = b.cast<Complex>().cwiseProduct(gsum);
        if (driven_) {
            if (off_v_ >= 0) base_.middleRows(off_v_, d_) = sys_->drive->op;
            if (off_bv_ >= 0)
                base_.middleRows(off_bv_, d_) = b.cast<Complex>().cwiseProduct(sys_->drive->op);
        }
        rot_.resize(rows_, d_);
        row_phase_.resize(rows_);
    }

    // Elementwise frame rotation of the whole stack: every block picks up
    // phase(m) * conj(phase(n)), which turns each frame-0 block into the same
    // operator at frame time t (adjoint blocks included, since conjugation
    // of the phases matches adjoint entrywise).
    void rotate_stack(double t) {
        if (rows_ == 0) return;
        const ComplexVector p = phase_vector(sys_->energies(), t);
        for (Eigen::Index r = 0; r < rows_; r += d_) row_phase_.segment(r, d_) = p;
        rot_.array() = (base_.array().colwise() * row_phase_.array()).rowwise() *
                       p.conjugate().transpose().array();
    }

    void ensure_workspace(Eigen::Index b) {
        if (b == wb_) return;
        wb_ = b;
        const int order = solver_order(kind_);
        const bool nonlinear = !solver_is_linear(kind_);
        yphi_.resize(rows_, b);
        delta_.resize(d_, b);
        tmp_.resize(d_, b);
        a0_.resize(d_, b);
        lmat_.resize(nl_, b);
        A_.assign(static_cast<std::size_t>(nl_), ComplexMatrix(d_, b));
        if (order == 2) {
            // Raw solvers with several channels carry the per-pair repeated
            // operator products in extra second-pass columns.
            const Eigen::Index extra = (!nonlinear && nl_ >= 2) ? nl_ : 0;
            in2_.resize(d_, (2 + extra) * b);
            y2_.resize(prefix2_, (2 + extra) * b);
            in3_.resize(d_, (1 + nl_) * b);
            y3_.resize(nl_ * d_, (1 + nl_) * b);
            av_.resize(d_, b);
            dbl_.resize(d_, b);
            k00_.resize(d_, b);
            dl0_.resize(d_, b);
            ia0_.resize(nl_, b);
            i0a_.resize(nl_, b);
            if (nonlinear) {
                f0v_.resize(d_, b);
                e0v_.resize(d_, b);
                g0_.resize(d_, b);
                gf0_.resize(d_, b);
                k0f0_.resize(d_, b);
                ke00_.resize(d_, b);
                cexp_.resize(nl_, b);
                ka0_.assign(static_cast<std::size_t>(nl_), ComplexMatrix(d_, b));
                kaf0_.assign(static_cast<std::size_t>(nl_), ComplexMatrix(d_, b));
                pair_.assign(static_cast<std::size_t>(nl_ * nl_), ComplexMatrix(d_, b));
                e0a_.assign(static_cast<std::size_t>(nl_), ComplexMatrix(d_, b));
            }
        }
    }

    // Stack views against the state batch.
    auto lphi(Eigen::Index a) const { return yphi_.middleRows(off_l_ + a * d_, d_); }
    auto gsphi() const { return yphi_.middleRows(off_gs_, d_); }
    auto vphi() const { return yphi_.middleRows(off_v_, d_); }
    auto cphi(Eigen::Index a) const { return yphi_.middleRows(off_c_ + a * d_, d_); }
    auto bgsphi() const { return yphi_.middleRows(off_bgs_, d_); }
    auto bvphi() const { return yphi_.middleRows(off_bv_, d_); }
    auto ldphi(Eigen::Index a) const { return yphi_.middleRows(off_ld_ + a * d_, d_); }
    auto cdphi(Eigen::Index a) const { return yphi_.middleRows(off_cd_ + a * d_, d_); }

    static RowC rdot(const ComplexMatrix& x, const ComplexMatrix& y) {
        return (x.conjugate().cwiseProduct(y)).colwise().sum();
    }
    template <typename X>
    RowC rdot_phi(const ComplexMatrix& phi, const X& y) const {
        return (phi.conjugate().cwiseProduct(y)).colwise().sum();
    }

    double theta_at(double t) const { return driven_ ? sys_->drive->envelope(t) : 0.0; }
    double theta_rate_at(double t) const { return driven_ ? sys_->drive->envelope_rate(t) : 0.0; }

    // ----------------------- norm-preserving solvers --------------------------

    void step_nonlinear(BatchState& st, const BatchDraw& draw) {
        const Eigen::Index b = st.phi.cols();
        const double dt = draw.dt;
        const double theta = theta_at(st.t);
        const auto& phi = st.phi;

        nrm_ = phi.colwise().squaredNorm();
        invc_ = nrm_.cwiseMax(kZeroNormFloor).cwiseInverse().cast<Complex>();

        // Fluctuation kets A_a = (L_a - <L_a>) phi and their expectations.
        for (Eigen::Index a = 0; a < nl_; ++a) {
            lmat_.row(a) = rdot_phi(phi, lphi(a)).cwiseProduct(invc_);
            A_[static_cast<std::size_t>(a)] =
                lphi(a) - (phi.array().rowwise() * lmat_.row(a).array()).matrix();
        }
        lsq_ = nl_ > 0 ? RowC(lmat_.cwiseAbs2().colwise().sum().cast<Complex>())
                       : RowC(RowC::Zero(b));

        // Deterministic coefficient ket:
        //   A0 = -i theta V phi + sum_a [2 conj(<L_a>) L_a phi] - (sum G_a) phi
        //        - (sum |<L_a>|^2) phi
        a0_.setZero();
        if (driven_) a0_ -= (kI * theta) * vphi();
        for (Eigen::Index a = 0; a < nl_; ++a)
            a0_.array() += lphi(a).array().rowwise() * (2.0 * lmat_.row(a).conjugate()).array();
        if (nl_ > 0) {
            a0_ -= gsphi();
            a0_.array() -= phi.array().rowwise() * lsq_.array();
        }

        // First-order increment.
        delta_ = dt * a0_;
        for (Eigen::Index a = 0; a < nl_; ++a)
            delta_.array() += A_[static_cast<std::size_t>(a)].array().rowwise() *
                              draw.a.row(a).array();

        if (solver_order(kind_) == 1) return;
        second_order_nonlinear(st, draw, theta);
    }

    void second_order_nonlinear(BatchState& st, const BatchDraw& draw, double theta) {
        const double dt = draw.dt;
        const double h2 = dt * dt / 2.0;
        const double theta_dot = theta_rate_at(st.t);
        const auto& phi = st.phi;
        const double s3 = std::sqrt(3.0);

        ia0_ = (draw.a + draw.b / s3) * (dt / 2.0);
        i0a_ = (draw.a - draw.b / s3) * (dt / 2.0);

        auto addk = [this](const ComplexMatrix& k, const RowC& w) {
            delta_.array() += k.array().rowwise() * w.array();
        };

        // <[H0, L_a]> rows.
        for (Eigen::Index a = 0; a < nl_; ++a)
            cexp_.row(a) = rdot_phi(phi, cphi(a)).cwiseProduct(invc_);

        // Time derivative of the deterministic coefficient, assembled from
        // frame derivatives of every operator entering A0 (expectations
        // frozen at phi):
        //   d/dt lambda_0 = theta B.*V phi - i theta' V phi
        //     + i sum_a [ -2 conj(<C_a>) A_a - (B.*G)phi - <L_a> C_a^dag phi
        //                 + 2 conj(<L_a>) C_a phi - conj(<L_a>)<C_a> phi ]
        // with C_a = [H0, L_a] applied through the Bohr matrix.
        dl0_.setZero();
        if (driven_) dl0_ = theta * bvphi() - (kI * theta_dot) * vphi();
        if (nl_ > 0) dl0_ -= kI * bgsphi();
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            tmp_.array() = Aa.array().rowwise() * (-2.0 * cexp_.row(a).conjugate()).array();
            tmp_.array() -= cdphi(a).array().rowwise() * lmat_.row(a).array();
            tmp_.array() += cphi(a).array().rowwise() * (2.0 * lmat_.row(a).conjugate()).array();
            tmp_.array() -= phi.array().rowwise() *
                            (lmat_.row(a).conjugate().cwiseProduct(cexp_.row(a))).array();
            dl0_ += kI * tmp_;
        }

        // Time-correction block.
        delta_ += h2 * dl0_;
        for (Eigen::Index a = 0; a < nl_; ++a) {
            rw1_ = (kI * i0a_.row(a)).eval();
            delta_.array() += (cphi(a).array().rowwise() * rw1_.array()) -
                              (phi.array().rowwise() *
                               (rw1_.cwiseProduct(cexp_.row(a))).array());
        }

        // Noise-weighted summed kets.
        e0v_.setZero();
        f0v_.setZero();
        av_.setZero();
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            e0v_.array() += Aa.array().rowwise() * i0a_.row(a).array();
            f0v_.array() += Aa.array().rowwise() * ia0_.row(a).array();
            av_.array() += Aa.array().rowwise() * draw.a.row(a).array();
        }

        // Adjoint-coefficient kets backing the derivative-overlap terms.
        g0_.setZero();
        if (driven_) g0_ = (kI * theta) * vphi();
        if (nl_ > 0) {
            g0_ -= gsphi();
            g0_.array() -= phi.array().rowwise() * lsq_.array();
        }
        gf0_.setZero();
        for (Eigen::Index a = 0; a < nl_; ++a) {
            g0_.array() += ldphi(a).array().rowwise() * (2.0 * lmat_.row(a)).array();
            tmp_ = ldphi(a);
            tmp_.array() -= phi.array().rowwise() * lmat_.row(a).conjugate().array();
            gf0_.array() += tmp_.array().rowwise() * ia0_.row(a).conjugate().array();
        }

        // Second application of the stack prefix to the derived kets.
        in2_.leftCols(st.phi.cols()) = a0_;
        in2_.rightCols(st.phi.cols()) = f0v_;
        if (prefix2_ > 0) y2_.noalias() = rot_.topRows(prefix2_) * in2_;
        const Eigen::Index b = st.phi.cols();
        auto la0 = [&](Eigen::Index a) { return y2_.block(off_l_ + a * d_, 0, d_, b); };
        auto lf0 = [&](Eigen::Index a) { return y2_.block(off_l_ + a * d_, b, d_, b); };
        auto gsa0 = [&]() { return y2_.block(off_gs_, 0, d_, b); };
        auto gsf0 = [&]() { return y2_.block(off_gs_, b, d_, b); };
        auto va0 = [&]() { return y2_.block(off_v_, 0, d_, b); };
        auto vf0 = [&]() { return y2_.block(off_v_, b, d_, b); };

        k00_.setZero();
        k0f0_.setZero();
        if (driven_) {
            k00_ = -(kI * theta) * va0();
            k0f0_ = -(kI * theta) * vf0();
        }
        if (nl_ > 0) {
            k00_ -= gsa0();
            k00_.array() -= a0_.array().rowwise() * lsq_.array();
            k0f0_ -= gsf0();
            k0f0_.array() -= f0v_.array().rowwise() * lsq_.array();
        }
        ke00_.setZero();
        for (Eigen::Index a = 0; a < nl_; ++a) {
            k00_.array() += la0(a).array().rowwise() * (2.0 * lmat_.row(a).conjugate()).array();
            k0f0_.array() += lf0(a).array().rowwise() * (2.0 * lmat_.row(a).conjugate()).array();
            ka0_[static_cast<std::size_t>(a)] =
                la0(a) - (a0_.array().rowwise() * lmat_.row(a).array()).matrix();
            kaf0_[static_cast<std::size_t>(a)] =
                lf0(a) - (f0v_.array().rowwise() * lmat_.row(a).array()).matrix();
            ke00_.array() += ka0_[static_cast<std::size_t>(a)].array().rowwise() *
                             i0a_.row(a).array();
        }

        // Fluctuation pairs via one product of the jump block against the
        // noise ket and every A_a.
        if (nl_ > 0) {
            in3_.leftCols(b) = av_;
            for (Eigen::Index a = 0; a < nl_; ++a)
                in3_.middleCols((1 + a) * b, b) = A_[static_cast<std::size_t>(a)];
            y3_.noalias() = rot_.topRows(nl_ * d_) * in3_;
        }
        auto lav = [&](Eigen::Index a) { return y3_.block(a * d_, 0, d_, b); };
        auto lA = [&](Eigen::Index a, Eigen::Index bb) {
            return y3_.block(a * d_, (1 + bb) * b, d_, b);
        };

        // Double-integral ket: half the twice-applied noise ket (the
        // symmetric part of the doubles) plus the antisymmetric area
        // remainders against the ordered fluctuation pairs.
        dbl_.setZero();
        for (Eigen::Index a = 0; a < nl_; ++a) {
            tmp_ = lav(a);
            tmp_.array() -= av_.array().rowwise() * lmat_.row(a).array();
            dbl_.array() += tmp_.array().rowwise() * draw.a.row(a).array();
            for (Eigen::Index bb = 0; bb < nl_; ++bb)
                pair_[static_cast<std::size_t>(a * nl_ + bb)] =
                    lA(a, bb) - (A_[static_cast<std::size_t>(bb)].array().rowwise() *
                                 lmat_.row(a).array())
                                    .matrix();
        }
        dbl_ *= 0.5;
        for (Eigen::Index a = 0; a < nl_; ++a)
            for (Eigen::Index ap = a + 1; ap < nl_; ++ap) {
                tmp_ = pair_[static_cast<std::size_t>(a * nl_ + ap)] -
                       pair_[static_cast<std::size_t>(ap * nl_ + a)];
                dbl_.array() += tmp_.array().rowwise() *
                                draw.lev.row(BatchDraw::pair_index(a, ap, nl_)).array();
            }
        for (Eigen::Index bb = 0; bb < nl_; ++bb) {
            auto& acc = e0a_[static_cast<std::size_t>(bb)];
            acc.setZero();
            for (Eigen::Index a = 0; a < nl_; ++a)
                acc.array() += pair_[static_cast<std::size_t>(a * nl_ + bb)].array().rowwise() *
                               i0a_.row(a).array();
        }

        // Deterministic-leading mixed block.
        delta_ += h2 * k00_;
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            rw1_ = rdot(Aa, a0_).cwiseProduct(invc_);
            addk(Aa, RowC(2.0 * h2 * rw1_));
            addk(phi, RowC(h2 * rw1_.cwiseProduct(lmat_.row(a))));
            rw2_ = rdot_phi(phi, ka0_[static_cast<std::size_t>(a)])
                       .cwiseProduct(invc_)
                       .cwiseProduct(lmat_.row(a).conjugate());
            addk(phi, RowC(-h2 * rw2_));
        }
        delta_ += k0f0_ + ke00_;
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            rw1_ = rdot(Aa, f0v_).cwiseProduct(invc_);
            addk(Aa, RowC(2.0 * rw1_));
            addk(phi, RowC(rw1_.cwiseProduct(lmat_.row(a))));
            rw2_ = rdot_phi(phi, kaf0_[static_cast<std::size_t>(a)])
                       .cwiseProduct(invc_)
                       .cwiseProduct(lmat_.row(a).conjugate());
            addk(phi, RowC(-rw2_));
        }
        addk(phi, RowC(-rdot_phi(phi, ke00_).cwiseProduct(invc_)));
        delta_ += dbl_;
        addk(phi, RowC(-rdot_phi(phi, dbl_).cwiseProduct(invc_)));

        // Noise-leading mixed block (projections against the adjoint kets).
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            rw1_ = rdot(Aa, g0_).cwiseProduct(invc_);
            addk(Aa, RowC(2.0 * h2 * rw1_));
            addk(phi, RowC(h2 * rw1_.cwiseProduct(lmat_.row(a))));
            rw2_ = rdot(a0_, Aa).cwiseProduct(invc_).cwiseProduct(lmat_.row(a).conjugate());
            addk(phi, RowC(-h2 * rw2_));

            rw1_ = rdot(Aa, gf0_).cwiseProduct(invc_);
            addk(Aa, RowC(2.0 * rw1_));
            addk(phi, RowC(rw1_.cwiseProduct(lmat_.row(a))));
            rw2_ = rdot(f0v_, Aa).cwiseProduct(invc_).cwiseProduct(lmat_.row(a).conjugate());
            addk(phi, RowC(-rw2_));
        }
        addk(phi, RowC(-rdot(a0_, e0v_).cwiseProduct(invc_)));

        // Conjugated-double contraction along the state: the symmetric part
        // pairs the noise ket with itself and subtracts the Ito trace; the
        // anti-Hermitian remainder enters through its diagonal phases and the
        // imaginary parts of the ordered pair overlaps.
        accw_ = 0.5 * rdot(av_, av_);
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            rw1_ = rdot(Aa, Aa);
            accw_ -= Complex(dt, 0.0) * rw1_;
            accw_.array() -= kI * rw1_.array() * draw.y.row(a).array().cast<Complex>();
        }
        for (Eigen::Index a = 0; a < nl_; ++a)
            for (Eigen::Index ap = a + 1; ap < nl_; ++ap) {
                rw1_ = rdot(A_[static_cast<std::size_t>(a)], A_[static_cast<std::size_t>(ap)])
                           .cwiseProduct(draw.clev.row(BatchDraw::pair_index(a, ap, nl_)));
                accw_.array() -= (2.0 * kI) * rw1_.imag().cast<Complex>().array();
            }
        addk(phi, RowC(-accw_.cwiseProduct(invc_)));

        // Pure-noise pair block.
        const double dt2 = dt * dt;
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            addk(Aa, RowC(-2.0 * rdot(Aa, e0v_).cwiseProduct(invc_)));
            addk(phi, RowC(-2.0 * rdot(Aa, e0a_[static_cast<std::size_t>(a)])
                                       .cwiseProduct(invc_)));
        }
        for (Eigen::Index a = 0; a < nl_; ++a) {
            const auto& Aa = A_[static_cast<std::size_t>(a)];
            accw_ = RowC::Zero(b);
            for (Eigen::Index ap = 0; ap < nl_; ++ap) {
                const auto& Pap_a = pair_[static_cast<std::size_t>(ap * nl_ + a)];
                const auto& Aap = A_[static_cast<std::size_t>(ap)];
                accw_ += 2.0 * rdot(Pap_a, Aap) +
                         lmat_.row(ap).cwiseProduct(rdot(Pap_a, phi));
                accw_ -= lmat_.row(ap).conjugate().cwiseProduct(rdot(Aap, Aa));
            }
            addk(Aa, RowC(dt2 * accw_.cwiseProduct(invc_)));
        }
        for (Eigen::Index a = 0; a < nl_; ++a)
            for (Eigen::Index ap = 0; ap < nl_; ++ap) {
                rw1_ = rdot(pair_[static_cast<std::size_t>(a * nl_ + ap)], phi)
                           .cwiseProduct(invc_);
                addk(pair_[static_cast<std::size_t>(ap * nl_ + a)], RowC(2.0 * dt2 * rw1_));
            }
        accw_ = RowC::Zero(b);
        for (Eigen::Index a = 0; a < nl_; ++a)
            for (Eigen::Index ap = 0; ap < nl_; ++ap) {
                const auto& Aa = A_[static_cast<std::size_t>(a)];
                const auto& Aap = A_[static_cast<std::size_t>(ap)];
                const auto& Pap_a = pair_[static_cast<std::size_t>(ap * nl_ + a)];
                const auto& Pa_ap = pair_[static_cast<std::size_t>(a * nl_ + ap)];
                rw1_ = rdot(Aa, Aap);
                accw_ += rw1_.cwiseAbs2().cast<Complex>().cwiseProduct(invc_).cwiseProduct(invc_);
                rw1_ = rdot(a0_, Pap_a);
                accw_ += rw1_.cwiseAbs2().cast<Complex>().cwiseProduct(invc_).cwiseProduct(invc_);
                rw1_ = rdot(Pa_ap, Aa).cwiseProduct(lmat_.row(ap));
                accw_ += (2.0 * kI) *
                         rw1_.imag().cast<Complex>().cwiseProduct(invc_);
            }
        addk(phi, RowC(-dt2 * accw_));
    }

    // --------------------------- raw-form solvers ------------------------------

    void step_linear(BatchState& st, const BatchDraw& draw) {
        const double dt = draw.dt;
        const double theta = theta_at(st.t);
        const auto& phi = st.phi;

        // A0 = -i theta V phi - (sum_a G_a) phi; noise kets are plain L_a phi.
        a0_.setZero();
        if (driven_) a0_ -= (kI * theta) * vphi();
        if (nl_ > 0) a0_ -= gsphi();

        delta_ = dt * a0_;
        for (Eigen::Index a = 0; a < nl_; ++a)
            delta_.array() += lphi(a).array().rowwise() * draw.a.row(a).array();

        if (solver_order(kind_) == 2) second_order_linear(st, draw, theta);
    }

    void second_order_linear(BatchState& st, const BatchDraw& draw, double theta) {
        const double dt = draw.dt;
        const double h2 = dt * dt / 2.0;
        const double theta_dot = theta_rate_at(st.t);
        const double s3 = std::sqrt(3.0);
        const Eigen::Index b = st.phi.cols();

        i0a_ = (draw.a - draw.b / s3) * (dt / 2.0);

        // Time correction from the frame derivatives of the raw coefficients.
        dl0_.setZero();
        if (driven_) dl0_ = theta * bvphi() - (kI * theta_dot) * vphi();
        if (nl_ > 0) dl0_ -= kI * bgsphi();
        delta_ += h2 * dl0_;
        for (Eigen::Index a = 0; a < nl_; ++a)
            delta_.array() += cphi(a).array().rowwise() * (kI * i0a_.row(a)).array();

        // Repeated deterministic coefficient and the double-noise ket. The
        // jump operators are state-independent here, so only the plain
        // doubles enter: half the twice-applied noise ket plus commutators
        // of the distinct channels against the area remainders.
        av_.setZero();
        for (Eigen::Index a = 0; a < nl_; ++a)
            av_.array() += lphi(a).array().rowwise() * draw.a.row(a).array();

        const bool pairs = nl_ >= 2;
        in2_.leftCols(b) = a0_;
        in2_.middleCols(b, b) = av_;
        if (pairs)
            for (Eigen::Index a = 0; a < nl_; ++a) in2_.middleCols((2 + a) * b, b) = lphi(a);
        if (prefix2_ > 0) y2_.noalias() = rot_.topRows(prefix2_) * in2_;

        k00_.setZero();
        if (driven_) k00_ = -(kI * theta) * y2_.block(off_v_, 0, d_, b);
        if (nl_ > 0) k00_ -= y2_.block(off_gs_, 0, d_, b);
        delta_ += h2 * k00_;

        dbl_.setZero();
        for (Eigen::Index a = 0; a < nl_; ++a)
            dbl_.array() += y2_.block(off_l_ + a * d_, b, d_, b).array().rowwise() *
                            draw.a.row(a).array();
        dbl_ *= 0.5;
        if (pairs) {
            auto ll = [&](Eigen::Index a, Eigen::Index ap) {
                return y2_.block(off_l_ + a * d_, (2 + ap) * b, d_, b);
            };
            for (Eigen::Index a = 0; a < nl_; ++a)
                for (Eigen::Index ap = a + 1; ap < nl_; ++ap) {
                    tmp_ = ll(a, ap) - ll(ap, a);
                    dbl_.array() += tmp_.array().rowwise() *
                                    draw.lev.row(BatchDraw::pair_index(a, ap, nl_)).array();
                }
        }
        delta_ += dbl_;
    }

    Eigen::Index window_violation(const BatchState& st) const {
        const bool raw = solver_is_linear(kind_);
        const double lo = raw ? kRawWindowLow : kNormWindowLow;
        const double hi = raw ? kRawWindowHigh : kNormWindowHigh;
        const RowD n2 = st.phi.colwise().squaredNorm();
        for (Eigen::Index j = 0; j < n2.size(); ++j) {
            const double ref = st.norm0[j];
            if (!std::isfinite(n2[j]) || n2[j] < lo * ref || n2[j] > hi * ref) return j;
        }
        return -1;
    }
};

// ------------------------- single-trajectory interface ------------------------

struct TrajectoryState {
    double t = 0.0;
    ComplexVector phi;  // rotating frame
    double norm0 = 1.0;
};

inline TrajectoryState make_trajectory_state(const ComplexVector& psi0) {
    TrajectoryState st;
    st.phi = psi0;
    st.norm0 = psi0.squaredNorm();
    if (st.norm0 < kZeroNormFloor) throw ZeroNorm("make_trajectory_state: null state");
    return st;
}

namespace detail {
inline void single_step(const OpenSystem& sys, SolverKind kind, TrajectoryState& st,
                        const IntegralDraw& draw) {
    StepEngine engine(sys, kind);
    BatchState bs;
    bs.t = st.t;
    bs.phi = st.phi;
    bs.norm0 = RealVector::Constant(1, st.norm0);
    BatchDraw bd;
    bd.resize(sys.n_lindblad(), 1);
    bd.from_single(draw);
    const Eigen::Index bad = engine.step(bs, bd);
    st.t = bs.t;
    st.phi = bs.phi.col(0);
    if (bad >= 0) throw Diverged(0, st.t);
}
} // namespace detail

inline void first_order_step(const OpenSystem& sys, TrajectoryState& st,
                             const IntegralDraw& draw) {
    detail::single_step(sys, SolverKind::Order1, st, draw);
}
inline void second_order_step(const OpenSystem& sys, TrajectoryState& st,
                              const IntegralDraw& draw) {
    detail::single_step(sys, SolverKind::Order2, st, draw);
}
inline void linear_step(const OpenSystem& sys, TrajectoryState& st, const IntegralDraw& draw,
                        int order) {
    detail::single_step(sys, order == 2 ? SolverKind::Linear2 : SolverKind::Linear1, st, draw);
}

// Runs one trajectory on the macro/micro time grid, invoking
//   record(macro_index, t, psi_schrodinger, squared_norm)
// at every macro time including t = 0. Throws Diverged if the norm leaves
// the solver's admissible window.
template <typename Recorder>
inline void propagate_trajectory(const OpenSystem& sys, const ComplexVector& psi0,
                                 SolverKind kind, double dt, Eigen::Index n_macro,
                                 Eigen::Index steps_per_macro, RngStream& stream,
                                 Recorder&& record, std::uint64_t trajectory_id = 0) {
    StepEngine engine(sys, kind);
    BatchState st = engine.make_batch(psi0, 1);
    BatchDraw draw;
    draw.resize(sys.n_lindblad(), 1);
    draw.dt = dt;
    const bool full = solver_order(kind) == 2;

    record(Eigen::Index{0}, 0.0, ComplexVector(engine.schrodinger(st).col(0)),
           st.phi.col(0).squaredNorm());
    for (Eigen::Index k = 1; k <= n_macro; ++k) {
        for (Eigen::Index s = 0; s < steps_per_macro; ++s) {
            if (full)
                draw.sample_column(0, stream);
            else
                draw.sample_column_first_order(0, stream);
            if (engine.step(st, draw) >= 0) throw Diverged(trajectory_id, st.t);
        }
        st.t = static_cast<double>(k * steps_per_macro) * dt;
        record(k, st.t, ComplexVector(engine.schrodinger(st).col(0)),
               st.phi.col(0).squaredNorm());
    }
}

} // namespace qsd
