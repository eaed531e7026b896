#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "qsd/models.hpp"
#include "qsd/propagator.hpp"
#include "qsd/stats.hpp"

namespace qsd {

// Monte-Carlo fan-out over trajectories. Trajectories are processed in fixed
// blocks; each trajectory owns the RNG stream named by its global index and
// each block accumulates its own moment grid. Blocks are merged in block
// order afterwards, so the result is bit-identical for any worker count.

inline constexpr Eigen::Index kEnsembleBlock = 64;

struct EnsembleOptions {
    double dt = 0.25;
    Eigen::Index steps_per_macro = 1;
    Eigen::Index n_macro = 1;
    std::int64_t n_samples = 1024;
    std::uint64_t seed = 1;
    int threads = 0;  // 0: hardware concurrency
};

namespace detail {

struct DivergenceRecord {
    std::uint64_t trajectory;
    double time;
};

// Runs trajectories [first, first+count) and fills one grid block.
inline std::optional<DivergenceRecord> run_block(const OpenSystem& sys,
                                                 const ComplexVector& psi0, SolverKind kind,
                                                 const std::vector<Observable>& obs,
                                                 const EnsembleOptions& opt, StepEngine& engine,
                                                 std::int64_t first, Eigen::Index count,
                                                 MomentGrid& grid) {
    BatchState st = engine.make_batch(psi0, count);
    std::vector<RngStream> streams;
    streams.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index j = 0; j < count; ++j)
        streams.emplace_back(opt.seed, static_cast<std::uint64_t>(first + j));

    BatchDraw draw;
    draw.resize(sys.n_lindblad(), count);
    draw.dt = opt.dt;
    const bool full = solver_order(kind) == 2;
    const bool raw = solver_is_linear(kind);

    ComplexMatrix psi, opsi;
    const auto record = [&](std::size_t k) {
        psi = engine.schrodinger(st);
        const Eigen::RowVectorXd n2 = psi.colwise().squaredNorm();
        for (std::size_t o = 0; o < obs.size(); ++o) {
            opsi.noalias() = obs[o].op * psi;
            for (Eigen::Index j = 0; j < count; ++j) {
                double val = psi.col(j).dot(opsi.col(j)).real();
                if (!raw) val /= n2[j];  // raw solvers record plain quadratic forms
                grid.add(k, o, val);
            }
        }
    };

    record(0);
    for (Eigen::Index k = 1; k <= opt.n_macro; ++k) {
        for (Eigen::Index s = 0; s < opt.steps_per_macro; ++s) {
            for (Eigen::Index j = 0; j < count; ++j) {
                if (full)
                    draw.sample_column(j, streams[static_cast<std::size_t>(j)]);
                else
                    draw.sample_column_first_order(j, streams[static_cast<std::size_t>(j)]);
            }
            const Eigen::Index bad = engine.step(st, draw);
            if (bad >= 0)
                return DivergenceRecord{static_cast<std::uint64_t>(first + bad), st.t};
        }
        st.t = static_cast<double>(k * opt.steps_per_macro) * opt.dt;
        record(static_cast<std::size_t>(k));
    }
    return std::nullopt;
}

} // namespace detail

// Runs the full ensemble and reduces to per-time, per-observable moments.
// Throws Diverged naming the lowest-indexed offending trajectory.
inline EnsembleSeries run_ensemble(const OpenSystem& sys, const ComplexVector& psi0,
                                   SolverKind kind, const std::vector<Observable>& obs,
                                   const EnsembleOptions& opt) {
    if (opt.n_samples < 2) throw ConfigError("run_ensemble: need at least two samples");
    if (opt.dt <= 0.0) throw ConfigError("run_ensemble: dt must be positive");

    const std::int64_t n_blocks =
        (opt.n_samples + kEnsembleBlock - 1) / static_cast<std::int64_t>(kEnsembleBlock);
    const std::size_t nt = static_cast<std::size_t>(opt.n_macro) + 1;
    std::vector<MomentGrid> partial(static_cast<std::size_t>(n_blocks));

    int workers = opt.threads > 0 ? opt.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    if (static_cast<std::int64_t>(workers) > n_blocks) workers = static_cast<int>(n_blocks);

    std::atomic<std::int64_t> next{0};
    std::mutex div_mutex;
    std::optional<detail::DivergenceRecord> diverged;

    const auto worker = [&]() {
        StepEngine engine(sys, kind);
        while (true) {
            const std::int64_t bi = next.fetch_add(1);
            if (bi >= n_blocks) return;
            {
                std::lock_guard<std::mutex> lock(div_mutex);
                if (diverged) return;  // stop scheduling new blocks after a failure
            }
            const std::int64_t first = bi * kEnsembleBlock;
            const Eigen::Index count = static_cast<Eigen::Index>(
                std::min<std::int64_t>(kEnsembleBlock, opt.n_samples - first));
            MomentGrid grid(nt, obs.size());
            const auto bad = detail::run_block(sys, psi0, kind, obs, opt, engine, first,
                                               count, grid);
            if (bad) {
                std::lock_guard<std::mutex> lock(div_mutex);
                if (!diverged || bad->trajectory < diverged->trajectory) diverged = bad;
                return;
            }
            partial[static_cast<std::size_t>(bi)] = std::move(grid);
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    if (diverged) throw Diverged(diverged->trajectory, diverged->time);

    MomentGrid total(nt, obs.size());
    for (const auto& g : partial) total.merge(g);

    std::vector<double> times(nt);
    const double tau = opt.dt * static_cast<double>(opt.steps_per_macro);
    for (std::size_t k = 0; k < nt; ++k) times[k] = tau * static_cast<double>(k);
    std::vector<std::string> names;
    names.reserve(obs.size());
    for (const auto& o : obs) names.push_back(o.name);
    return series_from_grid(std::move(times), std::move(names), total);
}

} // namespace qsd
