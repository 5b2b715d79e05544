#include "parobs/solve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "parobs/errors.hpp"

namespace parobs {

double penalty_phi(double a, double eps) {
    if (a <= 0.0) return 0.0;
    if (a >= eps) return 1.0;
    const double s = a / eps;
    return s * s * (3.0 - 2.0 * s);
}

double penalty_phi_prime(double a, double eps) {
    if (a <= 0.0 || a >= eps) return 0.0;
    const double s = a / eps;
    return 6.0 * s * (1.0 - s) / eps;
}

PenaltySchedule PenaltySchedule::geometric(double eps1, double factor, std::size_t steps) {
    if (!(eps1 > 0.0) || !std::isfinite(eps1)) throw ValidationError("penalty eps1 must be positive");
    if (!(factor > 0.0 && factor < 1.0)) throw ValidationError("penalty factor must lie in (0, 1)");
    if (steps == 0) throw ValidationError("penalty schedule needs at least one step");
    PenaltySchedule s;
    double eps = eps1;
    for (std::size_t i = 0; i < steps; ++i) {
        s.epsilons.push_back(eps);
        eps *= factor;
    }
    s.validate();
    return s;
}

PenaltySchedule PenaltySchedule::for_tolerance(double g_sup, double tol) {
    if (!(tol > 0.0)) throw ValidationError("tolerance must be positive");
    const double eps1 = 0.1 * std::max(1.0, g_sup);
    const double target = 0.1 * tol;
    const auto steps = static_cast<std::size_t>(std::ceil(std::log2(std::max(1.0, eps1 / target)))) + 1;
    return geometric(eps1, 0.5, steps);
}

void PenaltySchedule::validate() const {
    if (epsilons.empty()) throw ValidationError("penalty schedule is empty");
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
        if (!(epsilons[i] > 0.0) || !std::isfinite(epsilons[i])) {
            throw ValidationError("penalty epsilons must be positive and finite");
        }
        if (i > 0 && !(epsilons[i] < epsilons[i - 1])) {
            throw ValidationError("penalty epsilons must be strictly decreasing");
        }
    }
}

const char* to_string(Route route) {
    switch (route) {
        case Route::direct: return "direct";
        case Route::penalized: return "penalized";
        case Route::incremental: return "incremental";
        case Route::brute: return "brute";
    }
    return "?";
}

Route parse_route(const std::string& name) {
    if (name == "direct") return Route::direct;
    if (name == "penalized") return Route::penalized;
    if (name == "incremental") return Route::incremental;
    if (name == "brute") return Route::brute;
    throw ValidationError("unknown route '" + name + "'");
}

void require_boundary_compatible(const GridFunction& g, const GridFunction& b, double tol) {
    require_same_grid(g, b, "boundary compatibility");
    const auto& grid = g.grid();
    for (std::size_t k = 0; k < grid.time_levels(); ++k) {
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            const Node node{k, a};
            if (grid.classify(node) == NodeClass::interior) continue;
            if (g.at(node) > b.at(node) + tol) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "obstacle exceeds boundary data at t=" << grid.time(k) << " x=(";
                const auto x = grid.coords(a);
                for (std::size_t i = 0; i < x.size(); ++i) msg << (i ? ", " : "") << x[i];
                msg << "): g=" << g.at(node) << " > b=" << b.at(node);
                throw ValidationError(msg.str());
            }
        }
    }
}

void finalize_report(SolveReport& report, const DiscreteOperator& dop, const GridFunction& u, const GridFunction& g,
                     const GridFunction& b, const SolveOptions& options) {
    const auto res = residual(dop, u, g, b);
    report.residual_max = 0.0;
    for (double v : res.values()) report.residual_max = std::max(report.residual_max, std::abs(v));
    report.min_u_minus_g = std::numeric_limits<double>::infinity();
    report.u_sup = 0.0;
    report.contact.assign(u.size(), 0);
    report.contact_count = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double gap = u[i] - g[i];
        report.min_u_minus_g = std::min(report.min_u_minus_g, gap);
        report.u_sup = std::max(report.u_sup, std::abs(u[i]));
        if (gap <= options.contact_tol) {
            report.contact[i] = 1;
            ++report.contact_count;
        }
    }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Data of one implicit level: max{ D_t u + L^alpha u - pen(u), S - u } = 0 at every
/// interior row, where pen(v) = h+ (Phi_eps(v - gamma) - 1).
struct LevelProblem {
    const DiscreteOperator* dop = nullptr;
    std::size_t level = 0;
    std::span<const double> u_next;
    std::span<double> u;
    std::span<const double> hplus;  // empty: no penalty
    std::span<const double> gamma;
    double eps = 1.0;
    std::span<const double> stop;  // empty: no stop branch

    bool penalized() const { return !hplus.empty(); }
    bool stoppable() const { return !stop.empty(); }

    double pen(std::size_t a, double v) const {
        if (!penalized() || hplus[a] == 0.0) return 0.0;
        return hplus[a] * (penalty_phi(v - gamma[a], eps) - 1.0);
    }
    double pen_prime(std::size_t a, double v) const {
        if (!penalized() || hplus[a] == 0.0) return 0.0;
        return hplus[a] * penalty_phi_prime(v - gamma[a], eps);
    }
};

struct RowEval {
    double control_value;
    std::size_t control;
    double stop_value;
    double value() const { return std::max(control_value, stop_value); }
};

class LevelSolver {
public:
    LevelSolver(const LevelProblem& p, const SolveOptions& options)
        : p_(p), opt_(options), n_(p.dop->interior().size()), inv_dt_(1.0 / p.dop->grid().dt()),
          control_(n_, 0), stopped_(n_, 0) {}

    /// Returns iterations used. Throws ConvergenceError when both Newton and the
    /// Gauss-Seidel fallback fail.
    std::size_t solve(bool& used_fallback) {
        used_fallback = false;
        if (n_ == 0) return 0;
        init_policy();
        if (!p_.penalized()) return howard();
        std::size_t iters = 0;
        if (newton(iters)) return iters;
        used_fallback = true;
        return iters + gauss_seidel();
    }

private:
    double control_branch(std::size_t r, std::size_t c) const {
        const std::size_t a = p_.dop->interior()[r];
        return (p_.u_next[a] - p_.u[a]) * inv_dt_ + p_.dop->apply(p_.level, c, r, p_.u) - p_.pen(a, p_.u[a]);
    }

    RowEval eval_row(std::size_t r) const {
        const std::size_t a = p_.dop->interior()[r];
        RowEval e{-std::numeric_limits<double>::infinity(), 0, -std::numeric_limits<double>::infinity()};
        for (std::size_t c = 0; c < p_.dop->control_count(); ++c) {
            const double v = control_branch(r, c);
            if (v > e.control_value) {
                e.control_value = v;
                e.control = c;
            }
        }
        if (p_.stoppable()) e.stop_value = p_.stop[a] - p_.u[a];
        return e;
    }

    double row_threshold(std::size_t r) const {
        const std::size_t a = p_.dop->interior()[r];
        const double diag = std::abs(p_.dop->row(p_.level, control_[r], r).diag);
        return 1e-13 * (inv_dt_ + 2.0 * diag) * (1.0 + std::abs(p_.u[a]));
    }

    void init_policy() {
        for (std::size_t r = 0; r < n_; ++r) {
            const auto e = eval_row(r);
            control_[r] = e.control;
            stopped_[r] = e.stop_value > e.control_value;
        }
    }

    /// Improves the policy where another branch is strictly better; returns whether
    /// anything changed and the residual max norm at the current iterate.
    bool update_policy(double& resid) {
        bool changed = false;
        resid = 0.0;
        for (std::size_t r = 0; r < n_; ++r) {
            const auto e = eval_row(r);
            resid = std::max(resid, std::abs(e.value()));
            const double thr = row_threshold(r);
            const double current = control_branch(r, control_[r]);
            if (e.control != control_[r] && e.control_value > current + thr) {
                control_[r] = e.control;
                changed = true;
            }
            const double ctrl = control_branch(r, control_[r]);
            if (stopped_[r]) {
                if (ctrl > e.stop_value + thr) {
                    stopped_[r] = 0;
                    changed = true;
                }
            } else if (e.stop_value > ctrl + thr) {
                stopped_[r] = 1;
                changed = true;
            }
        }
        return changed;
    }

    /// Newton direction for the current policy: J delta = -E_policy.
    Eigen::VectorXd newton_step() {
        const auto& dop = *p_.dop;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(n_ * 5);
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(n_));
        for (std::size_t r = 0; r < n_; ++r) {
            const auto ri = static_cast<int>(r);
            const std::size_t a = dop.interior()[r];
            if (stopped_[r]) {
                trip.emplace_back(ri, ri, -1.0);
                rhs[ri] = -(p_.stop[a] - p_.u[a]);
                continue;
            }
            const auto row = dop.row(p_.level, control_[r], r);
            trip.emplace_back(ri, ri, -inv_dt_ + row.diag - p_.pen_prime(a, p_.u[a]));
            for (std::size_t e = 0; e < row.cols.size(); ++e) {
                if (const auto col = dop.row_index(row.cols[e])) {
                    trip.emplace_back(ri, static_cast<int>(*col), row.coefs[e]);
                }
            }
            rhs[ri] = -control_branch(r, control_[r]);
        }
        Eigen::SparseMatrix<double> J(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
        J.setFromTriplets(trip.begin(), trip.end());
        J.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(J);
        if (lu.info() != Eigen::Success) throw ConvergenceError("level Jacobian is singular");
        Eigen::VectorXd delta = lu.solve(rhs);
        if (lu.info() != Eigen::Success || !delta.allFinite()) throw ConvergenceError("level linear solve failed");
        return delta;
    }

    void add_step(const Eigen::VectorXd& delta, double scale) {
        for (std::size_t r = 0; r < n_; ++r) p_.u[p_.dop->interior()[r]] += scale * delta[static_cast<Eigen::Index>(r)];
    }

    double residual_norm() const {
        double resid = 0.0;
        for (std::size_t r = 0; r < n_; ++r) resid = std::max(resid, std::abs(eval_row(r).value()));
        return resid;
    }

    double u_scale() const {
        double s = 0.0;
        for (std::size_t r = 0; r < n_; ++r) s = std::max(s, std::abs(p_.u[p_.dop->interior()[r]]));
        return 1.0 + s;
    }

    std::size_t howard() {
        const std::size_t cap = n_ + 10;
        for (std::size_t it = 1; it <= cap; ++it) {
            add_step(newton_step(), 1.0);
            double resid = 0.0;
            if (!update_policy(resid)) return it;
        }
        std::ostringstream msg;
        msg << "policy iteration did not settle within " << cap << " iterations at level " << p_.level;
        throw ConvergenceError(msg.str());
    }

    bool newton(std::size_t& iters) {
        const double inner_tol = 1e-3 * opt_.tol;
        std::vector<double> saved(n_);
        for (iters = 0; iters < opt_.max_newton_iterations; ++iters) {
            double resid = 0.0;
            update_policy(resid);
            if (resid <= inner_tol) return true;
            const Eigen::VectorXd delta = newton_step();
            const double step = delta.cwiseAbs().maxCoeff();
            for (std::size_t r = 0; r < n_; ++r) saved[r] = p_.u[p_.dop->interior()[r]];
            double lambda = 1.0;
            bool accepted = false;
            for (int halvings = 0; halvings < 40; ++halvings) {
                add_step(delta, lambda);
                if (residual_norm() < resid) {
                    accepted = true;
                    break;
                }
                for (std::size_t r = 0; r < n_; ++r) p_.u[p_.dop->interior()[r]] = saved[r];
                lambda *= 0.5;
            }
            if (!accepted) {
                // No decrease at all: either stalled at roundoff or genuinely stuck.
                return step <= 1e-10 * u_scale();
            }
            if (lambda * step <= 1e-13 * u_scale()) {
                ++iters;
                return true;
            }
        }
        return false;
    }

    /// Root of the decreasing scalar map v -> E_r(v) with all other nodes frozen.
    double scalar_root(std::size_t r) {
        const std::size_t a = p_.dop->interior()[r];
        const double u0 = p_.u[a];
        auto e_at = [&](double v) {
            p_.u[a] = v;
            return eval_row(r).value();
        };
        double lo = u0, hi = u0;
        double step = 1e-6 * (1.0 + std::abs(u0));
        const double e0 = e_at(u0);
        if (e0 == 0.0) return u0;
        if (e0 > 0.0) {
            do {
                lo = hi;
                hi += step;
                step *= 2.0;
            } while (e_at(hi) > 0.0 && std::isfinite(hi));
        } else {
            do {
                hi = lo;
                lo -= step;
                step *= 2.0;
            } while (e_at(lo) < 0.0 && std::isfinite(lo));
        }
        for (int i = 0; i < 200 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(hi));
             ++i) {
            const double mid = 0.5 * (lo + hi);
            if (e_at(mid) > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        p_.u[a] = u0;
        return 0.5 * (lo + hi);
    }

    std::size_t gauss_seidel() {
        const double stop_change = 1e-3 * opt_.tol;
        for (std::size_t sweep = 1; sweep <= opt_.max_sweeps; ++sweep) {
            double change = 0.0;
            for (std::size_t r = 0; r < n_; ++r) {
                const std::size_t a = p_.dop->interior()[r];
                const double v = scalar_root(r);
                change = std::max(change, std::abs(v - p_.u[a]));
                p_.u[a] = v;
            }
            if (change < stop_change) return sweep;
        }
        std::ostringstream msg;
        msg << "nonlinear Gauss-Seidel did not converge within " << opt_.max_sweeps << " sweeps at level "
            << p_.level;
        throw ConvergenceError(msg.str());
    }

    LevelProblem p_;
    const SolveOptions& opt_;
    std::size_t n_;
    double inv_dt_;
    std::vector<std::size_t> control_;
    std::vector<std::uint8_t> stopped_;
};

void check_inputs(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                  const SolveOptions& options) {
    if (g.grid().id() != dop.grid().id()) throw ValidationError("shape mismatch: g is not on the operator's grid");
    require_same_grid(g, b, "solver inputs");
    if (!(options.tol > 0.0)) throw ValidationError("solver tolerance must be positive");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i]) || !std::isfinite(b[i])) throw ValidationError("non-finite obstacle or boundary data");
    }
    const auto mono = check_monotone(dop);
    if (!mono.passed) {
        throw ValidationError(mono.bad_rows > 0 ? "discrete operator is not monotone"
                                                : "time step too large for the zeroth-order term (c*dt >= 1)");
    }
    require_boundary_compatible(g, b);
}

/// u = b at every node; interior values of level k are overwritten before solving.
GridFunction boundary_initial(const GridFunction& b) { return b; }

struct MarchStats {
    std::size_t inner = 0;
    std::size_t fallback = 0;
};

/// One backward march. `warm` keeps the interior values already in u as initial
/// guesses; otherwise each level starts from the level above.
MarchStats march(const DiscreteOperator& dop, GridFunction& u, const GridFunction* hplus, const GridFunction* gamma,
                 double eps, const GridFunction* stop, bool warm, const SolveOptions& options) {
    const auto& grid = dop.grid();
    MarchStats stats;
    for (std::size_t k = grid.time_levels() - 1; k-- > 0;) {
        auto uk = u.level(k);
        if (!warm) {
            const auto up = u.level(k + 1);
            for (const std::size_t a : dop.interior()) uk[a] = up[a];
        }
        LevelProblem p;
        p.dop = &dop;
        p.level = k;
        p.u_next = u.level(k + 1);
        p.u = uk;
        if (hplus) {
            p.hplus = hplus->level(k);
            p.gamma = gamma->level(k);
            p.eps = eps;
        }
        if (stop) p.stop = stop->level(k);
        LevelSolver solver(p, options);
        bool fell_back = false;
        stats.inner += solver.solve(fell_back);
        if (fell_back) ++stats.fallback;
    }
    return stats;
}

GridFunction positive_part(const GridFunction& h) {
    GridFunction out(h.grid_ptr());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = std::max(h[i], 0.0);
    return out;
}

/// Runs the schedule for one penalized piece with an optional stop obstacle; u holds
/// the warm start on entry and the last iterate on exit.
void run_schedule(const DiscreteOperator& dop, GridFunction& u, const GridFunction& piece, const GridFunction& hplus,
                  const GridFunction* stop, const PenaltySchedule& schedule, bool warm, const SolveOptions& options,
                  SolveReport& report, std::vector<GridFunction>* sequence) {
    report.epsilons = schedule.epsilons;
    report.gap_consecutive.clear();
    report.gap_to_reference.clear();
    GridFunction previous;
    for (std::size_t n = 0; n < schedule.epsilons.size(); ++n) {
        const auto stats = march(dop, u, &hplus, &piece, schedule.epsilons[n], stop, warm || n > 0, options);
        report.inner_iterations += stats.inner;
        report.fallback_levels += stats.fallback;
        ++report.outer_iterations;
        report.gap_consecutive.push_back(n == 0 ? 0.0 : sup_distance(u, previous));
        if (options.reference) report.gap_to_reference.push_back(sup_distance(u, *options.reference));
        if (sequence) sequence->push_back(u);
        previous = u;
    }
}

}  // namespace

SolveResult solve_direct(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                         const SolveOptions& options) {
    const auto start = Clock::now();
    check_inputs(dop, g, b, options);
    SolveResult out{boundary_initial(b), {}};
    out.report.route = Route::direct;
    const auto stats = march(dop, out.u, nullptr, nullptr, 1.0, &g, false, options);
    out.report.outer_iterations = dop.grid().time_levels() - 1;
    out.report.inner_iterations = stats.inner;
    finalize_report(out.report, dop, out.u, g, b, options);
    out.report.wall_seconds = seconds_since(start);
    return out;
}

PenalizedResult solve_penalized(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                                const PenaltySchedule& schedule, const SolveOptions& options,
                                const GridFunction* h_override) {
    const auto start = Clock::now();
    check_inputs(dop, g, b, options);
    schedule.validate();
    if (h_override) require_same_grid(g, *h_override, "penalty compatibility field");
    const GridFunction hplus = positive_part(h_override ? *h_override : discrete_compatibility(dop, g));

    PenalizedResult out{{}, boundary_initial(b), {}};
    out.report.route = Route::penalized;
    run_schedule(dop, out.u, g, hplus, nullptr, schedule, false, options, out.report,
                 options.keep_sequence ? &out.sequence : nullptr);
    for (const auto& it : out.sequence) out.report.gap_to_final.push_back(sup_distance(it, out.u));
    finalize_report(out.report, dop, out.u, g, b, options);
    out.report.wall_seconds = seconds_since(start);
    return out;
}

SolveResult solve_incremental(const DiscreteOperator& dop, std::span<const GridFunction> pieces, const GridFunction& b,
                              const PenaltySchedule& schedule, const SolveOptions& options) {
    const auto start = Clock::now();
    if (pieces.empty()) throw ValidationError("incremental solve needs at least one obstacle piece");
    GridFunction g = pieces[0];
    for (std::size_t i = 1; i < pieces.size(); ++i) {
        require_same_grid(g, pieces[i], "obstacle pieces");
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = std::max(g[j], pieces[i][j]);
    }
    check_inputs(dop, g, b, options);
    schedule.validate();

    SolveResult out{boundary_initial(b), {}};
    out.report.route = Route::incremental;
    out.report.stages = pieces.size();
    std::vector<GridFunction> sequence;
    GridFunction stop = pieces[0];
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const GridFunction hplus = positive_part(discrete_compatibility(dop, pieces[i]));
        const bool last = i + 1 == pieces.size();
        sequence.clear();
        SolveReport stage;
        run_schedule(dop, out.u, pieces[i], hplus, i == 0 ? nullptr : &stop, schedule, i > 0, options, stage,
                     last && options.keep_sequence ? &sequence : nullptr);
        out.report.outer_iterations += stage.outer_iterations;
        out.report.inner_iterations += stage.inner_iterations;
        out.report.fallback_levels += stage.fallback_levels;
        if (last) {
            out.report.epsilons = stage.epsilons;
            out.report.gap_consecutive = stage.gap_consecutive;
            out.report.gap_to_reference = stage.gap_to_reference;
            for (const auto& it : sequence) out.report.gap_to_final.push_back(sup_distance(it, out.u));
        } else if (i > 0) {
            for (std::size_t j = 0; j < stop.size(); ++j) stop[j] = std::max(stop[j], pieces[i][j]);
        }
    }
    finalize_report(out.report, dop, out.u, g, b, options);
    out.report.wall_seconds = seconds_since(start);
    return out;
}

SolveResult solve_incremental(const DiscreteOperator& dop, const ObstacleFamily& family, const GridFunction& b,
                              const PenaltySchedule& schedule, const SolveOptions& options) {
    const auto pieces = sample_pieces(family, dop.grid_ptr());
    return solve_incremental(dop, std::span<const GridFunction>(pieces), b, schedule, options);
}

GridFunction brute_oracle(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b, double tol,
                          std::size_t max_sweeps) {
    const auto& grid = dop.grid();
    if (grid.unknown_count() > brute_oracle_node_limit) {
        throw ValidationError("brute_oracle is limited to " + std::to_string(brute_oracle_node_limit) +
                              " nodes, got " + std::to_string(grid.unknown_count()));
    }
    if (g.grid().id() != grid.id()) throw ValidationError("shape mismatch: g is not on the operator's grid");
    require_same_grid(g, b, "brute_oracle");
    if (!(tol > 0.0)) throw ValidationError("brute_oracle tolerance must be positive");

    GridFunction u = b;
    const double inv_dt = 1.0 / grid.dt();
    const double stop_change = tol * 1e-3;
    for (std::size_t k = grid.time_levels() - 1; k-- > 0;) {
        auto uk = u.level(k);
        const auto up = u.level(k + 1);
        const auto gk = g.level(k);
        for (const std::size_t a : dop.interior()) uk[a] = up[a];
        std::size_t sweep = 0;
        while (true) {
            if (++sweep > max_sweeps) throw ConvergenceError("brute_oracle exceeded its sweep cap");
            double change = 0.0;
            for (std::size_t r = 0; r < dop.interior().size(); ++r) {
                const std::size_t a = dop.interior()[r];
                double best = gk[a];
                for (std::size_t c = 0; c < dop.control_count(); ++c) {
                    const auto row = dop.row(k, c, r);
                    double acc = up[a] * inv_dt + row.source;
                    for (std::size_t e = 0; e < row.cols.size(); ++e) acc += row.coefs[e] * uk[row.cols[e]];
                    best = std::max(best, acc / (inv_dt - row.diag));
                }
                change = std::max(change, std::abs(best - uk[a]));
                uk[a] = best;
            }
            if (change < stop_change) break;
        }
    }
    return u;
}

}  // namespace parobs
