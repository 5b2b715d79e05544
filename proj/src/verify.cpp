#include "parobs/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "parobs/errors.hpp"
#include "parobs/parallel.hpp"

namespace parobs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Neighbour lookups restricted to a node set. Axis 0 is time, axis i >= 1 is x_{i}.
class SubsetStencil {
public:
    SubsetStencil(const SpaceTimeGrid& grid, std::span<const Node> nodes)
        : grid_(grid), member_(grid.unknown_count(), 0), off_(grid.dim(), 0) {
        for (const auto& n : nodes) member_[grid.flat(n)] = 1;
    }

    std::size_t axes() const { return grid_.dim() + 1; }
    double spacing(std::size_t axis) const { return axis == 0 ? grid_.dt() : grid_.spacing()[axis - 1]; }

    std::optional<std::size_t> step(std::size_t flat, std::size_t axis, long s) const {
        const std::size_t level = flat / grid_.active_count();
        const std::size_t active = flat % grid_.active_count();
        std::optional<std::size_t> out;
        if (axis == 0) {
            const long k = static_cast<long>(level) + s;
            if (k < 0 || k >= static_cast<long>(grid_.time_levels())) return std::nullopt;
            out = static_cast<std::size_t>(k) * grid_.active_count() + active;
        } else {
            std::fill(off_.begin(), off_.end(), 0);
            off_[axis - 1] = s;
            const auto nb = grid_.neighbor(active, off_);
            if (!nb) return std::nullopt;
            out = level * grid_.active_count() + *nb;
        }
        if (!member_[*out]) return std::nullopt;
        return out;
    }

    /// First difference of `f` (indexed by flat node) along `axis`.
    double first(std::span<const double> f, std::size_t flat, std::size_t axis) const {
        const auto up = step(flat, axis, 1);
        const auto down = step(flat, axis, -1);
        const double h = spacing(axis);
        if (up && down) return (f[*up] - f[*down]) / (2.0 * h);
        if (up) return (f[*up] - f[flat]) / h;
        if (down) return (f[flat] - f[*down]) / h;
        return 0.0;
    }

    /// Three-point second difference, shifted inward at edges of the set.
    double second(std::span<const double> f, std::size_t flat, std::size_t axis) const {
        const double h2 = spacing(axis) * spacing(axis);
        const auto up = step(flat, axis, 1);
        const auto down = step(flat, axis, -1);
        if (up && down) return (f[*up] - 2.0 * f[flat] + f[*down]) / h2;
        if (up) {
            if (const auto up2 = step(*up, axis, 1)) return (f[flat] - 2.0 * f[*up] + f[*up2]) / h2;
        }
        if (down) {
            if (const auto down2 = step(*down, axis, -1)) return (f[flat] - 2.0 * f[*down] + f[*down2]) / h2;
        }
        return 0.0;
    }

private:
    const SpaceTimeGrid& grid_;
    std::vector<std::uint8_t> member_;
    mutable std::vector<long> off_;
};

void require_norm_args(const SpaceTimeGrid& grid, double p, std::span<const Node> subdomain, bool sobolev) {
    if (subdomain.empty()) throw ValidationError("norm over an empty subdomain");
    const double lo = sobolev ? static_cast<double>(grid.dim()) + 2.0 : 0.0;
    if (!(p > lo)) {
        throw ValidationError(sobolev ? "Sobolev exponent p must exceed d + 2" : "exponent p must be positive");
    }
}

double cell_measure(const SpaceTimeGrid& grid) {
    double w = grid.dt();
    for (double h : grid.spacing()) w *= h;
    return w;
}

struct NormAccumulator {
    double p;
    double acc = 0.0;
    void add(double v) {
        if (std::isinf(p)) {
            acc = std::max(acc, std::abs(v));
        } else {
            acc += std::pow(std::abs(v), p);
        }
    }
    double finish(double weight) const { return std::isinf(p) ? acc : std::pow(acc * weight, 1.0 / p); }
};

}  // namespace

double discrete_sobolev_norm(const GridFunction& u, double p, std::span<const Node> subdomain) {
    const auto& grid = u.grid();
    require_norm_args(grid, p, subdomain, true);
    const SubsetStencil st(grid, subdomain);
    const std::size_t d = grid.dim();
    const auto values = u.values();

    std::vector<std::vector<double>> grad(d, std::vector<double>(u.size(), 0.0));
    for (const auto& n : subdomain) {
        const std::size_t f = grid.flat(n);
        for (std::size_t i = 0; i < d; ++i) grad[i][f] = st.first(values, f, i + 1);
    }

    NormAccumulator norm{p};
    for (const auto& n : subdomain) {
        const std::size_t f = grid.flat(n);
        norm.add(values[f]);
        norm.add(st.first(values, f, 0));
        for (std::size_t i = 0; i < d; ++i) norm.add(grad[i][f]);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                norm.add(i == j ? st.second(values, f, i + 1) : st.first(grad[i], f, j + 1));
            }
        }
    }
    return norm.finish(cell_measure(grid));
}

double discrete_lp_norm(const GridFunction& u, double p, std::span<const Node> subdomain) {
    const auto& grid = u.grid();
    require_norm_args(grid, p, subdomain, false);
    NormAccumulator norm{p};
    for (const auto& n : subdomain) norm.add(u.at(n));
    return norm.finish(cell_measure(grid));
}

ComparisonReport check_comparison(const GridFunction& u, const GridFunction& v, const DiscreteOperator& dop,
                                  const GridFunction& g, double tol) {
    require_same_grid(u, v, "check_comparison");
    require_same_grid(u, g, "check_comparison");
    const auto& grid = u.grid();
    // Passing the field itself as boundary data zeroes the boundary entries.
    const auto ru = residual(dop, u, g, u);
    const auto rv = residual(dop, v, g, v);
    ComparisonReport rep;
    for (std::size_t k = 0; k < grid.time_levels(); ++k) {
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            const Node node{k, a};
            const double excess = u.at(node) - v.at(node);
            rep.max_excess = std::max(rep.max_excess, excess);
            if (grid.classify(node) == NodeClass::interior) {
                if (ru.at(node) < -tol) ++rep.sub_violations;
                if (rv.at(node) > tol) ++rep.super_violations;
            } else if (excess > tol) {
                ++rep.boundary_violations;
            }
            if (excess > tol) {
                ++rep.conclusion_violations;
                if (!rep.witness) rep.witness = node;
            }
        }
    }
    return rep;
}

ComparisonFuzzReport comparison_fuzz(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                                     std::size_t trials, std::uint64_t seed, double tol,
                                     const SolveOptions& options) {
    ComparisonFuzzReport out;
    const auto base = solve_direct(dop, g, b, options).u;
    std::mt19937_64 seeder(seed);
    std::vector<std::uint64_t> seeds(trials);
    for (auto& s : seeds) s = seeder();
    out.trials.resize(trials);
    parallel_for(trials, [&](std::size_t i) {
        std::mt19937_64 rng(seeds[i]);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        FuzzTrial& trial = out.trials[i];
        trial.index = i;
        // Raising: g moves up by at most s, b by s + extra.
        // Lowering: g moves down by at least s, b by exactly s.
        // Either way g <= b survives on the boundary.
        const double s = 0.2 * unit(rng);
        const double extra = 0.2 * unit(rng);
        const bool raise = unit(rng) < 0.5;
        trial.shift_g = raise ? s : -s;
        trial.shift_b = raise ? s + extra : -s;
        GridFunction g2 = g;
        GridFunction b2 = b;
        for (std::size_t j = 0; j < g2.size(); ++j) {
            const double w = unit(rng);
            g2[j] += raise ? s * w : -s * (1.0 + w);
            b2[j] += trial.shift_b;
        }
        const auto other = solve_direct(dop, g2, b2, options).u;
        trial.report = raise ? check_comparison(base, other, dop, g, tol) : check_comparison(other, base, dop, g, tol);
    });
    for (const auto& trial : out.trials) {
        if (trial.report.premises_hold()) {
            ++out.premise_valid;
            if (!trial.report.conclusion_holds()) ++out.conclusion_violations;
        }
    }
    return out;
}

KinkReport kink_margin(const GridFunction& u, const SampledObstacle& obstacle,
                       std::span<const RefinedSolution> refined) {
    require_same_grid(u, obstacle.g, "kink_margin");
    const auto& grid = u.grid();
    KinkReport rep;
    for (const auto& kink : locate_kinks(obstacle)) {
        KinkRow row;
        row.kink = kink;
        row.t = grid.time(kink.node.level);
        const auto x = grid.coords(kink.node.active);
        row.x.assign(x.begin(), x.end());
        row.margin = u.at(kink.node) - obstacle.g.at(kink.node);
        rep.margin = std::min(rep.margin, row.margin);
        for (const auto& r : refined) {
            const auto node = r.u.grid().locate(row.t, row.x);
            row.refined.push_back(node ? r.u.at(*node) - r.obstacle.g.at(*node) : std::nan(""));
        }
        rep.rows.push_back(std::move(row));
    }
    for (const auto& r : refined) rep.refined_margins.push_back(kink_margin(r.u, r.obstacle).margin);
    return rep;
}

KinkReport kink_margin(const GridFunction& u, const ObstacleFamily& family,
                       std::span<const RefinedSolution> refined) {
    return kink_margin(u, sample_obstacle(family, u.grid_ptr()), refined);
}

std::vector<Node> central_probes(const SpaceTimeGrid& grid, double time_fraction, double pad_fraction) {
    const auto& bounds = grid.domain().bounds;
    std::vector<Node> nodes;
    for (const auto& node : all_nodes(grid)) {
        if (grid.classify(node) != NodeClass::interior) continue;
        if (grid.time(node.level) > time_fraction * grid.horizon() + 1e-12) continue;
        const auto x = grid.coords(node.active);
        bool inside = true;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double pad = pad_fraction * (bounds[i].second - bounds[i].first) - 1e-12;
            if (x[i] < bounds[i].first + pad || x[i] > bounds[i].second - pad) inside = false;
        }
        if (inside) nodes.push_back(node);
    }
    return nodes;
}

std::vector<ProbePoint> probe_points(const SpaceTimeGrid& grid, std::span<const Node> nodes) {
    std::vector<ProbePoint> out;
    out.reserve(nodes.size());
    for (const auto& n : nodes) {
        const auto x = grid.coords(n.active);
        out.push_back({grid.time(n.level), std::vector<double>(x.begin(), x.end())});
    }
    return out;
}

StabilityReport stability_run(std::span<const StageSolution> stages, std::span<const ProbePoint> probes, double tol,
                              double target) {
    if (stages.size() < 3) throw ValidationError("stability run needs at least three stages");
    if (probes.empty()) throw ValidationError("stability run needs probe points");
    std::vector<std::vector<double>> values(stages.size());
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& grid = stages[s].u.grid();
        for (const auto& p : probes) {
            const auto node = grid.locate(p.t, p.x);
            if (!node) throw ValidationError("probe point is not a node of stage '" + stages[s].label + "'");
            values[s].push_back(stages[s].u.at(*node));
        }
    }
    auto dist = [&](std::size_t a, std::size_t b) {
        double m = 0.0;
        for (std::size_t i = 0; i < probes.size(); ++i) m = std::max(m, std::abs(values[a][i] - values[b][i]));
        return m;
    };
    StabilityReport rep;
    rep.probe_count = probes.size();
    const std::size_t last = stages.size() - 1;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        rep.labels.push_back(stages[s].label);
        rep.consecutive.push_back(s == 0 ? 0.0 : dist(s, s - 1));
        rep.to_final.push_back(dist(s, last));
    }
    for (std::size_t s = 1; s < stages.size(); ++s) {
        if (rep.to_final[s] > rep.to_final[s - 1] + tol) rep.nonincreasing = false;
    }
    rep.final_distance = rep.to_final[last - 1];
    rep.passed = rep.nonincreasing && rep.final_distance <= target;
    return rep;
}

std::vector<StageSolution> truncation_stages(const BellmanOperator& op, const PieceGenerator& generator,
                                             std::span<const std::size_t> ns, const GridPtr& grid, const Field& b,
                                             const SolveOptions& options) {
    const auto dop = assemble(op, grid);
    const auto bf = GridFunction::sample(grid, b);
    std::vector<StageSolution> out;
    for (const std::size_t n : ns) {
        const auto family = truncate_family(generator, n, grid);
        const auto g = sample_obstacle(family, grid).g;
        out.push_back({"n=" + std::to_string(n), solve_direct(dop, g, bf, options).u});
    }
    return out;
}

std::vector<StageSolution> domain_stages(const BellmanOperator& op, const ObstacleFamily& family, const Field& b,
                                         const DomainSpec& domain, const Resolution& resolution,
                                         std::span<const std::size_t> ns, const SolveOptions& options) {
    const auto full = SpaceTimeGrid::build(domain, resolution);
    const auto h = full->spacing();
    const double dt = full->dt();
    auto solve_on = [&](const GridPtr& grid) {
        const auto dop = assemble(op, grid);
        const auto g = sample_obstacle(family, grid).g;
        return solve_direct(dop, g, GridFunction::sample(grid, b), options).u;
    };
    std::vector<StageSolution> out;
    for (const std::size_t n : ns) {
        if (n == 0) throw ValidationError("domain stage index must be >= 1");
        DomainSpec stage = domain;
        Resolution res = resolution;
        for (std::size_t i = 0; i < stage.bounds.size(); ++i) {
            const double extent = stage.bounds[i].second - stage.bounds[i].first;
            const auto m = static_cast<std::size_t>(std::ceil(extent / (4.0 * static_cast<double>(n)) / h[i] - 1e-9));
            if (resolution.n[i] < 2 * m + 3) throw ValidationError("domain stage too small for the grid");
            stage.bounds[i].first += static_cast<double>(m) * h[i];
            stage.bounds[i].second -= static_cast<double>(m) * h[i];
            res.n[i] = resolution.n[i] - 2 * m;
        }
        const double Tn = resolution.T * (2.0 * static_cast<double>(n) - 1.0) / (2.0 * static_cast<double>(n));
        const auto steps = static_cast<std::size_t>(std::floor(Tn / dt + 1e-9));
        if (steps < 1) throw ValidationError("domain stage horizon is below one time step");
        res.nt = steps + 1;
        res.T = static_cast<double>(steps) * dt;
        out.push_back({"n=" + std::to_string(n), solve_on(SpaceTimeGrid::build(stage, res))});
    }
    out.push_back({"full", solve_on(full)});
    return out;
}

EstimateInputs estimate_inputs(std::span<const GridFunction> pieces, const GridFunction& growth,
                               const GridFunction& b, double p) {
    const auto& grid = b.grid();
    const auto nodes = all_nodes(grid);
    EstimateInputs in;
    for (const auto& piece : pieces) {
        require_same_grid(piece, b, "estimate_inputs");
        in.piece_norm = std::max(in.piece_norm, discrete_sobolev_norm(piece, p, nodes));
    }
    require_same_grid(growth, b, "estimate_inputs");
    in.growth_norm = discrete_lp_norm(growth, p, nodes);
    for (const auto& n : nodes) {
        if (grid.classify(n) != NodeClass::interior) in.boundary_sup = std::max(in.boundary_sup, std::abs(b.at(n)));
    }
    return in;
}

EstimateReport interior_estimate_check(const GridFunction& u, const EstimateInputs& inputs, double margin, double p) {
    if (!(margin > 0.0)) throw ValidationError("estimate margin must be positive");
    const auto nodes = interior_subgrid(u.grid(), margin);
    if (nodes.empty()) throw ValidationError("empty interior subgrid for margin " + std::to_string(margin));
    EstimateReport rep;
    rep.margin = margin;
    rep.p = p;
    rep.nodes = nodes.size();
    rep.lhs = discrete_sobolev_norm(u, p, nodes);
    for (double v : u.values()) rep.u_sup = std::max(rep.u_sup, std::abs(v));
    rep.inputs = inputs;
    rep.C = rep.lhs / (1.0 + inputs.piece_norm + inputs.growth_norm + inputs.boundary_sup);
    rep.C_inf = rep.u_sup / (1.0 + inputs.growth_norm + inputs.boundary_sup);
    return rep;
}

RefinementTrace estimate_refinement(std::span<const EstimateReport> levels, double factor) {
    RefinementTrace trace;
    for (const auto& l : levels) trace.C.push_back(l.C);
    if (trace.C.empty()) return trace;
    const auto [lo, hi] = std::minmax_element(trace.C.begin(), trace.C.end());
    trace.ratio = *lo > 0.0 ? *hi / *lo : (*hi == 0.0 ? 1.0 : kInf);
    trace.passed = levels.size() >= 3 && trace.ratio <= factor;
    return trace;
}

std::vector<ModulusEntry> modulus_probe(const GridFunction& u, std::span<const std::size_t> multiples) {
    const auto& grid = u.grid();
    const std::size_t d = grid.dim();
    double hmax = grid.dt();
    for (double h : grid.spacing()) hmax = std::max(hmax, h);
    std::vector<std::size_t> ms(multiples.begin(), multiples.end());
    std::sort(ms.begin(), ms.end());
    if (ms.empty()) return {};
    const double rmax = static_cast<double>(ms.back()) * hmax;

    // Offsets (dk, o_1..o_d), lexicographically positive, within rmax.
    std::vector<long> reach(d + 1);
    reach[0] = static_cast<long>(std::floor(rmax / grid.dt() + 1e-9));
    for (std::size_t i = 0; i < d; ++i) reach[i + 1] = static_cast<long>(std::floor(rmax / grid.spacing()[i] + 1e-9));
    struct Offset {
        std::vector<long> o;
        double dist;
    };
    std::vector<Offset> offsets;
    std::vector<long> cur(d + 1);
    for (cur[0] = -reach[0];;) {
        const auto first = std::find_if(cur.begin(), cur.end(), [](long v) { return v != 0; });
        if (first != cur.end() && *first > 0) {
            double dist2 = std::pow(static_cast<double>(cur[0]) * grid.dt(), 2);
            for (std::size_t i = 0; i < d; ++i) dist2 += std::pow(static_cast<double>(cur[i + 1]) * grid.spacing()[i], 2);
            if (std::sqrt(dist2) <= rmax * (1.0 + 1e-12)) offsets.push_back({cur, std::sqrt(dist2)});
        }
        std::size_t ax = d + 1;
        while (ax > 0) {
            --ax;
            if (cur[ax] < reach[ax]) {
                ++cur[ax];
                for (std::size_t j = ax + 1; j <= d; ++j) cur[j] = -reach[j];
                break;
            }
            if (ax == 0) {
                ax = d + 2;
                break;
            }
        }
        if (ax == d + 2) break;
    }

    std::vector<double> sup(offsets.size(), 0.0);
    std::vector<long> spatial(d);
    for (std::size_t oi = 0; oi < offsets.size(); ++oi) {
        const auto& o = offsets[oi].o;
        std::copy(o.begin() + 1, o.end(), spatial.begin());
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            const auto nb = grid.neighbor(a, spatial);
            if (!nb) continue;
            for (std::size_t k = 0; k < grid.time_levels(); ++k) {
                const long k2 = static_cast<long>(k) + o[0];
                if (k2 < 0 || k2 >= static_cast<long>(grid.time_levels())) continue;
                sup[oi] = std::max(sup[oi], std::abs(u.at({k, a}) - u.at({static_cast<std::size_t>(k2), *nb})));
            }
        }
    }
    std::vector<ModulusEntry> out;
    for (const std::size_t m : ms) {
        const double r = static_cast<double>(m) * hmax;
        double omega = out.empty() ? 0.0 : out.back().omega;
        for (std::size_t oi = 0; oi < offsets.size(); ++oi) {
            if (offsets[oi].dist <= r * (1.0 + 1e-12)) omega = std::max(omega, sup[oi]);
        }
        out.push_back({r, omega});
    }
    return out;
}

}  // namespace parobs
