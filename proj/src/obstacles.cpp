#include "parobs/obstacles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "parobs/errors.hpp"

namespace parobs {

ObstaclePiece ObstaclePiece::analytic(std::string label, const AnalyticFunction& fn, std::size_t dim) {
    ObstaclePiece p;
    p.label = std::move(label);
    const bool td = fn.time_dependent;
    p.g = Field::function(
        1, [v = fn.value](double t, std::span<const double> x, std::span<double> out) { out[0] = v(t, x); }, td);
    p.g_t = Field::function(
        1, [v = fn.dt](double t, std::span<const double> x, std::span<double> out) { out[0] = v(t, x); }, td);
    p.g_x = Field::function(dim, fn.grad, td);
    p.g_xx = Field::function(dim * dim, fn.hess, td);
    return p;
}

ObstacleFamily::ObstacleFamily(std::vector<ObstaclePiece> pieces) : pieces_(std::move(pieces)) {
    if (pieces_.empty()) throw ValidationError("obstacle family must be nonempty");
}

ObstacleValue eval_obstacle(const ObstacleFamily& family, const SpaceTimeGrid& grid, Node node) {
    if (family.size() == 0) throw ValidationError("obstacle family must be nonempty");
    const double t = grid.time(node.level);
    const auto x = grid.coords(node.active);
    ObstacleValue best{-std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < family.size(); ++i) {
        const double v = family.piece(i).g.scalar(t, x);
        if (!std::isfinite(v)) {
            throw ValidationError("obstacle piece '" + family.piece(i).label + "' is not finite at a node");
        }
        if (v > best.value) best = {v, i};
    }
    return best;
}

SampledObstacle sample_obstacle(const ObstacleFamily& family, const GridPtr& grid) {
    SampledObstacle out{GridFunction(grid), std::vector<std::uint32_t>(grid->unknown_count(), 0)};
    for (std::size_t k = 0; k < grid->time_levels(); ++k) {
        for (std::size_t a = 0; a < grid->active_count(); ++a) {
            const Node node{k, a};
            const auto v = eval_obstacle(family, *grid, node);
            out.g.at(node) = v.value;
            out.argmax[grid->flat(node)] = static_cast<std::uint32_t>(v.piece);
        }
    }
    return out;
}

std::vector<GridFunction> sample_pieces(const ObstacleFamily& family, const GridPtr& grid) {
    std::vector<GridFunction> out;
    out.reserve(family.size());
    for (const auto& p : family.pieces()) out.push_back(GridFunction::sample(grid, p.g));
    return out;
}

ObstacleFamily truncate_family(const PieceGenerator& generator, std::size_t n, const GridPtr& grid,
                               std::size_t probe_n) {
    if (n == 0) throw ValidationError("truncate_family needs n >= 1");
    if (probe_n == 0) probe_n = 2 * n;
    if (probe_n <= n) throw ValidationError("truncation probe must exceed n");

    std::vector<ObstaclePiece> pieces;
    for (std::size_t i = 0; i < probe_n; ++i) {
        auto piece = generator(i);
        if (!piece) break;
        pieces.push_back(std::move(*piece));
    }
    if (pieces.size() < n) {
        throw ValidationError("generator exhausted after " + std::to_string(pieces.size()) +
                              " pieces, fewer than the requested " + std::to_string(n));
    }
    const std::size_t available = pieces.size();

    std::vector<ObstaclePiece> head(pieces.begin(), pieces.begin() + static_cast<std::ptrdiff_t>(n));
    ObstacleFamily family(head);
    TruncationInfo info;
    info.n = n;
    info.probe_n = available;
    if (available > n) {
        const auto g_n = sample_obstacle(family, grid);
        const auto g_probe = sample_obstacle(ObstacleFamily(std::move(pieces)), grid);
        for (std::size_t i = 0; i < g_n.g.size(); ++i) {
            info.probe_gap = std::max(info.probe_gap, g_probe.g[i] - g_n.g[i]);
        }
    }
    family.truncation = info;
    return family;
}

PieceGenerator tangent_line_generator(std::size_t dim) {
    return [dim](std::size_t index) -> std::optional<ObstaclePiece> {
        double s = 0.0;
        double scale = 0.5;
        for (std::size_t i = index; i > 0; i >>= 1, scale *= 0.5) {
            if (i & 1u) s += scale;
        }
        std::vector<double> params(dim + 2, 0.0);
        params[0] = -0.25 * s * s;
        params[2] = s;
        return ObstaclePiece::analytic("s=" + std::to_string(s), builtin_function("affine", params, dim), dim);
    };
}

std::vector<Kink> locate_kinks(const SampledObstacle& sampled) {
    const auto& grid = sampled.g.grid();
    const std::size_t d = grid.dim();
    std::vector<Kink> kinks;
    std::vector<long> off(d, 0);
    for (std::size_t k = 0; k + 1 < grid.time_levels(); ++k) {
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            if (grid.spatial_boundary(a)) continue;
            const Node node{k, a};
            const auto label = sampled.argmax[grid.flat(node)];
            const double g0 = sampled.g.at(node);
            bool found = false;
            for (std::size_t i = 0; i < d && !found; ++i) {
                off.assign(d, 0);
                off[i] = 1;
                const auto up = grid.neighbor(a, off);
                off[i] = -1;
                const auto down = grid.neighbor(a, off);
                if (!up || !down) continue;
                const double gu = sampled.g.at({k, *up});
                const double gd = sampled.g.at({k, *down});
                const double second = gu - 2.0 * g0 + gd;
                const double tol = 1e-12 * std::max({1.0, std::abs(gu), std::abs(g0), std::abs(gd)});
                if (!(second > tol)) continue;
                for (const auto nb : {*down, *up}) {
                    const auto other = sampled.argmax[grid.flat({k, nb})];
                    if (other != label) {
                        kinks.push_back({node, label, other, i});
                        found = true;
                        break;
                    }
                }
            }
        }
    }
    return kinks;
}

std::vector<Kink> locate_kinks(const ObstacleFamily& family, const GridPtr& grid) {
    return locate_kinks(sample_obstacle(family, grid));
}

CompatibilityField compatibility_h(const ObstaclePiece& piece, const BellmanOperator& op, const GridPtr& grid,
                                   double p) {
    const std::size_t d = grid->dim();
    if (p == 0.0) p = static_cast<double>(d) + 3.0;
    if (!(p > static_cast<double>(d) + 2.0)) throw ValidationError("compatibility_h: p must exceed d + 2");
    CompatibilityField out{GridFunction(grid), GridFunction(grid), p, 0.0};

    const auto di = static_cast<Eigen::Index>(d);
    Eigen::VectorXd q(di);
    Eigen::MatrixXd M(di, di);
    std::vector<double> hess(d * d);
    double cell = grid->dt();
    for (double h : grid->spacing()) cell *= h;
    double acc = 0.0;
    double sup = 0.0;

    for (std::size_t k = 0; k < grid->time_levels(); ++k) {
        const double t = grid->time(k);
        for (std::size_t a = 0; a < grid->active_count(); ++a) {
            const auto x = grid->coords(a);
            const double g = piece.g.scalar(t, x);
            const double gt = piece.g_t.scalar(t, x);
            piece.g_x.eval(t, x, std::span<double>(q.data(), d));
            piece.g_xx.eval(t, x, hess);
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) M(i, j) = hess[i * d + j];
            }
            M = 0.5 * (M + M.transpose()).eval();
            const double h = -gt - eval_operator(op, t, x, g, q, M).value;
            out.h.at({k, a}) = h;
            out.h_plus.at({k, a}) = std::max(h, 0.0);
            if (k + 1 < grid->time_levels()) {
                acc += std::pow(std::abs(h), p) * cell;
                sup = std::max(sup, std::abs(h));
            }
        }
    }
    out.lp_norm = std::isfinite(p) ? std::pow(acc, 1.0 / p) : sup;
    return out;
}

std::vector<BoundaryViolation> boundary_violations(const ObstacleFamily& family, const GridFunction& b,
                                                   double tol) {
    const auto& grid = b.grid();
    std::vector<BoundaryViolation> out;
    for (std::size_t k = 0; k < grid.time_levels(); ++k) {
        const double t = grid.time(k);
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            const Node node{k, a};
            if (grid.classify(node) == NodeClass::interior) continue;
            for (std::size_t i = 0; i < family.size(); ++i) {
                const double g = family.piece(i).g.scalar(t, grid.coords(a));
                if (g > b.at(node) + tol) {
                    out.push_back({node, g, b.at(node), i});
                    break;
                }
            }
        }
    }
    return out;
}

}  // namespace parobs
