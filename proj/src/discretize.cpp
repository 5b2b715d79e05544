#include "parobs/discretize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "parobs/errors.hpp"

namespace parobs {

namespace {

using Lattice = std::vector<long>;

struct WeightedDirection {
    Lattice m;
    double weight;
};

long gcd_all(const Lattice& m) {
    long g = 0;
    for (long v : m) g = std::gcd(g, std::abs(v));
    return g;
}

/// Primitive lattice vectors with |m|_inf <= radius and first nonzero entry positive,
/// shortest first.
std::vector<Lattice> lattice_directions(std::size_t d, long radius) {
    std::vector<Lattice> out;
    const long side = 2 * radius + 1;
    long total = 1;
    for (std::size_t i = 0; i < d; ++i) total *= side;
    for (long c = 0; c < total; ++c) {
        Lattice m(d);
        long rem = c;
        for (std::size_t i = 0; i < d; ++i) {
            m[i] = rem % side - radius;
            rem /= side;
        }
        const auto first = std::find_if(m.begin(), m.end(), [](long v) { return v != 0; });
        if (first == m.end() || *first < 0 || gcd_all(m) != 1) continue;
        out.push_back(std::move(m));
    }
    std::stable_sort(out.begin(), out.end(), [](const Lattice& a, const Lattice& b) {
        const auto na = std::inner_product(a.begin(), a.end(), a.begin(), 0L);
        const auto nb = std::inner_product(b.begin(), b.end(), b.begin(), 0L);
        if (na != nb) return na < nb;
        return std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
    });
    return out;
}

/// Diagonally dominant split: axis weights At_ii - sum_j |At_ij| plus one diagonal
/// direction e_i +- e_j per off-diagonal entry. Axis weights may come out negative.
std::vector<WeightedDirection> standard_split(const Eigen::MatrixXd& At) {
    const auto d = static_cast<std::size_t>(At.rows());
    std::vector<WeightedDirection> out;
    for (std::size_t i = 0; i < d; ++i) {
        double w = At(i, i);
        for (std::size_t j = 0; j < d; ++j) {
            if (j != i) w -= std::abs(At(i, j));
        }
        Lattice m(d, 0);
        m[i] = 1;
        out.push_back({m, w});
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            if (At(i, j) == 0.0) continue;
            Lattice m(d, 0);
            m[i] = 1;
            m[j] = At(i, j) > 0 ? 1 : -1;
            out.push_back({m, std::abs(At(i, j))});
        }
    }
    return out;
}

/// First basis (in shortest-first lexicographic order) of d(d+1)/2 candidate
/// directions whose weights reproduce At and are all nonnegative.
std::optional<std::vector<WeightedDirection>> search_split(const Eigen::MatrixXd& At,
                                                           const std::vector<Lattice>& candidates) {
    const auto d = static_cast<std::size_t>(At.rows());
    const std::size_t K = d * (d + 1) / 2;
    if (candidates.size() < K) return std::nullopt;
    const double scale = std::max(1e-300, At.cwiseAbs().maxCoeff());

    Eigen::VectorXd rhs(static_cast<Eigen::Index>(K));
    {
        Eigen::Index r = 0;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i; j < d; ++j) rhs[r++] = At(i, j);
        }
    }
    std::vector<std::size_t> pick(K);
    std::iota(pick.begin(), pick.end(), 0);
    Eigen::MatrixXd B(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
    while (true) {
        for (std::size_t c = 0; c < K; ++c) {
            const auto& m = candidates[pick[c]];
            Eigen::Index r = 0;
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = i; j < d; ++j) B(r++, static_cast<Eigen::Index>(c)) = double(m[i] * m[j]);
            }
        }
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
        if (lu.rank() == static_cast<Eigen::Index>(K)) {
            const Eigen::VectorXd w = lu.solve(rhs);
            if (w.minCoeff() >= -1e-12 * scale && (B * w - rhs).cwiseAbs().maxCoeff() <= 1e-10 * scale) {
                std::vector<WeightedDirection> out;
                for (std::size_t c = 0; c < K; ++c) {
                    if (w[static_cast<Eigen::Index>(c)] > 0.0) {
                        out.push_back({candidates[pick[c]], w[static_cast<Eigen::Index>(c)]});
                    }
                }
                return out;
            }
        }
        // next combination
        std::size_t i = K;
        while (i > 0 && pick[i - 1] == candidates.size() - K + (i - 1)) --i;
        if (i == 0) break;
        ++pick[i - 1];
        for (std::size_t j = i; j < K; ++j) pick[j] = pick[j - 1] + 1;
    }
    return std::nullopt;
}

long wide_radius(std::size_t d) { return d <= 2 ? 2 : (d == 3 ? 1 : 0); }

class RowBuilder {
public:
    void add(std::size_t col, double v) { entries_.emplace_back(static_cast<std::uint32_t>(col), v); }
    void add_diag(double v) { diag_ += v; }

    void flush(std::vector<std::uint32_t>& cols, std::vector<double>& coefs, double& diag) {
        std::sort(entries_.begin(), entries_.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 0; i < entries_.size();) {
            std::size_t j = i;
            double sum = 0.0;
            while (j < entries_.size() && entries_[j].first == entries_[i].first) sum += entries_[j++].second;
            cols.push_back(entries_[i].first);
            coefs.push_back(sum);
            i = j;
        }
        diag = diag_;
        entries_.clear();
        diag_ = 0.0;
    }

private:
    std::vector<std::pair<std::uint32_t, double>> entries_;
    double diag_ = 0.0;
};

}  // namespace

std::optional<std::size_t> DiscreteOperator::row_index(std::size_t active) const {
    if (active >= row_of_active_.size() || row_of_active_[active] < 0) return std::nullopt;
    return static_cast<std::size_t>(row_of_active_[active]);
}

const DiscreteOperator::Block& DiscreteOperator::block(std::size_t level, std::size_t control) const {
    const std::size_t slot = time_dependent_ ? level : 0;
    return blocks_[slot * controls_ + control];
}

DiscreteOperator::Row DiscreteOperator::row(std::size_t level, std::size_t control, std::size_t r) const {
    const auto& b = block(level, control);
    const std::size_t lo = b.offsets[r], hi = b.offsets[r + 1];
    return {std::span<const std::uint32_t>(b.cols).subspan(lo, hi - lo),
            std::span<const double>(b.coefs).subspan(lo, hi - lo), b.diag[r], b.source[r]};
}

double DiscreteOperator::apply(std::size_t level, std::size_t control, std::size_t r,
                               std::span<const double> u_level) const {
    const auto& b = block(level, control);
    double v = b.diag[r] * u_level[interior_[r]] + b.source[r];
    for (std::size_t e = b.offsets[r]; e < b.offsets[r + 1]; ++e) v += b.coefs[e] * u_level[b.cols[e]];
    return v;
}

std::pair<double, std::size_t> DiscreteOperator::apply_max(std::size_t level, std::size_t r,
                                                           std::span<const double> u_level) const {
    std::pair<double, std::size_t> best{-std::numeric_limits<double>::infinity(), 0};
    for (std::size_t c = 0; c < controls_; ++c) {
        const double v = apply(level, c, r, u_level);
        if (v > best.first) best = {v, c};
    }
    return best;
}

DiscreteOperator assemble(const BellmanOperator& op, GridPtr grid_ptr, const AssemblyOptions& options) {
    const auto& grid = *grid_ptr;
    if (grid.dim() != op.dim()) throw ValidationError("operator and grid dimensions differ");
    const std::size_t d = grid.dim();

    DiscreteOperator dop;
    dop.grid_ = grid_ptr;
    dop.options_ = options;
    dop.controls_ = op.control_count();
    dop.time_dependent_ = op.time_dependent();
    dop.row_of_active_.assign(grid.active_count(), -1);
    for (std::size_t a = 0; a < grid.active_count(); ++a) {
        if (!grid.spatial_boundary(a)) {
            dop.row_of_active_[a] = static_cast<std::int64_t>(dop.interior_.size());
            dop.interior_.push_back(a);
        }
    }

    const auto h = grid.spacing();
    const std::size_t slots = dop.time_dependent_ ? grid.time_levels() - 1 : 1;
    const std::vector<Lattice> wide_candidates =
        (options.allow_wide_stencil && wide_radius(d) > 0) ? lattice_directions(d, wide_radius(d))
                                                            : std::vector<Lattice>{};
    std::map<std::pair<std::vector<double>, std::vector<bool>>, std::optional<std::vector<WeightedDirection>>>
        split_cache;

    Eigen::MatrixXd At(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Lattice off(d);
    RowBuilder builder;

    auto neighbor_of = [&](std::size_t a, const Lattice& m, long sign) {
        for (std::size_t i = 0; i < d; ++i) off[i] = sign * m[i];
        return grid.neighbor(a, off);
    };

    dop.blocks_.resize(slots * dop.controls_);
    for (std::size_t slot = 0; slot < slots; ++slot) {
        const double t = grid.time(slot);
        for (std::size_t ctl = 0; ctl < dop.controls_; ++ctl) {
            auto& blk = dop.blocks_[slot * dop.controls_ + ctl];
            blk.offsets.push_back(0);
            for (const std::size_t a : dop.interior_) {
                const auto x = grid.coords(a);
                const auto coef = op.coefficients(ctl, t, x);
                const Eigen::MatrixXd A = 0.5 * (coef.A + coef.A.transpose());
                for (std::size_t i = 0; i < d; ++i) {
                    for (std::size_t j = 0; j < d; ++j) At(i, j) = A(i, j) / (h[i] * h[j]);
                }
                const double scale = std::max(1e-300, At.cwiseAbs().maxCoeff());

                auto split = standard_split(At);
                const bool dominant = std::all_of(split.begin(), split.end(), [&](const WeightedDirection& w) {
                    return w.weight >= -1e-12 * scale;
                });
                if (!dominant && !wide_candidates.empty()) {
                    std::vector<Lattice> usable;
                    std::vector<bool> mask;
                    for (const auto& m : wide_candidates) {
                        const bool ok = neighbor_of(a, m, 1).has_value() && neighbor_of(a, m, -1).has_value();
                        mask.push_back(ok);
                        if (ok) usable.push_back(m);
                    }
                    std::vector<double> key(At.data(), At.data() + At.size());
                    auto [it, inserted] = split_cache.try_emplace({key, mask});
                    if (inserted) it->second = search_split(At, usable);
                    if (it->second) {
                        split = *it->second;
                        dop.wide_used_ = true;
                    } else if (options.require_monotone) {
                        throw ValidationError("no monotone stencil within the available lattice directions at x=(" +
                                              std::to_string(x[0]) + ", ...) for control '" +
                                              op.control(ctl).label + "'");
                    }
                } else if (!dominant && options.require_monotone) {
                    throw ValidationError("cross terms break diagonal dominance and the wide-stencil fallback is "
                                          "disabled (control '" + op.control(ctl).label + "')");
                }

                for (const auto& w : split) {
                    const double weight = std::abs(w.weight) <= 1e-12 * scale ? 0.0 : w.weight;
                    if (weight == 0.0) continue;
                    const auto up = neighbor_of(a, w.m, 1);
                    const auto down = neighbor_of(a, w.m, -1);
                    if (!up || !down) throw ValidationError("stencil leaves the grid at an interior node");
                    builder.add(*up, weight);
                    builder.add(*down, weight);
                    builder.add_diag(-2.0 * weight);
                }

                for (std::size_t i = 0; i < d; ++i) {
                    const double bi = coef.b[static_cast<Eigen::Index>(i)];
                    if (bi == 0.0) continue;
                    Lattice e(d, 0);
                    e[i] = 1;
                    const auto up = neighbor_of(a, e, 1);
                    const auto down = neighbor_of(a, e, -1);
                    if (options.drift == DriftScheme::upwind) {
                        if (bi > 0) {
                            builder.add(*up, bi / h[i]);
                        } else {
                            builder.add(*down, -bi / h[i]);
                        }
                        builder.add_diag(-std::abs(bi) / h[i]);
                    } else {
                        builder.add(*up, bi / (2.0 * h[i]));
                        builder.add(*down, -bi / (2.0 * h[i]));
                    }
                }
                builder.add_diag(coef.c);

                double diag = 0.0;
                builder.flush(blk.cols, blk.coefs, diag);
                blk.diag.push_back(diag);
                blk.source.push_back(coef.f);
                blk.offsets.push_back(static_cast<std::uint32_t>(blk.cols.size()));
            }
        }
    }

    if (options.require_monotone) {
        const auto report = check_monotone(dop, options.monotone_slack);
        if (report.bad_rows > 0) throw ValidationError("assembled operator is not monotone");
    }
    return dop;
}

MonotonicityReport check_monotone(const DiscreteOperator& dop, double slack) {
    MonotonicityReport report;
    const auto& grid = dop.grid();
    const double dt = grid.dt();
    const std::size_t levels = grid.time_levels() - 1;
    for (std::size_t k = 0; k < levels; ++k) {
        for (std::size_t c = 0; c < dop.control_count(); ++c) {
            for (std::size_t r = 0; r < dop.interior().size(); ++r) {
                const auto row = dop.row(k, c, r);
                ++report.rows_checked;
                double off_sum = 0.0;
                bool bad = false;
                for (std::size_t e = 0; e < row.cols.size(); ++e) {
                    off_sum += row.coefs[e];
                    if (row.coefs[e] < -slack) {
                        bad = true;
                        if (!report.witness) {
                            report.witness = MonotonicityWitness{k, c, dop.interior()[r], row.cols[e], row.coefs[e]};
                        }
                    }
                }
                if (bad) ++report.bad_rows;
                const double cval = row.diag + off_sum;
                report.max_c_dt = std::max(report.max_c_dt, cval * dt);
            }
        }
    }
    report.time_step_ok = report.max_c_dt < 1.0;
    report.passed = report.bad_rows == 0 && report.time_step_ok;
    return report;
}

GridFunction pde_residual(const DiscreteOperator& dop, const GridFunction& u) {
    const auto& grid = dop.grid();
    if (u.grid().id() != grid.id()) throw ValidationError("shape mismatch: u is not on the operator's grid");
    GridFunction out(dop.grid_ptr(), 0.0);
    const double inv_dt = 1.0 / grid.dt();
    for (std::size_t k = 0; k + 1 < grid.time_levels(); ++k) {
        const auto uk = u.level(k);
        const auto un = u.level(k + 1);
        auto ok = out.level(k);
        for (std::size_t r = 0; r < dop.interior().size(); ++r) {
            const std::size_t a = dop.interior()[r];
            ok[a] = (un[a] - uk[a]) * inv_dt + dop.apply_max(k, r, uk).first;
        }
    }
    return out;
}

GridFunction residual(const DiscreteOperator& dop, const GridFunction& u, const GridFunction& g,
                      const GridFunction& b) {
    require_same_grid(u, g, "residual(u, g)");
    require_same_grid(u, b, "residual(u, b)");
    if (u.grid().id() != dop.grid().id()) throw ValidationError("shape mismatch: u is not on the operator's grid");
    const auto& grid = dop.grid();
    GridFunction out = pde_residual(dop, u);
    for (std::size_t k = 0; k < grid.time_levels(); ++k) {
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            const Node node{k, a};
            if (grid.classify(node) == NodeClass::interior) {
                out.at(node) = std::max(out.at(node), g.at(node) - u.at(node));
            } else {
                out.at(node) = u.at(node) - b.at(node);
            }
        }
    }
    return out;
}

GridFunction discrete_compatibility(const DiscreteOperator& dop, const GridFunction& g) {
    GridFunction h = pde_residual(dop, g);
    for (auto& v : h.values()) v = -v;
    return h;
}

void write_stencils_csv(const DiscreteOperator& dop, std::ostream& out) {
    const auto& grid = dop.grid();
    const auto old_precision = out.precision(17);
    out << "level,row,col,control,value\n";
    for (std::size_t k = 0; k + 1 < grid.time_levels(); ++k) {
        for (std::size_t c = 0; c < dop.control_count(); ++c) {
            for (std::size_t r = 0; r < dop.interior().size(); ++r) {
                const auto row = dop.row(k, c, r);
                const std::size_t a = dop.interior()[r];
                out << k << ',' << a << ',' << a << ',' << c << ',' << row.diag << '\n';
                for (std::size_t e = 0; e < row.cols.size(); ++e) {
                    out << k << ',' << a << ',' << row.cols[e] << ',' << c << ',' << row.coefs[e] << '\n';
                }
            }
        }
    }
    out.precision(old_precision);
}

}  // namespace parobs
