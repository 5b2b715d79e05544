#include "parobs/geometry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "parobs/errors.hpp"

namespace parobs {

namespace {

std::uint64_t next_grid_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

bool inside_halfspaces(const std::vector<HalfSpace>& halfspaces, std::span<const double> x) {
    for (const auto& hs : halfspaces) {
        double dot = 0.0;
        double scale = std::abs(hs.offset);
        for (std::size_t i = 0; i < x.size(); ++i) {
            dot += hs.normal[i] * x[i];
            scale = std::max(scale, std::abs(hs.normal[i] * x[i]));
        }
        if (dot > hs.offset + 1e-12 * std::max(1.0, scale)) return false;
    }
    return true;
}

std::size_t checked_product(std::span<const std::size_t> factors, std::size_t limit) {
    std::size_t total = 1;
    for (auto f : factors) {
        if (f != 0 && total > limit / f) {
            throw ValidationError("grid resolution overflows the node budget");
        }
        total *= f;
    }
    return total;
}

}  // namespace

const char* to_string(NodeClass c) {
    switch (c) {
        case NodeClass::interior: return "interior";
        case NodeClass::lateral_boundary: return "lateral_boundary";
        case NodeClass::terminal_slice: return "terminal_slice";
        case NodeClass::exterior: return "exterior";
    }
    return "?";
}

GridPtr SpaceTimeGrid::build(const DomainSpec& domain, const Resolution& resolution,
                             const GridLimits& limits) {
    const std::size_t d = domain.bounds.size();
    if (d == 0) throw ValidationError("domain must have at least one spatial axis");
    if (resolution.n.size() != d) {
        throw ValidationError("grid.n must list one count per spatial axis");
    }
    for (std::size_t i = 0; i < d; ++i) {
        const auto [lo, hi] = domain.bounds[i];
        if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
            throw ValidationError("domain bounds must be finite with positive extent");
        }
        if (resolution.n[i] < 3) throw ValidationError("each spatial axis needs at least 3 nodes");
    }
    if (resolution.nt < 2) throw ValidationError("grid needs at least 2 time levels");
    if (!std::isfinite(resolution.T) || !(resolution.T > 0.0)) {
        throw ValidationError("horizon T must be positive and finite");
    }
    for (const auto& hs : domain.halfspaces) {
        if (hs.normal.size() != d) throw ValidationError("half-space normal has wrong dimension");
        double norm = 0.0;
        for (double v : hs.normal) norm += v * v;
        if (!(norm > 0.0) || !std::isfinite(norm) || !std::isfinite(hs.offset)) {
            throw ValidationError("half-space normal must be finite and nonzero");
        }
    }

    std::vector<std::size_t> all_counts = resolution.n;
    all_counts.push_back(resolution.nt);
    checked_product(all_counts, limits.max_nodes);

    std::shared_ptr<SpaceTimeGrid> grid(new SpaceTimeGrid());
    grid->id_ = next_grid_id();
    grid->domain_ = domain;
    grid->counts_ = resolution.n;
    grid->nt_ = resolution.nt;
    grid->horizon_ = resolution.T;
    grid->dt_ = resolution.T / static_cast<double>(resolution.nt - 1);
    grid->spatial_count_ = checked_product(resolution.n, limits.max_nodes);
    grid->spacing_.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        grid->spacing_[i] = (domain.bounds[i].second - domain.bounds[i].first) /
                            static_cast<double>(resolution.n[i] - 1);
    }
    grid->classify_nodes();
    return grid;
}

void SpaceTimeGrid::classify_nodes() {
    const std::size_t d = dim();
    spatial_to_active_.assign(spatial_count_, -1);
    active_.clear();
    coords_.clear();

    std::vector<double> x(d);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t s = 0; s < spatial_count_; ++s) {
        std::size_t rem = s;
        for (std::size_t i = 0; i < d; ++i) {
            idx[i] = rem % counts_[i];
            rem /= counts_[i];
            x[i] = domain_.bounds[i].first + static_cast<double>(idx[i]) * spacing_[i];
        }
        if (!inside_halfspaces(domain_.halfspaces, x)) continue;
        spatial_to_active_[s] = static_cast<std::int64_t>(active_.size());
        active_.push_back(s);
        coords_.insert(coords_.end(), x.begin(), x.end());
    }
    if (active_.empty()) throw ValidationError("half-space mask leaves no grid nodes inside the box");

    // 3^d - 1 neighbour offsets
    std::vector<std::vector<long>> offsets;
    const std::size_t ncomb = static_cast<std::size_t>(std::pow(3.0, static_cast<double>(d)));
    for (std::size_t c = 0; c < ncomb; ++c) {
        std::vector<long> off(d);
        std::size_t rem = c;
        bool zero = true;
        for (std::size_t i = 0; i < d; ++i) {
            off[i] = static_cast<long>(rem % 3) - 1;
            rem /= 3;
            zero = zero && off[i] == 0;
        }
        if (!zero) offsets.push_back(std::move(off));
    }

    boundary_.assign(active_.size(), 0);
    std::size_t interior = 0;
    for (std::size_t a = 0; a < active_.size(); ++a) {
        const auto mi = multi_index(a);
        bool on_face = false;
        for (std::size_t i = 0; i < d; ++i) {
            on_face = on_face || mi[i] == 0 || mi[i] + 1 == counts_[i];
        }
        bool touches_exterior = false;
        if (!on_face) {
            for (const auto& off : offsets) {
                if (!neighbor(a, off)) {
                    touches_exterior = true;
                    break;
                }
            }
        }
        boundary_[a] = (on_face || touches_exterior) ? 1 : 0;
        if (!boundary_[a]) ++interior;
    }
    if (interior == 0) throw ValidationError("domain has empty interior at this resolution");
}

GridPtr SpaceTimeGrid::refine(std::size_t factor, const GridLimits& limits) const {
    if (factor < 2) throw ValidationError("refinement factor must be at least 2");
    Resolution r;
    r.T = horizon_;
    for (auto n : counts_) {
        if (n - 1 > std::numeric_limits<std::size_t>::max() / factor) {
            throw ValidationError("grid resolution overflows the node budget");
        }
        r.n.push_back(factor * (n - 1) + 1);
    }
    if (nt_ - 1 > std::numeric_limits<std::size_t>::max() / factor) {
        throw ValidationError("grid resolution overflows the node budget");
    }
    r.nt = factor * (nt_ - 1) + 1;
    return build(domain_, r, limits);
}

NodeClass SpaceTimeGrid::classify(std::size_t level, std::size_t spatial_index) const {
    const auto a = active_index(spatial_index);
    if (!a) return NodeClass::exterior;
    return classify(Node{level, *a});
}

NodeClass SpaceTimeGrid::classify(Node node) const {
    if (node.level + 1 == nt_) return NodeClass::terminal_slice;
    return boundary_[node.active] ? NodeClass::lateral_boundary : NodeClass::interior;
}

ClassCounts SpaceTimeGrid::class_counts() const {
    ClassCounts c;
    const std::size_t nb = static_cast<std::size_t>(std::count(boundary_.begin(), boundary_.end(), 1));
    const std::size_t na = active_.size();
    c.terminal_slice = na;
    c.interior = (na - nb) * (nt_ - 1);
    c.lateral_boundary = nb * (nt_ - 1);
    c.exterior = (spatial_count_ - na) * nt_;
    return c;
}

std::optional<std::size_t> SpaceTimeGrid::active_index(std::size_t spatial_index) const {
    if (spatial_index >= spatial_count_) return std::nullopt;
    const auto a = spatial_to_active_[spatial_index];
    if (a < 0) return std::nullopt;
    return static_cast<std::size_t>(a);
}

std::vector<std::size_t> SpaceTimeGrid::multi_index(std::size_t active) const {
    std::vector<std::size_t> mi(dim());
    std::size_t rem = active_[active];
    for (std::size_t i = 0; i < dim(); ++i) {
        mi[i] = rem % counts_[i];
        rem /= counts_[i];
    }
    return mi;
}

std::optional<std::size_t> SpaceTimeGrid::neighbor(std::size_t active,
                                                   std::span<const long> offset) const {
    std::size_t rem = active_[active];
    std::size_t s = 0;
    std::size_t stride = 1;
    for (std::size_t i = 0; i < dim(); ++i) {
        const long idx = static_cast<long>(rem % counts_[i]) + offset[i];
        rem /= counts_[i];
        if (idx < 0 || idx >= static_cast<long>(counts_[i])) return std::nullopt;
        s += static_cast<std::size_t>(idx) * stride;
        stride *= counts_[i];
    }
    return active_index(s);
}

std::optional<Node> SpaceTimeGrid::locate(double t, std::span<const double> x) const {
    if (x.size() != dim()) return std::nullopt;
    const double kf = t / dt_;
    const double kr = std::round(kf);
    if (std::abs(kf - kr) > 1e-9 || kr < 0 || kr >= static_cast<double>(nt_)) return std::nullopt;
    std::size_t s = 0;
    std::size_t stride = 1;
    for (std::size_t i = 0; i < dim(); ++i) {
        const double f = (x[i] - domain_.bounds[i].first) / spacing_[i];
        const double r = std::round(f);
        if (std::abs(f - r) > 1e-9 || r < 0 || r >= static_cast<double>(counts_[i])) {
            return std::nullopt;
        }
        s += static_cast<std::size_t>(r) * stride;
        stride *= counts_[i];
    }
    const auto a = active_index(s);
    if (!a) return std::nullopt;
    return Node{static_cast<std::size_t>(kr), *a};
}

double SpaceTimeGrid::spatial_distance_to_boundary(std::size_t active) const {
    const auto x = coords(active);
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < dim(); ++i) {
        dist = std::min({dist, x[i] - domain_.bounds[i].first, domain_.bounds[i].second - x[i]});
    }
    for (const auto& hs : domain_.halfspaces) {
        double dot = 0.0;
        double norm = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) {
            dot += hs.normal[i] * x[i];
            norm += hs.normal[i] * hs.normal[i];
        }
        dist = std::min(dist, (hs.offset - dot) / std::sqrt(norm));
    }
    return std::max(dist, 0.0);
}

double SpaceTimeGrid::distance_to_parabolic_boundary(Node node) const {
    return std::min(horizon_ - time(node.level), spatial_distance_to_boundary(node.active));
}

double SpaceTimeGrid::diameter() const {
    double sq = horizon_ * horizon_;
    for (const auto& [lo, hi] : domain_.bounds) sq += (hi - lo) * (hi - lo);
    return std::sqrt(sq);
}

std::vector<Node> interior_subgrid(const SpaceTimeGrid& grid, double margin) {
    if (margin < 0.0) throw ValidationError("interior_subgrid margin must be nonnegative");
    std::vector<Node> nodes;
    const double slack = 1e-12 * std::max(1.0, grid.diameter());
    for (std::size_t k = 0; k + 1 < grid.time_levels(); ++k) {
        for (std::size_t a = 0; a < grid.active_count(); ++a) {
            if (grid.spatial_boundary(a)) continue;
            const Node node{k, a};
            if (grid.distance_to_parabolic_boundary(node) >= margin - slack) nodes.push_back(node);
        }
    }
    return nodes;
}

std::vector<Node> all_nodes(const SpaceTimeGrid& grid) {
    std::vector<Node> nodes;
    nodes.reserve(grid.unknown_count());
    for (std::size_t k = 0; k < grid.time_levels(); ++k) {
        for (std::size_t a = 0; a < grid.active_count(); ++a) nodes.push_back({k, a});
    }
    return nodes;
}

}  // namespace parobs
