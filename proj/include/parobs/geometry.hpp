#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace parobs {

enum class NodeClass : std::uint8_t { interior, lateral_boundary, terminal_slice, exterior };

const char* to_string(NodeClass c);

/// n . x <= offset
struct HalfSpace {
    std::vector<double> normal;
    double offset = 0.0;
};

struct DomainSpec {
    std::vector<std::pair<double, double>> bounds;  // one [lo, hi] per axis
    std::vector<HalfSpace> halfspaces;
};

struct Resolution {
    std::vector<std::size_t> n;  // nodes per spatial axis, each >= 3
    std::size_t nt = 2;          // time levels, >= 2
    double T = 1.0;
};

struct GridLimits {
    std::size_t max_nodes = 50'000'000;
};

/// A node of the space-time grid addressed by time level and active (non-exterior)
/// spatial index.
struct Node {
    std::size_t level = 0;
    std::size_t active = 0;

    friend bool operator==(const Node&, const Node&) = default;
    friend auto operator<=>(const Node&, const Node&) = default;
};

struct ClassCounts {
    std::size_t interior = 0;
    std::size_t lateral_boundary = 0;
    std::size_t terminal_slice = 0;
    std::size_t exterior = 0;

    std::size_t total() const { return interior + lateral_boundary + terminal_slice + exterior; }
};

class SpaceTimeGrid;
using GridPtr = std::shared_ptr<const SpaceTimeGrid>;

/**
 * Uniform tensor grid over the cylinder [0,T] x X where X is a box optionally cut
 * by half-spaces.
 *
 * Spatial nodes failing a half-space test are exterior. A non-exterior spatial node
 * is a boundary node if it lies on a box face or has an exterior node among its
 * 3^d - 1 lattice neighbours; otherwise it is interior, so every interior node has
 * a complete first-neighbour stencil (axis and diagonal). At time level nt-1 all
 * non-exterior nodes are terminal-slice nodes.
 *
 * Immutable after construction.
 */
class SpaceTimeGrid {
public:
    static GridPtr build(const DomainSpec& domain, const Resolution& resolution,
                         const GridLimits& limits = {});

    GridPtr refine(std::size_t factor, const GridLimits& limits = {}) const;

    std::uint64_t id() const { return id_; }
    std::size_t dim() const { return counts_.size(); }
    double horizon() const { return horizon_; }
    std::size_t time_levels() const { return nt_; }
    double dt() const { return dt_; }
    double time(std::size_t level) const { return static_cast<double>(level) * dt_; }

    std::span<const std::size_t> counts() const { return counts_; }
    std::span<const double> spacing() const { return spacing_; }
    const DomainSpec& domain() const { return domain_; }
    Resolution resolution() const { return {counts_, nt_, horizon_}; }

    /// Product of the per-axis counts (exterior nodes included).
    std::size_t spatial_count() const { return spatial_count_; }
    /// Non-exterior spatial nodes per time level.
    std::size_t active_count() const { return active_.size(); }
    /// All space-time nodes including exterior ones.
    std::size_t node_count() const { return spatial_count_ * nt_; }
    /// Non-exterior space-time nodes; the length of a GridFunction.
    std::size_t unknown_count() const { return active_.size() * nt_; }

    NodeClass classify(std::size_t level, std::size_t spatial_index) const;
    NodeClass classify(Node node) const;
    ClassCounts class_counts() const;

    bool spatial_boundary(std::size_t active) const { return boundary_[active] != 0; }
    std::size_t spatial_index(std::size_t active) const { return active_[active]; }
    std::optional<std::size_t> active_index(std::size_t spatial_index) const;

    std::vector<std::size_t> multi_index(std::size_t active) const;
    std::span<const double> coords(std::size_t active) const {
        return {coords_.data() + active * dim(), dim()};
    }

    /// Active index of the node displaced by `offset` lattice steps, if it exists
    /// and is non-exterior.
    std::optional<std::size_t> neighbor(std::size_t active, std::span<const long> offset) const;

    /// Exact node lookup by physical coordinates (tolerance: 1e-9 of a spacing).
    std::optional<Node> locate(double t, std::span<const double> x) const;

    /// Distance from (t, x) to the parabolic boundary ({T} x X) u ([0,T] x dX).
    double distance_to_parabolic_boundary(Node node) const;
    double spatial_distance_to_boundary(std::size_t active) const;

    /// Diameter of the bounding space-time box.
    double diameter() const;

    std::size_t flat(Node node) const { return node.level * active_count() + node.active; }

private:
    SpaceTimeGrid() = default;
    void classify_nodes();

    std::uint64_t id_ = 0;
    DomainSpec domain_;
    std::vector<std::size_t> counts_;
    std::vector<double> spacing_;
    std::size_t spatial_count_ = 0;
    std::size_t nt_ = 0;
    double horizon_ = 0.0;
    double dt_ = 0.0;

    std::vector<std::size_t> active_;          // active -> spatial linear index
    std::vector<std::int64_t> spatial_to_active_;  // -1 for exterior
    std::vector<std::uint8_t> boundary_;       // per active node
    std::vector<double> coords_;               // active-major, dim per node
};

/// Interior nodes whose distance to the parabolic boundary is at least `margin`.
std::vector<Node> interior_subgrid(const SpaceTimeGrid& grid, double margin);

/// Every non-exterior node, level-major.
std::vector<Node> all_nodes(const SpaceTimeGrid& grid);

}  // namespace parobs
