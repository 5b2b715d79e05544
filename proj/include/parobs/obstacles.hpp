#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "parobs/fields.hpp"
#include "parobs/geometry.hpp"
#include "parobs/grid_function.hpp"
#include "parobs/operators.hpp"

namespace parobs {

/// One payoff g^a with samplers for its derivatives (g_x: d, g_xx: d*d row-major).
struct ObstaclePiece {
    std::string label;
    Field g;
    Field g_t;
    Field g_x;
    Field g_xx;
    std::optional<double> declared_norm;

    /// Piece whose four samplers come from one analytic function.
    static ObstaclePiece analytic(std::string label, const AnalyticFunction& fn, std::size_t dim);
};

struct TruncationInfo {
    std::size_t n = 0;
    std::size_t probe_n = 0;
    double probe_gap = 0.0;  // max over nodes of g_{probe_n} - g_n
};

/// g = max over pieces; pieces are kept in declaration order.
class ObstacleFamily {
public:
    ObstacleFamily() = default;
    explicit ObstacleFamily(std::vector<ObstaclePiece> pieces);

    std::size_t size() const { return pieces_.size(); }
    const ObstaclePiece& piece(std::size_t i) const { return pieces_[i]; }
    const std::vector<ObstaclePiece>& pieces() const { return pieces_; }
    void add(ObstaclePiece piece) { pieces_.push_back(std::move(piece)); }

    std::optional<TruncationInfo> truncation;

private:
    std::vector<ObstaclePiece> pieces_;
};

struct ObstacleValue {
    double value = 0.0;
    std::size_t piece = 0;  // first maximiser
};

ObstacleValue eval_obstacle(const ObstacleFamily& family, const SpaceTimeGrid& grid, Node node);

/// g and its argmax labels at every non-exterior node.
struct SampledObstacle {
    GridFunction g;
    std::vector<std::uint32_t> argmax;
};

SampledObstacle sample_obstacle(const ObstacleFamily& family, const GridPtr& grid);

/// Each piece sampled separately.
std::vector<GridFunction> sample_pieces(const ObstacleFamily& family, const GridPtr& grid);

/// Enumerates a countable family; returns nullopt once a finite family is exhausted.
using PieceGenerator = std::function<std::optional<ObstaclePiece>(std::size_t index)>;

/// First n pieces of the generator. The probe gap compares against the first
/// `probe_n` pieces (default 2n, clipped to what the generator can supply).
ObstacleFamily truncate_family(const PieceGenerator& generator, std::size_t n, const GridPtr& grid,
                               std::size_t probe_n = 0);

/// Tangent lines s*x_1 - s^2/4 to x_1^2 with s in [0, 1] enumerated in base-2
/// van der Corput order (0, 1/2, 1/4, 3/4, ...). Never exhausted.
PieceGenerator tangent_line_generator(std::size_t dim);

struct Kink {
    Node node;
    std::size_t piece = 0;           // argmax at the node
    std::size_t neighbor_piece = 0;  // argmax at the differing neighbour
    std::size_t axis = 0;
};

/// Interior nodes where the argmax differs from an axis neighbour and the second
/// difference of g along that axis is positive (convex kink).
std::vector<Kink> locate_kinks(const ObstacleFamily& family, const GridPtr& grid);
std::vector<Kink> locate_kinks(const SampledObstacle& sampled);

struct CompatibilityField {
    GridFunction h;
    GridFunction h_plus;
    double p = 0.0;
    double lp_norm = 0.0;  // discrete L^p norm of h over non-terminal nodes
};

/// h = -g_t - F(t, x, g, g_x, g_xx) from the piece's analytic derivatives.
CompatibilityField compatibility_h(const ObstaclePiece& piece, const BellmanOperator& op, const GridPtr& grid,
                                   double p = 0.0);

struct BoundaryViolation {
    Node node;
    double g = 0.0;
    double b = 0.0;
    std::size_t piece = 0;
};

/// Nodes on the parabolic boundary where some piece exceeds b by more than tol.
std::vector<BoundaryViolation> boundary_violations(const ObstacleFamily& family, const GridFunction& b,
                                                   double tol = 1e-9);

}  // namespace parobs
