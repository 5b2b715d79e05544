#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parobs/discretize.hpp"
#include "parobs/grid_function.hpp"
#include "parobs/obstacles.hpp"
#include "parobs/solve.hpp"

namespace parobs {

/// Discrete W^{1,2,p} norm over a node set with measure dt * prod h_i. Differences
/// are central inside the set and one-sided at its edges; mixed derivatives are
/// nested first differences. p = infinity gives the max norm of the same quantities.
double discrete_sobolev_norm(const GridFunction& u, double p, std::span<const Node> subdomain);

/// Discrete L^p norm (same measure); p = infinity gives the max.
double discrete_lp_norm(const GridFunction& u, double p, std::span<const Node> subdomain);

struct ComparisonReport {
    std::size_t sub_violations = 0;       // interior nodes with residual(u) < -tol
    std::size_t super_violations = 0;     // interior nodes with residual(v) > tol
    std::size_t boundary_violations = 0;  // boundary nodes with u > v + tol
    std::size_t conclusion_violations = 0;
    double max_excess = -std::numeric_limits<double>::infinity();  // max of u - v
    std::optional<Node> witness;  // first conclusion violation

    bool premises_hold() const { return sub_violations == 0 && super_violations == 0 && boundary_violations == 0; }
    bool conclusion_holds() const { return conclusion_violations == 0; }
};

/// Checks that u is a subsolution, v a supersolution and u <= v on the parabolic
/// boundary, then whether u <= v + tol everywhere.
ComparisonReport check_comparison(const GridFunction& u, const GridFunction& v, const DiscreteOperator& dop,
                                  const GridFunction& g, double tol);

struct FuzzTrial {
    std::size_t index = 0;
    double shift_g = 0.0;
    double shift_b = 0.0;
    ComparisonReport report;
};

struct ComparisonFuzzReport {
    std::vector<FuzzTrial> trials;
    std::size_t premise_valid = 0;
    std::size_t conclusion_violations = 0;
    bool passed() const { return conclusion_violations == 0 && premise_valid == trials.size(); }
};

/// Builds sub/super pairs by solving with randomly raised obstacle and boundary data
/// and checks each pair. Deterministic for a given seed.
ComparisonFuzzReport comparison_fuzz(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                                     std::size_t trials, std::uint64_t seed, double tol,
                                     const SolveOptions& options = {});

struct KinkRow {
    Kink kink;
    double t = 0.0;
    std::vector<double> x;
    double margin = 0.0;
    std::vector<double> refined;  // same node on each refined grid; NaN if absent
};

struct KinkReport {
    double margin = std::numeric_limits<double>::infinity();
    std::vector<KinkRow> rows;
    std::vector<double> refined_margins;  // kink margin of each refined solution
};

struct RefinedSolution {
    GridFunction u;
    SampledObstacle obstacle;
};

/// min of u - g over convex-kink nodes at times before T; +inf without kinks.
KinkReport kink_margin(const GridFunction& u, const SampledObstacle& obstacle,
                       std::span<const RefinedSolution> refined = {});
KinkReport kink_margin(const GridFunction& u, const ObstacleFamily& family,
                       std::span<const RefinedSolution> refined = {});

struct ProbePoint {
    double t = 0.0;
    std::vector<double> x;
};

/// Interior nodes with t <= time_fraction * T lying at least pad_fraction * extent
/// inside every face of the bounding box. The default region is contained in every
/// stage of domain_stages.
std::vector<Node> central_probes(const SpaceTimeGrid& grid, double time_fraction = 0.25, double pad_fraction = 0.375);

/// Coordinates of every node in `nodes`.
std::vector<ProbePoint> probe_points(const SpaceTimeGrid& grid, std::span<const Node> nodes);

struct StageSolution {
    std::string label;
    GridFunction u;
};

struct StabilityReport {
    std::vector<std::string> labels;
    std::vector<double> consecutive;  // first entry 0
    std::vector<double> to_final;
    std::size_t probe_count = 0;
    bool nonincreasing = true;
    double final_distance = 0.0;  // distance of the second-to-last stage to the last
    bool passed = false;
};

/// Sup distances on the probe points between consecutive stages and to the last stage.
StabilityReport stability_run(std::span<const StageSolution> stages, std::span<const ProbePoint> probes, double tol,
                              double target = 1e-3);

/// Direct solves with the first n pieces of `generator` for each n (same grid).
std::vector<StageSolution> truncation_stages(const BellmanOperator& op, const PieceGenerator& generator,
                                             std::span<const std::size_t> ns, const GridPtr& grid, const Field& b,
                                             const SolveOptions& options = {});

/**
 * Direct solves on Y_n = [0, T(2n-1)/(2n)] x X_n, X_n the box shrunk by extent/(4n)
 * per side, both snapped to the full grid so nodes coincide; the last stage is the
 * full cylinder.
 */
std::vector<StageSolution> domain_stages(const BellmanOperator& op, const ObstacleFamily& family, const Field& b,
                                         const DomainSpec& domain, const Resolution& resolution,
                                         std::span<const std::size_t> ns, const SolveOptions& options = {});

struct EstimateInputs {
    double piece_norm = 0.0;  // sup_a |g^a|_{W^{1,2,p}(Y)}
    double growth_norm = 0.0;  // |G|_{L^p(Y)}
    double boundary_sup = 0.0;  // |b|_inf on the parabolic boundary
};

EstimateInputs estimate_inputs(std::span<const GridFunction> pieces, const GridFunction& growth,
                               const GridFunction& b, double p);

struct EstimateReport {
    double margin = 0.0;
    double p = 0.0;
    std::size_t nodes = 0;
    double lhs = 0.0;    // |u|_{W^{1,2,p}(Y')}
    double u_sup = 0.0;  // |u|_inf on the whole grid
    EstimateInputs inputs;
    double C = 0.0;
    double C_inf = 0.0;
};

/// Fitted C = lhs / (1 + inputs) on the margin-interior subgrid.
EstimateReport interior_estimate_check(const GridFunction& u, const EstimateInputs& inputs, double margin, double p);

struct RefinementTrace {
    std::vector<double> C;
    double ratio = 0.0;  // max / min
    bool passed = false;
};

/// Passes when at least three levels are given and max C / min C <= factor.
RefinementTrace estimate_refinement(std::span<const EstimateReport> levels, double factor = 10.0);

struct ModulusEntry {
    double r = 0.0;
    double omega = 0.0;
};

/// sup |u(P) - u(Q)| over node pairs with space-time distance <= r, for
/// r = m * max spacing, m in `multiples`. Nondecreasing in r.
std::vector<ModulusEntry> modulus_probe(const GridFunction& u, std::span<const std::size_t> multiples);

}  // namespace parobs
