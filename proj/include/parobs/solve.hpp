#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "parobs/discretize.hpp"
#include "parobs/grid_function.hpp"
#include "parobs/obstacles.hpp"

namespace parobs {

/// Cubic smoothstep: 0 for a <= 0, 3s^2 - 2s^3 with s = a/eps on (0, eps), 1 beyond.
double penalty_phi(double a, double eps);
double penalty_phi_prime(double a, double eps);

struct PenaltySchedule {
    std::vector<double> epsilons;  // strictly decreasing, positive

    /// eps_n = eps1 * factor^(n-1), n = 1..steps.
    static PenaltySchedule geometric(double eps1, double factor, std::size_t steps);

    /// Halving schedule from eps1 = 0.1 * max(1, g_sup) down to at most tol / 10.
    static PenaltySchedule for_tolerance(double g_sup, double tol);

    void validate() const;
};

enum class Route { direct, penalized, incremental, brute };

const char* to_string(Route route);
Route parse_route(const std::string& name);

struct SolveOptions {
    double tol = 1e-8;
    double contact_tol = 1e-6;
    /// Per-level Newton iteration cap before falling back to nonlinear Gauss-Seidel.
    std::size_t max_newton_iterations = 200;
    /// Gauss-Seidel sweep cap per level (fallback path and brute oracle).
    std::size_t max_sweeps = 2'000'000;
    /// Keep every penalized iterate (one per epsilon) in the result.
    bool keep_sequence = true;
    /// Optional reference solution; the penalty trajectory then also records the
    /// gap to it at every epsilon.
    const GridFunction* reference = nullptr;
};

struct SolveReport {
    Route route = Route::direct;
    std::size_t outer_iterations = 0;  // time levels (direct) or epsilon stages
    std::size_t inner_iterations = 0;  // policy / Newton / sweep iterations, summed
    std::size_t fallback_levels = 0;   // levels that needed Gauss-Seidel
    double residual_max = 0.0;         // recomputed from the returned u
    double min_u_minus_g = 0.0;
    std::size_t contact_count = 0;
    std::vector<std::uint8_t> contact;  // flat node flags, u - g <= contact_tol
    double u_sup = 0.0;
    std::vector<double> epsilons;
    std::vector<double> gap_consecutive;  // |u_eps_n - u_eps_{n-1}|, first entry 0
    std::vector<double> gap_to_final;
    std::vector<double> gap_to_reference;
    std::size_t stages = 1;
    double wall_seconds = 0.0;
};

struct SolveResult {
    GridFunction u;
    SolveReport report;
};

struct PenalizedResult {
    std::vector<GridFunction> sequence;
    GridFunction u;
    SolveReport report;
};

/// Backward marching with Howard policy iteration per level; "stop" (u = g) is an
/// extra control. Requires a monotone operator and g <= b on the parabolic boundary.
SolveResult solve_direct(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                         const SolveOptions& options = {});

/**
 * Penalized Dirichlet problems D_t u + F_h[u] = h+ Phi_eps(u - g) - h+ for every
 * epsilon of the schedule, each warm-started from the previous one.
 *
 * h defaults to the scheme-consistent field -D_t g - F_h[g]; `h_override` replaces
 * it (e.g. by the analytic compatibility field).
 */
PenalizedResult solve_penalized(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b,
                                const PenaltySchedule& schedule, const SolveOptions& options = {},
                                const GridFunction* h_override = nullptr);

/**
 * Adjoins the pieces one at a time. Stage 1 is the penalized problem for piece 1;
 * stage I+1 solves max{ D_t u + F_h[u] - h+ Phi_eps(u - g^{I+1}) + h+, max_{i<=I} g^i - u } = 0
 * along the schedule with h from piece I+1.
 */
SolveResult solve_incremental(const DiscreteOperator& dop, std::span<const GridFunction> pieces,
                              const GridFunction& b, const PenaltySchedule& schedule,
                              const SolveOptions& options = {});

SolveResult solve_incremental(const DiscreteOperator& dop, const ObstacleFamily& family, const GridFunction& b,
                              const PenaltySchedule& schedule, const SolveOptions& options = {});

/// Nodewise Gauss-Seidel on u <- max{g, one-node implicit update}, swept in a fixed
/// order until the sup change drops below tol * 1e-3. At most 500 non-exterior nodes.
GridFunction brute_oracle(const DiscreteOperator& dop, const GridFunction& g, const GridFunction& b, double tol,
                          std::size_t max_sweeps = 10'000'000);

inline constexpr std::size_t brute_oracle_node_limit = 500;

/// Fills residual, dominance, contact and sup fields of a report from u.
void finalize_report(SolveReport& report, const DiscreteOperator& dop, const GridFunction& u, const GridFunction& g,
                     const GridFunction& b, const SolveOptions& options);

/// Throws ValidationError naming the first boundary node with g > b + tol.
void require_boundary_compatible(const GridFunction& g, const GridFunction& b, double tol = 1e-9);

}  // namespace parobs
