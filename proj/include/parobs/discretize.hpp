#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "parobs/geometry.hpp"
#include "parobs/grid_function.hpp"
#include "parobs/operators.hpp"

namespace parobs {

enum class DriftScheme { upwind, centered };

struct AssemblyOptions {
    DriftScheme drift = DriftScheme::upwind;
    /// Search lattice directions beyond the first-neighbour stencil when cross terms
    /// break diagonal dominance.
    bool allow_wide_stencil = true;
    /// Throw instead of returning a non-monotone operator.
    bool require_monotone = true;
    double monotone_slack = 1e-12;
};

/**
 * Implicit monotone finite-difference operator for u_t + F = 0.
 *
 * For every time level k < nt-1, control and spatially interior node the row stores
 *   (L u)(x) = sum_j coef_j u(x_j) + diag u(x) + source
 * approximating tr(A D^2u) + b.Du + c u + f with coefficients sampled at (t_k, x).
 * Off-diagonal entries are nonnegative on monotone rows and diag = c - sum_j coef_j.
 * Levels share one stencil set when the operator is time independent.
 */
class DiscreteOperator {
public:
    struct Row {
        std::span<const std::uint32_t> cols;  // active indices, ascending
        std::span<const double> coefs;
        double diag = 0.0;
        double source = 0.0;
    };

    const SpaceTimeGrid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    std::size_t control_count() const { return controls_; }
    const AssemblyOptions& options() const { return options_; }
    bool wide_stencil_used() const { return wide_used_; }

    /// Active indices of the spatially interior nodes, i.e. rows with an equation.
    std::span<const std::size_t> interior() const { return interior_; }
    /// Row position of an active node, if it is interior.
    std::optional<std::size_t> row_index(std::size_t active) const;

    Row row(std::size_t level, std::size_t control, std::size_t row) const;

    /// (L^control u)(x_row) at `level` for the level slice `u_level`.
    double apply(std::size_t level, std::size_t control, std::size_t row, std::span<const double> u_level) const;

    /// Bellman max over controls; returns value and first maximiser.
    std::pair<double, std::size_t> apply_max(std::size_t level, std::size_t row,
                                             std::span<const double> u_level) const;

private:
    friend DiscreteOperator assemble(const BellmanOperator&, GridPtr, const AssemblyOptions&);

    struct Block {
        std::vector<std::uint32_t> offsets;
        std::vector<std::uint32_t> cols;
        std::vector<double> coefs;
        std::vector<double> diag;
        std::vector<double> source;
    };

    const Block& block(std::size_t level, std::size_t control) const;

    GridPtr grid_;
    AssemblyOptions options_;
    std::size_t controls_ = 0;
    bool time_dependent_ = false;
    bool wide_used_ = false;
    std::vector<std::size_t> interior_;
    std::vector<std::int64_t> row_of_active_;
    std::vector<Block> blocks_;  // slot-major, then control
};

DiscreteOperator assemble(const BellmanOperator& op, GridPtr grid, const AssemblyOptions& options = {});

struct MonotonicityWitness {
    std::size_t level = 0;
    std::size_t control = 0;
    std::size_t active = 0;
    std::size_t col = 0;
    double value = 0.0;
};

struct MonotonicityReport {
    bool passed = true;
    std::size_t rows_checked = 0;
    std::size_t bad_rows = 0;
    std::optional<MonotonicityWitness> witness;
    /// 1/dt - c > 0 on every row, which keeps the implicit step an M-matrix.
    bool time_step_ok = true;
    double max_c_dt = 0.0;
};

MonotonicityReport check_monotone(const DiscreteOperator& dop, double slack = 1e-12);

/// Interior: max{ D_t u + F_h[u], g - u }; boundary and terminal nodes: u - b.
GridFunction residual(const DiscreteOperator& dop, const GridFunction& u, const GridFunction& g,
                      const GridFunction& b);

/// D_t u + F_h[u] at interior nodes, 0 elsewhere.
GridFunction pde_residual(const DiscreteOperator& dop, const GridFunction& u);

/// Scheme-consistent compatibility field -D_t g - F_h[g] at interior nodes, 0 elsewhere.
GridFunction discrete_compatibility(const DiscreteOperator& dop, const GridFunction& g);

/// CSV dump `level,row,col,control,value` (diagonal included as col == row).
void write_stencils_csv(const DiscreteOperator& dop, std::ostream& out);

}  // namespace parobs
