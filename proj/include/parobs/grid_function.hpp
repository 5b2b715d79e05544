#pragma once

#include <span>
#include <vector>

#include "parobs/geometry.hpp"

namespace parobs {

class Field;

/// One scalar per non-exterior space-time node, stored level-major.
class GridFunction {
public:
    GridFunction() = default;
    explicit GridFunction(GridPtr grid, double fill = 0.0);
    GridFunction(GridPtr grid, std::vector<double> values);

    /// Samples a scalar field at every non-exterior node.
    static GridFunction sample(GridPtr grid, const Field& field);

    const SpaceTimeGrid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    bool same_grid(const GridFunction& other) const;

    std::size_t size() const { return values_.size(); }
    double& operator[](std::size_t flat) { return values_[flat]; }
    double operator[](std::size_t flat) const { return values_[flat]; }
    double& at(Node node) { return values_[grid_->flat(node)]; }
    double at(Node node) const { return values_[grid_->flat(node)]; }

    std::span<double> level(std::size_t k);
    std::span<const double> level(std::size_t k) const;

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

private:
    GridPtr grid_;
    std::vector<double> values_;
};

/// max |u - v| over all nodes; throws if the grids differ.
double sup_distance(const GridFunction& u, const GridFunction& v);

/// Throws ValidationError unless both functions live on the same grid.
void require_same_grid(const GridFunction& u, const GridFunction& v, const char* what);

}  // namespace parobs
