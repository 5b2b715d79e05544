#include "parobs/grid_function.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "parobs/errors.hpp"
#include "parobs/fields.hpp"

namespace parobs {

GridFunction::GridFunction(GridPtr grid, double fill)
    : grid_(std::move(grid)), values_(grid_->unknown_count(), fill) {}

GridFunction::GridFunction(GridPtr grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->unknown_count()) {
        throw ValidationError("grid function length does not match the grid");
    }
}

GridFunction GridFunction::sample(GridPtr grid, const Field& field) {
    if (field.size() != 1) throw ValidationError("only scalar fields can be sampled into a grid function");
    GridFunction out(grid);
    const auto& g = *grid;
    for (std::size_t k = 0; k < g.time_levels(); ++k) {
        const double t = g.time(k);
        auto lvl = out.level(k);
        for (std::size_t a = 0; a < g.active_count(); ++a) {
            lvl[a] = field.scalar(t, g.coords(a));
        }
    }
    return out;
}

bool GridFunction::same_grid(const GridFunction& other) const {
    return grid_ && other.grid_ && grid_->id() == other.grid_->id();
}

std::span<double> GridFunction::level(std::size_t k) {
    const std::size_t n = grid_->active_count();
    return {values_.data() + k * n, n};
}

std::span<const double> GridFunction::level(std::size_t k) const {
    const std::size_t n = grid_->active_count();
    return {values_.data() + k * n, n};
}

void require_same_grid(const GridFunction& u, const GridFunction& v, const char* what) {
    if (!u.same_grid(v) || u.size() != v.size()) {
        throw ValidationError(std::string("shape mismatch: ") + what);
    }
}

double sup_distance(const GridFunction& u, const GridFunction& v) {
    require_same_grid(u, v, "sup_distance");
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) d = std::max(d, std::abs(u[i] - v[i]));
    return d;
}

}  // namespace parobs
