#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace parobs {

/// Node-sampled table: (t, x_1..x_d) -> fixed-width value tuple.
class NodeTable {
public:
    NodeTable(std::size_t dim, std::size_t width) : dim_(dim), width_(width) {}

    /// Reads CSV rows `t, x_1..x_d, v_1..v_width`. A non-numeric first row is
    /// treated as a header.
    static NodeTable read_csv(const std::filesystem::path& path, std::size_t dim, std::size_t width);

    void insert(double t, std::span<const double> x, std::span<const double> values);
    /// Throws ValidationError if (t, x) has no row.
    std::span<const double> lookup(double t, std::span<const double> x) const;

    std::size_t dim() const { return dim_; }
    std::size_t width() const { return width_; }
    std::size_t rows() const { return rows_.size(); }
    bool time_dependent() const { return time_dependent_; }

private:
    std::vector<long long> key(double t, std::span<const double> x) const;

    std::size_t dim_;
    std::size_t width_;
    std::map<std::vector<long long>, std::vector<double>> rows_;
    long long first_time_key_ = 0;
    bool time_dependent_ = false;
};

/**
 * Coefficient or data field over (t, x) with a fixed number of components:
 * 1 for scalars, d for vectors, d*d (row-major) for matrices.
 */
class Field {
public:
    using Sampler = std::function<void(double t, std::span<const double> x, std::span<double> out)>;

    Field() = default;

    static Field constant(std::vector<double> values);
    static Field constant(double value) { return constant(std::vector<double>{value}); }
    static Field function(std::size_t size, Sampler sampler, bool time_dependent = true);
    static Field table(std::shared_ptr<const NodeTable> table);

    std::size_t size() const { return size_; }
    bool time_dependent() const { return time_dependent_; }
    bool is_constant() const { return !constant_.empty() || size_ == 0; }
    bool valid() const { return size_ > 0; }

    void eval(double t, std::span<const double> x, std::span<double> out) const;
    double scalar(double t, std::span<const double> x) const;
    std::vector<double> values(double t, std::span<const double> x) const;

private:
    std::size_t size_ = 0;
    bool time_dependent_ = false;
    std::vector<double> constant_;
    Sampler sampler_;
};

/// Smooth scalar function with its time derivative, gradient and Hessian.
struct AnalyticFunction {
    std::function<double(double, std::span<const double>)> value;
    std::function<double(double, std::span<const double>)> dt;
    std::function<void(double, std::span<const double>, std::span<double>)> grad;
    std::function<void(double, std::span<const double>, std::span<double>)> hess;
    bool time_dependent = false;
};

enum class FieldRole { value, time_derivative, gradient, hessian, matrix };

/// Named analytic function. Known names: zero, affine [c0, ct, c_1..c_d],
/// quadratic [c0, ct, q], exp_affine [a, b, s], abs, step [lo, hi, x0].
AnalyticFunction builtin_function(const std::string& name, const std::vector<double>& params,
                                  std::size_t dim);

/// Field view of a builtin. Scalar builtins support every role except `matrix`;
/// the matrix builtins scaled_identity [a] and identity_step [lo, hi, x0] only
/// support `matrix`.
Field builtin_field(const std::string& name, const std::vector<double>& params, std::size_t dim,
                    FieldRole role);

}  // namespace parobs
