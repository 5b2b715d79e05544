#include "parobs/fields.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "parobs/errors.hpp"

namespace parobs {

namespace {

constexpr double kKeyScale = 1e9;

std::vector<double> parse_csv_numbers(const std::string& line, bool& ok) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    ok = true;
    while (std::getline(ss, cell, ',')) {
        const auto first = cell.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            ok = false;
            return out;
        }
        const char* begin = cell.c_str() + first;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
        if (end == begin || (end && *end != '\0')) {
            ok = false;
            return out;
        }
        out.push_back(v);
    }
    return out;
}

}  // namespace

NodeTable NodeTable::read_csv(const std::filesystem::path& path, std::size_t dim, std::size_t width) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open table " + path.string());
    NodeTable table(dim, width);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        bool ok = false;
        auto nums = parse_csv_numbers(line, ok);
        if (!ok) {
            if (line_no == 1) continue;  // header
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        if (nums.size() != 1 + dim + width) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(1 + dim + width) + " columns");
        }
        table.insert(nums[0], std::span<const double>(nums).subspan(1, dim),
                     std::span<const double>(nums).subspan(1 + dim, width));
    }
    if (table.rows() == 0) throw ValidationError("table " + path.string() + " has no rows");
    return table;
}

std::vector<long long> NodeTable::key(double t, std::span<const double> x) const {
    std::vector<long long> k;
    k.reserve(1 + x.size());
    k.push_back(std::llround(t * kKeyScale));
    for (double v : x) k.push_back(std::llround(v * kKeyScale));
    return k;
}

void NodeTable::insert(double t, std::span<const double> x, std::span<const double> values) {
    if (x.size() != dim_ || values.size() != width_) throw ValidationError("table row has wrong width");
    auto k = key(t, x);
    if (rows_.empty()) {
        first_time_key_ = k.front();
    } else if (k.front() != first_time_key_) {
        time_dependent_ = true;
    }
    rows_[std::move(k)] = std::vector<double>(values.begin(), values.end());
}

std::span<const double> NodeTable::lookup(double t, std::span<const double> x) const {
    auto k = key(t, x);
    auto it = rows_.find(k);
    if (it == rows_.end() && !rows_.empty() && !time_dependent()) {
        // A single time slice covers every time level.
        k.front() = first_time_key_;
        it = rows_.find(k);
    }
    if (it == rows_.end()) {
        std::ostringstream msg;
        msg << "coefficient table missing a node at t=" << t << " x=(";
        for (std::size_t i = 0; i < x.size(); ++i) msg << (i ? "," : "") << x[i];
        msg << ")";
        throw ValidationError(msg.str());
    }
    return it->second;
}

Field Field::constant(std::vector<double> values) {
    if (values.empty()) throw ValidationError("constant field needs at least one component");
    Field f;
    f.size_ = values.size();
    f.constant_ = std::move(values);
    return f;
}

Field Field::function(std::size_t size, Sampler sampler, bool time_dependent) {
    if (size == 0 || !sampler) throw ValidationError("function field needs a sampler and a size");
    Field f;
    f.size_ = size;
    f.sampler_ = std::move(sampler);
    f.time_dependent_ = time_dependent;
    return f;
}

Field Field::table(std::shared_ptr<const NodeTable> table) {
    const std::size_t width = table->width();
    const bool td = table->time_dependent();
    return function(
        width,
        [table](double t, std::span<const double> x, std::span<double> out) {
            const auto row = table->lookup(t, x);
            std::copy(row.begin(), row.end(), out.begin());
        },
        td);
}

void Field::eval(double t, std::span<const double> x, std::span<double> out) const {
    if (!constant_.empty()) {
        std::copy(constant_.begin(), constant_.end(), out.begin());
        return;
    }
    if (!sampler_) throw ValidationError("field is not initialised");
    sampler_(t, x, out);
}

double Field::scalar(double t, std::span<const double> x) const {
    if (size_ != 1) throw ValidationError("scalar read of a field with " + std::to_string(size_) + " components");
    double v = 0.0;
    eval(t, x, std::span<double>(&v, 1));
    return v;
}

std::vector<double> Field::values(double t, std::span<const double> x) const {
    std::vector<double> out(size_);
    eval(t, x, out);
    return out;
}

AnalyticFunction builtin_function(const std::string& name, const std::vector<double>& params,
                                  std::size_t dim) {
    auto need = [&](std::size_t n) {
        if (params.size() != n) {
            throw ValidationError("builtin '" + name + "' expects " + std::to_string(n) + " params");
        }
    };
    auto zero_vec = [](double, std::span<const double>, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
    };
    AnalyticFunction f;
    f.hess = zero_vec;
    f.grad = zero_vec;
    f.dt = [](double, std::span<const double>) { return 0.0; };

    if (name == "zero") {
        need(0);
        f.value = [](double, std::span<const double>) { return 0.0; };
    } else if (name == "affine") {
        need(dim + 2);
        const std::vector<double> p = params;
        f.time_dependent = p[1] != 0.0;
        f.value = [p](double t, std::span<const double> x) {
            double v = p[0] + p[1] * t;
            for (std::size_t i = 0; i < x.size(); ++i) v += p[2 + i] * x[i];
            return v;
        };
        f.dt = [ct = p[1]](double, std::span<const double>) { return ct; };
        f.grad = [p](double, std::span<const double>, std::span<double> out) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[2 + i];
        };
    } else if (name == "quadratic") {
        need(3);
        const double c0 = params[0], ct = params[1], q = params[2];
        f.time_dependent = ct != 0.0;
        f.value = [=](double t, std::span<const double> x) {
            double v = c0 + ct * t;
            for (double xi : x) v += q * xi * xi;
            return v;
        };
        f.dt = [ct](double, std::span<const double>) { return ct; };
        f.grad = [q](double, std::span<const double> x, std::span<double> out) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * q * x[i];
        };
        f.hess = [q, dim](double, std::span<const double>, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            for (std::size_t i = 0; i < dim; ++i) out[i * dim + i] = 2.0 * q;
        };
    } else if (name == "exp_affine") {
        need(3);
        const double a = params[0], b = params[1], s = params[2];
        f.value = [=](double, std::span<const double> x) { return a + b * std::exp(s * x[0]); };
        f.grad = [=](double, std::span<const double> x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            out[0] = b * s * std::exp(s * x[0]);
        };
        f.hess = [=](double, std::span<const double> x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            out[0] = b * s * s * std::exp(s * x[0]);
        };
    } else if (name == "abs") {
        need(0);
        f.value = [](double, std::span<const double> x) { return std::abs(x[0]); };
        f.grad = [](double, std::span<const double> x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            out[0] = x[0] > 0 ? 1.0 : (x[0] < 0 ? -1.0 : 0.0);
        };
    } else if (name == "step") {
        need(3);
        const double lo = params[0], hi = params[1], x0 = params[2];
        f.value = [=](double, std::span<const double> x) { return x[0] < x0 ? lo : hi; };
    } else {
        throw ValidationError("unknown builtin '" + name + "'");
    }
    return f;
}

Field builtin_field(const std::string& name, const std::vector<double>& params, std::size_t dim,
                    FieldRole role) {
    if (name == "scaled_identity" || name == "identity_step") {
        if (role != FieldRole::matrix) {
            throw ValidationError("builtin '" + name + "' is matrix-valued");
        }
        const bool step = name == "identity_step";
        if (params.size() != (step ? 3u : 1u)) {
            throw ValidationError("builtin '" + name + "' has wrong parameter count");
        }
        const std::vector<double> p = params;
        return Field::function(
            dim * dim,
            [p, dim, step](double, std::span<const double> x, std::span<double> out) {
                const double a = step ? (x[0] < p[2] ? p[0] : p[1]) : p[0];
                std::fill(out.begin(), out.end(), 0.0);
                for (std::size_t i = 0; i < dim; ++i) out[i * dim + i] = a;
            },
            false);
    }
    if (role == FieldRole::matrix) throw ValidationError("builtin '" + name + "' is scalar-valued");
    auto fn = builtin_function(name, params, dim);
    switch (role) {
        case FieldRole::value:
            return Field::function(
                1, [v = fn.value](double t, std::span<const double> x, std::span<double> out) { out[0] = v(t, x); },
                fn.time_dependent);
        case FieldRole::time_derivative:
            return Field::function(
                1, [v = fn.dt](double t, std::span<const double> x, std::span<double> out) { out[0] = v(t, x); },
                fn.time_dependent);
        case FieldRole::gradient:
            return Field::function(dim, fn.grad, fn.time_dependent);
        case FieldRole::hessian:
            return Field::function(dim * dim, fn.hess, fn.time_dependent);
        case FieldRole::matrix:
            break;
    }
    throw ValidationError("unsupported builtin role");
}

}  // namespace parobs
