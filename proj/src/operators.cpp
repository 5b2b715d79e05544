#include "parobs/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "parobs/errors.hpp"

namespace parobs {

void EllipticityEnvelope::validate() const {
    if (!(lambda > 0.0) || !(Lambda >= lambda) || !std::isfinite(Lambda)) {
        throw ValidationError("ellipticity envelope needs 0 < lambda <= Lambda");
    }
    if (!(R >= 0.0) || !std::isfinite(R)) throw ValidationError("growth constant R must be >= 0");
    if (kappa && !(kappa_margin > 0.0)) throw ValidationError("kappa margin must be positive");
}

PucciValues pucci(const Eigen::MatrixXd& M, const EllipticityEnvelope& env) {
    if (M.rows() != M.cols()) throw ValidationError("pucci: matrix must be square");
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ValidationError("pucci: matrix is not symmetric");
    }
    if (!M.allFinite()) throw ValidationError("pucci: non-finite matrix");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
    double pos = 0.0;
    double neg = 0.0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        const double e = eig.eigenvalues()[i];
        if (e > 0) {
            pos += e;
        } else {
            neg += e;
        }
    }
    return {env.lambda * pos + env.Lambda * neg, env.Lambda * pos + env.lambda * neg};
}

BellmanOperator::BellmanOperator(std::size_t dim, std::vector<Control> controls,
                                 EllipticityEnvelope envelope, Field growth)
    : dim_(dim), controls_(std::move(controls)), envelope_(envelope), growth_(std::move(growth)) {
    if (dim_ == 0) throw ValidationError("operator dimension must be positive");
    if (controls_.empty()) throw ValidationError("operator needs at least one control");
    envelope_.validate();
    if (growth_.size() != 1) throw ValidationError("growth envelope G must be scalar");
    for (std::size_t i = 0; i < controls_.size(); ++i) {
        const auto& c = controls_[i];
        if (c.A.size() != dim_ * dim_ || c.b.size() != dim_ || c.c.size() != 1 || c.f.size() != 1) {
            throw ValidationError("control " + std::to_string(i) + " has coefficient fields of wrong size");
        }
    }
}

bool BellmanOperator::time_dependent() const {
    return std::any_of(controls_.begin(), controls_.end(), [](const Control& c) {
        return c.A.time_dependent() || c.b.time_dependent() || c.c.time_dependent() ||
               c.f.time_dependent();
    });
}

ControlCoefficients BellmanOperator::coefficients(std::size_t control, double t,
                                                  std::span<const double> x) const {
    const auto& c = controls_.at(control);
    ControlCoefficients out;
    out.A.resize(dim_, dim_);
    std::vector<double> a(dim_ * dim_);
    c.A.eval(t, x, a);
    for (std::size_t i = 0; i < dim_; ++i) {
        for (std::size_t j = 0; j < dim_; ++j) out.A(i, j) = a[i * dim_ + j];
    }
    out.b.resize(dim_);
    c.b.eval(t, x, std::span<double>(out.b.data(), dim_));
    out.c = c.c.scalar(t, x);
    out.f = c.f.scalar(t, x);
    if (!out.A.allFinite() || !out.b.allFinite() || !std::isfinite(out.c) || !std::isfinite(out.f)) {
        throw ValidationError("non-finite coefficient in control '" + c.label + "'");
    }
    return out;
}

double eval_control(const ControlCoefficients& coef, double r, const Eigen::VectorXd& q,
                    const Eigen::MatrixXd& M) {
    return (coef.A.cwiseProduct(M)).sum() + coef.b.dot(q) + coef.c * r + coef.f;
}

OperatorValue eval_operator(const BellmanOperator& op, double t, std::span<const double> x, double r,
                            const Eigen::VectorXd& q, const Eigen::MatrixXd& M) {
    const auto d = static_cast<Eigen::Index>(op.dim());
    if (q.size() != d || M.rows() != d || M.cols() != d || x.size() != op.dim()) {
        throw ValidationError("eval_operator: argument dimensions do not match the operator");
    }
    if (!std::isfinite(t) || !std::isfinite(r) || !q.allFinite() || !M.allFinite() ||
        std::any_of(x.begin(), x.end(), [](double v) { return !std::isfinite(v); })) {
        throw ValidationError("eval_operator: non-finite input");
    }
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ValidationError("eval_operator: M is not symmetric");
    }
    OperatorValue best{-std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < op.control_count(); ++i) {
        const double v = eval_control(op.coefficients(i, t, x), r, q, M);
        if (v > best.value) best = {v, i};
    }
    return best;
}

namespace {

Eigen::MatrixXd random_symmetric(std::mt19937_64& rng, Eigen::Index d, double amp) {
    std::uniform_real_distribution<double> u(-amp, amp);
    Eigen::MatrixXd M(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i; j < d; ++j) {
            M(i, j) = u(rng);
            M(j, i) = M(i, j);
        }
    }
    return M;
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index d, double amp) {
    std::uniform_real_distribution<double> u(-amp, amp);
    Eigen::VectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = u(rng);
    return v;
}

}  // namespace

OperatorValidationReport validate_operator(const BellmanOperator& op, const SpaceTimeGrid& grid,
                                           std::size_t samples, std::uint64_t seed) {
    if (samples == 0) throw ValidationError("validate_operator needs at least one sample");
    if (grid.dim() != op.dim()) throw ValidationError("operator and grid dimensions differ");

    const auto& env = op.envelope();
    const auto d = static_cast<Eigen::Index>(op.dim());
    constexpr double amp = 5.0;

    OperatorValidationReport report;
    report.samples = samples;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_level(0, grid.time_levels() - 2);
    std::uniform_int_distribution<std::size_t> pick_node(0, grid.active_count() - 1);
    std::uniform_real_distribution<double> u(-amp, amp);

    auto witness = [&](Node node, double r, double rt, const Eigen::VectorXd& q, const Eigen::VectorXd& qt,
                       const Eigen::MatrixXd& M, const Eigen::MatrixXd& Mt, double lhs, double bound,
                       std::string what) {
        OperatorWitness w;
        w.node = node;
        w.t = grid.time(node.level);
        const auto x = grid.coords(node.active);
        w.x.assign(x.begin(), x.end());
        w.r = r;
        w.r_tilde = rt;
        w.q = q;
        w.q_tilde = qt;
        w.M = M;
        w.M_tilde = Mt;
        w.lhs = lhs;
        w.bound = bound;
        w.what = std::move(what);
        return w;
    };

    for (std::size_t s = 0; s < samples; ++s) {
        const Node node{pick_level(rng), pick_node(rng)};
        const double t = grid.time(node.level);
        const auto x = grid.coords(node.active);

        const double r = u(rng), rt = u(rng);
        const Eigen::VectorXd q = random_vector(rng, d, amp), qt = random_vector(rng, d, amp);
        const Eigen::MatrixXd M = random_symmetric(rng, d, amp), Mt = random_symmetric(rng, d, amp);

        // coefficient envelope
        double max_f = -std::numeric_limits<double>::infinity();
        bool coef_bad = false;
        for (std::size_t i = 0; i < op.control_count(); ++i) {
            const auto coef = op.coefficients(i, t, x);
            max_f = std::max(max_f, coef.f);
            const Eigen::MatrixXd sym = 0.5 * (coef.A + coef.A.transpose());
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
            const double emin = eig.eigenvalues().minCoeff();
            const double emax = eig.eigenvalues().maxCoeff();
            const double asym = (coef.A - coef.A.transpose()).cwiseAbs().maxCoeff();
            const double etol = 1e-12 * std::max(1.0, env.Lambda);
            if (!coef_bad && (emin < env.lambda - etol || emax > env.Lambda + etol || asym > 1e-12 ||
                              coef.b.norm() > env.R * (1 + 1e-12) + 1e-14 ||
                              std::abs(coef.c) > env.R * (1 + 1e-12) + 1e-14)) {
                coef_bad = true;
                ++report.coefficient_violations;
                if (!report.coefficient_witness) {
                    report.coefficient_witness =
                        witness(node, r, rt, q, qt, M, Mt, std::max(coef.b.norm(), std::abs(coef.c)), env.R,
                                "control '" + op.control(i).label + "' outside ellipticity/R envelope");
                }
            }
            if (env.kappa && coef.c > *env.kappa - env.kappa_margin) {
                ++report.monotonicity_violations;
                if (!report.monotonicity_witness) {
                    report.monotonicity_witness =
                        witness(node, r, rt, q, qt, M, Mt, coef.c, *env.kappa - env.kappa_margin,
                                "c exceeds kappa - margin in control '" + op.control(i).label + "'");
                }
            }
        }

        // structure condition
        const double F = eval_operator(op, t, x, r, q, M).value;
        const double Ft = eval_operator(op, t, x, rt, qt, Mt).value;
        const auto pu = pucci(M - Mt, env);
        const double mod = env.R * std::abs(r - rt) + env.R * (q - qt).norm();
        const double diff = F - Ft;
        const double tol = 1e-10 * (1.0 + std::abs(F) + std::abs(Ft));
        if (diff < pu.minus - mod - tol || diff > pu.plus + mod + tol) {
            ++report.sc_violations;
            if (!report.sc_witness) {
                const bool low = diff < pu.minus - mod - tol;
                report.sc_witness = witness(node, r, rt, q, qt, M, Mt, diff,
                                            low ? pu.minus - mod : pu.plus + mod,
                                            low ? "F difference below P^- - moduli"
                                                : "F difference above P^+ + moduli");
            }
        }

        // growth
        const double G = op.growth().scalar(t, x);
        if (std::abs(max_f) > G + 1e-12 * (1.0 + std::abs(G))) {
            ++report.growth_violations;
            if (!report.growth_witness) {
                report.growth_witness =
                    witness(node, r, rt, q, qt, M, Mt, std::abs(max_f), G, "|F(t,x,0,0,0)| exceeds G");
            }
        }

        // strict decrease of F - kappa r along a line in r
        if (env.kappa) {
            const double lo = std::min(r, rt), hi = std::max(r, rt);
            if (hi > lo) {
                const double a = eval_operator(op, t, x, lo, q, M).value - *env.kappa * lo;
                const double b = eval_operator(op, t, x, hi, q, M).value - *env.kappa * hi;
                if (!(b < a)) {
                    ++report.monotonicity_violations;
                    if (!report.monotonicity_witness) {
                        report.monotonicity_witness = witness(node, lo, hi, q, q, M, M, b - a, 0.0,
                                                              "F - kappa r not strictly decreasing");
                    }
                }
            }
        }

        // empirical moduli
        if (r != rt) {
            const double Fr = eval_operator(op, t, x, rt, q, M).value;
            report.fitted_lipschitz_r = std::max(report.fitted_lipschitz_r, std::abs(F - Fr) / std::abs(r - rt));
        }
        const double dq = (q - qt).norm();
        if (dq > 0) {
            const double Fq = eval_operator(op, t, x, r, qt, M).value;
            report.fitted_lipschitz_q = std::max(report.fitted_lipschitz_q, std::abs(F - Fq) / dq);
        }
    }
    return report;
}

}  // namespace parobs
