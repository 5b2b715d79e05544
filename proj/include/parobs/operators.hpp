#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "parobs/fields.hpp"
#include "parobs/geometry.hpp"

namespace parobs {

/// Uniform ellipticity bounds lambda*I <= A <= Lambda*I plus the growth constant R
/// bounding the moduli in r and q (both taken as R*s). When `kappa` is set every
/// zeroth-order coefficient must satisfy c <= kappa - kappa_margin.
struct EllipticityEnvelope {
    double lambda = 1.0;
    double Lambda = 1.0;
    double R = 0.0;
    std::optional<double> kappa;
    double kappa_margin = 0.1;

    void validate() const;
};

struct PucciValues {
    double minus = 0.0;
    double plus = 0.0;
};

/// Extremal operators inf / sup of tr(AM) over lambda*I <= A <= Lambda*I.
/// Throws ValidationError when M is not symmetric to 1e-12.
PucciValues pucci(const Eigen::MatrixXd& M, const EllipticityEnvelope& env);

/// One linear operator tr(A M) + b.q + c r + f of the Bellman family.
struct Control {
    std::string label;
    Field A;  // d*d, row-major
    Field b;  // d
    Field c;  // scalar
    Field f;  // scalar
};

struct ControlCoefficients {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    double c = 0.0;
    double f = 0.0;
};

/**
 * F(t,x,r,q,M) = max over controls of tr(A M) + b.q + c r + f.
 *
 * Convex in M by construction. Coefficients may be discontinuous in (t,x).
 */
class BellmanOperator {
public:
    BellmanOperator(std::size_t dim, std::vector<Control> controls, EllipticityEnvelope envelope,
                    Field growth = Field::constant(0.0));

    std::size_t dim() const { return dim_; }
    std::size_t control_count() const { return controls_.size(); }
    const Control& control(std::size_t i) const { return controls_[i]; }
    const EllipticityEnvelope& envelope() const { return envelope_; }
    const Field& growth() const { return growth_; }
    bool time_dependent() const;

    ControlCoefficients coefficients(std::size_t control, double t, std::span<const double> x) const;

private:
    std::size_t dim_;
    std::vector<Control> controls_;
    EllipticityEnvelope envelope_;
    Field growth_;
};

struct OperatorValue {
    double value = 0.0;
    std::size_t control = 0;  // first maximiser in declaration order
};

OperatorValue eval_operator(const BellmanOperator& op, double t, std::span<const double> x, double r,
                            const Eigen::VectorXd& q, const Eigen::MatrixXd& M);

/// Linear evaluation of a single control (no max).
double eval_control(const ControlCoefficients& coef, double r, const Eigen::VectorXd& q,
                    const Eigen::MatrixXd& M);

struct OperatorWitness {
    Node node;
    double t = 0.0;
    std::vector<double> x;
    double r = 0.0, r_tilde = 0.0;
    Eigen::VectorXd q, q_tilde;
    Eigen::MatrixXd M, M_tilde;
    double lhs = 0.0;  // the quantity that broke its bound
    double bound = 0.0;
    std::string what;
};

struct OperatorValidationReport {
    std::size_t samples = 0;
    std::size_t sc_violations = 0;
    std::size_t coefficient_violations = 0;  // ellipticity / |b| / |c| out of envelope
    std::size_t growth_violations = 0;
    std::size_t monotonicity_violations = 0;
    std::optional<OperatorWitness> sc_witness;
    std::optional<OperatorWitness> coefficient_witness;
    std::optional<OperatorWitness> growth_witness;
    std::optional<OperatorWitness> monotonicity_witness;
    double fitted_lipschitz_r = 0.0;
    double fitted_lipschitz_q = 0.0;

    bool passed() const {
        return sc_violations == 0 && coefficient_violations == 0 && growth_violations == 0 &&
               monotonicity_violations == 0;
    }
};

/// Samples random node/argument tuples and checks the structure condition with
/// linear moduli R*s, the growth bound |F(t,x,0,0,0)| <= G, and (if kappa is set)
/// strict decrease of r -> F - kappa r. Deterministic for a given seed.
OperatorValidationReport validate_operator(const BellmanOperator& op, const SpaceTimeGrid& grid,
                                           std::size_t samples, std::uint64_t seed);

}  // namespace parobs
