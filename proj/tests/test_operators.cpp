#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "parobs/errors.hpp"
#include "parobs/operators.hpp"

using namespace parobs;

namespace {

Eigen::MatrixXd random_symmetric(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd M(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) M(i, j) = M(j, i) = n(rng);
    }
    return M;
}

EllipticityEnvelope envelope(double lambda, double Lambda, double R = 0.0) {
    EllipticityEnvelope e;
    e.lambda = lambda;
    e.Lambda = Lambda;
    e.R = R;
    return e;
}

Control control(std::vector<double> A, std::vector<double> b, double c, double f, std::string label = "k") {
    return Control{std::move(label), Field::constant(std::move(A)), Field::constant(std::move(b)), Field::constant(c),
                   Field::constant(f)};
}

GridPtr unit_grid(std::size_t d) {
    DomainSpec dom;
    for (std::size_t i = 0; i < d; ++i) dom.bounds.emplace_back(0.0, 1.0);
    return SpaceTimeGrid::build(dom, Resolution{std::vector<std::size_t>(d, 5), 3, 1.0});
}

}  // namespace

TEST_CASE("pucci examples") {
    Eigen::MatrixXd M(2, 2);
    M << 1, 0, 0, -1;
    const auto v = pucci(M, envelope(1, 2));
    CHECK(v.plus == doctest::Approx(1.0));
    CHECK(v.minus == doctest::Approx(-1.0));
    const auto z = pucci(Eigen::MatrixXd::Zero(3, 3), envelope(0.5, 4));
    CHECK(z.plus == 0.0);
    CHECK(z.minus == 0.0);
    Eigen::MatrixXd bad(2, 2);
    bad << 1, 1e-6, 0, 1;
    CHECK_THROWS_AS(pucci(bad, envelope(1, 2)), ValidationError);
}

TEST_CASE("pucci matches the corner enumeration in the eigenbasis") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + trial % 4;
        const auto M = random_symmetric(rng, d);
        std::vector<double> m(M.data(), M.data() + d * d);
        const auto ref = testing::pucci_corners(m, d, 1.0, 2.0);
        const auto got = pucci(M, envelope(1.0, 2.0));
        CHECK(got.plus == doctest::Approx(ref.plus).epsilon(1e-12));
        CHECK(got.minus == doctest::Approx(ref.minus).epsilon(1e-12));
    }
}

TEST_CASE("pucci bounds tr(AM) for random admissible A") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> a(0.5, 3.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + trial % 3;
        const auto M = random_symmetric(rng, d);
        const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_symmetric(rng, d)).householderQ();
        Eigen::VectorXd diag(d);
        for (std::size_t i = 0; i < d; ++i) diag(i) = a(rng);
        const Eigen::MatrixXd A = Q * diag.asDiagonal() * Q.transpose();
        const double tr = (A * M).trace();
        const auto p = pucci(M, envelope(0.5, 3.0));
        CHECK(tr <= p.plus + 1e-12);
        CHECK(tr >= p.minus - 1e-12);
    }
}

TEST_CASE("eval_operator examples") {
    const auto g = unit_grid(1);
    const double x = 0.5;
    const std::span<const double> xs(&x, 1);
    BellmanOperator heat(1, {control({1.0}, {0.0}, 0.0, 0.0)}, envelope(1, 1));
    Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd M(1, 1);
    M << 2.0;
    CHECK(eval_operator(heat, 0.0, xs, 0.0, q, M).value == doctest::Approx(2.0));

    BellmanOperator two(1, {control({0.0}, {0.0}, 0.0, 1.0, "a"), control({0.0}, {0.0}, 0.0, 3.0, "b")},
                        envelope(1e-9, 1.0), Field::constant(3.0));
    // zero diffusion is outside the envelope but evaluation does not care
    const auto v = eval_operator(two, 0.0, xs, 0.0, q, Eigen::MatrixXd::Zero(1, 1));
    CHECK(v.value == doctest::Approx(3.0));
    CHECK(v.control == 1);

    BellmanOperator tie(1, {control({1.0}, {0.0}, 0.0, 1.0, "a"), control({1.0}, {0.0}, 0.0, 1.0, "b")},
                        envelope(1, 1), Field::constant(1.0));
    CHECK(eval_operator(tie, 0.0, xs, 0.0, q, M).control == 0);
}

TEST_CASE("eval_operator equals the max of independent linear evaluations") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double a1 = std::abs(u(rng)) + 0.1, a2 = std::abs(u(rng)) + 0.1;
        const double b1 = u(rng), b2 = u(rng), c1 = u(rng), c2 = u(rng), f1 = u(rng), f2 = u(rng);
        BellmanOperator op(1, {control({a1}, {b1}, c1, f1), control({a2}, {b2}, c2, f2)},
                           envelope(std::min(a1, a2), std::max(a1, a2), 4.0), Field::constant(4.0));
        const double x = 0.3, r = u(rng), qv = u(rng), m = u(rng);
        Eigen::VectorXd q(1);
        q << qv;
        Eigen::MatrixXd M(1, 1);
        M << m;
        const double expect = std::max(a1 * m + b1 * qv + c1 * r + f1, a2 * m + b2 * qv + c2 * r + f2);
        CHECK(eval_operator(op, 0.0, std::span<const double>(&x, 1), r, q, M).value ==
              doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("eval_operator is convex and monotone in M") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t d = 2;
    BellmanOperator op(d,
                       {control({1.0, 0.3, 0.3, 2.0}, {0.5, -0.2}, -0.3, 0.1, "a"),
                        control({2.0, -0.5, -0.5, 1.0}, {-1.0, 0.4}, 0.0, -0.2, "b")},
                       envelope(0.5, 2.5, 2.0), Field::constant(1.0));
    const double x[2] = {0.2, 0.7};
    for (int trial = 0; trial < 200; ++trial) {
        const auto M = random_symmetric(rng, d);
        const auto N = random_symmetric(rng, d);
        Eigen::VectorXd q = Eigen::VectorXd::Random(d);
        const double r = u(rng);
        const double th = u(rng);
        const double mid = eval_operator(op, 0.1, x, r, q, th * M + (1 - th) * N).value;
        const double chord = th * eval_operator(op, 0.1, x, r, q, M).value + (1 - th) * eval_operator(op, 0.1, x, r, q, N).value;
        CHECK(mid <= chord + 1e-12);
        Eigen::VectorXd v = Eigen::VectorXd::Random(d);
        const Eigen::MatrixXd up = M + v * v.transpose();
        CHECK(eval_operator(op, 0.1, x, r, q, up).value >= eval_operator(op, 0.1, x, r, q, M).value - 1e-12);
    }
}

TEST_CASE("validate_operator passes the heat operator") {
    const auto g = unit_grid(2);
    BellmanOperator heat(2, {control({1, 0, 0, 1}, {0, 0}, 0, 0)}, envelope(1, 1));
    const auto rep = validate_operator(heat, *g, 500, 3);
    CHECK(rep.samples == 500);
    CHECK(rep.passed());
}

TEST_CASE("validate_operator flags drift beyond R with a witness") {
    const auto g = unit_grid(1);
    BellmanOperator op(1, {control({1.0}, {2.0}, 0.0, 0.0)}, envelope(1, 1, 1.0));
    const auto rep = validate_operator(op, *g, 200, 4);
    CHECK_FALSE(rep.passed());
    CHECK(rep.sc_violations + rep.coefficient_violations > 0);
    if (rep.sc_witness) {
        CHECK((rep.sc_witness->q - rep.sc_witness->q_tilde).norm() > 0.0);
    }
}

TEST_CASE("validate_operator flags c > kappa - delta") {
    const auto g = unit_grid(1);
    auto env = envelope(1, 1, 1.0);
    env.kappa = 0.0;
    env.kappa_margin = 0.1;
    BellmanOperator op(1, {control({1.0}, {0.0}, 0.0, 0.0)}, env);
    const auto rep = validate_operator(op, *g, 100, 5);
    CHECK(rep.monotonicity_violations > 0);
    CHECK(rep.monotonicity_witness.has_value());

    auto ok_env = env;
    BellmanOperator fine(1, {control({1.0}, {0.0}, -0.5, 0.0)}, ok_env);
    CHECK(validate_operator(fine, *g, 100, 5).passed());
}

TEST_CASE("validate_operator flags sources above G") {
    const auto g = unit_grid(1);
    BellmanOperator op(1, {control({1.0}, {0.0}, 0.0, 2.0)}, envelope(1, 1), Field::constant(1.0));
    const auto rep = validate_operator(op, *g, 50, 1);
    CHECK(rep.growth_violations > 0);
    CHECK(validate_operator(op, *g, 50, 1).growth_violations == rep.growth_violations);
}

TEST_CASE("envelope validation") {
    CHECK_THROWS_AS(envelope(0.0, 1.0).validate(), ValidationError);
    CHECK_THROWS_AS(envelope(2.0, 1.0).validate(), ValidationError);
    CHECK_THROWS_AS(envelope(1.0, 1.0, -1.0).validate(), ValidationError);
}
