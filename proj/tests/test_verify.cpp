#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "instances.hpp"
#include "parobs/errors.hpp"
#include "parobs/verify.hpp"

using namespace parobs;
using parobs::testing::constant_operator;
using parobs::testing::line_grid;
using parobs::testing::poly_piece;
using parobs::testing::random_instance;

namespace {

template <class Fn>
GridFunction sampled(const GridPtr& grid, Fn fn) {
    GridFunction out(grid);
    for (const auto& node : all_nodes(*grid)) out.at(node) = fn(grid->time(node.level), grid->coords(node.active));
    return out;
}

}  // namespace

TEST_CASE("discrete Sobolev norm") {
    const auto grid = line_grid(-1.0, 1.0, 21, 11, 1.0);
    const auto nodes = all_nodes(*grid);
    const double w = grid->dt() * grid->spacing()[0];
    const double N = static_cast<double>(nodes.size());

    SUBCASE("constant") {
        const GridFunction c(grid, -3.0);
        CHECK(discrete_sobolev_norm(c, 4.0, nodes) == doctest::Approx(3.0 * std::pow(N * w, 0.25)));
        CHECK(discrete_sobolev_norm(c, std::numeric_limits<double>::infinity(), nodes) == 3.0);
        CHECK(discrete_lp_norm(c, 2.0, nodes) == doctest::Approx(3.0 * std::sqrt(N * w)));
    }

    SUBCASE("linear in x") {
        const auto u = sampled(grid, [](double, auto x) { return 2.0 * x[0]; });
        double acc = 0.0;
        for (const auto& n : nodes) acc += std::pow(2.0 * std::abs(grid->coords(n.active)[0]), 5.0) + 32.0;
        CHECK(discrete_sobolev_norm(u, 5.0, nodes) == doctest::Approx(std::pow(acc * w, 0.2)));
    }

    SUBCASE("homogeneity and triangle inequality") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        for (int trial = 0; trial < 10; ++trial) {
            GridFunction u(grid), v(grid), s(grid), m(grid);
            const double lambda = 3.0 * unit(rng);
            for (std::size_t i = 0; i < u.size(); ++i) {
                u[i] = unit(rng);
                v[i] = unit(rng);
                s[i] = u[i] + v[i];
                m[i] = lambda * u[i];
            }
            const double nu = discrete_sobolev_norm(u, 4.0, nodes);
            CHECK(discrete_sobolev_norm(m, 4.0, nodes) == doctest::Approx(std::abs(lambda) * nu));
            CHECK(discrete_sobolev_norm(s, 4.0, nodes) <= nu + discrete_sobolev_norm(v, 4.0, nodes) + 1e-12);
        }
    }

    SUBCASE("argument checks") {
        const GridFunction c(grid, 1.0);
        CHECK_THROWS_AS(discrete_sobolev_norm(c, 3.0, nodes), ValidationError);
        CHECK_THROWS_AS(discrete_sobolev_norm(c, 4.0, {}), ValidationError);
        CHECK_THROWS_AS(discrete_lp_norm(c, 0.0, nodes), ValidationError);
    }
}

TEST_CASE("Sobolev norms of closed-form fields approach their integrals") {
    SUBCASE("x^2 in one dimension") {
        // |u|^4 + |u_x|^4 + |u_xx|^4 = x^8 + 16 x^4 + 16 over [0,1] x [-1,1]
        const auto grid = line_grid(-1.0, 1.0, 801, 401, 1.0);
        const auto u = sampled(grid, [](double, auto x) { return x[0] * x[0]; });
        const double exact = std::pow(2.0 / 9.0 + 32.0 / 5.0 + 32.0, 0.25);
        CHECK(discrete_sobolev_norm(u, 4.0, all_nodes(*grid)) == doctest::Approx(exact).epsilon(0.01));
    }
    SUBCASE("xy in two dimensions counts both mixed derivatives") {
        // |xy|^5 + |y|^5 + |x|^5 + 2 over [0,1] x [-1,1]^2
        const auto grid =
            SpaceTimeGrid::build(DomainSpec{{{-1.0, 1.0}, {-1.0, 1.0}}, {}}, Resolution{{201, 201}, 41, 1.0});
        const auto u = sampled(grid, [](double, auto x) { return x[0] * x[1]; });
        const double exact = std::pow(1.0 / 9.0 + 4.0 / 3.0 + 8.0, 0.2);
        CHECK(discrete_sobolev_norm(u, 5.0, all_nodes(*grid)) == doctest::Approx(exact).epsilon(0.01));
    }
}

TEST_CASE("comparison checks") {
    const auto in = random_instance(31, {.max_pieces = 2, .c_max = -0.1});
    const auto u = solve_direct(in.dop, in.obstacle.g, in.b).u;
    auto v = u;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.1;

    const auto ok = check_comparison(u, v, in.dop, in.obstacle.g, 1e-8);
    CHECK(ok.premises_hold());
    CHECK(ok.conclusion_holds());
    CHECK(ok.max_excess == doctest::Approx(-0.1));

    const auto bad = check_comparison(v, u, in.dop, in.obstacle.g, 1e-8);
    CHECK(bad.boundary_violations > 0);
    CHECK(!bad.premises_hold());
    CHECK(bad.conclusion_violations == u.size());
    REQUIRE(bad.witness);
    CHECK(*bad.witness == Node{0, 0});
}

TEST_CASE("comparison fuzz is deterministic and finds no violations") {
    const auto in = random_instance(41, {.dim = 2, .max_pieces = 2, .c_max = -0.1});
    const auto a = comparison_fuzz(in.dop, in.obstacle.g, in.b, 12, 99, 1e-7);
    const auto b = comparison_fuzz(in.dop, in.obstacle.g, in.b, 12, 99, 1e-7);
    REQUIRE(a.trials.size() == 12);
    CHECK(a.passed());
    CHECK(a.premise_valid == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(a.trials[i].shift_g == b.trials[i].shift_g);
        CHECK(a.trials[i].shift_b == b.trials[i].shift_b);
        CHECK(a.trials[i].report.max_excess == b.trials[i].report.max_excess);
    }
    const auto c = comparison_fuzz(in.dop, in.obstacle.g, in.b, 12, 100, 1e-7);
    CHECK(c.trials[0].shift_g != a.trials[0].shift_g);
}

TEST_CASE("kink margin") {
    const auto grid = line_grid(-1.0, 1.0, 21, 6, 1.0);
    const ObstacleFamily fam({poly_piece("x", 0.0, 0.0, {1.0}, 0.0), poly_piece("-x", 0.0, 0.0, {-1.0}, 0.0)});
    const auto s = sample_obstacle(fam, grid);

    CHECK(kink_margin(s.g, s).margin == 0.0);
    auto lifted = s.g;
    for (std::size_t i = 0; i < lifted.size(); ++i) lifted[i] += 0.3;
    const auto rep = kink_margin(lifted, fam);
    CHECK(rep.margin == doctest::Approx(0.3));
    CHECK(rep.rows.size() == grid->time_levels() - 1);

    const ObstacleFamily single({poly_piece("q", 0.0, 0.0, {0.0}, 1.0)});
    CHECK(std::isinf(kink_margin(GridFunction(grid), single).margin));

    const auto fine = grid->refine(2);
    const auto sf = sample_obstacle(fam, fine);
    auto uf = sf.g;
    for (std::size_t i = 0; i < uf.size(); ++i) uf[i] += 0.1;
    const std::vector<RefinedSolution> refined{{uf, sf}};
    const auto with = kink_margin(lifted, s, refined);
    REQUIRE(with.refined_margins.size() == 1);
    CHECK(with.refined_margins[0] == doctest::Approx(0.1));
    for (const auto& row : with.rows) CHECK(row.refined[0] == doctest::Approx(0.1));
}

TEST_CASE("stability run") {
    const auto grid = line_grid(-1.0, 1.0, 9, 5, 1.0);
    const auto probes = probe_points(*grid, central_probes(*grid));
    REQUIRE(!probes.empty());
    for (const auto& p : probes) {
        CHECK(p.t <= 0.25 + 1e-12);
        CHECK(std::abs(p.x[0]) <= 0.25 + 1e-12);
    }

    const GridFunction one(grid, 1.0);
    std::vector<StageSolution> same{{"a", one}, {"b", one}, {"c", one}};
    const auto flat = stability_run(same, probes, 1e-8);
    CHECK(flat.passed);
    CHECK(flat.final_distance == 0.0);
    CHECK(flat.probe_count == probes.size());

    auto shifted = [&](double s) {
        GridFunction u(grid, 1.0 + s);
        return u;
    };
    std::vector<StageSolution> approach{{"a", shifted(0.1)}, {"b", shifted(0.01)}, {"c", shifted(0.0005)}, {"d", one}};
    const auto conv = stability_run(approach, probes, 1e-8);
    CHECK(conv.nonincreasing);
    CHECK(conv.passed);
    CHECK(conv.to_final[0] == doctest::Approx(0.1));
    CHECK(conv.consecutive[1] == doctest::Approx(0.09));

    std::vector<StageSolution> wander{{"a", shifted(0.01)}, {"b", shifted(0.1)}, {"c", one}};
    CHECK(!stability_run(wander, probes, 1e-8).nonincreasing);
    std::vector<StageSolution> far{{"a", shifted(0.1)}, {"b", shifted(0.05)}, {"c", one}};
    CHECK(!stability_run(far, probes, 1e-8).passed);

    CHECK_THROWS_AS(stability_run(std::span(same).first(2), probes, 1e-8), ValidationError);
    CHECK_THROWS_AS(stability_run(same, {}, 1e-8), ValidationError);
}

TEST_CASE("domain stages nest inside the full cylinder") {
    const auto op = constant_operator(1, {1.0}, {0.0}, 0.0, 1.0);
    const ObstacleFamily fam({poly_piece("zero", 0.0, 0.0, {0.0}, 0.0)});
    const DomainSpec dom{{{-1.0, 1.0}}, {}};
    const Resolution res{{41}, 41, 1.0};
    const std::vector<std::size_t> ns{1, 2, 4};
    const auto stages = domain_stages(*op, fam, Field::constant(0.0), dom, res, ns);
    REQUIRE(stages.size() == 4);
    CHECK(stages.back().label == "full");
    CHECK(stages[0].u.grid().domain().bounds[0].first == doctest::Approx(-0.5));
    CHECK(stages[0].u.grid().horizon() == doctest::Approx(0.5));
    CHECK(stages[1].u.grid().domain().bounds[0].second == doctest::Approx(0.75));
    const auto probes = probe_points(*stages.back().u.grid_ptr(), central_probes(stages.back().u.grid()));
    CHECK_NOTHROW(stability_run(stages, probes, 1e-8));
    // f = 1 makes every value grow with the cylinder
    const auto rep = stability_run(stages, probes, 1e-8, 1.0);
    CHECK(rep.nonincreasing);
}

TEST_CASE("truncation stages reuse one grid") {
    const auto grid = line_grid(-0.5, 0.5, 21, 11, 1.0);
    const auto op = constant_operator(1, {0.1}, {0.0}, -10.0, 0.0);
    const std::vector<std::size_t> ns{1, 2, 4};
    const auto b = Field::function(1, [](double, std::span<const double> x, std::span<double> out) {
        out[0] = std::max(0.0, 0.5 * x[0]);
    });
    const auto stages = truncation_stages(*op, tangent_line_generator(1), ns, grid, b);
    REQUIRE(stages.size() == 3);
    CHECK(stages[2].label == "n=4");
    for (std::size_t i = 0; i < stages[0].u.size(); ++i) {
        CHECK(stages[1].u[i] >= stages[0].u[i] - 1e-12);
        CHECK(stages[2].u[i] >= stages[1].u[i] - 1e-12);
    }
}

TEST_CASE("interior estimate") {
    const auto grid = line_grid(-1.0, 1.0, 21, 21, 1.0);
    const GridFunction zero(grid, 0.0);
    const std::vector<GridFunction> pieces{zero};
    const auto inputs = estimate_inputs(pieces, zero, zero, 4.0);
    const auto rep = interior_estimate_check(zero, inputs, 0.1, 4.0);
    CHECK(rep.C == 0.0);
    CHECK(rep.lhs == 0.0);
    CHECK(rep.nodes == interior_subgrid(*grid, 0.1).size());
    CHECK_THROWS_AS(interior_estimate_check(zero, inputs, grid->diameter(), 4.0), ValidationError);
    CHECK_THROWS_AS(interior_estimate_check(zero, inputs, 0.0, 4.0), ValidationError);

    const GridFunction two(grid, 2.0);
    const auto in2 = estimate_inputs(pieces, zero, two, 4.0);
    CHECK(in2.boundary_sup == 2.0);
    const auto rep2 = interior_estimate_check(two, in2, 0.1, 4.0);
    CHECK(rep2.C == doctest::Approx(rep2.lhs / 3.0));
    CHECK(rep2.C_inf == doctest::Approx(2.0 / 3.0));

    std::vector<EstimateReport> levels(3);
    levels[0].C = 1.0;
    levels[1].C = 2.0;
    levels[2].C = 5.0;
    CHECK(estimate_refinement(levels).passed);
    CHECK(estimate_refinement(levels).ratio == doctest::Approx(5.0));
    levels[1].C = 20.0;
    CHECK(!estimate_refinement(levels).passed);
    CHECK(!estimate_refinement(std::span(levels).first(2)).passed);
}

TEST_CASE("modulus probe") {
    const auto grid = line_grid(0.0, 1.0, 11, 6, 0.25);
    const std::vector<std::size_t> ms{1, 2, 4, 8};
    for (const auto& e : modulus_probe(GridFunction(grid, 7.0), ms)) CHECK(e.omega == 0.0);

    const auto u = sampled(grid, [](double, auto x) { return x[0]; });
    const auto mod = modulus_probe(u, ms);
    REQUIRE(mod.size() == 4);
    for (std::size_t i = 0; i < mod.size(); ++i) {
        CHECK(mod[i].r == doctest::Approx(0.1 * static_cast<double>(ms[i])));
        CHECK(mod[i].omega == doctest::Approx(mod[i].r));
    }
}
