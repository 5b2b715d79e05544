#include "parobs/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "parobs/config.hpp"
#include "parobs/errors.hpp"
#include "parobs/verify.hpp"

namespace parobs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kCheckNames{"complementarity", "dominance",       "monotone", "operator",
                                           "kink_margin",     "comparison_fuzz", "estimate", "modulus",
                                           "stability",       "route_agreement"};

constexpr std::size_t kOperatorSamples = 1000;

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string quoted(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    return line;
}

std::string point_text(double t, std::span<const double> x) {
    std::string s = "t=" + num(t) + ", x=(";
    for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ", " : "") + num(x[i]);
    return s + ")";
}

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
        row(header);
    }
    void row(const std::vector<std::string>& cells) {
        out_ << join(cells) << '\n';
        if (!out_) throw IoError("write failed on " + path_.string());
    }

private:
    fs::path path_;
    std::ofstream out_;
};

std::vector<std::string> node_header(std::size_t dim) {
    std::vector<std::string> h{"t"};
    for (std::size_t i = 1; i <= dim; ++i) h.push_back("x_" + std::to_string(i));
    return h;
}

std::vector<std::string> node_cells(const SpaceTimeGrid& grid, Node node) {
    std::vector<std::string> c{num(grid.time(node.level))};
    for (double x : grid.coords(node.active)) c.push_back(num(x));
    return c;
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed on " + path.string());
}

struct Args {
    std::string command;
    std::string config;
    std::vector<std::string> routes;
    std::optional<double> tol;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool force = false;
    std::string checks;
    std::optional<std::size_t> refine;
    std::string solution;
    bool dump_stencils = false;
};

struct Level {
    GridPtr grid;
    Problem problem;
    DiscreteProblem dp;
};

struct Session {
    ProblemConfig cfg;
    Level base;
    SolveOptions opts;
    std::uint64_t seed = 1;
    fs::path out;
    bool csv = true;
    bool json_out = true;
    bool force = false;
};

Level make_level(const ProblemConfig& cfg, const GridPtr& grid) {
    Level lv{grid, build_problem(cfg, grid), {}};
    lv.dp = discretize_problem(lv.problem);
    return lv;
}

void require_compatible_boundary(const Level& lv, double tol) {
    const auto b = GridFunction::sample(lv.grid, lv.problem.boundary);
    const auto bad = boundary_violations(lv.problem.family, b, tol);
    if (bad.empty()) return;
    const auto& v = bad.front();
    throw ValidationError("obstacle piece '" + lv.problem.family.piece(v.piece).label +
                          "' exceeds the boundary data at " + point_text(lv.grid->time(v.node.level),
                                                                        lv.grid->coords(v.node.active)) +
                          ": g=" + num(v.g) + " > b=" + num(v.b) + " (" + std::to_string(bad.size()) +
                          " boundary nodes affected)");
}

void require_valid_operator(const Session& s) {
    const auto rep = validate_operator(*s.base.problem.op, *s.base.grid, kOperatorSamples, s.seed);
    if (rep.passed()) return;
    const OperatorWitness* w = nullptr;
    for (const auto* cand : {&rep.coefficient_witness, &rep.sc_witness, &rep.growth_witness, &rep.monotonicity_witness}) {
        if (*cand) {
            w = &**cand;
            break;
        }
    }
    std::string msg = "operator fails validation";
    if (w) msg += ": " + w->what + " at " + point_text(w->t, w->x) + " (" + num(w->lhs) + " > " + num(w->bound) + ")";
    throw ValidationError(msg + "; rerun with --force to skip this check");
}

Session open_session(const Args& a) {
    Session s;
    s.cfg = load_config(a.config);
    if (!a.routes.empty()) {
        s.cfg.routes.clear();
        for (const auto& r : a.routes) s.cfg.routes.push_back(parse_route(r));
    }
    if (a.tol) {
        if (!(*a.tol > 0.0)) throw ValidationError("--tol must be positive");
        s.cfg.tol = *a.tol;
    }
    s.seed = a.seed.value_or(s.cfg.verify.seed);
    s.out = a.out ? fs::path(*a.out) : s.cfg.output_dir;
    s.force = a.force;
    s.csv = std::count(s.cfg.formats.begin(), s.cfg.formats.end(), "csv") > 0;
    s.json_out = std::count(s.cfg.formats.begin(), s.cfg.formats.end(), "json") > 0;
    s.opts.tol = s.cfg.tol;
    s.opts.contact_tol = s.cfg.contact_tol;

    const auto grid = build_grid(s.cfg);
    s.base.grid = grid;
    s.base.problem = build_problem(s.cfg, grid);
    if (!a.force) require_valid_operator(s);
    require_compatible_boundary(s.base, 1e-9);
    s.base.dp = discretize_problem(s.base.problem);

    std::error_code ec;
    fs::create_directories(s.out, ec);
    if (ec) throw IoError("cannot create output directory " + s.out.string() + ": " + ec.message());
    return s;
}

Level refined_level(const Session& s, std::size_t factor) {
    if (factor == 1) return s.base;
    return make_level(s.cfg, s.base.grid->refine(factor));
}

SolveResult run_route(const Session& s, const DiscreteProblem& dp, Route route) {
    const auto& g = dp.obstacle.g;
    switch (route) {
        case Route::direct: return solve_direct(dp.dop, g, dp.b, s.opts);
        case Route::penalized: {
            auto opts = s.opts;
            opts.keep_sequence = true;
            auto r = solve_penalized(dp.dop, g, dp.b, penalty_schedule(s.cfg, g, s.opts.tol), opts);
            return {std::move(r.u), std::move(r.report)};
        }
        case Route::incremental:
            return solve_incremental(dp.dop, std::span<const GridFunction>(dp.pieces), dp.b,
                                     penalty_schedule(s.cfg, g, s.opts.tol), s.opts);
        case Route::brute: {
            SolveResult r{brute_oracle(dp.dop, g, dp.b, s.opts.tol), {}};
            r.report.route = Route::brute;
            finalize_report(r.report, dp.dop, r.u, g, dp.b, s.opts);
            return r;
        }
    }
    throw ValidationError("unknown route");
}

bool converged(const SolveReport& r, double tol) { return r.residual_max <= tol && r.min_u_minus_g >= -tol; }

json report_json(const SolveReport& r, double tol) {
    return json{{"route", to_string(r.route)},
                {"converged", converged(r, tol)},
                {"outer_iterations", r.outer_iterations},
                {"inner_iterations", r.inner_iterations},
                {"fallback_levels", r.fallback_levels},
                {"residual_max", r.residual_max},
                {"min_u_minus_g", r.min_u_minus_g},
                {"contact_count", r.contact_count},
                {"u_sup", r.u_sup},
                {"epsilons", r.epsilons},
                {"gap_consecutive", r.gap_consecutive},
                {"gap_to_final", r.gap_to_final},
                {"stages", r.stages},
                {"wall_seconds", r.wall_seconds}};
}

json grid_json(const SpaceTimeGrid& grid) {
    const auto cc = grid.class_counts();
    return json{{"n", std::vector<std::size_t>(grid.counts().begin(), grid.counts().end())},
                {"nt", grid.time_levels()},
                {"T", grid.horizon()},
                {"unknowns", grid.unknown_count()},
                {"interior", cc.interior},
                {"lateral_boundary", cc.lateral_boundary},
                {"terminal_slice", cc.terminal_slice},
                {"exterior", cc.exterior}};
}

void write_solution(const fs::path& path, const Level& lv, const GridFunction& u, const SolveReport& report) {
    const auto& grid = *lv.grid;
    const auto& obs = lv.dp.obstacle;
    auto header = node_header(grid.dim());
    for (const char* h : {"u", "g", "u_minus_g", "contact", "argmax_piece"}) header.push_back(h);
    CsvWriter csv(path, header);
    for (const auto& node : all_nodes(grid)) {
        const auto i = grid.flat(node);
        auto row = node_cells(grid, node);
        row.push_back(num(u[i]));
        row.push_back(num(obs.g[i]));
        row.push_back(num(u[i] - obs.g[i]));
        row.push_back(report.contact.empty() ? "0" : std::to_string(report.contact[i]));
        row.push_back(quoted(lv.problem.family.piece(obs.argmax[i]).label));
        csv.row(row);
    }
}

GridFunction read_solution(const fs::path& path, const GridPtr& grid) {
    if (!fs::exists(path)) throw ValidationError("solution file " + path.string() + " does not exist");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    // leading columns are t, x_1..x_d, u; the trailing label may hold anything
    const std::size_t lead = grid->dim() + 2;
    NodeTable table(grid->dim(), 1);
    std::string line;
    std::getline(in, line);
    for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> nums;
        std::size_t pos = 0;
        while (nums.size() < lead) {
            const auto comma = line.find(',', pos);
            const auto cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size()) {
                throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
            }
            nums.push_back(v);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (nums.size() < lead) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": too few columns");
        }
        table.insert(nums[0], std::span<const double>(nums).subspan(1, grid->dim()),
                     std::span<const double>(nums).subspan(lead - 1, 1));
    }
    GridFunction u(grid);
    for (const auto& node : all_nodes(*grid)) {
        u.at(node) = table.lookup(grid->time(node.level), grid->coords(node.active))[0];
    }
    return u;
}

struct RouteRun {
    Route route;
    SolveResult result;
};

struct Agreement {
    Route a;
    Route b;
    double sup = 0.0;
};

std::vector<Agreement> agreements(const std::vector<RouteRun>& runs) {
    std::vector<Agreement> out;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (std::size_t j = i + 1; j < runs.size(); ++j) {
            out.push_back({runs[i].route, runs[j].route, sup_distance(runs[i].result.u, runs[j].result.u)});
        }
    }
    return out;
}

int cmd_solve(const Args& a, std::ostream& out) {
    auto s = open_session(a);
    if (a.dump_stencils) {
        std::ofstream st(s.out / "stencils.csv");
        if (!st) throw IoError("cannot write " + (s.out / "stencils.csv").string());
        write_stencils_csv(s.base.dp.dop, st);
    }
    std::vector<RouteRun> runs;
    for (const auto route : s.cfg.routes) runs.push_back({route, run_route(s, s.base.dp, route)});

    bool ok = true;
    json routes = json::array();
    for (const auto& r : runs) {
        const auto& rep = r.result.report;
        ok = ok && converged(rep, s.opts.tol);
        routes.push_back(report_json(rep, s.opts.tol));
        out << to_string(r.route) << ": residual " << num(rep.residual_max) << ", min(u-g) "
            << num(rep.min_u_minus_g) << ", contact nodes " << rep.contact_count << ", "
            << (converged(rep, s.opts.tol) ? "converged" : "NOT converged") << '\n';
    }
    const auto agree = agreements(runs);
    json agree_json = json::array();
    for (const auto& ag : agree) {
        agree_json.push_back({{"a", to_string(ag.a)}, {"b", to_string(ag.b)}, {"sup_distance", ag.sup}});
        out << "sup |" << to_string(ag.a) << " - " << to_string(ag.b) << "| = " << num(ag.sup) << '\n';
    }

    if (s.csv) {
        write_solution(s.out / "solution.csv", s.base, runs.front().result.u, runs.front().result.report);
        if (runs.size() > 1) {
            for (const auto& r : runs) {
                write_solution(s.out / ("solution_" + std::string(to_string(r.route)) + ".csv"), s.base, r.result.u,
                               r.result.report);
            }
        }
    }
    if (s.json_out) {
        write_json(s.out / "report.json", json{{"config", a.config},
                                               {"tol", s.opts.tol},
                                               {"grid", grid_json(*s.base.grid)},
                                               {"routes", routes},
                                               {"route_agreement", agree_json}});
    }
    out << "wrote " << s.out.string() << '\n';
    return ok ? exit_ok : exit_check_failed;
}

struct CheckOutcome {
    std::string name;
    bool passed = false;
    std::string detail;
};

class Verifier {
public:
    Verifier(Session& s, const Args& a) : s_(s), args_(a) {}

    CheckOutcome run(const std::string& name) {
        if (name == "complementarity") return complementarity();
        if (name == "dominance") return dominance();
        if (name == "monotone") return monotone();
        if (name == "operator") return operator_check();
        if (name == "kink_margin") return kinks();
        if (name == "comparison_fuzz") return fuzz();
        if (name == "estimate") return estimate();
        if (name == "modulus") return modulus();
        if (name == "stability") return stability();
        if (name == "route_agreement") return route_agreement();
        throw ValidationError("unknown check '" + name + "'");
    }

private:
    const GridFunction& solution() {
        if (!u_) {
            if (!args_.solution.empty()) {
                u_ = read_solution(args_.solution, s_.base.grid);
            } else {
                u_ = run_route(s_, s_.base.dp, s_.cfg.routes.front()).u;
            }
        }
        return *u_;
    }

    std::unique_ptr<CsvWriter> csv(const std::string& name, const std::vector<std::string>& header) {
        if (!s_.csv) return nullptr;
        return std::make_unique<CsvWriter>(s_.out / (name + ".csv"), header);
    }

    std::size_t refinements() const { return args_.refine.value_or(s_.cfg.verify.refinements); }

    double p_exponent() const {
        return s_.cfg.verify.p > 0.0 ? s_.cfg.verify.p : static_cast<double>(s_.base.grid->dim()) + 3.0;
    }

    CheckOutcome complementarity() {
        const auto& u = solution();
        const auto& dp = s_.base.dp;
        const auto res = residual(dp.dop, u, dp.obstacle.g, dp.b);
        double worst = 0.0;
        auto out = csv("complementarity", [&] {
            auto h = node_header(s_.base.grid->dim());
            h.insert(h.end(), {"u", "g", "residual"});
            return h;
        }());
        for (const auto& node : all_nodes(*s_.base.grid)) {
            const auto i = s_.base.grid->flat(node);
            worst = std::max(worst, std::abs(res[i]));
            if (out) {
                auto row = node_cells(*s_.base.grid, node);
                row.insert(row.end(), {num(u[i]), num(dp.obstacle.g[i]), num(res[i])});
                out->row(row);
            }
        }
        return {"complementarity", worst <= s_.opts.tol, "max |residual| = " + num(worst)};
    }

    CheckOutcome dominance() {
        const auto& u = solution();
        const auto& g = s_.base.dp.obstacle.g;
        double worst = std::numeric_limits<double>::infinity();
        std::size_t contact = 0;
        auto out = csv("dominance", [&] {
            auto h = node_header(s_.base.grid->dim());
            h.insert(h.end(), {"u", "g", "u_minus_g"});
            return h;
        }());
        for (const auto& node : all_nodes(*s_.base.grid)) {
            const auto i = s_.base.grid->flat(node);
            worst = std::min(worst, u[i] - g[i]);
            if (u[i] - g[i] <= s_.opts.contact_tol) ++contact;
            if (out) {
                auto row = node_cells(*s_.base.grid, node);
                row.insert(row.end(), {num(u[i]), num(g[i]), num(u[i] - g[i])});
                out->row(row);
            }
        }
        return {"dominance", worst >= -s_.opts.tol,
                "min(u - g) = " + num(worst) + ", contact nodes " + std::to_string(contact)};
    }

    CheckOutcome monotone() {
        const auto rep = check_monotone(s_.base.dp.dop);
        if (auto out = csv("monotone", {"rows_checked", "bad_rows", "time_step_ok", "max_c_dt", "wide_stencil"})) {
            out->row({std::to_string(rep.rows_checked), std::to_string(rep.bad_rows), rep.time_step_ok ? "1" : "0",
                      num(rep.max_c_dt), s_.base.dp.dop.wide_stencil_used() ? "1" : "0"});
        }
        std::string detail = std::to_string(rep.rows_checked) + " rows, " + std::to_string(rep.bad_rows) + " bad";
        if (rep.witness) {
            detail += ", first bad entry " + num(rep.witness->value) + " at level " +
                      std::to_string(rep.witness->level) + " control " + std::to_string(rep.witness->control);
        }
        return {"monotone", rep.passed, detail};
    }

    CheckOutcome operator_check() {
        const auto rep = validate_operator(*s_.base.problem.op, *s_.base.grid, kOperatorSamples, s_.seed);
        if (auto out = csv("operator", {"samples", "sc_violations", "coefficient_violations", "growth_violations",
                                        "monotonicity_violations", "fitted_lipschitz_r", "fitted_lipschitz_q"})) {
            out->row({std::to_string(rep.samples), std::to_string(rep.sc_violations),
                      std::to_string(rep.coefficient_violations), std::to_string(rep.growth_violations),
                      std::to_string(rep.monotonicity_violations), num(rep.fitted_lipschitz_r),
                      num(rep.fitted_lipschitz_q)});
        }
        const auto bad = rep.sc_violations + rep.coefficient_violations + rep.growth_violations +
                         rep.monotonicity_violations;
        return {"operator", rep.passed(),
                std::to_string(rep.samples) + " samples, " + std::to_string(bad) + " violations"};
    }

    CheckOutcome kinks() {
        const auto& u = solution();
        std::vector<RefinedSolution> refined;
        std::vector<std::size_t> unknowns{s_.base.grid->unknown_count()};
        for (std::size_t l = 1; l < refinements(); ++l) {
            const auto lv = refined_level(s_, std::size_t{1} << l);
            refined.push_back({solve_direct(lv.dp.dop, lv.dp.obstacle.g, lv.dp.b, s_.opts).u, lv.dp.obstacle});
            unknowns.push_back(lv.grid->unknown_count());
        }
        const auto rep = kink_margin(u, s_.base.dp.obstacle, refined);

        if (auto out = csv("kink_margin", [&] {
                auto h = node_header(s_.base.grid->dim());
                h.insert(h.end(), {"piece", "neighbor_piece", "axis", "margin"});
                for (std::size_t l = 1; l < refinements(); ++l) h.push_back("margin_refined_" + std::to_string(l));
                return h;
            }())) {
            for (const auto& row : rep.rows) {
                std::vector<std::string> cells{num(row.t)};
                for (double x : row.x) cells.push_back(num(x));
                cells.insert(cells.end(), {std::to_string(row.kink.piece), std::to_string(row.kink.neighbor_piece),
                                           std::to_string(row.kink.axis), num(row.margin)});
                for (double m : row.refined) cells.push_back(num(m));
                out->row(cells);
            }
        }
        std::vector<double> margins{rep.margin};
        margins.insert(margins.end(), rep.refined_margins.begin(), rep.refined_margins.end());
        if (auto out = csv("kink_levels", {"level", "unknowns", "margin"})) {
            for (std::size_t l = 0; l < margins.size(); ++l) {
                out->row({std::to_string(l), std::to_string(unknowns[l]), num(margins[l])});
            }
        }
        if (rep.rows.empty()) return {"kink_margin", true, "no convex kinks at interior times"};
        bool ok = true;
        double worst_ratio = 1.0;
        for (std::size_t l = 0; l < margins.size(); ++l) {
            if (!(margins[l] > 0.0)) ok = false;
            if (l > 0 && std::isfinite(margins[l]) && std::isfinite(margins[l - 1]) && margins[l] > 0.0) {
                const double r = std::max(margins[l], margins[l - 1]) / std::min(margins[l], margins[l - 1]);
                worst_ratio = std::max(worst_ratio, r);
            }
        }
        ok = ok && worst_ratio <= 2.0;
        return {"kink_margin", ok,
                "margin " + num(rep.margin) + " over " + std::to_string(rep.rows.size()) +
                    " kink nodes, worst refinement ratio " + num(worst_ratio)};
    }

    CheckOutcome fuzz() {
        const auto& dp = s_.base.dp;
        const auto rep = comparison_fuzz(dp.dop, dp.obstacle.g, dp.b, s_.cfg.verify.samples, s_.seed, s_.opts.tol * 10.0,
                                         s_.opts);
        if (auto out = csv("comparison_fuzz", {"trial", "shift_g", "shift_b", "sub_violations", "super_violations",
                                               "boundary_violations", "conclusion_violations", "max_excess"})) {
            for (const auto& t : rep.trials) {
                out->row({std::to_string(t.index), num(t.shift_g), num(t.shift_b),
                          std::to_string(t.report.sub_violations), std::to_string(t.report.super_violations),
                          std::to_string(t.report.boundary_violations),
                          std::to_string(t.report.conclusion_violations), num(t.report.max_excess)});
            }
        }
        return {"comparison_fuzz", rep.passed(),
                std::to_string(rep.premise_valid) + "/" + std::to_string(rep.trials.size()) +
                    " premise-valid pairs, " + std::to_string(rep.conclusion_violations) + " conclusion violations"};
    }

    CheckOutcome estimate() {
        const double p = p_exponent();
        const double margin = s_.cfg.verify.margin;
        std::vector<EstimateReport> levels;
        for (std::size_t l = 0; l < std::max<std::size_t>(refinements(), 1); ++l) {
            const auto lv = refined_level(s_, std::size_t{1} << l);
            const auto u = (l == 0 && args_.solution.empty()) ? solution()
                                                              : solve_direct(lv.dp.dop, lv.dp.obstacle.g, lv.dp.b,
                                                                             s_.opts)
                                                                    .u;
            const auto inputs = estimate_inputs(lv.dp.pieces, lv.dp.growth, lv.dp.b, p);
            levels.push_back(interior_estimate_check(u, inputs, margin, p));
        }
        if (auto out = csv("estimate", {"level", "nodes", "p", "margin", "lhs", "u_sup", "piece_norm", "growth_norm",
                                        "boundary_sup", "C", "C_inf"})) {
            for (std::size_t l = 0; l < levels.size(); ++l) {
                const auto& e = levels[l];
                out->row({std::to_string(l), std::to_string(e.nodes), num(e.p), num(e.margin), num(e.lhs),
                          num(e.u_sup), num(e.inputs.piece_norm), num(e.inputs.growth_norm),
                          num(e.inputs.boundary_sup), num(e.C), num(e.C_inf)});
            }
        }
        if (levels.size() < 3) {
            return {"estimate", false, "needs at least 3 refinement levels, got " + std::to_string(levels.size())};
        }
        const auto trace = estimate_refinement(levels, 10.0);
        return {"estimate", trace.passed, "C ratio across levels " + num(trace.ratio)};
    }

    CheckOutcome modulus() {
        const std::vector<std::size_t> multiples{1, 2, 4, 8};
        const auto entries = modulus_probe(solution(), multiples);
        bool ok = true;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (!std::isfinite(entries[i].omega)) ok = false;
            if (i > 0 && entries[i].omega < entries[i - 1].omega) ok = false;
        }
        if (auto out = csv("modulus", {"r", "omega"})) {
            for (const auto& e : entries) out->row({num(e.r), num(e.omega)});
        }
        return {"modulus", ok, "omega(" + num(entries.back().r) + ") = " + num(entries.back().omega)};
    }

    CheckOutcome stability() {
        const auto& pb = s_.base.problem;
        auto ns = s_.cfg.verify.stages;
        std::vector<StageSolution> stages;
        std::string kind;
        if (pb.generator) {
            if (ns.empty()) ns = {1, 4, 16, 64};
            stages = truncation_stages(*pb.op, *pb.generator, ns, s_.base.grid, pb.boundary, s_.opts);
            kind = "truncation";
        } else {
            if (ns.empty()) ns = {1, 2, 4, 8};
            stages = domain_stages(*pb.op, pb.family, pb.boundary, s_.cfg.domain, s_.cfg.resolution, ns, s_.opts);
            kind = "domain";
        }
        const auto nodes = central_probes(*s_.base.grid);
        if (nodes.empty()) throw ValidationError("grid too coarse for a central probe subgrid");
        const auto probes = probe_points(*s_.base.grid, nodes);
        const auto rep = stability_run(stages, probes, 10.0 * s_.opts.tol, s_.cfg.verify.target);
        if (auto out = csv("stability", {"stage", "consecutive", "to_final"})) {
            for (std::size_t i = 0; i < rep.labels.size(); ++i) {
                out->row({quoted(rep.labels[i]), num(rep.consecutive[i]), num(rep.to_final[i])});
            }
        }
        return {"stability", rep.passed,
                kind + " stages, " + std::to_string(rep.probe_count) + " probes, final distance " +
                    num(rep.final_distance) + (rep.nonincreasing ? "" : ", distances increase")};
    }

    CheckOutcome route_agreement() {
        auto routes = s_.cfg.routes;
        if (routes.size() < 2) routes = {Route::direct, Route::penalized};
        std::vector<RouteRun> runs;
        for (const auto r : routes) runs.push_back({r, run_route(s_, s_.base.dp, r)});
        const auto agree = agreements(runs);
        double worst = 0.0;
        auto out = csv("route_agreement", {"route_a", "route_b", "sup_distance"});
        for (const auto& ag : agree) {
            worst = std::max(worst, ag.sup);
            if (out) out->row({to_string(ag.a), to_string(ag.b), num(ag.sup)});
        }
        return {"route_agreement", worst <= 10.0 * s_.opts.tol, "max pairwise sup distance " + num(worst)};
    }

    Session& s_;
    const Args& args_;
    std::optional<GridFunction> u_;
};

std::vector<std::string> split_checks(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
                   item.end());
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_verify(const Args& a, std::ostream& out) {
    auto require_known = [](const std::vector<std::string>& names) {
        for (const auto& name : names) {
            if (std::find(kCheckNames.begin(), kCheckNames.end(), name) == kCheckNames.end()) {
                throw ValidationError("unknown check '" + name + "'");
            }
        }
    };
    auto cfg_checks = split_checks(a.checks);
    require_known(cfg_checks);
    auto s = open_session(a);
    if (cfg_checks.empty()) cfg_checks = s.cfg.verify.checks;
    if (cfg_checks.empty()) throw ValidationError("no checks selected; pass --checks or set verify.checks");
    require_known(cfg_checks);
    Verifier v(s, a);
    std::vector<CheckOutcome> outcomes;
    bool ok = true;
    for (const auto& name : cfg_checks) {
        outcomes.push_back(v.run(name));
        const auto& o = outcomes.back();
        ok = ok && o.passed;
        out << (o.passed ? "PASS " : "FAIL ") << o.name << ": " << o.detail << '\n';
    }
    if (s.csv) {
        CsvWriter summary(s.out / "summary.csv", {"check", "passed", "detail"});
        for (const auto& o : outcomes) summary.row({o.name, o.passed ? "1" : "0", quoted(o.detail)});
    }
    if (s.json_out) {
        json checks = json::array();
        for (const auto& o : outcomes) checks.push_back({{"check", o.name}, {"passed", o.passed}, {"detail", o.detail}});
        write_json(s.out / "verify.json", json{{"config", a.config}, {"seed", s.seed}, {"checks", checks}});
    }
    out << (ok ? "all checks passed" : "some checks failed") << '\n';
    return ok ? exit_ok : exit_check_failed;
}

double restricted_distance(const GridFunction& coarse, const GridFunction& fine) {
    const auto& cg = coarse.grid();
    const auto& fg = fine.grid();
    double m = 0.0;
    for (const auto& node : all_nodes(cg)) {
        const auto f = fg.locate(cg.time(node.level), cg.coords(node.active));
        if (f) m = std::max(m, std::abs(coarse.at(node) - fine.at(*f)));
    }
    return m;
}

int cmd_sweep(const Args& a, std::ostream& out) {
    auto s = open_session(a);
    const std::size_t k = a.refine.value_or(s.cfg.verify.refinements);
    if (k < 1) throw ValidationError("--refine must be at least 1");
    const auto route = s.cfg.routes.front();

    std::vector<double> center;
    for (const auto& [lo, hi] : s.cfg.domain.bounds) center.push_back(0.5 * (lo + hi));

    struct Row {
        Level lv;
        SolveResult res;
        double kink = 0.0;
    };
    std::vector<Row> rows;
    bool ok = true;
    for (std::size_t l = 0; l < k; ++l) {
        auto lv = refined_level(s, std::size_t{1} << l);
        auto res = run_route(s, lv.dp, route);
        ok = ok && converged(res.report, s.opts.tol);
        const double kink = kink_margin(res.u, lv.dp.obstacle).margin;
        rows.push_back({std::move(lv), std::move(res), kink});
    }
    auto header = std::vector<std::string>{"level", "unknowns", "dt"};
    for (std::size_t i = 1; i <= s.base.grid->dim(); ++i) header.push_back("h_" + std::to_string(i));
    header.insert(header.end(), {"residual_max", "min_u_minus_g", "contact_count", "u_center_t0", "diff_to_finest",
                                 "kink_margin"});
    std::unique_ptr<CsvWriter> csv;
    if (s.csv) csv = std::make_unique<CsvWriter>(s.out / "sweep.csv", header);
    for (std::size_t l = 0; l < rows.size(); ++l) {
        const auto& r = rows[l];
        const auto& grid = *r.lv.grid;
        const auto node = grid.locate(0.0, center);
        const double uc = node ? r.res.u.at(*node) : std::nan("");
        const double diff = restricted_distance(r.res.u, rows.back().res.u);
        std::vector<std::string> cells{std::to_string(l), std::to_string(grid.unknown_count()), num(grid.dt())};
        for (double h : grid.spacing()) cells.push_back(num(h));
        cells.insert(cells.end(), {num(r.res.report.residual_max), num(r.res.report.min_u_minus_g),
                                   std::to_string(r.res.report.contact_count), num(uc), num(diff), num(r.kink)});
        if (csv) csv->row(cells);
        out << "level " << l << ": " << grid.unknown_count() << " unknowns, u(0, center) = " << num(uc)
            << ", diff to finest " << num(diff) << '\n';
    }
    return ok ? exit_ok : exit_check_failed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"parobs: finite-difference solver and verification harness for parabolic obstacle problems"};
    app.require_subcommand(1);
    Args a;

    auto add_common = [&a](CLI::App* sub) {
        sub->add_option("config", a.config, "problem config file")->required();
        sub->add_option("--route", a.routes, "solver route: direct, penalized, incremental or brute (repeatable)");
        sub->add_option("--tol", a.tol, "residual tolerance");
        sub->add_option("--seed", a.seed, "seed for randomized checks");
        sub->add_option("--out", a.out, "output directory");
        sub->add_flag("--force", a.force, "skip operator validation");
    };
    auto* solve = app.add_subcommand("solve", "solve the obstacle problem and write the solution grid");
    add_common(solve);
    solve->add_flag("--dump-stencils", a.dump_stencils, "also write the assembled stencils as CSV");
    auto* verify = app.add_subcommand("verify", "run named verification checks");
    add_common(verify);
    verify->add_option("--checks", a.checks, "comma-separated check names");
    verify->add_option("--refine", a.refine, "number of refinement levels for refinement-based checks");
    verify->add_option("--solution", a.solution, "use a solution.csv from an earlier solve");
    auto* sweep = app.add_subcommand("sweep", "refinement study");
    add_common(sweep);
    sweep->add_option("--refine", a.refine, "number of grid levels");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_validation;
    }

    try {
        if (solve->parsed()) return cmd_solve(a, out);
        if (verify->parsed()) return cmd_verify(a, out);
        return cmd_sweep(a, out);
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return exit_validation;
    } catch (const ConvergenceError& e) {
        err << "solver did not converge: " << e.what() << '\n';
        return exit_convergence;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << '\n';
        return exit_io;
    } catch (const nlohmann::json::exception& e) {
        err << "validation error: " << e.what() << '\n';
        return exit_validation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_check_failed;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace parobs
