#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "parobs/discretize.hpp"
#include "parobs/geometry.hpp"
#include "parobs/obstacles.hpp"
#include "parobs/operators.hpp"
#include "parobs/solve.hpp"

namespace parobs {

/**
 * Sectioned text file: `[section]` or `[section.sub]` headers followed by
 * `key = <JSON value>` lines. A value may continue over several lines while
 * brackets are unbalanced. `#` starts a comment outside strings. Returns
 * {"section": {"key": value}} with dotted sections nested.
 */
nlohmann::json read_sectioned(const std::filesystem::path& path);
nlohmann::json parse_sectioned(const std::string& text, const std::string& origin = "<config>");

struct PenaltyConfig {
    std::optional<double> eps1;
    std::optional<double> factor;
    std::optional<std::size_t> steps;
};

struct VerifyConfig {
    std::vector<std::string> checks;
    double margin = 0.1;
    double p = 0.0;  // 0: d + 3
    std::size_t refinements = 3;
    std::uint64_t seed = 1;
    double target = 1e-3;
    std::size_t samples = 50;
    std::vector<std::size_t> stages;  // empty: {1, 4, 16, 64} or {1, 2, 4, 8}
};

struct ProblemConfig {
    std::filesystem::path base_dir;  // tables resolve against this
    DomainSpec domain;
    Resolution resolution;

    EllipticityEnvelope envelope;
    std::vector<nlohmann::json> controls;
    nlohmann::json growth;

    std::vector<nlohmann::json> pieces;
    std::optional<nlohmann::json> generator;
    std::size_t truncate_n = 0;

    nlohmann::json boundary;

    std::vector<Route> routes{Route::direct};
    double tol = 1e-8;
    double contact_tol = 1e-6;
    PenaltyConfig penalty;

    VerifyConfig verify;

    std::filesystem::path output_dir = "parobs_out";
    std::vector<std::string> formats{"csv", "json"};
};

/// Parses and checks every key; unknown sections or keys are ValidationErrors.
ProblemConfig load_config(const std::filesystem::path& path);
ProblemConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Coefficient spec {const: v} | {table: path} | {builtin: name, params: [...]} |
/// {max: [spec, ...]} (scalars only).
Field build_field(const nlohmann::json& spec, std::size_t dim, FieldRole role, const std::filesystem::path& base_dir);

struct Problem {
    GridPtr grid;
    std::shared_ptr<const BellmanOperator> op;
    ObstacleFamily family;
    Field boundary;
    std::optional<PieceGenerator> generator;  // set for countable families
};

/// Operator, obstacle family (truncated if a generator is given) and boundary field
/// for `grid`, which must match the config's dimension.
Problem build_problem(const ProblemConfig& config, const GridPtr& grid);

GridPtr build_grid(const ProblemConfig& config);

struct DiscreteProblem {
    DiscreteOperator dop;
    SampledObstacle obstacle;
    std::vector<GridFunction> pieces;
    GridFunction b;
    GridFunction growth;
};

DiscreteProblem discretize_problem(const Problem& problem, const AssemblyOptions& options = {});

PenaltySchedule penalty_schedule(const ProblemConfig& config, const GridFunction& g, double tol);

}  // namespace parobs
