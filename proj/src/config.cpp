#include "parobs/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "parobs/errors.hpp"

namespace parobs {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Drops a trailing `#` comment and updates the bracket depth; string-aware.
std::string scan_line(const std::string& line, int& depth) {
    std::string out;
    bool in_string = false;
    bool escape = false;
    for (const char ch : line) {
        if (in_string) {
            out += ch;
            if (escape) {
                escape = false;
            } else if (ch == '\\') {
                escape = true;
            } else if (ch == '"') {
                in_string = false;
            }
            continue;
        }
        if (ch == '#') break;
        if (ch == '"') in_string = true;
        if (ch == '[' || ch == '{') ++depth;
        if (ch == ']' || ch == '}') --depth;
        out += ch;
    }
    return out;
}

/// Key tracker for one section: every key must be consumed.
class Section {
public:
    Section(const json& obj, std::string name) : obj_(obj), name_(std::move(name)) {
        if (!obj_.is_object()) throw ValidationError("config section [" + name_ + "] is not a table");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const json& get(const std::string& key) {
        seen_.insert(key);
        if (!obj_.contains(key)) throw ValidationError("config key " + name_ + "." + key + " is required");
        return obj_.at(key);
    }

    template <class T>
    T value(const std::string& key) {
        const auto& v = get(key);
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config key " + name_ + "." + key + " has the wrong type");
        }
    }

    template <class T>
    T value_or(const std::string& key, T fallback) {
        return has(key) ? value<T>(key) : fallback;
    }

    void mark(const std::string& key) { seen_.insert(key); }

    void finish() const {
        for (const auto& [key, v] : obj_.items()) {
            if (!seen_.count(key)) throw ValidationError("unknown config key " + name_ + "." + key);
        }
    }

private:
    const json& obj_;
    std::string name_;
    std::set<std::string> seen_;
};

double positive(double v, const std::string& what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(what + " must be positive");
    return v;
}

std::size_t width_of(FieldRole role, std::size_t dim) {
    switch (role) {
        case FieldRole::value:
        case FieldRole::time_derivative: return 1;
        case FieldRole::gradient: return dim;
        case FieldRole::hessian:
        case FieldRole::matrix: return dim * dim;
    }
    return 1;
}

}  // namespace

json parse_sectioned(const std::string& text, const std::string& origin) {
    static const std::regex header(R"(^\s*\[([A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*)\]\s*$)");
    static const std::regex assignment(R"(^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$)");
    json doc = json::object();
    json* section = nullptr;
    std::string section_name;
    std::string pending_key;
    std::string pending_value;
    std::size_t pending_line = 0;
    int depth = 0;

    auto where = [&](std::size_t line) { return origin + ":" + std::to_string(line) + ": "; };
    auto commit = [&] {
        json v;
        try {
            v = json::parse(pending_value);
        } catch (const json::exception& e) {
            throw ValidationError(where(pending_line) + "bad value for '" + pending_key + "': " + e.what());
        }
        if (section->contains(pending_key)) {
            throw ValidationError(where(pending_line) + "duplicate key '" + pending_key + "'");
        }
        (*section)[pending_key] = std::move(v);
        pending_key.clear();
        pending_value.clear();
    };

    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!pending_key.empty()) {
            pending_value += "\n" + scan_line(raw, depth);
            if (depth <= 0) commit();
            continue;
        }
        depth = 0;
        const std::string line = trim(scan_line(raw, depth));
        if (line.empty()) continue;
        std::smatch m;
        const std::string code = line;
        if (std::regex_match(code, m, header)) {
            section_name = m[1];
            section = &doc;
            std::stringstream parts(section_name);
            std::string part;
            while (std::getline(parts, part, '.')) {
                if (section->contains(part) && !(*section)[part].is_object()) {
                    throw ValidationError(where(lineno) + "section [" + section_name + "] clashes with a key");
                }
                section = &(*section)[part];
                if (section->is_null()) *section = json::object();
            }
            depth = 0;
            continue;
        }
        if (std::regex_match(code, m, assignment)) {
            if (!section) throw ValidationError(where(lineno) + "key outside of any [section]");
            pending_key = m[1];
            pending_value = m[2];
            pending_line = lineno;
            if (trim(pending_value).empty()) throw ValidationError(where(lineno) + "missing value");
            if (depth <= 0) commit();
            continue;
        }
        throw ValidationError(where(lineno) + "cannot parse line '" + line + "'");
    }
    if (!pending_key.empty()) throw ValidationError(where(pending_line) + "unterminated value");
    return doc;
}

json read_sectioned(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_sectioned(buf.str(), path.string());
}

ProblemConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
    static const std::set<std::string> sections{"domain", "grid",  "operator", "obstacle",
                                                "boundary", "solve", "verify",  "output"};
    for (const auto& [name, v] : doc.items()) {
        if (!sections.count(name)) throw ValidationError("unknown config section [" + name + "]");
    }
    auto section = [&](const std::string& name) -> const json& {
        static const json empty = json::object();
        return doc.contains(name) ? doc.at(name) : empty;
    };

    ProblemConfig cfg;
    cfg.base_dir = base_dir;

    {
        Section s(section("domain"), "domain");
        for (const auto& b : s.get("bounds")) {
            if (!b.is_array() || b.size() != 2) throw ValidationError("domain.bounds entries must be [lo, hi] pairs");
            cfg.domain.bounds.emplace_back(b[0].get<double>(), b[1].get<double>());
        }
        if (s.has("halfspaces")) {
            for (const auto& h : s.get("halfspaces")) {
                Section hs(h, "domain.halfspaces[]");
                HalfSpace half;
                half.normal = hs.value<std::vector<double>>("normal");
                half.offset = hs.value<double>("offset");
                hs.finish();
                cfg.domain.halfspaces.push_back(std::move(half));
            }
        }
        s.finish();
    }
    const std::size_t dim = cfg.domain.bounds.size();
    if (dim == 0) throw ValidationError("domain.bounds must list at least one axis");

    {
        Section s(section("grid"), "grid");
        cfg.resolution.n = s.value<std::vector<std::size_t>>("n");
        cfg.resolution.nt = s.value<std::size_t>("nt");
        cfg.resolution.T = positive(s.value<double>("T"), "grid.T");
        s.finish();
        if (cfg.resolution.n.size() != dim) throw ValidationError("grid.n must have one entry per domain axis");
    }

    {
        Section s(section("operator"), "operator");
        cfg.envelope.lambda = s.value<double>("lambda");
        cfg.envelope.Lambda = s.value<double>("Lambda");
        cfg.envelope.R = s.value_or<double>("R", 0.0);
        if (s.has("kappa")) cfg.envelope.kappa = s.value<double>("kappa");
        cfg.envelope.kappa_margin = s.value_or<double>("kappa_delta", cfg.envelope.kappa_margin);
        cfg.envelope.validate();
        const auto& controls = s.get("controls");
        if (!controls.is_array() || controls.empty()) throw ValidationError("operator.controls must be a nonempty list");
        for (const auto& c : controls) cfg.controls.push_back(c);
        cfg.growth = s.has("growth_G") ? s.get("growth_G") : json{{"const", 0.0}};
        s.finish();
    }

    {
        Section s(section("obstacle"), "obstacle");
        if (s.has("pieces")) {
            for (const auto& p : s.get("pieces")) cfg.pieces.push_back(p);
        }
        if (s.has("generator")) {
            cfg.generator = s.get("generator");
            cfg.truncate_n = s.value<std::size_t>("truncate_n");
        } else if (s.has("truncate_n")) {
            throw ValidationError("obstacle.truncate_n needs obstacle.generator");
        }
        s.finish();
        if (cfg.pieces.empty() == !cfg.generator) {
            throw ValidationError("give exactly one of obstacle.pieces and obstacle.generator");
        }
    }

    {
        Section s(section("boundary"), "boundary");
        cfg.boundary = s.get("b");
        s.finish();
    }

    {
        Section s(section("solve"), "solve");
        if (s.has("route")) {
            const auto& r = s.get("route");
            cfg.routes.clear();
            if (r.is_string()) {
                cfg.routes.push_back(parse_route(r.get<std::string>()));
            } else {
                for (const auto& name : r) cfg.routes.push_back(parse_route(name.get<std::string>()));
            }
            if (cfg.routes.empty()) throw ValidationError("solve.route is empty");
        }
        cfg.tol = positive(s.value_or<double>("tol", cfg.tol), "solve.tol");
        cfg.contact_tol = positive(s.value_or<double>("contact_tol", cfg.contact_tol), "solve.contact_tol");
        if (s.has("penalty")) {
            Section p(s.get("penalty"), "solve.penalty");
            if (p.has("eps1")) cfg.penalty.eps1 = positive(p.value<double>("eps1"), "solve.penalty.eps1");
            if (p.has("factor")) cfg.penalty.factor = p.value<double>("factor");
            if (p.has("steps")) cfg.penalty.steps = p.value<std::size_t>("steps");
            p.finish();
        }
        s.finish();
    }

    {
        Section s(section("verify"), "verify");
        auto& v = cfg.verify;
        v.checks = s.value_or<std::vector<std::string>>("checks", {});
        v.margin = positive(s.value_or<double>("margin", v.margin), "verify.margin");
        v.p = s.value_or<double>("p", v.p);
        v.refinements = s.value_or<std::size_t>("refinements", v.refinements);
        v.seed = s.value_or<std::uint64_t>("seed", v.seed);
        v.target = positive(s.value_or<double>("target", v.target), "verify.target");
        v.samples = s.value_or<std::size_t>("samples", v.samples);
        v.stages = s.value_or<std::vector<std::size_t>>("stages", {});
        s.finish();
    }

    {
        Section s(section("output"), "output");
        if (s.has("dir")) cfg.output_dir = s.value<std::string>("dir");
        if (s.has("formats")) {
            cfg.formats = s.value<std::vector<std::string>>("formats");
            for (const auto& f : cfg.formats) {
                if (f != "csv" && f != "json") throw ValidationError("unknown output format '" + f + "'");
            }
        }
        s.finish();
    }
    return cfg;
}

ProblemConfig load_config(const std::filesystem::path& path) {
    const auto doc = read_sectioned(path);
    return config_from_json(doc, path.parent_path());
}

Field build_field(const json& spec, std::size_t dim, FieldRole role, const std::filesystem::path& base_dir) {
    if (!spec.is_object() || spec.empty()) throw ValidationError("field spec must be an object such as {\"const\": 0}");
    const std::size_t width = width_of(role, dim);
    Section s(spec, "field");
    Field out;
    if (s.has("const")) {
        const auto& v = s.get("const");
        std::vector<double> values;
        if (v.is_number()) {
            values.push_back(v.get<double>());
        } else {
            values = s.value<std::vector<double>>("const");
        }
        if (values.size() != width) {
            throw ValidationError("const field needs " + std::to_string(width) + " values, got " +
                                  std::to_string(values.size()));
        }
        out = Field::constant(std::move(values));
    } else if (s.has("table")) {
        const auto path = base_dir / s.value<std::string>("table");
        out = Field::table(std::make_shared<const NodeTable>(NodeTable::read_csv(path, dim, width)));
    } else if (s.has("builtin")) {
        const auto name = s.value<std::string>("builtin");
        const auto params = s.value_or<std::vector<double>>("params", {});
        out = builtin_field(name, params, dim, role);
    } else if (s.has("max")) {
        if (role != FieldRole::value) throw ValidationError("max fields are only allowed for scalar values");
        std::vector<Field> parts;
        for (const auto& part : s.get("max")) parts.push_back(build_field(part, dim, role, base_dir));
        if (parts.empty()) throw ValidationError("max field needs at least one entry");
        const bool td = std::any_of(parts.begin(), parts.end(), [](const Field& f) { return f.time_dependent(); });
        out = Field::function(
            1,
            [parts](double t, std::span<const double> x, std::span<double> o) {
                double m = -std::numeric_limits<double>::infinity();
                for (const auto& f : parts) m = std::max(m, f.scalar(t, x));
                o[0] = m;
            },
            td);
    } else {
        throw ValidationError("field spec needs one of const, table, builtin, max");
    }
    s.finish();
    return out;
}

GridPtr build_grid(const ProblemConfig& config) { return SpaceTimeGrid::build(config.domain, config.resolution); }

Problem build_problem(const ProblemConfig& config, const GridPtr& grid) {
    const std::size_t dim = grid->dim();
    if (dim != config.domain.bounds.size()) throw ValidationError("grid dimension does not match the config");
    const auto& base = config.base_dir;

    std::vector<Control> controls;
    for (std::size_t i = 0; i < config.controls.size(); ++i) {
        Section s(config.controls[i], "operator.controls[" + std::to_string(i) + "]");
        Control c;
        c.label = s.value_or<std::string>("label", "control" + std::to_string(i + 1));
        c.A = build_field(s.get("A"), dim, FieldRole::matrix, base);
        c.b = s.has("b") ? build_field(s.get("b"), dim, FieldRole::gradient, base)
                         : Field::constant(std::vector<double>(dim, 0.0));
        c.c = s.has("c") ? build_field(s.get("c"), dim, FieldRole::value, base) : Field::constant(0.0);
        c.f = s.has("f") ? build_field(s.get("f"), dim, FieldRole::value, base) : Field::constant(0.0);
        s.finish();
        controls.push_back(std::move(c));
    }

    Problem problem;
    problem.grid = grid;
    problem.op = std::make_shared<const BellmanOperator>(dim, std::move(controls), config.envelope,
                                                         build_field(config.growth, dim, FieldRole::value, base));

    if (config.generator) {
        Section s(*config.generator, "obstacle.generator");
        const auto name = s.value<std::string>("builtin");
        s.finish();
        if (name != "tangent_lines") throw ValidationError("unknown obstacle generator '" + name + "'");
        if (config.truncate_n == 0) throw ValidationError("obstacle.truncate_n must be >= 1");
        problem.generator = tangent_line_generator(dim);
        problem.family = truncate_family(*problem.generator, config.truncate_n, grid);
    } else {
        std::vector<ObstaclePiece> pieces;
        for (std::size_t i = 0; i < config.pieces.size(); ++i) {
            Section s(config.pieces[i], "obstacle.pieces[" + std::to_string(i) + "]");
            const auto label = s.value_or<std::string>("label", "piece" + std::to_string(i + 1));
            const auto& g = s.get("g");
            ObstaclePiece piece;
            if (g.is_object() && g.contains("builtin")) {
                Section gs(g, "obstacle.pieces[].g");
                const auto fn = builtin_function(gs.value<std::string>("builtin"),
                                                 gs.value_or<std::vector<double>>("params", {}), dim);
                gs.finish();
                piece = ObstaclePiece::analytic(label, fn, dim);
            } else {
                for (const char* key : {"g_t", "g_x", "g_xx"}) {
                    if (!s.has(key)) {
                        throw ValidationError("obstacle piece '" + label + "' needs " + key +
                                              " unless g is a builtin");
                    }
                }
                piece.label = label;
                piece.g = build_field(g, dim, FieldRole::value, base);
            }
            if (s.has("g_t")) piece.g_t = build_field(s.get("g_t"), dim, FieldRole::time_derivative, base);
            if (s.has("g_x")) piece.g_x = build_field(s.get("g_x"), dim, FieldRole::gradient, base);
            if (s.has("g_xx")) piece.g_xx = build_field(s.get("g_xx"), dim, FieldRole::hessian, base);
            if (s.has("norm")) piece.declared_norm = s.value<double>("norm");
            s.finish();
            pieces.push_back(std::move(piece));
        }
        problem.family = ObstacleFamily(std::move(pieces));
    }

    problem.boundary = build_field(config.boundary, dim, FieldRole::value, base);
    return problem;
}

DiscreteProblem discretize_problem(const Problem& problem, const AssemblyOptions& options) {
    DiscreteProblem out{assemble(*problem.op, problem.grid, options),
                        sample_obstacle(problem.family, problem.grid),
                        sample_pieces(problem.family, problem.grid),
                        GridFunction::sample(problem.grid, problem.boundary),
                        GridFunction::sample(problem.grid, problem.op->growth())};
    return out;
}

PenaltySchedule penalty_schedule(const ProblemConfig& config, const GridFunction& g, double tol) {
    double g_sup = 0.0;
    for (double v : g.values()) g_sup = std::max(g_sup, std::abs(v));
    const auto& p = config.penalty;
    if (!p.eps1 && !p.factor && !p.steps) return PenaltySchedule::for_tolerance(g_sup, tol);
    const double eps1 = p.eps1.value_or(0.1 * std::max(1.0, g_sup));
    const double factor = p.factor.value_or(0.5);
    if (!(factor > 0.0 && factor < 1.0)) throw ValidationError("solve.penalty.factor must lie in (0, 1)");
    const std::size_t steps =
        p.steps.value_or(static_cast<std::size_t>(
                             std::ceil(std::log(std::max(1.0, eps1 / (0.1 * tol))) / std::log(1.0 / factor))) +
                         1);
    return PenaltySchedule::geometric(eps1, factor, steps);
}

}  // namespace parobs
