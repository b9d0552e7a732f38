#pragma once

// Scenario configuration, benchmark construction (HVAC mesh and friends), experiment
// orchestration and CSV output.
//
// Config files are flat "key = value" text split into sections:
//
//   [scenario]           exactly once; graph, system, costs, horizon, seed, ...
//   [controller]         repeatable; type (OPT|PC|DTPC|uDTPC), k, kappa, forecast
//   [decay]              optional; parameters of the decay command
//
// '#' starts a comment. Unknown keys are errors.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "json.hpp"
#include "netpc/control.hpp"
#include "netpc/costs.hpp"
#include "netpc/decay.hpp"
#include "netpc/error.hpp"
#include "netpc/forecast.hpp"
#include "netpc/lti.hpp"
#include "netpc/network.hpp"
#include "netpc/rng.hpp"

namespace netpc {

// ---- configuration -------------------------------------------------------------------

struct GraphSpec {
    enum class Kind { Mesh, Path, File } kind = Kind::Mesh;
    int size = 5;
    std::string path;
    bool operator==(const GraphSpec&) const = default;
};

struct SystemSpec {
    enum class Kind { Hvac, File, Random } kind = Kind::Hvac;
    std::string path;
    std::int64_t stream = 0;   ///< sub-stream index under the root seed (random systems)
    double margin = 0.9;       ///< spectral radius of the random A
    bool operator==(const SystemSpec&) const = default;
};

struct InitialStateSpec {
    enum class Kind { Zero, Constant, File } kind = Kind::Zero;
    double value = 0.0;
    std::string path;
    bool operator==(const InitialStateSpec&) const = default;
};

struct DisturbanceSpec {
    enum class Kind { Gaussian, File, Theta } kind = Kind::Gaussian;
    double variance = 25.0;
    std::string path;
    bool operator==(const DisturbanceSpec&) const = default;
};

struct DecaySpec {
    int k = 11;                 ///< horizon of the OCP / controllers
    std::vector<int> kappas{0, 1, 2, 3, 4, 5, 6};
    NodeId node = 0;            ///< truncation center for the truncation gap
    DecayPartition partition = DecayPartition::Spatial;
    bool operator==(const DecaySpec&) const = default;
};

struct ScenarioConfig {
    std::uint64_t seed = 1;
    GraphSpec graph;
    SystemSpec system;
    int state_dim = 2;  ///< per-node dims for generated graphs with non-HVAC systems
    int input_dim = 1;
    double ts = 1.0;
    double coupling = 0.05;
    double q = 1.0;
    double q_f = 10.0;
    double state_logcosh = 0.0;
    bool random_input_cost = true;
    double input_cost = 1.0;  ///< R = input_cost * I when not random
    int horizon = 30;
    InitialStateSpec x0;
    DisturbanceSpec disturbance;
    std::vector<ControllerSpec> controllers;
    std::optional<DecaySpec> decay;
    std::string output_dir = "out";
    /// Directory that relative file paths are resolved against; not serialized.
    std::filesystem::path base_dir;

    bool operator==(const ScenarioConfig& o) const {
        return seed == o.seed && graph == o.graph && system == o.system && state_dim == o.state_dim &&
               input_dim == o.input_dim && ts == o.ts && coupling == o.coupling && q == o.q && q_f == o.q_f &&
               state_logcosh == o.state_logcosh && random_input_cost == o.random_input_cost &&
               input_cost == o.input_cost && horizon == o.horizon && x0 == o.x0 && disturbance == o.disturbance &&
               controllers == o.controllers && decay == o.decay && output_dir == o.output_dir;
    }

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    }
}

inline long long parse_int(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size() || s.front() == '-') throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
    }
}

/// "a..b" or a comma list "a,b,c".
inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
    std::vector<int> out;
    const auto dots = s.find("..");
    if (dots != std::string::npos) {
        const int a = static_cast<int>(parse_int(trim(s.substr(0, dots)), key));
        const int b = static_cast<int>(parse_int(trim(s.substr(dots + 2)), key));
        if (b < a) throw ConfigError("key '" + key + "': empty range " + s);
        for (int v = a; v <= b; ++v) out.push_back(v);
        return out;
    }
    std::stringstream ss(s);
    for (std::string part; std::getline(ss, part, ',');) out.push_back(static_cast<int>(parse_int(trim(part), key)));
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

inline std::string int_list(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::string partition_name(DecayPartition p) {
    switch (p) {
        case DecayPartition::Spatial: return "spatial";
        case DecayPartition::Temporal: return "temporal";
        case DecayPartition::Product: return "product";
    }
    return "spatial";
}

inline DecayPartition parse_partition(const std::string& s) {
    if (s == "spatial") return DecayPartition::Spatial;
    if (s == "temporal") return DecayPartition::Temporal;
    if (s == "product") return DecayPartition::Product;
    throw ConfigError("unknown decay partition: " + s);
}

inline ControllerKind parse_controller_kind(const std::string& s) {
    if (s == "OPT") return ControllerKind::Opt;
    if (s == "PC") return ControllerKind::Pc;
    if (s == "DTPC") return ControllerKind::Dtpc;
    if (s == "uDTPC") return ControllerKind::Udtpc;
    throw ConfigError("unknown controller type: " + s);
}

inline std::string controller_kind_name(ControllerKind k) {
    switch (k) {
        case ControllerKind::Opt: return "OPT";
        case ControllerKind::Pc: return "PC";
        case ControllerKind::Dtpc: return "DTPC";
        case ControllerKind::Udtpc: return "uDTPC";
    }
    return "OPT";
}

inline void set_scenario_key(ScenarioConfig& c, const std::string& key, const std::string& value) {
    const auto tok = split_ws(value);
    auto need = [&](std::size_t n) {
        if (tok.size() != n) throw ConfigError("key '" + key + "': expected " + std::to_string(n) + " field(s)");
    };
    if (tok.empty()) throw ConfigError("key '" + key + "' has no value");
    if (key == "seed") {
        need(1);
        c.seed = parse_u64(tok[0], key);
    } else if (key == "graph") {
        if (tok[0] == "mesh" || tok[0] == "path") {
            need(2);
            c.graph.kind = tok[0] == "mesh" ? GraphSpec::Kind::Mesh : GraphSpec::Kind::Path;
            c.graph.size = static_cast<int>(parse_int(tok[1], key));
            c.graph.path.clear();
        } else if (tok[0] == "file") {
            need(2);
            c.graph = {GraphSpec::Kind::File, 0, tok[1]};
        } else {
            throw ConfigError("graph must be 'mesh N', 'path N' or 'file PATH'");
        }
    } else if (key == "system") {
        if (tok[0] == "hvac") {
            need(1);
            c.system = SystemSpec{};
        } else if (tok[0] == "file") {
            need(2);
            c.system = {SystemSpec::Kind::File, tok[1], 0, 0.9};
        } else if (tok[0] == "random") {
            need(3);
            c.system = {SystemSpec::Kind::Random, "", parse_int(tok[1], key), parse_double(tok[2], key)};
        } else {
            throw ConfigError("system must be 'hvac', 'file PATH' or 'random STREAM MARGIN'");
        }
    } else if (key == "state_dim") {
        need(1);
        c.state_dim = static_cast<int>(parse_int(tok[0], key));
    } else if (key == "input_dim") {
        need(1);
        c.input_dim = static_cast<int>(parse_int(tok[0], key));
    } else if (key == "ts") {
        need(1);
        c.ts = parse_double(tok[0], key);
    } else if (key == "coupling") {
        need(1);
        c.coupling = parse_double(tok[0], key);
    } else if (key == "q") {
        need(1);
        c.q = parse_double(tok[0], key);
    } else if (key == "q_f") {
        need(1);
        c.q_f = parse_double(tok[0], key);
    } else if (key == "state_logcosh") {
        need(1);
        c.state_logcosh = parse_double(tok[0], key);
    } else if (key == "input_cost") {
        if (tok[0] == "random") {
            need(1);
            c.random_input_cost = true;
            c.input_cost = 1.0;
        } else if (tok[0] == "fixed") {
            need(2);
            c.random_input_cost = false;
            c.input_cost = parse_double(tok[1], key);
        } else {
            throw ConfigError("input_cost must be 'random' or 'fixed R'");
        }
    } else if (key == "T") {
        need(1);
        c.horizon = static_cast<int>(parse_int(tok[0], key));
    } else if (key == "x0") {
        if (tok[0] == "zero") {
            need(1);
            c.x0 = InitialStateSpec{};
        } else if (tok[0] == "constant") {
            need(2);
            c.x0 = {InitialStateSpec::Kind::Constant, parse_double(tok[1], key), ""};
        } else if (tok[0] == "file") {
            need(2);
            c.x0 = {InitialStateSpec::Kind::File, 0.0, tok[1]};
        } else {
            throw ConfigError("x0 must be 'zero', 'constant C' or 'file PATH'");
        }
    } else if (key == "disturbance") {
        if (tok[0] == "gaussian") {
            need(2);
            c.disturbance = {DisturbanceSpec::Kind::Gaussian, parse_double(tok[1], key), ""};
        } else if (tok[0] == "file" || tok[0] == "theta") {
            need(2);
            c.disturbance = {tok[0] == "file" ? DisturbanceSpec::Kind::File : DisturbanceSpec::Kind::Theta, 0.0, tok[1]};
        } else {
            throw ConfigError("disturbance must be 'gaussian VAR', 'file PATH' or 'theta PATH'");
        }
    } else if (key == "output_dir") {
        c.output_dir = value;
    } else {
        throw ConfigError("unknown [scenario] key: " + key);
    }
}

inline void set_controller_key(ControllerSpec& s, const std::string& key, const std::string& value) {
    const auto tok = split_ws(value);
    if (tok.empty()) throw ConfigError("key '" + key + "' has no value");
    if (key == "type") {
        s.kind = parse_controller_kind(tok[0]);
    } else if (key == "k") {
        s.k = static_cast<int>(parse_int(tok[0], key));
    } else if (key == "kappa") {
        s.kappa = static_cast<int>(parse_int(tok[0], key));
    } else if (key == "forecast") {
        if (tok.size() != 4) throw ConfigError("forecast must be 'KIND R RATE SEED'");
        s.forecast.kind = parse_forecast_kind(tok[0]);
        s.forecast.R = parse_double(tok[1], key);
        s.forecast.rate = parse_double(tok[2], key);
        s.forecast.seed = parse_u64(tok[3], key);
        s.forecast.validate();
    } else {
        throw ConfigError("unknown [controller] key: " + key);
    }
}

inline void set_decay_key(DecaySpec& d, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "k") {
        d.k = static_cast<int>(parse_int(v, key));
    } else if (key == "kappas") {
        d.kappas = parse_int_list(v, key);
    } else if (key == "node") {
        d.node = static_cast<NodeId>(parse_int(v, key));
    } else if (key == "partition") {
        d.partition = parse_partition(v);
    } else {
        throw ConfigError("unknown [decay] key: " + key);
    }
}

}  // namespace detail

inline ScenarioConfig parse_config(std::istream& in, std::filesystem::path base_dir = {}) {
    ScenarioConfig c;
    c.base_dir = std::move(base_dir);
    enum class Section { None, Scenario, Controller, Decay } section = Section::None;
    bool seen_scenario = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        try {
            if (line.front() == '[') {
                if (line == "[scenario]") {
                    if (seen_scenario) throw ConfigError("duplicate [scenario] section");
                    seen_scenario = true;
                    section = Section::Scenario;
                } else if (line == "[controller]") {
                    c.controllers.emplace_back();
                    section = Section::Controller;
                } else if (line == "[decay]") {
                    if (c.decay) throw ConfigError("duplicate [decay] section");
                    c.decay.emplace();
                    section = Section::Decay;
                } else {
                    throw ConfigError("unknown section " + line);
                }
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("expected 'key = value'");
            const std::string key = detail::trim(line.substr(0, eq));
            const std::string value = detail::trim(line.substr(eq + 1));
            switch (section) {
                case Section::None: throw ConfigError("key outside of a section");
                case Section::Scenario: detail::set_scenario_key(c, key, value); break;
                case Section::Controller: detail::set_controller_key(c.controllers.back(), key, value); break;
                case Section::Decay: detail::set_decay_key(*c.decay, key, value); break;
            }
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!seen_scenario) throw ConfigError("config has no [scenario] section");
    return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    return parse_config(in, path.parent_path());
}

inline void serialize_config(std::ostream& out, const ScenarioConfig& c) {
    using detail::fmt_double;
    out << "[scenario]\n";
    out << "seed = " << c.seed << '\n';
    switch (c.graph.kind) {
        case GraphSpec::Kind::Mesh: out << "graph = mesh " << c.graph.size << '\n'; break;
        case GraphSpec::Kind::Path: out << "graph = path " << c.graph.size << '\n'; break;
        case GraphSpec::Kind::File: out << "graph = file " << c.graph.path << '\n'; break;
    }
    switch (c.system.kind) {
        case SystemSpec::Kind::Hvac: out << "system = hvac\n"; break;
        case SystemSpec::Kind::File: out << "system = file " << c.system.path << '\n'; break;
        case SystemSpec::Kind::Random:
            out << "system = random " << c.system.stream << ' ' << fmt_double(c.system.margin) << '\n';
            break;
    }
    out << "state_dim = " << c.state_dim << '\n';
    out << "input_dim = " << c.input_dim << '\n';
    out << "ts = " << fmt_double(c.ts) << '\n';
    out << "coupling = " << fmt_double(c.coupling) << '\n';
    out << "q = " << fmt_double(c.q) << '\n';
    out << "q_f = " << fmt_double(c.q_f) << '\n';
    out << "state_logcosh = " << fmt_double(c.state_logcosh) << '\n';
    if (c.random_input_cost) out << "input_cost = random\n";
    else out << "input_cost = fixed " << fmt_double(c.input_cost) << '\n';
    out << "T = " << c.horizon << '\n';
    switch (c.x0.kind) {
        case InitialStateSpec::Kind::Zero: out << "x0 = zero\n"; break;
        case InitialStateSpec::Kind::Constant: out << "x0 = constant " << fmt_double(c.x0.value) << '\n'; break;
        case InitialStateSpec::Kind::File: out << "x0 = file " << c.x0.path << '\n'; break;
    }
    switch (c.disturbance.kind) {
        case DisturbanceSpec::Kind::Gaussian:
            out << "disturbance = gaussian " << fmt_double(c.disturbance.variance) << '\n';
            break;
        case DisturbanceSpec::Kind::File: out << "disturbance = file " << c.disturbance.path << '\n'; break;
        case DisturbanceSpec::Kind::Theta: out << "disturbance = theta " << c.disturbance.path << '\n'; break;
    }
    out << "output_dir = " << c.output_dir << '\n';
    for (const auto& s : c.controllers) {
        out << "\n[controller]\n";
        out << "type = " << detail::controller_kind_name(s.kind) << '\n';
        out << "k = " << s.k << '\n';
        out << "kappa = " << s.kappa << '\n';
        out << "forecast = " << to_string(s.forecast.kind) << ' ' << fmt_double(s.forecast.R) << ' '
            << fmt_double(s.forecast.rate) << ' ' << s.forecast.seed << '\n';
    }
    if (c.decay) {
        out << "\n[decay]\n";
        out << "k = " << c.decay->k << '\n';
        out << "kappas = " << detail::int_list(c.decay->kappas) << '\n';
        out << "node = " << c.decay->node << '\n';
        out << "partition = " << detail::partition_name(c.decay->partition) << '\n';
    }
}

inline std::string serialize_config(const ScenarioConfig& c) {
    std::ostringstream out;
    serialize_config(out, c);
    return out.str();
}

// ---- scenario construction -------------------------------------------------------------

struct HvacParams {
    int n = 5;
    double ts = 1.0;
    double coupling = 0.05;
    double q = 1.0;
    double q_f = 10.0;
    double noise_var = 25.0;
    int horizon = 30;
    std::uint64_t seed = 1;
};

/// Scenario together with the ground-truth parameter trajectory theta*_0..theta*_T.
struct BuiltScenario {
    Scenario scenario;
    ParamTrajectory truth;
};

/// Per zone the state is (U, T) and the input acts on T:
///   A[i,i] = [[1, ts], [0, 1 - ts L_ii]],  A[i,j] = [[0, 0], [0, -ts L_ij]],  B[i,i] = [0; 0.5 ts]
/// with L the Laplacian carrying weight `coupling` on every edge.
inline NetworkedSystem hvac_system(std::shared_ptr<const NetworkGraph> g, double ts, double coupling) {
    for (NodeId i = 0; i < g->node_count(); ++i) {
        if (g->state_dim(i) != 2 || g->input_dim(i) != 1) {
            throw DimensionError("HVAC dynamics need 2 states and 1 input per node");
        }
    }
    std::vector<BlockEntry> a, b;
    for (NodeId i = 0; i < g->node_count(); ++i) {
        const double lii = coupling * static_cast<double>(g->neighbors(i).size());
        Eigen::MatrixXd aii(2, 2);
        aii << 1.0, ts, 0.0, 1.0 - ts * lii;
        a.push_back({i, i, aii});
        for (NodeId j : g->neighbors(i)) {
            Eigen::MatrixXd aij = Eigen::MatrixXd::Zero(2, 2);
            aij(1, 1) = ts * coupling;  // -ts * L_ij with L_ij = -coupling
            a.push_back({i, j, aij});
        }
        Eigen::MatrixXd bii(2, 1);
        bii << 0.0, 0.5 * ts;
        b.push_back({i, i, bii});
    }
    return assemble(std::move(g), a, b);
}

/// Random graph-respecting system; A is rescaled to the given spectral radius.
inline NetworkedSystem random_system(std::shared_ptr<const NetworkGraph> g, std::uint64_t key, double margin) {
    if (!(margin > 0.0)) throw ConfigError("random system margin must be positive");
    CounterRng rng(key);
    std::vector<BlockEntry> a, b;
    auto draw = [&](int r, int c, double scale) {
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
        return m;
    };
    for (NodeId i = 0; i < g->node_count(); ++i) {
        a.push_back({i, i, draw(g->state_dim(i), g->state_dim(i), 1.0)});
        for (NodeId j : g->neighbors(i)) a.push_back({i, j, draw(g->state_dim(i), g->state_dim(j), 0.5)});
        if (g->input_dim(i) > 0) b.push_back({i, i, draw(g->state_dim(i), g->input_dim(i), 1.0)});
        for (NodeId j : g->neighbors(i))
            if (g->input_dim(j) > 0) b.push_back({i, j, draw(g->state_dim(i), g->input_dim(j), 0.3)});
    }
    NetworkedSystem raw = assemble(g, a, b);
    const double radius = Eigen::EigenSolver<Eigen::MatrixXd>(raw.A(), false).eigenvalues().cwiseAbs().maxCoeff();
    const Eigen::MatrixXd scaled = radius > 0.0 ? Eigen::MatrixXd(raw.A() * (margin / radius)) : raw.A();
    return NetworkedSystem(std::move(g), scaled, raw.B());
}

/// theta*_t = w_t: one N(0, var I) draw per stream index t, so theta*_T is the next draw.
inline ParamTrajectory gaussian_truth(std::uint64_t root, int dim, int horizon, double variance) {
    if (variance < 0.0) throw ConfigError("disturbance variance must be non-negative");
    ParamTrajectory p;
    const double sd = std::sqrt(variance);
    for (int t = 0; t <= horizon; ++t) {
        CounterRng rng(derive_seed(root, "disturbance", {t}));
        p.values.push_back(sd * rng.normal_vector(dim));
    }
    return p;
}

/// f_t = q I (+ log-cosh), c_{t+1} = R_t, F = q_f I on every node.
inline CostSchedule benchmark_costs(const NetworkGraph& g, int horizon, double q, double q_f, double logcosh,
                                    bool random_r, double r_value, std::uint64_t root) {
    std::vector<std::vector<NodeCost>> state(horizon + 1), input(horizon);
    std::vector<NodeCost> terminal;
    std::vector<int> idims;
    for (NodeId i = 0; i < g.node_count(); ++i) {
        const Eigen::MatrixXd qi = q * Eigen::MatrixXd::Identity(g.state_dim(i), g.state_dim(i));
        for (int t = 0; t <= horizon; ++t) state[t].emplace_back(qi, logcosh);
        terminal.push_back(NodeCost::scaled_identity(g.state_dim(i), q_f));
        idims.push_back(g.input_dim(i));
    }
    for (int t = 0; t < horizon; ++t) {
        if (random_r) {
            CounterRng rng(derive_seed(root, "input_cost", {t}));
            input[t] = random_input_cost(idims, rng);
        } else {
            for (int d : idims) input[t].push_back(NodeCost::scaled_identity(d, r_value));
        }
    }
    return CostSchedule(std::move(state), std::move(input), std::move(terminal));
}

inline BuiltScenario build_hvac_mesh(const HvacParams& p) {
    if (p.n < 2) throw ConfigError("HVAC mesh side must be >= 2");
    if (p.horizon < 1) throw ConfigError("horizon must be >= 1");
    auto g = std::make_shared<const NetworkGraph>(mesh_graph(p.n, 2, 1));
    BuiltScenario b;
    auto& sc = b.scenario;
    sc.system = std::make_shared<const NetworkedSystem>(hvac_system(g, p.ts, p.coupling));
    sc.horizon = p.horizon;
    sc.seed = p.seed;
    sc.costs = benchmark_costs(*g, p.horizon, p.q, p.q_f, 0.0, true, 1.0, p.seed);
    sc.x0 = Eigen::VectorXd::Zero(g->total_state_dim());
    b.truth = gaussian_truth(p.seed, g->total_state_dim(), p.horizon, p.noise_var);
    sc.disturbances.assign(b.truth.values.begin(), b.truth.values.begin() + p.horizon);
    return b;
}

/// The forecast study: same benchmark, longer run (default T = 48).
inline BuiltScenario build_uncertainty_scenario(HvacParams p, int horizon = 48) {
    p.horizon = horizon;
    return build_hvac_mesh(p);
}

namespace detail {

/// One vector per non-empty line, whitespace separated.
inline std::vector<Eigen::VectorXd> read_vectors(const std::filesystem::path& path, int dim) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open data file: " + path.string());
    std::vector<Eigen::VectorXd> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (static_cast<int>(tok.size()) != dim) {
            throw DimensionError(path.string() + ": expected " + std::to_string(dim) + " values per line");
        }
        Eigen::VectorXd v(dim);
        for (int r = 0; r < dim; ++r) v[r] = parse_double(tok[r], path.string());
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace detail

inline void validate_controllers(const ScenarioConfig& c, const NetworkGraph& g) {
    for (const auto& s : c.controllers) {
        if (s.kind == ControllerKind::Opt) continue;
        if (s.k < 1 || s.k > c.horizon) throw ConfigError(s.tag() + ": k must lie in [1, T]");
        if (s.kind != ControllerKind::Pc && (s.kappa < 0 || s.kappa > std::max(g.diameter(), 0))) {
            throw ConfigError(s.tag() + ": kappa must lie in [0, diameter]");
        }
    }
}

inline BuiltScenario build_scenario(const ScenarioConfig& c) {
    if (c.horizon < 1) throw ConfigError("T must be >= 1");
    std::shared_ptr<const NetworkGraph> g;
    const bool hvac = c.system.kind == SystemSpec::Kind::Hvac;
    const int nx = hvac ? 2 : c.state_dim;
    const int nu = hvac ? 1 : c.input_dim;
    switch (c.graph.kind) {
        case GraphSpec::Kind::Mesh: g = std::make_shared<const NetworkGraph>(mesh_graph(c.graph.size, nx, nu)); break;
        case GraphSpec::Kind::Path: g = std::make_shared<const NetworkGraph>(path_graph(c.graph.size, nx, nu)); break;
        case GraphSpec::Kind::File: g = std::make_shared<const NetworkGraph>(load_graph(c.resolve(c.graph.path).string())); break;
    }
    validate_controllers(c, *g);
    BuiltScenario b;
    auto& sc = b.scenario;
    switch (c.system.kind) {
        case SystemSpec::Kind::Hvac: sc.system = std::make_shared<const NetworkedSystem>(hvac_system(g, c.ts, c.coupling)); break;
        case SystemSpec::Kind::File:
            sc.system = std::make_shared<const NetworkedSystem>(load_system(c.resolve(c.system.path).string(), g));
            break;
        case SystemSpec::Kind::Random:
            sc.system = std::make_shared<const NetworkedSystem>(
                random_system(g, derive_seed(c.seed, "system", {c.system.stream}), c.system.margin));
            break;
    }
    const int n = g->total_state_dim();
    sc.horizon = c.horizon;
    sc.seed = c.seed;
    sc.costs = benchmark_costs(*g, c.horizon, c.q, c.q_f, c.state_logcosh, c.random_input_cost, c.input_cost, c.seed);
    switch (c.x0.kind) {
        case InitialStateSpec::Kind::Zero: sc.x0 = Eigen::VectorXd::Zero(n); break;
        case InitialStateSpec::Kind::Constant: sc.x0 = Eigen::VectorXd::Constant(n, c.x0.value); break;
        case InitialStateSpec::Kind::File: {
            const auto v = detail::read_vectors(c.resolve(c.x0.path), n);
            if (v.size() != 1) throw DimensionError("x0 file must hold exactly one line");
            sc.x0 = v.front();
            break;
        }
    }
    if (c.disturbance.kind == DisturbanceSpec::Kind::Gaussian) {
        b.truth = gaussian_truth(c.seed, n, c.horizon, c.disturbance.variance);
    } else {
        b.truth.values = detail::read_vectors(c.resolve(c.disturbance.path), n);
        const int rows = static_cast<int>(b.truth.values.size());
        if (rows < c.horizon) throw DimensionError("disturbance file holds fewer than T rows");
        b.truth.values.resize(c.horizon + 1, Eigen::VectorXd::Zero(n));
    }
    sc.disturbances.assign(b.truth.values.begin(), b.truth.values.begin() + c.horizon);
    sc.validate();
    return b;
}

// ---- output ---------------------------------------------------------------------------

/// Files are written as <name>.partial and renamed once the whole experiment succeeds.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    std::ofstream open(const std::string& name) {
        const auto partial = dir_ / (name + ".partial");
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + partial.string());
        names_.push_back(name);
        return out;
    }

    std::vector<std::filesystem::path> commit() {
        std::vector<std::filesystem::path> done;
        for (const auto& n : names_) {
            std::filesystem::rename(dir_ / (n + ".partial"), dir_ / n);
            done.push_back(dir_ / n);
        }
        names_.clear();
        return done;
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> names_;
};

inline constexpr const char* kRunCsvHeader = "t,state_norm,step_cost,cum_cost,residual";
inline constexpr const char* kSummaryCsvHeader = "tag,k,kappa,total_cost,regret";
inline constexpr const char* kDecayCsvHeader = "distance,max_norm";

/// Rows t = 0..T: step cost is f_t(x_t) + c_{t+1}(u_t) (only f_T on the last row).
inline void write_run_csv(std::ostream& out, const RunRecord& r) {
    using detail::fmt_double;
    out << kRunCsvHeader << '\n';
    double cum = 0.0;
    const int T = static_cast<int>(r.inputs.size());
    for (int t = 0; t <= T; ++t) {
        const double step = r.state_costs[t] + (t < T ? r.input_costs[t] : 0.0);
        cum += step;
        const double res = t < T ? r.step_residual[t] : 0.0;
        out << t << ',' << fmt_double(r.states[t].norm()) << ',' << fmt_double(step) << ',' << fmt_double(cum) << ','
            << fmt_double(res) << '\n';
    }
}

struct SummaryRow {
    std::string tag;
    int k = 0;
    int kappa = 0;
    double total_cost = 0.0;
    double regret = 0.0;
};

inline SummaryRow summarize(const RunRecord& r, const RunRecord& opt) {
    return {r.tag(), r.controller.k, r.controller.kappa, r.total_cost, regret(r, opt).value};
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << kSummaryCsvHeader << '\n';
    for (const auto& r : rows) {
        out << r.tag << ',' << r.k << ',' << r.kappa << ',' << detail::fmt_double(r.total_cost) << ','
            << detail::fmt_double(r.regret) << '\n';
    }
}

inline void write_decay_csv(std::ostream& out, const DecayProfile& p) {
    out << kDecayCsvHeader << '\n';
    for (std::size_t k = 0; k < p.distances.size(); ++k) {
        out << p.distances[k] << ',' << detail::fmt_double(p.max_norms[k]) << '\n';
    }
}

inline nlohmann::json decay_summary_json(const DecayProfile& p) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"alpha", num(p.alpha)}, {"rho", num(p.rho)}, {"r2", num(p.r2)}, {"fitted_points", p.fitted_points}};
}

// ---- experiments -----------------------------------------------------------------------

struct ExperimentResult {
    RunRecord opt;
    std::vector<RunRecord> runs;  ///< configured controllers, in config order (OPT included if listed)
    std::vector<SummaryRow> summary;
    std::vector<std::filesystem::path> files;
};

inline std::string run_file_name(const RunRecord& r, std::uint64_t seed) {
    return r.tag() + "_" + std::to_string(seed) + ".csv";
}

/// Builds the scenario, runs OPT and every configured controller, writes one CSV per run
/// and a summary table. `log` receives one human-readable line per run.
inline ExperimentResult run_experiment(const ScenarioConfig& cfg, const std::filesystem::path& out_dir,
                                       std::ostream* log = nullptr) {
    const BuiltScenario built = build_scenario(cfg);
    const Scenario& sc = built.scenario;
    OutputSet files(out_dir);
    ExperimentResult res;
    res.opt = run_opt(sc);
    bool opt_written = false;
    auto emit = [&](const RunRecord& r) {
        auto out = files.open(run_file_name(r, cfg.seed));
        write_run_csv(out, r);
        res.summary.push_back(summarize(r, res.opt));
        if (log) {
            const auto& row = res.summary.back();
            *log << row.tag << ": total_cost=" << detail::fmt_double(row.total_cost)
                 << " regret=" << detail::fmt_double(row.regret)
                 << " normalized_regret=" << detail::fmt_double(res.opt.total_cost != 0.0 ? row.regret / res.opt.total_cost : 0.0)
                 << '\n';
        }
    };
    for (const auto& spec : cfg.controllers) {
        if (spec.kind == ControllerKind::Opt) {
            if (!opt_written) emit(res.opt);
            opt_written = true;
            res.runs.push_back(res.opt);
            continue;
        }
        RunRecord r = run_controller(sc, spec, &built.truth);
        emit(r);
        res.runs.push_back(std::move(r));
    }
    if (!opt_written) {
        auto out = files.open(run_file_name(res.opt, cfg.seed));
        write_run_csv(out, res.opt);
        res.summary.insert(res.summary.begin(), summarize(res.opt, res.opt));
    }
    {
        auto out = files.open("summary_" + std::to_string(cfg.seed) + ".csv");
        write_summary_csv(out, res.summary);
    }
    res.files = files.commit();
    return res;
}

enum class SweepParameter { K, Kappa };

/// Re-runs the first non-OPT controller of the config for each value of k or kappa.
inline ExperimentResult run_sweep(ScenarioConfig cfg, SweepParameter vary, const std::vector<int>& values,
                                  const std::filesystem::path& out_dir, std::ostream* log = nullptr) {
    auto it = std::find_if(cfg.controllers.begin(), cfg.controllers.end(),
                           [](const ControllerSpec& s) { return s.kind != ControllerKind::Opt; });
    if (it == cfg.controllers.end()) throw ConfigError("sweep needs a non-OPT controller in the config");
    const ControllerSpec base = *it;
    cfg.controllers.clear();
    for (int v : values) {
        ControllerSpec s = base;
        (vary == SweepParameter::K ? s.k : s.kappa) = v;
        cfg.controllers.push_back(s);
    }
    ExperimentResult res = run_experiment(cfg, out_dir, log);
    OutputSet files(out_dir);
    {
        auto out = files.open(std::string("sweep_") + (vary == SweepParameter::K ? "k" : "kappa") + "_" +
                              std::to_string(cfg.seed) + ".csv");
        write_summary_csv(out, res.summary);
    }
    for (auto& f : files.commit()) res.files.push_back(f);
    return res;
}

enum class DecayMode { Kkt, Truncation, Trajectory };

inline DecayMode parse_decay_mode(const std::string& s) {
    if (s == "kkt") return DecayMode::Kkt;
    if (s == "truncation") return DecayMode::Truncation;
    if (s == "trajectory") return DecayMode::Trajectory;
    throw ConfigError("unknown decay mode: " + s);
}

inline std::string to_string(DecayMode m) {
    switch (m) {
        case DecayMode::Kkt: return "kkt";
        case DecayMode::Truncation: return "truncation";
        case DecayMode::Trajectory: return "trajectory";
    }
    return "kkt";
}

/// The t = 0 OCP of the scenario with horizon k and regularizer terminal cost.
inline OcpProblem initial_problem(const Scenario& sc, int k) {
    if (k < 1 || k > sc.horizon) throw ConfigError("decay horizon must lie in [1, T]");
    return make_problem(*sc.system, sc.costs, 0, k, sc.x0,
                        std::span<const Eigen::VectorXd>(sc.disturbances).subspan(0, k), TerminalCost::Regularizer);
}

struct DecayResult {
    DecayProfile profile;
    std::vector<std::filesystem::path> files;
};

inline DecayResult run_decay(const ScenarioConfig& cfg, DecayMode mode, const std::filesystem::path& out_dir) {
    const DecaySpec spec = cfg.decay.value_or(DecaySpec{});
    const BuiltScenario built = build_scenario(cfg);
    const Scenario& sc = built.scenario;
    DecayResult res;
    switch (mode) {
        case DecayMode::Kkt: res.profile = kkt_inverse_decay(initial_problem(sc, spec.k), spec.partition); break;
        case DecayMode::Truncation:
            if (spec.node < 0 || spec.node >= sc.graph().node_count()) throw ConfigError("decay node out of range");
            res.profile = truncation_gap(initial_problem(sc, spec.k), spec.node, spec.kappas);
            break;
        case DecayMode::Trajectory: res.profile = trajectory_gap_curve(sc, spec.k, spec.kappas); break;
    }
    OutputSet files(out_dir);
    const std::string stem = "decay_" + to_string(mode) + "_" + std::to_string(cfg.seed);
    {
        auto out = files.open(stem + ".csv");
        write_decay_csv(out, res.profile);
    }
    {
        auto out = files.open(stem + ".json");
        out << decay_summary_json(res.profile).dump() << '\n';
    }
    res.files = files.commit();
    return res;
}

}  // namespace netpc
