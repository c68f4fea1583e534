#pragma once

// Run configuration (`key = value` lines under `[section]` headers), CSV
// exports and JSON manifests.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgcn/core.hpp"
#include "mfgcn/mfg.hpp"
#include "mfgcn/noise_tree.hpp"
#include "mfgcn/problems.hpp"

namespace mfgcn::io {

inline constexpr const char* version = "0.4.0";

// ---------------------------------------------------------------------------
// Raw key/value file

/// Flat map from "section.key" (or "key" before the first header) to the raw value.
class ConfigFile {
public:
    static const std::set<std::string>& allowed_keys() {
        static const std::set<std::string> keys{
            "problem", "seed", "output_dir",
            "grid.points", "grid.half_width",
            "time.T", "time.steps_per_slab",
            "tree.levels", "tree.beta",
            "hjb.epsilon",
            "fp.epsilon", "fp.delta",
            "fixpoint.max_iters", "fixpoint.damping", "fixpoint.tol_d2", "fixpoint.mode",
            "fixpoint.refine_epsilon",
            "coupling.strength_F", "coupling.strength_G", "coupling.kernel_width",
            "verify.mc_paths",
            "sweep.kind",
        };
        return keys;
    }

    static ConfigFile parse(std::istream& in, const std::string& origin = "<config>") {
        ConfigFile cfg;
        std::string line, section;
        std::size_t lineno = 0;
        auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') fail(ErrorKind::configuration, "cli-io", where() + "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) fail(ErrorKind::configuration, "cli-io", where() + "empty section name");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                fail(ErrorKind::configuration, "cli-io", where() + "expected 'key = value', got '" + line + "'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) fail(ErrorKind::configuration, "cli-io", where() + "missing key");
            if (value.empty()) fail(ErrorKind::configuration, "cli-io", where() + "missing value for '" + key + "'");
            const std::string full = section.empty() ? key : section + "." + key;
            if (!allowed_keys().contains(full))
                fail(ErrorKind::configuration, "cli-io", where() + "unknown key '" + full + "'");
            if (cfg.values_.contains(full))
                fail(ErrorKind::configuration, "cli-io", where() + "duplicate key '" + full + "'");
            cfg.values_[full] = value;
        }
        return cfg;
    }

    static ConfigFile load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) fail(ErrorKind::configuration, "cli-io", "cannot open config file '" + path.string() + "'");
        return parse(in, path.string());
    }

    bool has(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != it->second.size() || !std::isfinite(v))
            fail(ErrorKind::configuration, "cli-io", "'" + key + "' must be a finite number, got '" + it->second + "'");
        return v;
    }
    std::uint64_t get_unsigned(const std::string& key, std::uint64_t fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string& s = it->second;
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
            fail(ErrorKind::configuration, "cli-io", "'" + key + "' must be a non-negative integer, got '" + s + "'");
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            fail(ErrorKind::configuration, "cli-io", "'" + key + "' is out of range");
        }
    }
    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        fail(ErrorKind::configuration, "cli-io", "'" + key + "' must be true or false, got '" + it->second + "'");
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed, validated configuration

struct RunConfig {
    ProblemParams problem;
    std::uint64_t seed = 12345;
    std::string output_dir = "out";
    double hjb_epsilon = 0.0;
    double fp_epsilon = -1.0;  // negative: automatic
    double fp_delta = -1.0;    // negative: 2 dx
    FixpointConfig fixpoint;
    std::size_t mc_paths = 10000;
    std::string sweep_kind = "stability";

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["problem"] = problem.name;
        j["seed"] = seed;
        j["output_dir"] = output_dir;
        j["grid"] = {{"points", problem.grid_points}, {"half_width", problem.half_width}};
        j["time"] = {{"T", problem.T}, {"steps_per_slab", problem.steps_per_slab}};
        j["tree"] = {{"levels", problem.n_levels}, {"beta", problem.beta}};
        j["hjb"] = {{"epsilon", hjb_epsilon}};
        j["fp"] = {{"epsilon", fp_epsilon}, {"delta", fp_delta}};
        j["fixpoint"] = {{"max_iters", fixpoint.max_iters},
                         {"damping", fixpoint.damping},
                         {"tol_d2", fixpoint.tol_d2},
                         {"mode", to_string(fixpoint.mode)},
                         {"refine_epsilon", fixpoint.refine_epsilon}};
        j["coupling"] = {{"strength_F", problem.coupling_F},
                         {"strength_G", problem.coupling_G},
                         {"kernel_width", problem.kernel_width}};
        j["verify"] = {{"mc_paths", mc_paths}};
        j["sweep"] = {{"kind", sweep_kind}};
        return j;
    }
};

inline const std::vector<std::string>& sweep_kinds() {
    static const std::vector<std::string> kinds{"stability", "refinement", "tree"};
    return kinds;
}

inline RunConfig to_run_config(const ConfigFile& f) {
    RunConfig c;
    auto bad = [](const std::string& msg) { fail(ErrorKind::configuration, "cli-io", msg); };
    c.problem.name = f.get_string("problem", c.problem.name);
    const auto& names = library_names();
    if (std::find(names.begin(), names.end(), c.problem.name) == names.end())
        bad("unknown problem '" + c.problem.name + "' (quadratic | relativistic | separated-gaussian)");
    c.seed = f.get_unsigned("seed", c.seed);
    c.output_dir = f.get_string("output_dir", c.output_dir);

    c.problem.grid_points = f.get_unsigned("grid.points", c.problem.grid_points);
    if (c.problem.grid_points < 8 || c.problem.grid_points > 65536) bad("grid.points must be in [8, 65536]");
    c.problem.half_width = f.get_double("grid.half_width", c.problem.half_width);
    if (c.problem.half_width < 0.0) bad("grid.half_width must be >= 0 (0 selects the default)");

    c.problem.T = f.get_double("time.T", c.problem.T);
    if (!(c.problem.T > 0.0)) bad("time.T must be positive");
    c.problem.steps_per_slab = f.get_unsigned("time.steps_per_slab", c.problem.steps_per_slab);

    c.problem.n_levels = f.get_unsigned("tree.levels", c.problem.n_levels);
    if (c.problem.n_levels < 1 || c.problem.n_levels > 14) bad("tree.levels must be in [1, 14]");
    c.problem.beta = f.get_double("tree.beta", c.problem.beta);
    if (c.problem.beta < 0.0) bad("tree.beta must be >= 0");

    c.hjb_epsilon = f.get_double("hjb.epsilon", c.hjb_epsilon);
    if (c.hjb_epsilon < 0.0) bad("hjb.epsilon must be >= 0");
    if (f.has("fp.epsilon")) {
        c.fp_epsilon = f.get_double("fp.epsilon", 0.0);
        if (c.fp_epsilon < 0.0) bad("fp.epsilon must be >= 0");
    }
    if (f.has("fp.delta")) {
        c.fp_delta = f.get_double("fp.delta", 0.0);
        if (!(c.fp_delta > 0.0)) bad("fp.delta must be positive");
    }

    c.fixpoint.max_iters = f.get_unsigned("fixpoint.max_iters", c.fixpoint.max_iters);
    if (c.fixpoint.max_iters < 1) bad("fixpoint.max_iters must be >= 1");
    c.fixpoint.damping = f.get_double("fixpoint.damping", c.fixpoint.damping);
    if (!(c.fixpoint.damping > 0.0 && c.fixpoint.damping <= 1.0)) bad("fixpoint.damping must be in (0, 1]");
    c.fixpoint.tol_d2 = f.get_double("fixpoint.tol_d2", c.fixpoint.tol_d2);
    if (!(c.fixpoint.tol_d2 > 0.0)) bad("fixpoint.tol_d2 must be positive");
    const std::string mode = f.get_string("fixpoint.mode", "picard");
    if (mode == "picard")
        c.fixpoint.mode = FixpointConfig::Mode::picard;
    else if (mode == "fictitious-play" || mode == "fictitious_play")
        c.fixpoint.mode = FixpointConfig::Mode::fictitious_play;
    else
        bad("fixpoint.mode must be picard or fictitious-play, got '" + mode + "'");
    c.fixpoint.refine_epsilon = f.get_bool("fixpoint.refine_epsilon", c.fixpoint.refine_epsilon);

    c.problem.coupling_F = f.get_double("coupling.strength_F", c.problem.coupling_F);
    c.problem.coupling_G = f.get_double("coupling.strength_G", c.problem.coupling_G);
    c.problem.kernel_width = f.get_double("coupling.kernel_width", c.problem.kernel_width);
    if (!(c.problem.kernel_width > 0.0)) bad("coupling.kernel_width must be positive");

    c.mc_paths = f.get_unsigned("verify.mc_paths", c.mc_paths);
    if (c.mc_paths < 100) bad("verify.mc_paths must be >= 100");
    c.sweep_kind = f.get_string("sweep.kind", c.sweep_kind);
    const auto& kinds = sweep_kinds();
    if (std::find(kinds.begin(), kinds.end(), c.sweep_kind) == kinds.end())
        bad("sweep.kind must be stability, refinement or tree, got '" + c.sweep_kind + "'");
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return to_run_config(ConfigFile::load(path)); }

/// MFG problem from a library problem and the solver block of a config.
inline MFGProblem mfg_problem(const LibraryProblem& lp, const RunConfig& c) {
    MFGProblem p = lp.mfg(c.fixpoint);
    p.hjb_epsilon = c.hjb_epsilon;
    p.fp_epsilon = c.fp_epsilon;
    p.mollify_delta = c.fp_delta;
    return p;
}

// ---------------------------------------------------------------------------
// CSV

/// Heap numbering of tree nodes: the root is 0, node k of level n is 2^n - 1 + k.
inline std::size_t node_id(std::size_t level, std::size_t index) { return (std::size_t{1} << level) - 1 + index; }

class FieldCsv {
public:
    explicit FieldCsv(const std::filesystem::path& path) : out_(path) {
        if (!out_) fail(ErrorKind::configuration, "cli-io", "cannot write '" + path.string() + "'");
        out_ << std::setprecision(17);
        out_ << "t,node_id,x,value\n";
    }
    void add(double t, std::size_t node, const GridField& f) {
        for (std::size_t i = 0; i < f.size(); ++i) out_ << t << ',' << node << ',' << f.grid.x(i) << ',' << f[i] << '\n';
    }

private:
    std::ofstream out_;
};

inline void write_residual_csv(const std::filesystem::path& path, const std::vector<double>& series) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::configuration, "cli-io", "cannot write '" + path.string() + "'");
    out << std::setprecision(17) << "iter,residual\n";
    for (std::size_t k = 0; k < series.size(); ++k) out << k + 1 << ',' << series[k] << '\n';
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json tree_manifest(const NoiseTree& tree) {
    nlohmann::json j;
    j["levels"] = tree.n_levels();
    j["horizon"] = tree.horizon();
    j["beta"] = tree.beta();
    j["dt_noise"] = tree.dt_noise();
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t n = 0; n <= tree.n_levels(); ++n)
        for (const TreeNode& node : tree.level(n)) {
            nodes.push_back({{"id", node_id(n, node.index)},
                             {"level", n},
                             {"index", node.index},
                             {"parent", n == 0 ? nlohmann::json(nullptr) : nlohmann::json(node_id(n - 1, node.parent))},
                             {"jump_time", tree.jump_time(n)},
                             {"increment", node.increment},
                             {"W", node.W_value},
                             {"shift", tree.shift(n, node.index)},
                             {"probability", node.probability}});
        }
    j["nodes"] = std::move(nodes);
    return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::configuration, "cli-io", "cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

/// Non-finite numbers have no JSON literal; they are exported as strings.
inline nlohmann::json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline nlohmann::json series(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

}  // namespace mfgcn::io
