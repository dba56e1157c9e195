#include "spme/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spme/extinction.hpp"
#include "spme/io.hpp"
#include "spme/sandpile.hpp"

#ifndef SPME_VERSION
#define SPME_VERSION "0.0.0"
#endif

namespace spme {

using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// JSON reading with key paths in every error

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    for (const auto& [key, value] : obj.items()) {
        const bool known = std::any_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; });
        if (!known) throw ConfigError(join(path, key), "unknown key");
    }
}

const json& object_at(const json& obj, const std::string& path, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(join(path, key), "required section is missing");
    if (!it->is_object()) throw ConfigError(join(path, key), "expected an object");
    return *it;
}

double number(const json& obj, const std::string& path, const char* key, std::optional<double> fallback = {}) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
        if (fallback) return *fallback;
        throw ConfigError(join(path, key), "required number is missing");
    }
    if (!it->is_number()) throw ConfigError(join(path, key), "expected a number");
    const double v = it->get<double>();
    if (!std::isfinite(v)) throw ConfigError(join(path, key), "must be finite");
    return v;
}

std::int64_t integer(const json& obj, const std::string& path, const char* key,
                     std::optional<std::int64_t> fallback = {}) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
        if (fallback) return *fallback;
        throw ConfigError(join(path, key), "required integer is missing");
    }
    if (it->is_number_integer()) return it->get<std::int64_t>();
    if (it->is_number_float()) {
        const double v = it->get<double>();
        if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
    }
    throw ConfigError(join(path, key), "expected an integer");
}

std::uint64_t seed_value(const json& obj, const std::string& path, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(join(path, key), "an explicit seed is required");
    if (it->is_number_unsigned()) return it->get<std::uint64_t>();
    if (it->is_number_integer() && it->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(it->get<std::int64_t>());
    throw ConfigError(join(path, key), "expected a non-negative integer seed");
}

bool boolean(const json& obj, const std::string& path, const char* key, bool fallback) {
    const auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (!it->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
    return it->get<bool>();
}

std::string text(const json& obj, const std::string& path, const char* key, std::optional<std::string> fallback = {}) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
        if (fallback) return *fallback;
        throw ConfigError(join(path, key), "required string is missing");
    }
    if (!it->is_string()) throw ConfigError(join(path, key), "expected a string");
    return it->get<std::string>();
}

std::vector<double> number_list(const json& value, const std::string& path) {
    if (!value.is_array()) throw ConfigError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < value.size(); ++i) {
        if (!value[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(value[i].get<double>());
    }
    return out;
}

ExperimentKind parse_kind(const std::string& name) {
    static const std::pair<const char*, ExperimentKind> kinds[] = {
        {"heat_check", ExperimentKind::heat_check},
        {"fast_diffusion", ExperimentKind::fast_diffusion},
        {"soc_spde", ExperimentKind::soc_spde},
        {"sandpile", ExperimentKind::sandpile},
        {"admissibility", ExperimentKind::admissibility},
        {"yosida_continuation", ExperimentKind::yosida_continuation},
    };
    for (const auto& [key, kind] : kinds) {
        if (name == key) return kind;
    }
    throw ConfigError("kind", "unknown experiment kind '" + name + "'");
}

bool uses_spde(ExperimentKind kind) {
    return kind == ExperimentKind::heat_check || kind == ExperimentKind::fast_diffusion ||
           kind == ExperimentKind::soc_spde || kind == ExperimentKind::yosida_continuation;
}

bool is_extinction_kind(ExperimentKind kind) {
    return kind == ExperimentKind::fast_diffusion || kind == ExperimentKind::soc_spde;
}

Polynomial parse_poly(const json& value, int dimension, const std::string& path) {
    if (!value.is_array() || value.empty()) throw ConfigError(path, "expected a non-empty coefficient array");
    const bool nested = value.front().is_array();
    if (dimension == 1) {
        if (nested) throw ConfigError(path, "a 1D grid takes a flat coefficient list in xi_1");
        return Polynomial::univariate(number_list(value, path));
    }
    if (!nested) {
        // Flat list in 2D: polynomial in xi_1 only.
        return Polynomial::univariate(number_list(value, path));
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t p = 0; p < value.size(); ++p) {
        rows.push_back(number_list(value[p], path + "[" + std::to_string(p) + "]"));
    }
    return Polynomial::bivariate(std::move(rows));
}

}  // namespace

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::heat_check: return "heat_check";
        case ExperimentKind::fast_diffusion: return "fast_diffusion";
        case ExperimentKind::soc_spde: return "soc_spde";
        case ExperimentKind::sandpile: return "sandpile";
        case ExperimentKind::admissibility: return "admissibility";
        case ExperimentKind::yosida_continuation: return "yosida_continuation";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Parsing

ExperimentConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<document>", std::string("malformed JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("<document>", "top level must be a JSON object");
    allow_keys(root, "", {"kind", "grid", "psi", "noise", "nu", "solver", "initial", "monte_carlo",
                          "extinction", "continuation", "sandpile", "output", "threads"});

    ExperimentConfig cfg;
    cfg.canonical = root.dump();
    cfg.kind = parse_kind(text(root, "", "kind"));
    const bool spde = uses_spde(cfg.kind);

    if (cfg.kind != ExperimentKind::sandpile) {
        const json& grid = object_at(root, "", "grid");
        allow_keys(grid, "grid", {"dimension", "n"});
        cfg.dimension = static_cast<int>(integer(grid, "grid", "dimension"));
        cfg.n = static_cast<int>(integer(grid, "grid", "n"));
        if (cfg.dimension != 1 && cfg.dimension != 2) throw ConfigError("grid.dimension", "must be 1 or 2");
        if (cfg.n < 4 || cfg.n > 4096) throw ConfigError("grid.n", "must be in [4, 4096]");
        cfg.nu = number(root, "", "nu", spde ? std::nullopt : std::optional<double>(1.0));
    }

    if (root.contains("psi")) {
        const json& psi = object_at(root, "", "psi");
        allow_keys(psi, "psi", {"kind", "rho", "m", "slope"});
        cfg.psi.kind = text(psi, "psi", "kind");
        if (cfg.psi.kind == "fast_diffusion" || cfg.psi.kind == "power_law") {
            cfg.psi.rho = number(psi, "psi", "rho");
            cfg.psi.m = number(psi, "psi", "m");
        } else if (cfg.psi.kind == "sign") {
            cfg.psi.rho = number(psi, "psi", "rho");
            cfg.psi.m = 0.0;
        } else if (cfg.psi.kind == "linear") {
            cfg.psi.slope = number(psi, "psi", "slope", 0.0);
        } else {
            throw ConfigError("psi.kind", "unknown graph '" + cfg.psi.kind + "'");
        }
    } else if (spde && cfg.kind != ExperimentKind::heat_check) {
        throw ConfigError("psi", "required section is missing");
    }

    if (root.contains("noise")) {
        const json& noise = object_at(root, "", "noise");
        allow_keys(noise, "noise", {"N", "fields"});
        const auto it = noise.find("fields");
        if (it == noise.end() || !it->is_array()) throw ConfigError("noise.fields", "expected an array of fields");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string fpath = "noise.fields[" + std::to_string(i) + "]";
            const json& field = (*it)[i];
            if (!field.is_array()) throw ConfigError(fpath, "expected one entry per axis");
            if (static_cast<int>(field.size()) != cfg.dimension) {
                throw ConfigError(fpath, "needs " + std::to_string(cfg.dimension) + " components, got " +
                                             std::to_string(field.size()));
            }
            std::vector<Polynomial> components;
            for (std::size_t k = 0; k < field.size(); ++k) {
                const std::string cpath = fpath + "[" + std::to_string(k) + "]";
                if (!field[k].is_object()) throw ConfigError(cpath, "expected {\"poly\": [...]}");
                allow_keys(field[k], cpath, {"poly"});
                const auto poly = field[k].find("poly");
                if (poly == field[k].end()) throw ConfigError(cpath + ".poly", "required coefficient list is missing");
                components.push_back(parse_poly(*poly, cfg.dimension, cpath + ".poly"));
            }
            cfg.noise.push_back(std::move(components));
        }
        if (noise.contains("N") && integer(noise, "noise", "N") != static_cast<std::int64_t>(cfg.noise.size())) {
            throw ConfigError("noise.N", "does not match the number of fields");
        }
    }

    if (spde) {
        const json& solver = object_at(root, "", "solver");
        allow_keys(solver, "solver", {"dt", "t_end", "lambda", "newton_tol", "newton_max_iters",
                                      "record_every", "freeze_jacobian", "keep_snapshots"});
        auto& s = cfg.solver;
        s.dt = number(solver, "solver", "dt");
        s.t_end = number(solver, "solver", "t_end");
        const bool lambda_unused =
            cfg.kind == ExperimentKind::yosida_continuation || cfg.kind == ExperimentKind::heat_check;
        s.lambda = number(solver, "solver", "lambda", lambda_unused ? std::optional<double>(1.0) : std::nullopt);
        s.newton_tol = number(solver, "solver", "newton_tol", 1e-10);
        s.newton_max_iters = static_cast<int>(integer(solver, "solver", "newton_max_iters", 50));
        s.record_every = static_cast<int>(integer(solver, "solver", "record_every", 1));
        s.freeze_jacobian = boolean(solver, "solver", "freeze_jacobian", false);
        s.keep_snapshots = boolean(solver, "solver", "keep_snapshots", false);
        try {
            s.validate();
        } catch (const std::invalid_argument& e) {
            const std::string msg = e.what();
            throw ConfigError(msg.substr(0, msg.find(' ')), msg.substr(msg.find(' ') + 1));
        }
    }

    if (root.contains("initial")) {
        const json& init = object_at(root, "", "initial");
        allow_keys(init, "initial", {"kind", "amplitude", "mode"});
        cfg.initial.kind = text(init, "initial", "kind", "sine");
        if (cfg.initial.kind != "sine" && cfg.initial.kind != "zero") {
            throw ConfigError("initial.kind", "expected 'sine' or 'zero'");
        }
        cfg.initial.amplitude = number(init, "initial", "amplitude", 1.0);
        if (init.contains("mode")) {
            const auto mode = number_list(init["mode"], "initial.mode");
            if (mode.empty() || mode.size() > 2) throw ConfigError("initial.mode", "expected [k] or [k, l]");
            for (double v : mode) {
                if (v < 1 || v != std::floor(v)) throw ConfigError("initial.mode", "mode numbers are positive integers");
            }
            cfg.initial.mode_k = static_cast<int>(mode[0]);
            cfg.initial.mode_l = mode.size() > 1 ? static_cast<int>(mode[1]) : 1;
        }
    }

    const bool needs_seed = cfg.kind == ExperimentKind::fast_diffusion || cfg.kind == ExperimentKind::soc_spde ||
                            cfg.kind == ExperimentKind::yosida_continuation ||
                            (cfg.kind == ExperimentKind::heat_check && !cfg.noise.empty());
    if (root.contains("monte_carlo")) {
        const json& mc = object_at(root, "", "monte_carlo");
        allow_keys(mc, "monte_carlo", {"n_paths", "seed"});
        cfg.n_paths = static_cast<int>(integer(mc, "monte_carlo", "n_paths", 1));
        if (cfg.n_paths < 1) throw ConfigError("monte_carlo.n_paths", "must be at least 1");
        if (mc.contains("seed") || needs_seed) cfg.seed = seed_value(mc, "monte_carlo", "seed");
    } else if (needs_seed) {
        throw ConfigError("monte_carlo.seed", "an explicit seed is required");
    }

    if (root.contains("extinction")) {
        const json& ext = object_at(root, "", "extinction");
        allow_keys(ext, "extinction", {"eps_rel", "checkpoints", "sensitivity", "cm_random_fields", "cm_seed"});
        cfg.extinction.eps_rel = number(ext, "extinction", "eps_rel", 1e-8);
        if (!(cfg.extinction.eps_rel > 0.0)) throw ConfigError("extinction.eps_rel", "must be positive");
        cfg.extinction.checkpoints = static_cast<int>(integer(ext, "extinction", "checkpoints", 20));
        if (ext.contains("sensitivity")) {
            cfg.extinction.sensitivity = number_list(ext["sensitivity"], "extinction.sensitivity");
            for (double e : cfg.extinction.sensitivity) {
                if (!(e > 0.0)) throw ConfigError("extinction.sensitivity", "values must be positive");
            }
        }
        cfg.extinction.cm_random_fields = static_cast<int>(integer(ext, "extinction", "cm_random_fields", 10000));
        if (cfg.extinction.cm_random_fields < 0) throw ConfigError("extinction.cm_random_fields", "must be >= 0");
        if (ext.contains("cm_seed")) cfg.extinction.cm_seed = seed_value(ext, "extinction", "cm_seed");
    }

    if (cfg.kind == ExperimentKind::yosida_continuation) {
        const json& cont = object_at(root, "", "continuation");
        allow_keys(cont, "continuation", {"lambdas"});
        if (!cont.contains("lambdas")) throw ConfigError("continuation.lambdas", "required list is missing");
        cfg.lambdas = number_list(cont["lambdas"], "continuation.lambdas");
        if (cfg.lambdas.size() < 2) throw ConfigError("continuation.lambdas", "needs at least two values");
        for (std::size_t k = 0; k < cfg.lambdas.size(); ++k) {
            if (!(cfg.lambdas[k] > 0.0)) throw ConfigError("continuation.lambdas", "values must be positive");
            if (k > 0 && cfg.lambdas[k] > cfg.lambdas[k - 1]) {
                throw ConfigError("continuation.lambdas", "values must be non-increasing");
            }
        }
    }

    if (cfg.kind == ExperimentKind::sandpile) {
        const json& sp = object_at(root, "", "sandpile");
        allow_keys(sp, "sandpile", {"side", "critical", "n_drives", "seed"});
        cfg.sandpile.side = static_cast<int>(integer(sp, "sandpile", "side"));
        cfg.sandpile.critical = static_cast<int>(integer(sp, "sandpile", "critical", 4));
        cfg.sandpile.n_drives = integer(sp, "sandpile", "n_drives");
        cfg.sandpile.seed = seed_value(sp, "sandpile", "seed");
        if (cfg.sandpile.side < 2) throw ConfigError("sandpile.side", "must be at least 2");
        if (cfg.sandpile.critical < 1) throw ConfigError("sandpile.critical", "must be at least 1");
        if (cfg.sandpile.n_drives < 1) throw ConfigError("sandpile.n_drives", "must be at least 1");
    }

    if (root.contains("output")) {
        const json& out = object_at(root, "", "output");
        allow_keys(out, "output", {"dir", "per_path"});
        cfg.output_dir = text(out, "output", "dir", "out");
        cfg.per_path = boolean(out, "output", "per_path", false);
    }
    if (root.contains("threads")) {
        cfg.threads = static_cast<int>(integer(root, "", "threads"));
        if (cfg.threads < 0) throw ConfigError("threads", "must be >= 0");
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ConfigError("<file>", "cannot read " + path.string());
    std::stringstream buffer;
    buffer << file.rdbuf();
    return parse_config(buffer.str());
}

// ---------------------------------------------------------------------------
// Builders

VectorFieldSet build_noise(const ExperimentConfig& config, const GridSpec& spec) {
    if (config.noise.empty()) return VectorFieldSet::none(spec);
    return VectorFieldSet::build(spec, config.noise);
}

MonotoneGraph build_graph(const PsiSpec& psi) {
    if (psi.kind == "fast_diffusion") return MonotoneGraph::fast_diffusion(psi.rho, psi.m);
    if (psi.kind == "sign") return MonotoneGraph::sign(psi.rho);
    if (psi.kind == "power_law") return MonotoneGraph::power_law(psi.rho, psi.m);
    if (psi.kind == "linear") return MonotoneGraph::linear(psi.slope);
    throw ConfigError("psi.kind", "unknown graph '" + psi.kind + "'");
}

GridField build_initial(const InitialSpec& initial, const GridSpec& spec) {
    if (initial.kind == "zero") return GridField(spec);
    const double pi = std::numbers::pi;
    return GridField::sample(spec, [&](std::span<const double> xi) {
        double v = initial.amplitude * std::sin(initial.mode_k * pi * xi[0]);
        if (xi.size() > 1) v *= std::sin(initial.mode_l * pi * xi[1]);
        return v;
    });
}

// ---------------------------------------------------------------------------
// Validation

bool Diagnostics::ok() const {
    return std::none_of(items.begin(), items.end(), [](const Diagnostic& d) { return d.level == "error"; });
}

std::string Diagnostics::to_json() const {
    json out = json::object();
    out["ok"] = ok();
    out["diagnostics"] = json::array();
    for (const auto& d : items) {
        out["diagnostics"].push_back({{"level", d.level}, {"key", d.key}, {"message", d.message}});
    }
    return out.dump(2);
}

namespace {

json admissibility_json(const AdmissibilityReport& r) {
    return {{"gamma", r.gamma},
            {"ctilde_estimate", r.ctilde_estimate},
            {"ctilde_converged", r.ctilde_converged},
            {"b_sup_sq", r.b_sup_sq},
            {"nu", r.nu},
            {"lhs", r.lhs},
            {"rhs", 2.0 * r.nu},
            {"passes", r.passes},
            {"c1", r.c1},
            {"c2", r.c2}};
}

}  // namespace

Diagnostics validate(const ExperimentConfig& config) {
    Diagnostics diag;
    const auto error = [&](std::string key, std::string msg) {
        diag.items.push_back({"error", std::move(key), std::move(msg)});
    };
    const auto info = [&](std::string key, std::string msg) {
        diag.items.push_back({"info", std::move(key), std::move(msg)});
    };
    const auto warning = [&](std::string key, std::string msg) {
        diag.items.push_back({"warning", std::move(key), std::move(msg)});
    };

    if (config.kind == ExperimentKind::sandpile) {
        if (config.sandpile.critical < 4) {
            warning("sandpile.critical", "heights may turn negative for a critical value below 4");
        }
        return diag;
    }

    // Graph parameters.
    std::optional<MonotoneGraph> graph;
    try {
        graph = build_graph(config.psi);
    } catch (const std::invalid_argument& e) {
        error("psi", e.what());
    }
    if (config.kind == ExperimentKind::fast_diffusion && config.psi.kind != "fast_diffusion") {
        error("psi.kind", "fast_diffusion experiments need psi.kind = fast_diffusion");
    }
    if (config.kind == ExperimentKind::soc_spde && config.psi.kind != "sign") {
        error("psi.kind", "soc_spde experiments need psi.kind = sign");
    }
    if (config.kind == ExperimentKind::heat_check) {
        if (config.psi.kind != "linear") error("psi.kind", "heat_check needs a linear graph");
        if (!config.noise.empty()) error("noise", "heat_check runs without noise");
    }
    if (is_extinction_kind(config.kind)) {
        const double m = config.psi.kind == "sign" ? 0.0 : config.psi.m;
        const std::string why = dimension_diagnostic(config.dimension, m);
        if (!why.empty()) {
            error("grid.dimension", why);
        } else {
            info("grid.dimension", "dimension condition holds: d = " + std::to_string(config.dimension) +
                                       " < 2(1+m)/(1-m) = " + format_double(2.0 * (1.0 + m) / (1.0 - m)));
        }
        if (config.solver.record_every != 1) {
            warning("solver.record_every", "extinction times are resolved only at recorded instants");
        }
    }
    if (!(config.nu >= 0.0)) error("nu", "must be non-negative");

    // Noise and admissibility dry run.
    try {
        const auto spec = GridSpec::make(config.dimension, config.n);
        const auto fields = build_noise(config, spec);
        const bool noisy = fields.count() > 0 && !fields.is_zero();
        if (config.nu == 0.0 && noisy) {
            error("admissibility", "nu = 0 forces b = 0; noise with zero viscosity is not admissible");
        } else if (config.nu >= 0.0) {
            const GridOperators grid(spec);
            const auto report = check_admissibility(config.nu, fields, grid);
            info("constants", "gamma = " + format_double(report.gamma) +
                                  ", Ctilde = " + format_double(report.ctilde_estimate) +
                                  ", C1 = " + format_double(report.c1) + ", C2 = " + format_double(report.c2) +
                                  ", mu1 = " + format_double(grid.smallest_eigenvalue()));
            if (!report.passes && (noisy || config.kind == ExperimentKind::admissibility)) {
                error("admissibility", "Ctilde gamma + |b|^2 = " + format_double(report.lhs) +
                                           " exceeds 2 nu = " + format_double(2.0 * config.nu));
            }
        }
    } catch (const std::invalid_argument& e) {
        error("noise", e.what());
    }
    return diag;
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct RunFailure {
    int exit_code;
    json detail;
};

std::string error_json(int code, const std::string& category, const std::string& key,
                       const std::string& message, const json& extra = json::object()) {
    json out = {{"status", "error"}, {"exit_code", code}, {"category", category}, {"message", message}};
    if (!key.empty()) out["key"] = key;
    for (const auto& [k, v] : extra.items()) out[k] = v;
    return out.dump(2);
}

std::vector<CsvColumn> series_columns(const std::vector<double>& t, const std::vector<double>& l2,
                                      const std::vector<double>& hm1, const std::vector<double>& l1pm,
                                      const std::vector<double>& h1, const std::vector<double>& cum) {
    return {{"t", t}, {"l2", l2}, {"hminus1", hm1}, {"l1pm", l1pm}, {"h1semi", h1}, {"cumulative_h1", cum}};
}

json failures_json(const std::vector<PathFailure>& failures) {
    json out = json::array();
    for (const auto& f : failures) out.push_back({{"path", f.path_index}, {"message", f.message}});
    return out;
}

class Runner {
public:
    Runner(const ExperimentConfig& cfg, std::filesystem::path dir, int threads)
        : cfg_(cfg), dir_(std::move(dir)), threads_(threads) {}

    void run() {
        switch (cfg_.kind) {
            case ExperimentKind::sandpile: run_sandpile(); break;
            case ExperimentKind::admissibility: run_admissibility(); break;
            case ExperimentKind::heat_check: run_heat(); break;
            case ExperimentKind::fast_diffusion:
            case ExperimentKind::soc_spde: run_extinction(); break;
            case ExperimentKind::yosida_continuation: run_continuation(); break;
        }
    }

    json manifest;  // filled as the run proceeds
    std::vector<std::string> outputs;

private:
    void emit(const std::string& name, const std::string& content) {
        write_text(dir_ / name, content);
        outputs.push_back(name);
    }

    void setup_spde() {
        spec_ = GridSpec::make(cfg_.dimension, cfg_.n);
        grid_ = std::make_unique<GridOperators>(*spec_);
        fields_ = std::make_unique<VectorFieldSet>(build_noise(cfg_, *spec_));
        graph_ = build_graph(cfg_.psi);
        const bool noisy = fields_->count() > 0 && !fields_->is_zero();
        if (cfg_.nu == 0.0 && noisy) {
            throw RunFailure{exit_admissibility,
                             {{"message", "nu = 0 forces b = 0; noise with zero viscosity is not admissible"}}};
        }
        adm_ = check_admissibility(cfg_.nu, *fields_, *grid_);
        manifest["admissibility"] = admissibility_json(*adm_);
        manifest["constants"] = {{"gamma", adm_->gamma},
                                 {"ctilde", adm_->ctilde_estimate},
                                 {"c1", adm_->c1},
                                 {"c2", adm_->c2},
                                 {"mu1", grid_->smallest_eigenvalue()}};
        if (noisy && !adm_->passes) {
            throw RunFailure{exit_admissibility,
                             {{"message", "admissibility condition fails"}, {"admissibility", admissibility_json(*adm_)}}};
        }
    }

    void run_admissibility() {
        setup_spde();
        emit("report.json", json{{"admissibility", admissibility_json(*adm_)}}.dump(2) + "\n");
        if (!adm_->passes) {
            throw RunFailure{exit_admissibility,
                             {{"message", "admissibility condition fails"}, {"admissibility", admissibility_json(*adm_)}}};
        }
    }

    void run_heat() {
        setup_spde();
        const ImplicitStepper stepper(SpdeProblem{*grid_, *fields_, *graph_, cfg_.nu}, cfg_.solver);
        const GridField x0 = build_initial(cfg_.initial, *spec_);
        SimulationPath path;
        try {
            path = simulate_path(x0, stepper, cfg_.seed.value_or(0), 0);
        } catch (const StepFailure& e) {
            throw RunFailure{exit_numerical, {{"message", e.what()}, {"residual_trace", e.residual_trace}}};
        }
        emit("series.csv", render_csv(series_columns(path.times, path.l2, path.hminus1, path.l1pm,
                                                     path.h1semi, path.cumulative_h1)));
        const double mu1 = grid_->smallest_eigenvalue();
        const double s = cfg_.psi.slope;
        const double diffusivity = cfg_.nu + s / (1.0 + cfg_.solver.lambda * s);
        const double t = path.times.back();
        const double ratio = path.l2.front() > 0.0 ? path.l2.back() / path.l2.front() : 0.0;
        const double expected = std::exp(-diffusivity * mu1 * t);
        const double rel = std::abs(ratio - expected) / expected;
        const double backward_euler =
            std::pow(1.0 + cfg_.solver.dt * diffusivity * mu1, -static_cast<double>(cfg_.solver.step_count()));
        bool monotone = true;
        for (std::size_t k = 1; k < path.l2.size(); ++k) monotone = monotone && path.l2[k] <= path.l2[k - 1];
        emit("report.json", json{{"t", t},
                                 {"mu1", mu1},
                                 {"ratio", ratio},
                                 {"expected", expected},
                                 {"backward_euler_expected", backward_euler},
                                 {"relative_error", rel},
                                 {"passes", rel <= 0.02},
                                 {"l2_non_increasing", monotone}}
                                .dump(2) + "\n");
    }

    void run_extinction() {
        setup_spde();
        const GridField x0 = build_initial(cfg_.initial, *spec_);
        const double x0h = grid_->h_minus1_norm(x0);
        const auto& ext = cfg_.extinction;
        CmSearchOptions cm;
        cm.random_fields = ext.cm_random_fields;
        cm.seed = ext.cm_seed;
        ExtinctionSetup setup;
        try {
            setup = make_extinction_setup(*grid_, *graph_, adm_->c2, x0h, ext.eps_rel, cm);
        } catch (const DimensionConditionError& e) {
            throw RunFailure{exit_config, {{"message", e.what()}, {"key", "grid.dimension"}}};
        }
        manifest["constants"]["K_m"] = setup.K_m;
        manifest["constants"]["C_m"] = setup.C_m;
        manifest["constants"]["C_m_raw"] = setup.C_m_raw;

        std::vector<double> eps_rel{ext.eps_rel};
        for (double e : ext.sensitivity) {
            if (std::find(eps_rel.begin(), eps_rel.end(), e) == eps_rel.end()) eps_rel.push_back(e);
        }
        SolverConfig solver = cfg_.solver;
        solver.extinction_eps = *std::min_element(eps_rel.begin(), eps_rel.end()) * x0h;
        manifest["constants"]["extinction_eps"] = setup.extinction_eps;
        manifest["constants"]["solver_extinction_eps"] = solver.extinction_eps;

        const ImplicitStepper stepper(SpdeProblem{*grid_, *fields_, *graph_, cfg_.nu}, solver);
        Ensemble ens;
        try {
            ens = monte_carlo(x0, stepper, cfg_.n_paths, *cfg_.seed, threads_);
        } catch (const MonteCarloError& e) {
            throw RunFailure{exit_numerical, {{"message", e.what()}, {"failures", failures_json(e.failures)}}};
        }

        emit("ensemble_series.csv",
             render_csv(series_columns(ens.times, ens.l2.mean, ens.hminus1.mean, ens.l1pm.mean, ens.h1semi.mean,
                                       ens.cumulative_h1.mean)));
        emit("ensemble_stderr.csv",
             render_csv(series_columns(ens.times, ens.l2.std_error, ens.hminus1.std_error, ens.l1pm.std_error,
                                       ens.h1semi.std_error, ens.cumulative_h1.std_error)));
        if (cfg_.per_path) {
            for (const auto& p : ens.paths) {
                char name[48];
                std::snprintf(name, sizeof name, "paths/path_%05llu.csv", static_cast<unsigned long long>(p.path_index));
                emit(name, render_csv(series_columns(p.times, p.l2, p.hminus1, p.l1pm, p.h1semi, p.cumulative_h1)));
            }
        }

        // Energy budget E|X|^2 + 2 nu E int |grad X|^2 <= 1.05 |x0|^2 + 3 se.
        const double nu = cfg_.nu;
        const auto energy = ensemble_statistic(ens, [nu](const SimulationPath& p, std::size_t t) {
            return p.l2[t] * p.l2[t] + 2.0 * nu * p.cumulative_h1[t];
        });
        const double x0_l2 = grid_->l2_norm(x0);
        const double limit = 1.05 * x0_l2 * x0_l2;
        double energy_margin = -std::numeric_limits<double>::infinity();
        std::vector<double> limit_col(ens.times.size(), limit);
        for (std::size_t t = 0; t < ens.times.size(); ++t) {
            energy_margin = std::max(energy_margin, energy.mean[t] - limit - 3.0 * energy.std_error[t]);
        }
        emit("energy.csv", render_csv({{"t", ens.times}, {"energy", energy.mean},
                                        {"stderr", energy.std_error}, {"limit", limit_col}}));

        const auto sm_all = supermartingale_check(ens, setup.m, setup.c2, 0);
        const auto sm = supermartingale_check(ens, setup.m, setup.c2, ext.checkpoints);
        const auto verdict = verify_extinction_bound(ens, setup, x0h, setup.extinction_eps);
        {
            std::vector<double> t, surv, se, bound, smv, smse;
            std::size_t k = 0;
            for (std::size_t i = 0; i < ens.times.size(); ++i) {
                if (!(ens.times[i] > 0.0)) continue;
                t.push_back(ens.times[i]);
                surv.push_back(verdict.survival.survival[k]);
                se.push_back(verdict.survival.std_error[k]);
                bound.push_back(verdict.bound[k]);
                smv.push_back(sm_all.mean[i]);
                smse.push_back(sm_all.std_error[i]);
                ++k;
            }
            emit("extinction.csv", render_csv({{"t", t}, {"survival", surv}, {"stderr", se}, {"bound", bound},
                                                {"supermartingale", smv}, {"sm_stderr", smse}}));
        }

        json sensitivity = json::array();
        bool consistent = true;
        for (double e : eps_rel) {
            const auto v = verify_extinction_bound(ens, setup, x0h, e * x0h);
            sensitivity.push_back({{"eps_rel", e},
                                   {"passes", v.passes},
                                   {"informative", v.informative},
                                   {"extinct_fraction", v.extinct_fraction},
                                   {"worst_margin", v.worst_margin}});
            consistent = consistent && v.passes == verdict.passes &&
                         (v.extinct_fraction >= 0.5) == (verdict.extinct_fraction >= 0.5);
        }

        int halved = 0;
        for (const auto& p : ens.paths) halved += p.halved_steps;
        json report = {
            {"n_paths", cfg_.n_paths},
            {"successful_paths", ens.paths.size()},
            {"failures", failures_json(ens.failures)},
            {"halved_steps", halved},
            {"x0_l2", x0_l2},
            {"x0_hminus1", x0h},
            {"setup", {{"m", setup.m}, {"rho", setup.rho}, {"c2", setup.c2}, {"K_m", setup.K_m},
                       {"C_m", setup.C_m}, {"C_m_raw", setup.C_m_raw}, {"dimension_ok", setup.dimension_ok},
                       {"extinction_eps", setup.extinction_eps}}},
            {"energy", {{"passes", energy_margin <= 0.0}, {"worst_margin", energy_margin}, {"limit", limit}}},
            {"supermartingale", {{"checkpoints", sm.times.size()}, {"passes", sm.passes},
                                 {"worst_excess", sm.worst_excess}, {"times", sm.times},
                                 {"mean", sm.mean}, {"stderr", sm.std_error}}},
            {"extinction", {{"passes", verdict.passes}, {"informative", verdict.informative},
                            {"extinction_observed", verdict.extinction_observed},
                            {"extinct_fraction", verdict.extinct_fraction},
                            {"worst_margin", verdict.worst_margin},
                            {"bound_at_end", verdict.bound.empty() ? 1.0 : verdict.bound.back()}}},
            {"sensitivity", sensitivity},
            {"sensitivity_consistent", consistent},
        };
        emit("report.json", report.dump(2) + "\n");
    }

    void run_continuation() {
        setup_spde();
        const GridField x0 = build_initial(cfg_.initial, *spec_);
        CauchyReport report;
        try {
            report = yosida_continuation(x0, SpdeProblem{*grid_, *fields_, *graph_, cfg_.nu}, cfg_.solver,
                                         cfg_.lambdas, cfg_.n_paths, *cfg_.seed, threads_);
        } catch (const MonteCarloError& e) {
            throw RunFailure{exit_numerical, {{"message", e.what()}, {"failures", failures_json(e.failures)}}};
        }
        std::vector<double> k, lk, lk1;
        for (std::size_t i = 0; i < report.distance.size(); ++i) {
            k.push_back(static_cast<double>(i));
            lk.push_back(report.lambdas[i]);
            lk1.push_back(report.lambdas[i + 1]);
        }
        emit("cauchy.csv", render_csv({{"k", k}, {"lambda_k", lk}, {"lambda_next", lk1},
                                       {"distance", report.distance}, {"stderr", report.distance_stderr},
                                       {"ratio", report.ratio}}));
        emit("report.json", json{{"lambdas", report.lambdas},
                                 {"distance", report.distance},
                                 {"stderr", report.distance_stderr},
                                 {"ratio", report.ratio},
                                 {"max_ratio", report.max_ratio},
                                 {"strictly_decreasing", report.strictly_decreasing},
                                 {"successful_paths", report.n_paths},
                                 {"failures", failures_json(report.failures)}}
                                .dump(2) + "\n");
    }

    void run_sandpile() {
        const auto& sp = cfg_.sandpile;
        SocStatistics stats;
        try {
            stats = run_soc(sp.side, sp.critical, sp.n_drives, *sp.seed);
        } catch (const StabilizationError& e) {
            throw RunFailure{exit_numerical, {{"message", e.what()}}};
        }
        const auto hist = [](const std::vector<LogBin>& bins) {
            std::vector<double> lo, hi, count;
            for (const auto& b : bins) {
                lo.push_back(static_cast<double>(b.lo));
                hi.push_back(static_cast<double>(b.hi));
                count.push_back(static_cast<double>(b.count));
            }
            return render_csv({{"bin_lo", lo}, {"bin_hi", hi}, {"count", count}});
        };
        emit("sandpile_sizes.csv", hist(stats.size_histogram));
        emit("sandpile_durations.csv", hist(stats.duration_histogram));
        emit("report.json", json{{"side", sp.side},
                                 {"critical", sp.critical},
                                 {"n_drives", stats.n_drives},
                                 {"max_size", stats.max_size},
                                 {"max_duration", stats.max_duration},
                                 {"quiet_drives", stats.quiet_drives},
                                 {"always_stable_after", stats.always_stable_after},
                                 {"audit", {{"initial_total", stats.audit.initial_total},
                                            {"driven", stats.audit.driven},
                                            {"current_total", stats.audit.current_total},
                                            {"lost", stats.audit.lost},
                                            {"exact", stats.audit.exact()}}}}
                                .dump(2) + "\n");
    }

    const ExperimentConfig& cfg_;
    std::filesystem::path dir_;
    int threads_;
    std::optional<GridSpec> spec_;
    std::unique_ptr<GridOperators> grid_;
    std::unique_ptr<VectorFieldSet> fields_;
    std::optional<MonotoneGraph> graph_;
    std::optional<AdmissibilityReport> adm_;
};

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    RunOutcome outcome;
    outcome.out_dir = options.out_dir.value_or(std::filesystem::path(config.output_dir));
    const int threads = resolve_threads(options.threads > 0 ? options.threads : config.threads);
    const auto start = std::chrono::steady_clock::now();

    Runner runner(config, outcome.out_dir, threads);
    runner.manifest = {{"config_hash", hash_hex(fnv1a64(config.canonical))},
                       {"version", SPME_VERSION},
                       {"kind", to_string(config.kind)}};
    const auto finish_error = [&](int code, const std::string& category, json detail) {
        const std::string key = detail.contains("key") ? detail["key"].get<std::string>() : "";
        const std::string message = detail.value("message", std::string("unknown error"));
        detail.erase("message");
        detail.erase("key");
        outcome.exit_code = code;
        outcome.error_json = error_json(code, category, key, message, detail);
        try {
            write_text(outcome.out_dir / "error.json", outcome.error_json + "\n");
        } catch (const std::exception&) {
            // The error is still reported on stdout.
        }
    };

    try {
        std::filesystem::create_directories(outcome.out_dir);
        runner.run();
    } catch (const RunFailure& f) {
        const char* category = f.exit_code == exit_admissibility ? "admissibility"
                               : f.exit_code == exit_config      ? "config"
                                                                 : "numerical";
        finish_error(f.exit_code, category, f.detail);
        return outcome;
    } catch (const ConfigError& e) {
        finish_error(exit_config, "config", {{"message", e.what()}, {"key", e.key()}});
        return outcome;
    } catch (const std::invalid_argument& e) {
        finish_error(exit_config, "config", {{"message", e.what()}});
        return outcome;
    } catch (const std::exception& e) {
        finish_error(exit_numerical, "numerical", {{"message", e.what()}});
        return outcome;
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    runner.manifest["wall_time_seconds"] = wall;
    runner.manifest["threads"] = threads;
    runner.manifest["outputs"] = runner.outputs;
    write_text(outcome.out_dir / "manifest.json", runner.manifest.dump(2) + "\n");
    return outcome;
}

RunOutcome run_config_file(const std::filesystem::path& path, const RunOptions& options) {
    RunOutcome outcome;
    ExperimentConfig config;
    try {
        config = load_config(path);
    } catch (const ConfigError& e) {
        outcome.exit_code = exit_config;
        outcome.error_json = error_json(exit_config, "config", e.key(), e.what());
        return outcome;
    }
    const auto diag = validate(config);
    if (!diag.ok()) {
        const auto it = std::find_if(diag.items.begin(), diag.items.end(),
                                     [](const Diagnostic& d) { return d.level == "error"; });
        const bool gate = it->key == "admissibility";
        outcome.exit_code = gate ? exit_admissibility : exit_config;
        outcome.error_json = error_json(outcome.exit_code, gate ? "admissibility" : "config", it->key,
                                        it->message, json{{"diagnostics", json::parse(diag.to_json())["diagnostics"]}});
        outcome.out_dir = options.out_dir.value_or(std::filesystem::path(config.output_dir));
        return outcome;
    }
    return run_experiment(config, options);
}

}  // namespace spme
