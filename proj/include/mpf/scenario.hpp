#pragma once

// Versioned JSON scenario configuration: parse, validate, materialize
// defaults, serialize, and build the model objects a run needs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mpf/discrete_filter.hpp"
#include "mpf/dynamics.hpp"
#include "mpf/errors.hpp"
#include "mpf/families.hpp"

namespace mpf {

inline constexpr int kSchemaVersion = 1;

enum class ObsMode { none, discrete, continuous };

struct ModelConfig {
    double alpha = 1.0;  ///< f = -alpha x (linear-ou, cubic-sensor)
    double sigma = 1.0;

    bool operator==(const ModelConfig&) const = default;
};

struct ObsConfig {
    ObsMode mode = ObsMode::discrete;
    std::string sensor = "linear";  ///< "linear" or "cubic"
    double slope = 1.0;             ///< linear sensors only
    double noise_variance = 1.0;    ///< discrete only
    double interval = 0.1;          ///< discrete: spacing of observation times
    int count = 20;                 ///< discrete: number of observations
    double dt = 1e-3;               ///< continuous: path step

    bool operator==(const ObsConfig&) const = default;
};

struct ComponentConfig {
    double mean = 0.0;
    double variance = 1.0;

    bool operator==(const ComponentConfig&) const = default;
};

struct QuadratureConfig {
    std::string kind = "uniform_grid";  ///< or "gauss_hermite"
    int nodes = 2001;
    double span = 10.0;

    bool operator==(const QuadratureConfig&) const = default;
};

struct IntegratorSettings {
    std::string method = "exact";  ///< or "rk4"
    double delta_fraction = 1e-3;
    int substeps = 1;      ///< records per prediction interval (discrete / none)
    int record_every = 1;  ///< continuous: record every this many steps
    double clip_margin = kSimplexMargin;
    double clip_tolerance = kClipTolerance;
    std::string weight_rule = "exact";  ///< or "literal"

    bool operator==(const IntegratorSettings&) const = default;
};

struct ParticleConfig {
    int count = 10000;
    double em_dt = 1e-3;

    bool operator==(const ParticleConfig&) const = default;
};

struct GridConfig {
    double lower = -10.0;
    double upper = 10.0;
    int nodes = 2001;
    double dt = 1e-3;
    std::string scheme = "crank_nicolson";  ///< or "explicit_euler"

    bool operator==(const GridConfig&) const = default;
};

struct Scenario {
    int schema_version = kSchemaVersion;
    std::string name = "scenario";
    std::string preset = "linear-ou";  ///< linear-ou | cubic-sensor | bimodal-drift
    ModelConfig model;
    ObsConfig observations;
    std::vector<ComponentConfig> basis;
    std::vector<double> theta0;
    double horizon = 0.0;
    std::optional<double> truth_x0;
    double truth_em_dt = 1e-3;
    QuadratureConfig quadrature;
    IntegratorSettings integrator;
    std::vector<std::uint64_t> seeds{1};
    std::vector<std::string> engines{"mpf"};
    ParticleConfig particles;
    GridConfig grid;
    int threads = 0;  ///< 0: one worker per hardware thread

    bool operator==(const Scenario&) const = default;

    int m() const { return static_cast<int>(basis.size()) - 1; }
    bool linear_gaussian() const { return preset == "linear-ou" && observations.sensor == "linear"; }
    bool wants(const std::string& engine) const {
        return std::find(engines.begin(), engines.end(), engine) != engines.end();
    }
};

inline const std::vector<std::string>& known_engines() {
    static const std::vector<std::string> e{"mpf", "galerkin", "particle", "grid", "kalman"};
    return e;
}

namespace detail {

using json = nlohmann::ordered_json;

/// Reads the members of one JSON object, recording the keys it consumed so
/// stray keys can be reported with their path.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(where() + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_number()) throw ValidationError(path(key) + ": expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ValidationError(path(key) + ": must be finite");
        return d;
    }

    int integer(const std::string& key, int fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_number_integer()) throw ValidationError(path(key) + ": expected an integer");
        return v.get<int>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_string()) throw ValidationError(path(key) + ": expected a string");
        return v.get<std::string>();
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            (void)value;
            if (!used_.count(key)) throw ValidationError(path(key) + ": unknown field");
        }
    }

private:
    std::string where() const { return path_.empty() ? "scenario" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline std::string choice(const std::string& value, const std::vector<std::string>& allowed, const std::string& path) {
    if (std::find(allowed.begin(), allowed.end(), value) != allowed.end()) return value;
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ValidationError(path + ": '" + value + "' is not one of {" + list + "}");
}

inline const char* mode_name(ObsMode m) {
    switch (m) {
        case ObsMode::none: return "none";
        case ObsMode::discrete: return "discrete";
        case ObsMode::continuous: return "continuous";
    }
    return "none";
}

inline std::vector<ComponentConfig> read_basis(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    std::vector<ComponentConfig> out;
    if (r.has("preset")) {
        choice(r.text("preset", ""), {"symmetric-pair"}, r.path("preset"));
        const double offset = r.number("offset", 1.0), variance = r.number("variance", 1.0);
        out = {{-offset, variance}, {offset, variance}};
        if (r.has("components")) throw ValidationError(r.path("components") + ": not allowed together with a preset");
    } else {
        if (!r.has("components")) throw ValidationError(path + ": needs 'components' or 'preset'");
        const json& list = r.raw("components");
        if (!list.is_array()) throw ValidationError(r.path("components") + ": expected an array");
        for (std::size_t i = 0; i < list.size(); ++i) {
            ObjectReader c(list[i], r.path("components") + "[" + std::to_string(i) + "]");
            out.push_back({c.number("mean", 0.0), c.number("variance", 1.0)});
            c.finish();
        }
    }
    r.finish();
    return out;
}

}  // namespace detail

/// Check referential validity and ranges; messages carry the field path.
inline void validate_scenario(const Scenario& s) {
    if (s.schema_version != kSchemaVersion) {
        throw ValidationError("schema_version: expected " + std::to_string(kSchemaVersion) + ", got " +
                              std::to_string(s.schema_version));
    }
    detail::choice(s.preset, {"linear-ou", "cubic-sensor", "bimodal-drift"}, "preset");
    if (!(s.model.sigma >= 0.0)) throw ValidationError("model.sigma: must be >= 0");
    const auto& o = s.observations;
    detail::choice(o.sensor, {"linear", "cubic"}, "observations.sensor");
    if (o.mode == ObsMode::discrete) {
        if (!(o.noise_variance > 0.0)) throw ValidationError("observations.noise_variance: must be > 0");
        if (!(o.interval > 0.0)) throw ValidationError("observations.interval: must be > 0");
        if (o.count < 0) throw ValidationError("observations.count: must be >= 0");
        if (o.count * o.interval > s.horizon * (1.0 + 1e-12)) {
            throw ValidationError("observations: schedule ends at " + std::to_string(o.count * o.interval) +
                                  ", after the horizon " + std::to_string(s.horizon));
        }
    }
    if (o.mode == ObsMode::continuous) {
        if (!(o.dt > 0.0)) throw ValidationError("observations.dt: must be > 0");
        const double ratio = s.horizon / o.dt;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
            throw ValidationError("observations.dt: must divide the horizon");
        }
    }
    if (!(s.horizon > 0.0)) throw ValidationError("horizon: must be > 0");
    if (s.basis.size() < 2) throw ValidationError("basis: need at least two components");
    for (std::size_t i = 0; i < s.basis.size(); ++i) {
        if (!(s.basis[i].variance > 0.0)) {
            throw ValidationError("basis.components[" + std::to_string(i) + "].variance: must be > 0");
        }
    }
    if (static_cast<int>(s.theta0.size()) != s.m()) {
        throw ValidationError("theta0: basis of " + std::to_string(s.basis.size()) + " components needs " +
                              std::to_string(s.m()) + " coordinates, got " + std::to_string(s.theta0.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < s.theta0.size(); ++i) {
        if (!(s.theta0[i] > 0.0)) throw ValidationError("theta0[" + std::to_string(i) + "]: must be > 0");
        sum += s.theta0[i];
    }
    if (!(sum < 1.0)) throw ValidationError("theta0: coordinates must sum to less than 1");
    if (s.truth_x0 && !std::isfinite(*s.truth_x0)) throw ValidationError("truth.x0: must be finite");
    if (!(s.truth_em_dt > 0.0)) throw ValidationError("truth.em_dt: must be > 0");
    detail::choice(s.quadrature.kind, {"uniform_grid", "gauss_hermite"}, "quadrature.kind");
    if (s.quadrature.nodes < 8) throw ValidationError("quadrature.nodes: must be >= 8");
    if (!(s.quadrature.span > 0.0)) throw ValidationError("quadrature.span: must be > 0");
    const auto& in = s.integrator;
    detail::choice(in.method, {"exact", "rk4"}, "integrator.method");
    detail::choice(in.weight_rule, {"exact", "literal"}, "integrator.weight_rule");
    if (!(in.delta_fraction > 0.0 && in.delta_fraction <= 1.0)) {
        throw ValidationError("integrator.delta_fraction: must lie in (0, 1]");
    }
    if (in.substeps < 1) throw ValidationError("integrator.substeps: must be >= 1");
    if (in.record_every < 1) throw ValidationError("integrator.record_every: must be >= 1");
    if (!(in.clip_margin >= 0.0)) throw ValidationError("integrator.clip_margin: must be >= 0");
    if (!(in.clip_tolerance >= 0.0)) throw ValidationError("integrator.clip_tolerance: must be >= 0");
    if (s.engines.empty()) throw ValidationError("engines: at least one engine is required");
    for (std::size_t i = 0; i < s.engines.size(); ++i) {
        detail::choice(s.engines[i], known_engines(), "engines[" + std::to_string(i) + "]");
        if (std::count(s.engines.begin(), s.engines.end(), s.engines[i]) > 1) {
            throw ValidationError("engines[" + std::to_string(i) + "]: duplicate engine '" + s.engines[i] + "'");
        }
    }
    if (s.seeds.empty()) throw ValidationError("seeds: at least one seed is required");
    if (s.wants("kalman") && !s.linear_gaussian()) {
        throw ValidationError("engines: kalman needs the linear-ou preset with a linear sensor");
    }
    if (s.wants("particle")) {
        if (s.particles.count < 100) throw ValidationError("particles.count: must be >= 100");
        if (!(s.particles.em_dt > 0.0)) throw ValidationError("particles.em_dt: must be > 0");
    }
    if (s.wants("grid")) {
        const auto& g = s.grid;
        if (!(g.lower < g.upper)) throw ValidationError("grid: lower must be below upper");
        if (g.nodes < GridField::kMinNodes) throw ValidationError("grid.nodes: must be >= 64");
        if (!(g.dt > 0.0)) throw ValidationError("grid.dt: must be > 0");
        detail::choice(g.scheme, {"crank_nicolson", "explicit_euler"}, "grid.scheme");
    }
    if (s.threads < 0) throw ValidationError("threads: must be >= 0");
}

/// Build a Scenario from parsed JSON; every default is materialized.
inline Scenario scenario_from_json(const nlohmann::ordered_json& j) {
    using detail::ObjectReader;
    ObjectReader r(j, "");
    Scenario s;
    s.schema_version = r.integer("schema_version", -1);
    if (s.schema_version == -1) throw ValidationError("schema_version: required");
    s.name = r.text("name", s.name);
    s.preset = detail::choice(r.text("preset", s.preset), {"linear-ou", "cubic-sensor", "bimodal-drift"}, "preset");
    if (s.preset == "cubic-sensor") s.observations.sensor = "cubic";
    if (r.has("model")) {
        ObjectReader m(r.raw("model"), "model");
        if (s.preset != "bimodal-drift") {
            s.model.alpha = m.number("alpha", s.model.alpha);
        } else if (m.has("alpha")) {
            throw ValidationError("model.alpha: not used by the bimodal-drift preset");
        }
        s.model.sigma = m.number("sigma", s.model.sigma);
        m.finish();
    }
    if (s.preset == "bimodal-drift") s.model.alpha = 0.0;
    if (r.has("observations")) {
        ObjectReader o(r.raw("observations"), "observations");
        auto& ob = s.observations;
        const std::string mode = detail::choice(o.text("mode", "discrete"), {"none", "discrete", "continuous"},
                                                "observations.mode");
        ob.mode = mode == "none" ? ObsMode::none : mode == "discrete" ? ObsMode::discrete : ObsMode::continuous;
        ob.sensor = o.text("sensor", ob.sensor);
        ob.slope = o.number("slope", ob.slope);
        ob.noise_variance = o.number("noise_variance", ob.noise_variance);
        ob.interval = o.number("interval", ob.interval);
        ob.count = o.integer("count", ob.count);
        ob.dt = o.number("dt", ob.dt);
        o.finish();
    }
    if (!r.has("basis")) throw ValidationError("basis: required");
    s.basis = detail::read_basis(r.raw("basis"), "basis");
    if (r.has("theta0")) {
        const auto& t = r.raw("theta0");
        if (!t.is_array()) throw ValidationError("theta0: expected an array");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!t[i].is_number()) throw ValidationError("theta0[" + std::to_string(i) + "]: expected a number");
            s.theta0.push_back(t[i].get<double>());
        }
    } else {
        s.theta0.assign(s.basis.size() - (s.basis.empty() ? 0 : 1), 1.0 / static_cast<double>(s.basis.size()));
    }
    const double schedule = s.observations.mode == ObsMode::discrete
                                ? s.observations.count * s.observations.interval
                                : 1.0;
    s.horizon = r.number("horizon", schedule);
    if (r.has("truth")) {
        ObjectReader t(r.raw("truth"), "truth");
        if (t.has("x0")) s.truth_x0 = t.number("x0", 0.0);
        s.truth_em_dt = t.number("em_dt", s.truth_em_dt);
        t.finish();
    }
    if (r.has("quadrature")) {
        ObjectReader q(r.raw("quadrature"), "quadrature");
        s.quadrature.kind = q.text("kind", s.quadrature.kind);
        s.quadrature.nodes = q.integer("nodes", s.quadrature.nodes);
        s.quadrature.span = q.number("span", s.quadrature.span);
        q.finish();
    }
    if (r.has("integrator")) {
        ObjectReader in(r.raw("integrator"), "integrator");
        auto& c = s.integrator;
        c.method = in.text("method", c.method);
        c.delta_fraction = in.number("delta_fraction", c.delta_fraction);
        c.substeps = in.integer("substeps", c.substeps);
        c.record_every = in.integer("record_every", c.record_every);
        c.clip_margin = in.number("clip_margin", c.clip_margin);
        c.clip_tolerance = in.number("clip_tolerance", c.clip_tolerance);
        c.weight_rule = in.text("weight_rule", c.weight_rule);
        in.finish();
    }
    if (r.has("seeds")) {
        const auto& list = r.raw("seeds");
        if (!list.is_array()) throw ValidationError("seeds: expected an array");
        s.seeds.clear();
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!list[i].is_number_unsigned() && !(list[i].is_number_integer() && list[i].get<long long>() >= 0)) {
                throw ValidationError("seeds[" + std::to_string(i) + "]: expected a non-negative integer");
            }
            s.seeds.push_back(list[i].get<std::uint64_t>());
        }
    }
    if (r.has("engines")) {
        const auto& list = r.raw("engines");
        if (!list.is_array()) throw ValidationError("engines: expected an array");
        s.engines.clear();
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!list[i].is_string()) throw ValidationError("engines[" + std::to_string(i) + "]: expected a string");
            s.engines.push_back(list[i].get<std::string>());
        }
    }
    if (r.has("particles")) {
        ObjectReader p(r.raw("particles"), "particles");
        s.particles.count = p.integer("count", s.particles.count);
        s.particles.em_dt = p.number("em_dt", s.particles.em_dt);
        p.finish();
    }
    // Grid defaults cover every basis component out to 10 standard deviations.
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < s.basis.size(); ++i) {
        const double sd = std::sqrt(std::max(s.basis[i].variance, 0.0));
        lo = i ? std::min(lo, s.basis[i].mean - 10.0 * sd) : s.basis[i].mean - 10.0 * sd;
        hi = i ? std::max(hi, s.basis[i].mean + 10.0 * sd) : s.basis[i].mean + 10.0 * sd;
    }
    s.grid.lower = std::floor(lo);
    s.grid.upper = std::ceil(hi);
    s.grid.dt = s.observations.mode == ObsMode::continuous ? s.observations.dt : 1e-3;
    if (r.has("grid")) {
        ObjectReader g(r.raw("grid"), "grid");
        s.grid.lower = g.number("lower", s.grid.lower);
        s.grid.upper = g.number("upper", s.grid.upper);
        s.grid.nodes = g.integer("nodes", s.grid.nodes);
        s.grid.dt = g.number("dt", s.grid.dt);
        s.grid.scheme = g.text("scheme", s.grid.scheme);
        g.finish();
    }
    s.threads = r.integer("threads", s.threads);
    r.finish();
    validate_scenario(s);
    return s;
}

/// Parse scenario text; syntax errors report line and column.
inline Scenario parse_scenario_text(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ValidationError("scenario: parse error at line " + std::to_string(line) + ", column " +
                              std::to_string(col) + ": " + e.what());
    }
    return scenario_from_json(j);
}

inline Scenario parse_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("scenario: cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scenario_text(buf.str());
}

/// Fully materialized JSON form; parse(serialize(s)) == s.
inline nlohmann::ordered_json scenario_to_json(const Scenario& s) {
    nlohmann::ordered_json j;
    j["schema_version"] = s.schema_version;
    j["name"] = s.name;
    j["preset"] = s.preset;
    if (s.preset == "bimodal-drift") {
        j["model"] = {{"sigma", s.model.sigma}};
    } else {
        j["model"] = {{"alpha", s.model.alpha}, {"sigma", s.model.sigma}};
    }
    const auto& o = s.observations;
    j["observations"] = {{"mode", detail::mode_name(o.mode)}, {"sensor", o.sensor},       {"slope", o.slope},
                         {"noise_variance", o.noise_variance}, {"interval", o.interval}, {"count", o.count},
                         {"dt", o.dt}};
    nlohmann::ordered_json comps = nlohmann::ordered_json::array();
    for (const auto& c : s.basis) comps.push_back({{"mean", c.mean}, {"variance", c.variance}});
    j["basis"] = {{"components", comps}};
    j["theta0"] = s.theta0;
    j["horizon"] = s.horizon;
    j["truth"] = nlohmann::ordered_json::object();
    if (s.truth_x0) j["truth"]["x0"] = *s.truth_x0;
    j["truth"]["em_dt"] = s.truth_em_dt;
    j["quadrature"] = {{"kind", s.quadrature.kind}, {"nodes", s.quadrature.nodes}, {"span", s.quadrature.span}};
    const auto& in = s.integrator;
    j["integrator"] = {{"method", in.method},
                       {"delta_fraction", in.delta_fraction},
                       {"substeps", in.substeps},
                       {"record_every", in.record_every},
                       {"clip_margin", in.clip_margin},
                       {"clip_tolerance", in.clip_tolerance},
                       {"weight_rule", in.weight_rule}};
    j["seeds"] = s.seeds;
    j["engines"] = s.engines;
    j["particles"] = {{"count", s.particles.count}, {"em_dt", s.particles.em_dt}};
    j["grid"] = {{"lower", s.grid.lower}, {"upper", s.grid.upper}, {"nodes", s.grid.nodes},
                 {"dt", s.grid.dt},       {"scheme", s.grid.scheme}};
    j["threads"] = s.threads;
    return j;
}

inline std::string serialize_scenario(const Scenario& s) { return scenario_to_json(s).dump(2) + "\n"; }

// ---- builders -------------------------------------------------------------

inline DiffusionModel build_model(const Scenario& s) {
    if (s.preset == "bimodal-drift") return bimodal_drift(s.model.sigma);
    return linear_ou(s.model.alpha, s.model.sigma);
}

inline QuadSpec1 build_quadrature(const Scenario& s) {
    QuadSpec1 q;
    q.kind = s.quadrature.kind == "gauss_hermite" ? QuadratureKind::gauss_hermite : QuadratureKind::uniform_grid;
    q.nodes = s.quadrature.nodes;
    q.span = s.quadrature.span;
    return q;
}

inline MixtureFamily build_family(const Scenario& s) {
    std::vector<BasisDensity> comps;
    for (const auto& c : s.basis) comps.push_back(BasisDensity::gaussian(c.mean, c.variance));
    return MixtureFamily(std::move(comps), build_quadrature(s));
}

inline Eigen::VectorXd build_theta0(const Scenario& s) {
    return Eigen::Map<const Eigen::VectorXd>(s.theta0.data(), static_cast<Eigen::Index>(s.theta0.size()));
}

inline std::vector<double> observation_times(const Scenario& s) {
    std::vector<double> t;
    for (int n = 1; n <= s.observations.count; ++n) t.push_back(n * s.observations.interval);
    return t;
}

inline DiscreteObsModel build_discrete_obs(const Scenario& s) {
    const auto& o = s.observations;
    return o.sensor == "cubic" ? DiscreteObsModel::cubic(o.noise_variance, observation_times(s))
                               : DiscreteObsModel::linear(o.slope, o.noise_variance, observation_times(s));
}

inline ContinuousObsModel build_continuous_obs(const Scenario& s) {
    return s.observations.sensor == "cubic" ? ContinuousObsModel::cubic() : ContinuousObsModel::linear(s.observations.slope);
}

inline IntegratorConfig build_integrator(const Scenario& s) {
    IntegratorConfig c;
    c.method = s.integrator.method == "rk4" ? PredictMethod::rk4 : PredictMethod::exact;
    c.delta_fraction = s.integrator.delta_fraction;
    c.clip_margin = s.integrator.clip_margin;
    c.clip_tolerance = s.integrator.clip_tolerance;
    return c;
}

inline WeightRule build_weight_rule(const Scenario& s) {
    return s.integrator.weight_rule == "literal" ? WeightRule::literal : WeightRule::exact;
}

}  // namespace mpf
