#pragma once

// Batch runner: simulate observations, run the requested engines over every
// seed, write plot-ready CSV files and compare engines on shared time grids.
//
// Output directory layout:
//   <engine>.csv             first seed, columns t,engine,mean,variance,l2_residual_drift,ess,events
//   <engine>.seed<N>.csv     further seeds
//   summary.csv              one row per (engine, seed)
//   densities.csv            final mpf and grid densities (when both run)
//   scenario.json            the materialized scenario
//   report.json              wall-clock times and pairwise discrepancies

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mpf/continuous_filter.hpp"
#include "mpf/discrete_filter.hpp"
#include "mpf/errors.hpp"
#include "mpf/oracles/galerkin.hpp"
#include "mpf/oracles/grid.hpp"
#include "mpf/oracles/kalman.hpp"
#include "mpf/oracles/particle.hpp"
#include "mpf/rng.hpp"
#include "mpf/scenario.hpp"
#include "mpf/trajectory.hpp"

namespace mpf {

inline constexpr const char* kCsvHeader = "t,engine,mean,variance,l2_residual_drift,ess,events";

struct EngineRun {
    std::string engine;
    std::uint64_t seed = 0;
    FilterTrajectory traj;
    bool ok = true;
    bool validation_failure = false;
    std::string message;
    double wall_seconds = 0.0;
    /// Final density on the scenario grid nodes, where the engine has one.
    std::optional<Eigen::VectorXd> final_density;
};

struct Discrepancy {
    std::string engine_a, engine_b;
    std::uint64_t seed = 0;
    std::size_t common_times = 0;
    double max_abs_mean = 0.0;
    double max_abs_variance = 0.0;
    double avg_abs_mean = 0.0;
    std::optional<double> final_l2;
};

struct RunReport {
    Scenario scenario;
    std::vector<EngineRun> runs;
    std::vector<Discrepancy> pairs;

    bool all_ok() const {
        return std::all_of(runs.begin(), runs.end(), [](const EngineRun& r) { return r.ok; });
    }
    const EngineRun* find(const std::string& engine, std::uint64_t seed) const {
        for (const auto& r : runs) {
            if (r.engine == engine && r.seed == seed) return &r;
        }
        return nullptr;
    }
};

// ---- observation simulation ----------------------------------------------

/// Draw from the scenario's initial mixture.
inline double draw_initial_state(const Scenario& s, std::uint64_t seed) {
    if (s.truth_x0) return *s.truth_x0;
    const CounterRng rng(seed, "initial");
    const Eigen::VectorXd hat = extend_coords(build_theta0(s), true);
    double u = rng.uniform(0, 0), acc = 0.0;
    std::size_t j = 0;
    for (; j + 1 < s.basis.size(); ++j) {
        acc += hat(static_cast<Eigen::Index>(j));
        if (u <= acc) break;
    }
    return s.basis[j].mean + std::sqrt(s.basis[j].variance) * rng.normal(0, 1);
}

/// Truth by Euler–Maruyama with inner step at most em_dt; z_n = h(x(t_n)) + N(0, r).
inline std::vector<double> simulate_discrete_observations(const DiffusionModel& model, const DiscreteObsModel& obs,
                                                          double x0, double em_dt, std::uint64_t seed,
                                                          std::vector<double>* truth = nullptr) {
    obs.validate();
    if (!(em_dt > 0.0)) throw ValidationError("simulate: Euler step must be positive");
    const CounterRng state(seed, "truth"), noise(seed, "observation");
    std::vector<double> zs;
    double x = x0, t = 0.0;
    std::uint64_t step = 0;
    for (std::size_t n = 0; n < obs.times.size(); ++n) {
        const double span = obs.times[n] - t;
        const int k = std::max(1, static_cast<int>(std::ceil(span / em_dt - 1e-9)));
        const double h = span / k;
        for (int i = 0; i < k; ++i, ++step) {
            x += model.f(t + i * h, x) * h + model.s(t + i * h, x) * std::sqrt(model.q(t + i * h) * h) * state.normal(step, 0);
            if (!std::isfinite(x) || std::abs(x) > kExplosionBound) throw ExplosionError("simulate: state path exploded");
        }
        t = obs.times[n];
        if (truth) truth->push_back(x);
        zs.push_back((*obs.map)(x) + std::sqrt(obs.noise_variance) * noise.normal(n, 0));
    }
    return zs;
}

namespace detail {

/// Everything engines share for one seed.
struct Prepared {
    std::uint64_t seed = 0;
    DiffusionModel model;
    MixtureFamily family;
    Eigen::VectorXd theta0;
    double x0 = 0.0;
    DiscreteObsModel dobs;
    std::vector<double> zs;
    ContinuousObsModel cobs;
    PathBundle path;
    std::vector<double> record_times;  ///< prediction-only runs
};

inline Prepared prepare(const Scenario& s, std::uint64_t seed) {
    Prepared p{seed, build_model(s), build_family(s), build_theta0(s), draw_initial_state(s, seed), {}, {}, {}, {}, {}};
    switch (s.observations.mode) {
        case ObsMode::discrete:
            p.dobs = build_discrete_obs(s);
            p.zs = simulate_discrete_observations(p.model, p.dobs, p.x0, s.truth_em_dt, seed);
            break;
        case ObsMode::continuous:
            p.cobs = build_continuous_obs(s);
            p.path = simulate_truth_and_observations(p.model, p.cobs, p.x0, s.horizon, s.observations.dt, seed);
            break;
        case ObsMode::none:
            p.dobs = DiscreteObsModel::linear(1.0, 1.0, {});
            for (int k = 1; k <= s.integrator.substeps; ++k) p.record_times.push_back(s.horizon * k / s.integrator.substeps);
            break;
    }
    return p;
}

inline Eigen::VectorXd grid_nodes(const Scenario& s) {
    return Eigen::VectorXd::LinSpaced(s.grid.nodes, s.grid.lower, s.grid.upper);
}

inline Eigen::VectorXd sample_on(const Field1& f, const Eigen::VectorXd& x) {
    Eigen::VectorXd v(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) v(i) = f(x(i));
    return v;
}

/// Times at which discrete-mode filters record: sub-steps of every
/// inter-observation interval.
inline std::vector<std::pair<double, bool>> discrete_schedule(const Scenario& s, const std::vector<double>& times) {
    std::vector<std::pair<double, bool>> out;  // (time, is observation)
    double prev = 0.0;
    for (double tn : times) {
        for (int k = 1; k < s.integrator.substeps; ++k) out.emplace_back(prev + (tn - prev) * k / s.integrator.substeps, false);
        out.emplace_back(tn, true);
        prev = tn;
    }
    return out;
}

inline EngineRun run_mpf(const Scenario& s, const Prepared& p) {
    EngineRun r;
    r.engine = "mpf";
    r.seed = p.seed;
    if (s.observations.mode == ObsMode::continuous) {
        ContinuousProblem prob{p.model, p.cobs, p.family, p.theta0, p.path, s.integrator.record_every, true,
                               s.integrator.clip_margin, s.integrator.clip_tolerance};
        r.traj = run_continuous_filter(prob);
        r.final_density = sample_on(mixture_density(p.family, r.traj.theta.back()), grid_nodes(s));
        return r;
    }
    DiscreteProblem prob{p.model, p.dobs, p.zs, p.family, p.theta0};
    prob.horizon = s.horizon;
    prob.integrator = build_integrator(s);
    prob.weights = build_weight_rule(s);
    prob.substeps = s.integrator.substeps;
    std::optional<std::pair<MixtureFamily, Eigen::VectorXd>> last;
    r.traj = run_discrete_filter(prob, &last);
    r.final_density = sample_on(mixture_density(last->first, last->second), grid_nodes(s));
    return r;
}

inline EngineRun run_galerkin(const Scenario& s, const Prepared& p) {
    EngineRun r;
    r.engine = "galerkin";
    r.seed = p.seed;
    FilterTrajectory& traj = r.traj;
    traj.engine = "galerkin";
    MixtureFamily fam = p.family;
    Eigen::VectorXd theta = p.theta0;
    auto snapshot = [&](double t) {
        const auto [m, v] = fam.moments(extend_coords(theta, true));
        traj.record(t, m, v);
        traj.record_state(theta, fam.generation());
    };
    const double margin = s.integrator.clip_margin, tol = s.integrator.clip_tolerance;
    run_guarded(traj, [&] {
        snapshot(0.0);
        if (s.observations.mode == ObsMode::continuous) {
            const oracles::GalerkinOracle oracle(fam);
            for (std::size_t n = 0; n < p.path.steps(); ++n) {
                const ClipOutcome c = clip_to_simplex(
                    oracle.ito_step(theta, p.model, p.cobs, p.path.dy(n), p.path.dt, p.path.t[n]), margin, tol);
                theta = c.theta;
                if (c.clipped()) traj.log(p.path.t[n + 1], "clip");
                if ((n + 1) % static_cast<std::size_t>(s.integrator.record_every) == 0 || n + 1 == p.path.steps()) {
                    snapshot(p.path.t[n + 1]);
                }
            }
            return;
        }
        // Prediction with the oracle's generator, correction by Bayes on the basis.
        std::optional<PredictionGenerator> gen;
        double t = 0.0;
        auto advance = [&](double t1) {
            if (!gen || gen->generation != fam.generation()) {
                gen = PredictionGenerator::from_B(oracles::GalerkinOracle(fam).prediction_generator(p.model, t),
                                                  fam.generation(), t);
            }
            const ClipOutcome c = clip_to_simplex(apply_propagator(affine_propagator(*gen, t1 - t), theta), margin, tol);
            theta = c.theta;
            if (c.clipped()) traj.log(t1, "clip");
            t = t1;
        };
        const auto schedule = s.observations.mode == ObsMode::discrete ? discrete_schedule(s, p.dobs.times)
                                                                       : discrete_schedule(s, {s.horizon});
        std::size_t obs_index = 0;
        for (const auto& [tk, is_obs] : schedule) {
            advance(tk);
            if (is_obs && s.observations.mode == ObsMode::discrete) {
                Correction c = correct(theta, fam, p.zs[obs_index++], p.dobs, build_weight_rule(s));
                fam = std::move(c.family);
                const ClipOutcome out = clip_to_simplex(c.theta, margin, tol);
                theta = out.theta;
                if (out.clipped()) traj.log(tk, "clip");
            }
            snapshot(tk);
        }
    });
    r.final_density = sample_on(mixture_density(fam, theta), grid_nodes(s));
    return r;
}

inline oracles::GridScheme grid_scheme(const Scenario& s) {
    return s.grid.scheme == "explicit_euler" ? oracles::GridScheme::explicit_euler
                                             : oracles::GridScheme::crank_nicolson;
}

inline EngineRun run_grid(const Scenario& s, const Prepared& p) {
    EngineRun r;
    r.engine = "grid";
    r.seed = p.seed;
    const oracles::GridDensity p0 = oracles::GridDensity::from_field(mixture_density(p.family, p.theta0), s.grid.lower,
                                                                     s.grid.upper, s.grid.nodes);
    if (s.observations.mode == ObsMode::continuous) {
        if (std::abs(s.grid.dt - p.path.dt) > 1e-15) {
            throw ValidationError("grid.dt: must equal observations.dt for continuous scenarios");
        }
        oracles::GridDensity last;
        r.traj = oracles::grid_kushner_solve(p.model, p.cobs, p0, p.path, grid_scheme(s), s.integrator.record_every, &last);
        r.final_density = last.grid.values;
        return r;
    }
    FilterTrajectory& traj = r.traj;
    traj.engine = "grid";
    oracles::GridDensity g = p0;
    auto snapshot = [&](double t) {
        const auto [m, v] = g.moments();
        traj.record(t, m, v);
    };
    run_guarded(traj, [&] {
        snapshot(0.0);
        const auto schedule = s.observations.mode == ObsMode::discrete ? discrete_schedule(s, p.dobs.times)
                                                                       : discrete_schedule(s, {s.horizon});
        double t = 0.0;
        std::size_t obs_index = 0;
        for (const auto& [tk, is_obs] : schedule) {
            const oracles::GridRun run = oracles::grid_fokker_planck_solve(p.model, g, t, tk, s.grid.dt, grid_scheme(s));
            g = run.density;
            if (run.floor_events > 0) traj.log(tk, "floor");
            t = tk;
            if (is_obs && s.observations.mode == ObsMode::discrete) {
                const double z = p.zs[obs_index++];
                Eigen::VectorXd logw(g.grid.size());
                for (Eigen::Index i = 0; i < g.grid.size(); ++i) {
                    const double e = z - (*p.dobs.map)(g.grid.x(i));
                    logw(i) = -0.5 * e * e / p.dobs.noise_variance;
                }
                g.grid.values = g.grid.values.cwiseProduct((logw.array() - logw.maxCoeff()).exp().matrix());
                g.normalize();
            }
            snapshot(tk);
        }
    });
    r.final_density = g.grid.values;
    return r;
}

inline oracles::ParticlePrior particle_prior(const Scenario& s) {
    oracles::ParticlePrior prior;
    const Eigen::VectorXd hat = extend_coords(build_theta0(s), true);
    for (std::size_t i = 0; i < s.basis.size(); ++i) {
        prior.components.push_back({s.basis[i].mean, s.basis[i].variance});
        prior.weights.push_back(hat(static_cast<Eigen::Index>(i)));
    }
    return prior;
}

inline EngineRun run_particle(const Scenario& s, const Prepared& p) {
    EngineRun r;
    r.engine = "particle";
    r.seed = p.seed;
    const int n = s.particles.count;
    switch (s.observations.mode) {
        case ObsMode::continuous:
            r.traj = oracles::particle_filter_continuous(p.model, p.cobs, particle_prior(s), p.path, n, p.seed,
                                                         s.integrator.record_every);
            break;
        case ObsMode::discrete:
            r.traj = oracles::particle_filter_discrete(p.model, p.dobs, p.zs, particle_prior(s), n, p.seed,
                                                       s.particles.em_dt);
            break;
        case ObsMode::none: {
            oracles::ParticleFilter pf(p.model, n, p.seed);
            pf.initialize(particle_prior(s));
            r.traj.engine = "particle";
            pf.record(r.traj, 0.0);
            double t = 0.0;
            for (double tk : p.record_times) {
                const int k = std::max(1, static_cast<int>(std::ceil((tk - t) / s.particles.em_dt - 1e-9)));
                for (int i = 0; i < k; ++i) pf.propagate(t + i * (tk - t) / k, (tk - t) / k);
                t = tk;
                pf.record(r.traj, t);
            }
            break;
        }
    }
    return r;
}

inline EngineRun run_kalman(const Scenario& s, const Prepared& p) {
    EngineRun r;
    r.engine = "kalman";
    r.seed = p.seed;
    const auto [m0, v0] = p.family.moments(extend_coords(p.theta0, true));
    const oracles::GaussianState s0{m0, v0};
    switch (s.observations.mode) {
        case ObsMode::continuous:
            r.traj = oracles::kalman_bucy(p.model, p.cobs, p.path, s0, s.integrator.record_every);
            break;
        case ObsMode::discrete:
            r.traj = oracles::kalman_discrete(p.model, p.dobs, p.zs, s0);
            break;
        case ObsMode::none: {
            const LinearGaussian& lin = oracles::require_linear(p.model);
            r.traj.engine = "kalman";
            r.traj.record(0.0, m0, v0);
            oracles::GaussianState st = s0;
            double t = 0.0;
            for (double tk : p.record_times) {
                st = oracles::kalman_propagate(st, lin, tk - t);
                t = tk;
                r.traj.record(t, st.mean, st.variance);
            }
            break;
        }
    }
    return r;
}

inline EngineRun run_engine(const std::string& engine, const Scenario& s, const Prepared& p) {
    const auto start = std::chrono::steady_clock::now();
    auto failed_run = [](FilterTrajectory partial, bool validation, std::string message) {
        EngineRun f;
        f.traj = std::move(partial);
        f.ok = false;
        f.validation_failure = validation;
        f.message = std::move(message);
        return f;
    };
    EngineRun r;
    try {
        if (engine == "mpf") r = run_mpf(s, p);
        else if (engine == "galerkin") r = run_galerkin(s, p);
        else if (engine == "grid") r = run_grid(s, p);
        else if (engine == "particle") r = run_particle(s, p);
        else if (engine == "kalman") r = run_kalman(s, p);
        else throw ValidationError("engines: unknown engine '" + engine + "'");
    } catch (const FilterAborted& e) {
        r = failed_run(e.partial(), e.validation(), e.what());
    } catch (const ValidationError& e) {
        r = failed_run({}, true, e.what());
    } catch (const std::exception& e) {
        r = failed_run({}, false, e.what());
    }
    r.engine = engine;
    r.seed = p.seed;
    r.traj.engine = engine;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

}  // namespace detail

/// One row of an aligned comparison.
struct AlignedRow {
    double t = 0.0;
    double mean_diff = 0.0;      ///< a - b
    double variance_diff = 0.0;  ///< a - b
};

/// Moment differences at the times both trajectories recorded.
inline std::vector<AlignedRow> compare_trajectories(const FilterTrajectory& a, const FilterTrajectory& b) {
    std::vector<AlignedRow> rows;
    std::size_t j = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        while (j < b.size() && b.t[j] < a.t[i] && !detail::same_time(a.t[i], b.t[j])) ++j;
        if (j < b.size() && detail::same_time(a.t[i], b.t[j])) {
            rows.push_back({a.t[i], a.mean[i] - b.mean[j], a.variance[i] - b.variance[j]});
        }
    }
    if (rows.empty()) {
        throw AlignmentError("compare: '" + a.engine + "' and '" + b.engine + "' share no recorded times");
    }
    return rows;
}

inline Discrepancy summarize_pair(const FilterTrajectory& a, const FilterTrajectory& b, std::uint64_t seed = 0) {
    const auto rows = compare_trajectories(a, b);
    Discrepancy d;
    d.engine_a = a.engine;
    d.engine_b = b.engine;
    d.seed = seed;
    d.common_times = rows.size();
    for (const auto& r : rows) {
        d.max_abs_mean = std::max(d.max_abs_mean, std::abs(r.mean_diff));
        d.max_abs_variance = std::max(d.max_abs_variance, std::abs(r.variance_diff));
        d.avg_abs_mean += std::abs(r.mean_diff) / static_cast<double>(rows.size());
    }
    return d;
}

/// Trapezoid L2 distance between two densities sampled on the same uniform nodes.
inline double l2_on_nodes(const Eigen::VectorXd& x, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (x.size() < 2 || a.size() != x.size() || b.size() != x.size()) {
        throw ValidationError("l2_on_nodes: sample sizes disagree");
    }
    const Eigen::VectorXd d = (a - b).cwiseAbs2();
    const double dx = (x(x.size() - 1) - x(0)) / static_cast<double>(x.size() - 1);
    return std::sqrt(dx * (d.sum() - 0.5 * (d(0) + d(d.size() - 1))));
}

/// Run every requested engine for every seed. Tasks run on a worker pool;
/// each writes only its own slot, so results do not depend on thread count.
inline RunReport execute_scenario(const Scenario& s) {
    validate_scenario(s);
    std::vector<detail::Prepared> prepared;
    prepared.reserve(s.seeds.size());
    for (std::uint64_t seed : s.seeds) prepared.push_back(detail::prepare(s, seed));

    RunReport report{s, {}, {}};
    const std::size_t tasks = s.seeds.size() * s.engines.size();
    report.runs.resize(tasks);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < tasks; k = next++) {
            const auto& p = prepared[k / s.engines.size()];
            report.runs[k] = detail::run_engine(s.engines[k % s.engines.size()], s, p);
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min<std::size_t>(tasks, s.threads > 0 ? static_cast<std::size_t>(s.threads) : hw);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    const Eigen::VectorXd x = detail::grid_nodes(s);
    for (std::uint64_t seed : s.seeds) {
        for (std::size_t i = 0; i < s.engines.size(); ++i) {
            for (std::size_t j = i + 1; j < s.engines.size(); ++j) {
                const EngineRun* a = report.find(s.engines[i], seed);
                const EngineRun* b = report.find(s.engines[j], seed);
                if (!a->ok || !b->ok) continue;
                Discrepancy d = summarize_pair(a->traj, b->traj, seed);
                if (a->final_density && b->final_density) d.final_l2 = l2_on_nodes(x, *a->final_density, *b->final_density);
                report.pairs.push_back(d);
            }
        }
    }
    return report;
}

// ---- files ------------------------------------------------------------------

namespace detail {

inline std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_text(std::string s) {
    for (char& c : s) {
        if (c == '"' || c == '\n') c = '\'';
    }
    return "\"" + s + "\"";
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("output: cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw NumericError("output: write failed for '" + path.string() + "'");
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        else if (c == ',' && !quoted) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_num(const std::string& s, const std::string& where) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(where + ": '" + s + "' is not a number");
    }
}

}  // namespace detail

inline std::string trajectory_csv(const FilterTrajectory& traj) {
    std::ostringstream os;
    os << kCsvHeader << "\n";
    for (std::size_t i = 0; i < traj.size(); ++i) {
        os << detail::num(traj.t[i]) << "," << traj.engine << "," << detail::num(traj.mean[i]) << ","
           << detail::num(traj.variance[i]) << "," << detail::num(traj.residual[i]) << "," << detail::num(traj.ess[i])
           << "," << traj.step_events[i] << "\n";
    }
    return os.str();
}

inline FilterTrajectory read_trajectory_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("compare: cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != kCsvHeader) throw ValidationError(path.string() + ": unexpected header");
    FilterTrajectory traj;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        const std::string where = path.filename().string() + " line " + std::to_string(row);
        if (f.size() != 7) throw ValidationError(where + ": expected 7 columns");
        if (traj.engine.empty()) traj.engine = f[1];
        traj.record(detail::parse_num(f[0], where), detail::parse_num(f[2], where), detail::parse_num(f[3], where),
                    detail::parse_num(f[4], where), detail::parse_num(f[5], where));
        traj.step_events.back() = static_cast<int>(detail::parse_num(f[6], where));
    }
    return traj;
}

inline std::string engine_csv_name(const std::string& engine, std::uint64_t seed, bool first) {
    return first ? engine + ".csv" : engine + ".seed" + std::to_string(seed) + ".csv";
}

/// Write every output file; all CSV content is deterministic given the scenario.
inline void write_report(const RunReport& report, const std::filesystem::path& dir) {
    const Scenario& s = report.scenario;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("output: cannot create '" + dir.string() + "': " + ec.message());
    for (const auto& r : report.runs) {
        detail::write_file(dir / engine_csv_name(r.engine, r.seed, r.seed == s.seeds.front()), trajectory_csv(r.traj));
    }
    std::ostringstream sum;
    sum << "engine,seed,status,records,events,clips,final_t,final_mean,final_variance,mean_l2_residual_drift,message\n";
    for (const auto& r : report.runs) {
        const auto& tr = r.traj;
        double res = 0.0;
        std::size_t nres = 0;
        for (double v : tr.residual) {
            if (!std::isnan(v)) {
                res += v;
                ++nres;
            }
        }
        const bool any = tr.size() > 0;
        sum << r.engine << "," << r.seed << "," << (r.ok ? "ok" : "error") << "," << tr.size() << ","
            << tr.events.size() << "," << tr.count("clip") << "," << detail::num(any ? tr.t.back() : NAN) << ","
            << detail::num(any ? tr.mean.back() : NAN) << "," << detail::num(any ? tr.variance.back() : NAN) << ","
            << detail::num(nres ? res / static_cast<double>(nres) : NAN) << "," << detail::csv_text(r.message) << "\n";
    }
    detail::write_file(dir / "summary.csv", sum.str());

    const EngineRun* mpf = report.find("mpf", s.seeds.front());
    const EngineRun* grid = report.find("grid", s.seeds.front());
    if (mpf && grid && mpf->final_density && grid->final_density) {
        const Eigen::VectorXd x = detail::grid_nodes(s);
        std::ostringstream d;
        d << "x,mpf,grid\n";
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            d << detail::num(x(i)) << "," << detail::num((*mpf->final_density)(i)) << ","
              << detail::num((*grid->final_density)(i)) << "\n";
        }
        detail::write_file(dir / "densities.csv", d.str());
    }
    detail::write_file(dir / "scenario.json", serialize_scenario(s));

    nlohmann::ordered_json j;
    j["all_ok"] = report.all_ok();
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : report.runs) {
        j["runs"].push_back({{"engine", r.engine},
                             {"seed", r.seed},
                             {"status", r.ok ? "ok" : "error"},
                             {"message", r.message},
                             {"wall_seconds", r.wall_seconds},
                             {"events", r.traj.events.size()}});
    }
    j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : report.pairs) {
        nlohmann::ordered_json e{{"engine_a", p.engine_a},         {"engine_b", p.engine_b},
                                 {"seed", p.seed},                 {"common_times", p.common_times},
                                 {"max_abs_mean", p.max_abs_mean}, {"max_abs_variance", p.max_abs_variance},
                                 {"avg_abs_mean", p.avg_abs_mean}};
        if (p.final_l2) e["final_l2"] = *p.final_l2;
        j["pairs"].push_back(e);
    }
    detail::write_file(dir / "report.json", j.dump(2) + "\n");
}

inline RunReport run_scenario(const Scenario& s, const std::filesystem::path& dir) {
    RunReport report = execute_scenario(s);
    write_report(report, dir);
    return report;
}

/// Output directory: the explicit argument, else $MPF_OUTPUT_DIR, else "mpf-output".
inline std::filesystem::path default_output_dir(const std::optional<std::string>& explicit_dir) {
    if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
    if (const char* env = std::getenv("MPF_OUTPUT_DIR"); env && *env) return env;
    return "mpf-output";
}

struct DirectoryComparison {
    std::vector<std::string> engines;
    std::vector<Discrepancy> pairs;
    std::vector<std::pair<std::pair<std::string, std::string>, std::vector<AlignedRow>>> rows;
};

/// Pairwise comparison of the first-seed engine CSVs in a run directory.
/// Writes compare.csv next to them.
inline DirectoryComparison compare_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("compare: '" + dir.string() + "' is not a directory");
    std::map<std::string, FilterTrajectory> trajs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".csv" || name.find(".seed") != std::string::npos) continue;
        if (name == "summary.csv" || name == "densities.csv" || name == "compare.csv") continue;
        FilterTrajectory t = read_trajectory_csv(entry.path());
        if (t.engine.empty()) t.engine = entry.path().stem().string();
        trajs.emplace(t.engine, std::move(t));
    }
    if (trajs.size() < 2) throw ValidationError("compare: need at least two engine CSV files in '" + dir.string() + "'");
    DirectoryComparison out;
    for (const auto& [name, t] : trajs) out.engines.push_back(name);

    std::optional<std::map<std::string, Eigen::VectorXd>> dens;
    Eigen::VectorXd x;
    if (std::filesystem::exists(dir / "densities.csv")) {
        std::ifstream in(dir / "densities.csv");
        std::string line;
        std::getline(in, line);
        std::vector<double> xs, a, b;
        int row = 1;
        while (std::getline(in, line)) {
            ++row;
            const auto f = detail::split_csv(line);
            const std::string where = "densities.csv line " + std::to_string(row);
            if (f.size() != 3) throw ValidationError(where + ": expected 3 columns");
            xs.push_back(detail::parse_num(f[0], where));
            a.push_back(detail::parse_num(f[1], where));
            b.push_back(detail::parse_num(f[2], where));
        }
        auto vec = [](const std::vector<double>& v) {
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        x = vec(xs);
        dens.emplace();
        (*dens)["mpf"] = vec(a);
        (*dens)["grid"] = vec(b);
    }

    std::ostringstream csv;
    csv << "t,engine_a,engine_b,mean_diff,variance_diff\n";
    for (std::size_t i = 0; i < out.engines.size(); ++i) {
        for (std::size_t j = i + 1; j < out.engines.size(); ++j) {
            const auto& a = trajs.at(out.engines[i]);
            const auto& b = trajs.at(out.engines[j]);
            auto rows = compare_trajectories(a, b);
            Discrepancy d = summarize_pair(a, b);
            if (dens && dens->count(a.engine) && dens->count(b.engine)) {
                d.final_l2 = l2_on_nodes(x, dens->at(a.engine), dens->at(b.engine));
            }
            for (const auto& r : rows) {
                csv << detail::num(r.t) << "," << a.engine << "," << b.engine << "," << detail::num(r.mean_diff) << ","
                    << detail::num(r.variance_diff) << "\n";
            }
            out.pairs.push_back(d);
            out.rows.push_back({{a.engine, b.engine}, std::move(rows)});
        }
    }
    detail::write_file(dir / "compare.csv", csv.str());
    return out;
}

}  // namespace mpf
