// mpf: run scenarios, compare engine outputs, print Gaussian metrics.
//
// Exit codes: 0 success, 2 validation error, 3 numeric or engine failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mpf/mpf.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitFailure = 3;

void print_matrix(const char* label, const Eigen::MatrixXd& closed, const Eigen::MatrixXd& quad) {
    const double rel = (closed - quad).cwiseAbs().maxCoeff() / closed.cwiseAbs().maxCoeff();
    std::printf("%s\n", label);
    for (Eigen::Index i = 0; i < closed.rows(); ++i) {
        std::printf("  closed [");
        for (Eigen::Index j = 0; j < closed.cols(); ++j) std::printf(" %14.8g", closed(i, j));
        std::printf(" ]   quadrature [");
        for (Eigen::Index j = 0; j < quad.cols(); ++j) std::printf(" %14.8g", quad(i, j));
        std::printf(" ]\n");
    }
    std::printf("  max relative deviation %.3e\n", rel);
}

int cmd_metrics(const std::string& family, const std::string& coords, std::optional<std::pair<double, double>> point) {
    if (family != "gaussian") throw mpf::ValidationError("--family: only 'gaussian' is available");
    double mean = 0.0, var = 1.0;
    if (coords == "canonical") {
        if (point) {
            const auto g = mpf::moments_from_canonical(point->first, point->second);
            mean = g.mean;
            var = g.variance;
        }
    } else if (coords == "expectation") {
        if (point) {
            mean = point->first;
            var = point->second;
        }
    } else {
        throw mpf::ValidationError("--coords: expected 'canonical' or 'expectation'");
    }
    if (!(var > 0.0)) throw mpf::ValidationError("--point: variance must be positive");
    const Eigen::Vector2d th = mpf::canonical_from_moments(mean, var);
    Eigen::VectorXd eta(2);
    eta << mean, var;
    const auto can = mpf::gaussian_canonical_family();
    const auto exp = mpf::gaussian_expectation_family();
    std::printf("point: canonical (%.8g, %.8g)  expectation (mu %.8g, v %.8g)\n", th(0), th(1), mean, var);
    print_matrix("fisher, canonical", mpf::gaussian_fisher_canonical(th(0), th(1)).values(),
                 mpf::fisher_metric(can, Eigen::VectorXd(th)).values());
    print_matrix("fisher, expectation", mpf::gaussian_fisher_expectation(mean, var).values(),
                 mpf::fisher_metric(exp, eta).values());
    print_matrix("l2, canonical", mpf::gaussian_l2_canonical(th(0), th(1)).values(),
                 mpf::l2_metric(can, Eigen::VectorXd(th)).values());
    print_matrix("l2, expectation", mpf::gaussian_l2_expectation(mean, var).values(),
                 mpf::l2_metric(exp, eta).values());
    std::printf("note: the (mu, mu) entry 1/(8 v sqrt(v pi)) = %.8g is half the integrated value\n",
                mpf::halved_l2_expectation_mumu(var));
    return 0;
}

int cmd_run(const std::string& config, const std::optional<std::string>& out) {
    const mpf::Scenario s = mpf::parse_scenario(config);
    const auto dir = mpf::default_output_dir(out);
    const mpf::RunReport report = mpf::run_scenario(s, dir);
    std::printf("scenario '%s' -> %s\n", s.name.c_str(), dir.string().c_str());
    for (const auto& r : report.runs) {
        std::printf("  %-9s seed %-6llu %-5s %6zu records %4zu events %8.2fs%s%s\n", r.engine.c_str(),
                    static_cast<unsigned long long>(r.seed), r.ok ? "ok" : "ERROR", r.traj.size(),
                    r.traj.events.size(), r.wall_seconds, r.ok ? "" : "  ", r.message.c_str());
    }
    for (const auto& p : report.pairs) {
        std::printf("  %s vs %s (seed %llu): max |dmean| %.3e  max |dvar| %.3e", p.engine_a.c_str(), p.engine_b.c_str(),
                    static_cast<unsigned long long>(p.seed), p.max_abs_mean, p.max_abs_variance);
        if (p.final_l2) std::printf("  final L2 %.3e", *p.final_l2);
        std::printf("\n");
    }
    if (report.all_ok()) return 0;
    for (const auto& r : report.runs) {
        if (!r.ok && !r.validation_failure) return kExitFailure;
    }
    return kExitValidation;
}

int cmd_compare(const std::string& dir) {
    const auto cmp = mpf::compare_directory(dir);
    std::printf("%-10s %-10s %8s %14s %14s %14s %12s\n", "engine_a", "engine_b", "times", "max|dmean|", "avg|dmean|",
                "max|dvar|", "final_L2");
    for (const auto& p : cmp.pairs) {
        std::printf("%-10s %-10s %8zu %14.6e %14.6e %14.6e ", p.engine_a.c_str(), p.engine_b.c_str(), p.common_times,
                    p.max_abs_mean, p.avg_abs_mean, p.max_abs_variance);
        if (p.final_l2) {
            std::printf("%12.4e\n", *p.final_l2);
        } else {
            std::printf("%12s\n", "-");
        }
    }
    return 0;
}

std::pair<double, double> parse_point(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw mpf::ValidationError("--point: expected 'a,b'");
    try {
        return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
    } catch (const std::exception&) {
        throw mpf::ValidationError("--point: expected two numbers 'a,b'");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture projection filter experiments"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::string> out;
    auto* run = app.add_subcommand("run", "Run a scenario and write CSV results");
    run->add_option("config", config, "Scenario JSON file")->required();
    run->add_option("-o,--output", out, "Output directory (default: $MPF_OUTPUT_DIR or ./mpf-output)");

    std::string dir;
    auto* compare = app.add_subcommand("compare", "Compare engine CSVs in a run directory");
    compare->add_option("dir", dir, "Run output directory")->required();

    std::string family = "gaussian", coords = "canonical", point;
    auto* metrics = app.add_subcommand("metrics", "Print closed-form metrics with quadrature checks");
    metrics->add_option("--family", family, "Parametric family")->default_val("gaussian");
    metrics->add_option("--coords", coords, "canonical or expectation")->default_val("canonical");
    metrics->add_option("--point", point, "Parameter point 'a,b' in the chosen coordinates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*run) return cmd_run(config, out);
        if (*compare) return cmd_compare(dir);
        if (*metrics) {
            return cmd_metrics(family, coords, point.empty() ? std::nullopt : std::optional(parse_point(point)));
        }
    } catch (const mpf::ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const mpf::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
    return 0;
}
