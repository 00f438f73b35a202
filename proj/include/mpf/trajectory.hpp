#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpf/errors.hpp"

namespace mpf {

struct Event {
    double t = 0.0;
    std::string kind;  ///< "clip", "starvation", "floor", "resample", ...
    std::string detail;
};

/// Timestamped record of one engine run. Filter engines fill theta and
/// generation; oracle engines leave them empty. Columns that do not apply
/// hold NaN.
struct FilterTrajectory {
    std::string engine;
    std::vector<double> t;
    std::vector<Eigen::VectorXd> theta;
    std::vector<int> generation;
    std::vector<double> mean;
    std::vector<double> variance;
    std::vector<double> residual;  ///< drift projection residual
    std::vector<double> ess;
    std::vector<double> mean_se;  ///< Monte Carlo standard error of the mean
    std::vector<int> step_events;  ///< events logged since the previous record
    std::vector<Event> events;

    static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

    std::size_t size() const { return t.size(); }

    /// Append a record; enforces increasing timestamps.
    void record(double time, double m, double v, double r = kNaN, double e = kNaN, double se = kNaN) {
        if (!t.empty() && !(time > t.back())) {
            throw ValidationError("trajectory: timestamps must increase (" + std::to_string(time) + " after " +
                                  std::to_string(t.back()) + ")");
        }
        t.push_back(time);
        mean.push_back(m);
        variance.push_back(v);
        residual.push_back(r);
        ess.push_back(e);
        mean_se.push_back(se);
        step_events.push_back(pending_);
        pending_ = 0;
    }

    void record_state(const Eigen::VectorXd& th, int gen) {
        theta.push_back(th);
        generation.push_back(gen);
    }

    void log(double time, std::string kind, std::string detail = {}) {
        events.push_back({time, std::move(kind), std::move(detail)});
        ++pending_;
    }

    std::size_t count(const std::string& kind) const {
        std::size_t n = 0;
        for (const auto& e : events) n += e.kind == kind ? 1 : 0;
        return n;
    }

private:
    int pending_ = 0;
};

/// A step error with the trajectory recorded before it.
class FilterAborted : public Error {
public:
    FilterAborted(const std::string& what, FilterTrajectory partial, bool validation)
        : Error(what), partial_(std::move(partial)), validation_(validation) {}
    const FilterTrajectory& partial() const noexcept { return partial_; }
    bool validation() const noexcept { return validation_; }

private:
    FilterTrajectory partial_;
    bool validation_;
};

/// Run `body`, rethrowing any library error as FilterAborted carrying `traj`.
template <class Body>
void run_guarded(FilterTrajectory& traj, Body&& body) {
    try {
        body();
    } catch (const FilterAborted&) {
        throw;
    } catch (const ValidationError& e) {
        throw FilterAborted(e.what(), traj, true);
    } catch (const Error& e) {
        throw FilterAborted(e.what(), traj, false);
    }
}

}  // namespace mpf
