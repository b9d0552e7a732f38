#pragma once

// Disturbance forecasts with prescribed error magnitudes.
//
// The uncertain parameter is the disturbance itself (w_t(theta) = theta). A forecast of
// theta*_{t+n} issued at time t is theta*_{t+n} + phi(t, n) * e, with e a unit vector
// drawn from the stream derive_seed(root, "forecast", {model.seed, t, n}).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netpc/error.hpp"
#include "netpc/rng.hpp"

namespace netpc {

enum class ForecastKind { Exact, SqrtTDecay, ConstExp, Const };

inline std::string to_string(ForecastKind k) {
    switch (k) {
        case ForecastKind::Exact: return "exact";
        case ForecastKind::SqrtTDecay: return "sqrt_t_decay";
        case ForecastKind::ConstExp: return "const_exp";
        case ForecastKind::Const: return "const";
    }
    return "exact";
}

inline ForecastKind parse_forecast_kind(const std::string& s) {
    if (s == "exact") return ForecastKind::Exact;
    if (s == "sqrt_t_decay") return ForecastKind::SqrtTDecay;
    if (s == "const_exp") return ForecastKind::ConstExp;
    if (s == "const") return ForecastKind::Const;
    throw ConfigError("unknown forecast kind: " + s);
}

struct ForecastModel {
    ForecastKind kind = ForecastKind::Exact;
    double R = 0.0;
    double rate = 1.0;  ///< base of the look-ahead deterioration
    std::uint64_t seed = 0;

    void validate() const {
        if (R < 0.0) throw ConfigError("forecast R must be non-negative");
        if (!(rate > 0.0)) throw ConfigError("forecast rate must be positive");
    }

    /// phi(t, n): exact 0; sqrt_t_decay R (t+1)^{-1/2} rate^{-n/2}; const_exp R rate^{-n}; const R.
    double magnitude(int t, int n) const {
        switch (kind) {
            case ForecastKind::Exact: return 0.0;
            case ForecastKind::SqrtTDecay: return R / std::sqrt(t + 1.0) * std::pow(rate, -0.5 * n);
            case ForecastKind::ConstExp: return R * std::pow(rate, -static_cast<double>(n));
            case ForecastKind::Const: return R;
        }
        return 0.0;
    }

    bool operator==(const ForecastModel&) const = default;
};

/// Ground truth theta*_0..theta*_T (one more entry than there are control steps, so that
/// every n-step-ahead forecast counted by the cumulative error has a target).
struct ParamTrajectory {
    std::vector<Eigen::VectorXd> values;
    int final_time() const { return static_cast<int>(values.size()) - 1; }
};

/// Source of theta_{t+n|t}.
class Forecaster {
public:
    virtual ~Forecaster() = default;
    virtual Eigen::VectorXd issue(int t, int n) const = 0;
};

/// Unit direction for (seed, t, n).
inline Eigen::VectorXd forecast_direction(std::uint64_t root_seed, std::uint64_t model_seed, int t, int n,
                                          Eigen::Index dim) {
    CounterRng rng(derive_seed(root_seed, "forecast", {static_cast<std::int64_t>(model_seed), t, n}));
    for (;;) {
        Eigen::VectorXd d = rng.normal_vector(dim);
        const double nrm = d.norm();
        if (nrm > 0.0) return d / nrm;
    }
}

class ModelForecaster final : public Forecaster {
public:
    ModelForecaster(const ParamTrajectory& truth, ForecastModel model, std::uint64_t root_seed)
        : truth_(truth), model_(model), root_(root_seed) {
        model_.validate();
    }

    Eigen::VectorXd issue(int t, int n) const override {
        const int target = t + n;
        if (t < 0 || n < 0 || target > truth_.final_time()) throw DimensionError("forecast target out of range");
        const Eigen::VectorXd& exact = truth_.values[target];
        const double phi = model_.magnitude(t, n);
        if (phi == 0.0) return exact;
        return exact + phi * forecast_direction(root_, model_.seed, t, n, exact.size());
    }

    const ForecastModel& model() const { return model_; }
    const ParamTrajectory& truth() const { return truth_; }

private:
    const ParamTrajectory& truth_;
    ForecastModel model_;
    std::uint64_t root_;
};

/// theta_{t:t+min(k,T-t)-1 | t}
inline std::vector<Eigen::VectorXd> forecast_window(const Forecaster& f, int final_time, int t, int k) {
    if (t < 0 || t >= final_time) throw DimensionError("forecast_window: t out of range");
    const int len = std::min(k, final_time - t);
    std::vector<Eigen::VectorXd> out;
    out.reserve(len);
    for (int n = 0; n < len; ++n) out.push_back(f.issue(t, n));
    return out;
}

inline std::vector<Eigen::VectorXd> forecast_window(const ParamTrajectory& truth, const ForecastModel& model,
                                                    std::uint64_t root_seed, int t, int k) {
    ModelForecaster f(truth, model, root_seed);
    return forecast_window(f, truth.final_time(), t, k);
}

inline double phi(const ForecastModel& model, int t, int n) { return model.magnitude(t, n); }

/// Every forecast a controller actually read, keyed by (t, n).
class ForecastLog {
public:
    void record(int t, int n, const Eigen::VectorXd& forecast, const Eigen::VectorXd& truth) {
        std::lock_guard lock(mu_);
        errors_[{t, n}] = (forecast - truth).squaredNorm();
    }
    const std::map<std::pair<int, int>, double>& squared_errors() const { return errors_; }

private:
    std::mutex mu_;
    std::map<std::pair<int, int>, double> errors_;
};

/// Wraps a forecaster and logs every issued value against the truth.
class LoggingForecaster final : public Forecaster {
public:
    LoggingForecaster(const Forecaster& inner, const ParamTrajectory& truth, ForecastLog& log)
        : inner_(inner), truth_(truth), log_(log) {}
    Eigen::VectorXd issue(int t, int n) const override {
        Eigen::VectorXd f = inner_.issue(t, n);
        log_.record(t, n, f, truth_.values.at(t + n));
        return f;
    }

private:
    const Forecaster& inner_;
    const ParamTrajectory& truth_;
    ForecastLog& log_;
};

/// Phi_n = sum_{t=0}^{T-n} ||theta_{t+n|t} - theta*_{t+n}||^2 over forecasts issued by f.
inline double cumulative_phi(const Forecaster& f, const ParamTrajectory& truth, int n) {
    const int T = truth.final_time();
    if (n < 0 || n > T) throw DimensionError("cumulative_phi: n out of range");
    double total = 0.0;
    for (int t = 0; t <= T - n; ++t) total += (f.issue(t, n) - truth.values[t + n]).squaredNorm();
    return total;
}

/// Phi_n restricted to the forecasts recorded in a log.
inline double cumulative_phi(const ForecastLog& log, int n) {
    double total = 0.0;
    for (const auto& [key, err] : log.squared_errors())
        if (key.second == n) total += err;
    return total;
}

}  // namespace netpc
