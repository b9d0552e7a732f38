#pragma once

// Closed-loop controllers on a networked scenario: the offline optimum (OPT), centralized
// predictive control (PC_k), distributed truncated predictive control (DTPC_k) and its
// forecast-driven variant (uDTPC_k), with regret and information-access bookkeeping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "netpc/costs.hpp"
#include "netpc/error.hpp"
#include "netpc/forecast.hpp"
#include "netpc/lti.hpp"
#include "netpc/network.hpp"
#include "netpc/ocp.hpp"

namespace netpc {

struct Scenario {
    std::shared_ptr<const NetworkedSystem> system;
    CostSchedule costs;
    int horizon = 0;  ///< T
    Eigen::VectorXd x0;
    std::vector<Eigen::VectorXd> disturbances;  ///< true w_0..w_{T-1}
    std::uint64_t seed = 0;

    const NetworkGraph& graph() const { return system->graph(); }

    void validate() const {
        if (!system) throw DimensionError("scenario has no system");
        if (horizon < 1) throw DimensionError("scenario horizon must be >= 1");
        if (x0.size() != system->state_dim()) throw DimensionError("scenario x0 has wrong length");
        if (static_cast<int>(disturbances.size()) != horizon) throw DimensionError("scenario needs T disturbances");
        for (const auto& w : disturbances)
            if (w.size() != system->state_dim()) throw DimensionError("scenario disturbance has wrong length");
        if (costs.horizon() != horizon || costs.node_count() != graph().node_count()) {
            throw DimensionError("scenario cost schedule does not match horizon/graph");
        }
    }

    /// FNV-1a over seed, T, x0 and the disturbance bits; identifies runs of one scenario.
    std::uint64_t fingerprint() const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        auto mix = [&](const void* p, std::size_t len) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < len; ++i) {
                h ^= b[i];
                h *= 0x100000001B3ULL;
            }
        };
        mix(&seed, sizeof seed);
        mix(&horizon, sizeof horizon);
        mix(x0.data(), sizeof(double) * x0.size());
        for (const auto& w : disturbances) mix(w.data(), sizeof(double) * w.size());
        return h;
    }
};

enum class ControllerKind { Opt, Pc, Dtpc, Udtpc };

struct ControllerSpec {
    ControllerKind kind = ControllerKind::Opt;
    int k = 0;
    int kappa = 0;
    ForecastModel forecast;

    std::string tag() const {
        switch (kind) {
            case ControllerKind::Opt: return "OPT";
            case ControllerKind::Pc: return "PC_k" + std::to_string(k);
            case ControllerKind::Dtpc: return "DTPC_k" + std::to_string(k) + "_kappa" + std::to_string(kappa);
            case ControllerKind::Udtpc:
                return "uDTPC_k" + std::to_string(k) + "_kappa" + std::to_string(kappa) + "_" + to_string(forecast.kind);
        }
        return "?";
    }
    bool operator==(const ControllerSpec&) const = default;
};

struct RunRecord {
    ControllerSpec controller;
    std::uint64_t scenario_id = 0;
    std::vector<Eigen::VectorXd> states;  ///< x_0..x_T
    std::vector<Eigen::VectorXd> inputs;  ///< u_0..u_{T-1}
    std::vector<double> state_costs;      ///< f_t(x_t), t = 0..T
    std::vector<double> input_costs;      ///< c_{t+1}(u_t), t = 0..T-1
    double total_cost = 0.0;
    std::vector<double> step_residual;  ///< worst KKT residual of the solves made at step t
    std::vector<int> step_iterations;   ///< Newton iterations summed over solves at step t

    std::string tag() const { return controller.tag(); }
};

// ---- access instrumentation --------------------------------------------------------

/// What one agent read while building its problem at one step.
struct AgentAccess {
    std::vector<char> local_nodes;  ///< nodes whose state, disturbance, dynamics row or state cost was read
    std::vector<char> input_nodes;  ///< nodes whose input cost or B column was read
    int max_disturbance_index = -1;
};

/// Per-step record of controller information reads. Index [t][i] is agent i at step t;
/// centralized controllers record a single agent 0 that sees everything.
class AccessLog {
public:
    void reset(int steps, int agents, int node_count) {
        steps_ = steps;
        agents_ = agents;
        max_disturbance_.assign(steps, -1);
        records_.assign(static_cast<std::size_t>(steps) * agents, AgentAccess{});
        for (auto& r : records_) {
            r.local_nodes.assign(node_count, 0);
            r.input_nodes.assign(node_count, 0);
        }
    }
    int steps() const { return steps_; }
    int agents() const { return agents_; }
    AgentAccess& at(int t, int agent) { return records_[static_cast<std::size_t>(t) * agents_ + agent]; }
    const AgentAccess& at(int t, int agent) const { return records_[static_cast<std::size_t>(t) * agents_ + agent]; }

    /// Largest disturbance (or disturbance forecast) index fetched by the controller at step t.
    int max_disturbance_index(int t) const { return max_disturbance_[t]; }
    void note_disturbance(int t, int index) { max_disturbance_[t] = std::max(max_disturbance_[t], index); }

private:
    int steps_ = 0;
    int agents_ = 0;
    std::vector<int> max_disturbance_;
    std::vector<AgentAccess> records_;
};

/// Logging view of the information an agent uses at step t; every read is recorded.
class LocalInformation {
public:
    LocalInformation(const NetworkedSystem& sys, const CostSchedule& costs, const Eigen::VectorXd& x,
                     std::span<const Eigen::VectorXd> window, int t, AgentAccess* log)
        : sys_(sys), costs_(costs), x_(x), window_(window), t_(t), log_(log) {}

    const NetworkGraph& graph() const { return sys_.graph(); }
    const std::shared_ptr<const NetworkGraph>& graph_ptr() const { return sys_.graph_ptr(); }

    Eigen::VectorXd state(NodeId j) const {
        local(j);
        return x_.segment(graph().state_offset(j), graph().state_dim(j));
    }
    Eigen::VectorXd disturbance(int tau, NodeId j) const {
        local(j);
        if (log_) log_->max_disturbance_index = std::max(log_->max_disturbance_index, t_ + tau);
        return window_[tau].segment(graph().state_offset(j), graph().state_dim(j));
    }
    Eigen::MatrixXd a_block(NodeId j, NodeId l) const {
        local(j);
        local(l);
        return sys_.a_block(j, l);
    }
    Eigen::MatrixXd b_block(NodeId j, NodeId l) const {
        local(j);
        input(l);
        return sys_.b_block(j, l);
    }
    const NodeCost& state_cost(int time, NodeId j) const {
        local(j);
        return costs_.state(time, j);
    }
    const NodeCost& input_cost(int time, NodeId j) const {
        input(j);
        return costs_.input(time, j);
    }
    const NodeCost& terminal_cost(NodeId j) const {
        local(j);
        return costs_.terminal(j);
    }

private:
    void local(NodeId j) const {
        if (log_) log_->local_nodes[j] = 1;
    }
    void input(NodeId j) const {
        if (log_) log_->input_nodes[j] = 1;
    }

    const NetworkedSystem& sys_;
    const CostSchedule& costs_;
    const Eigen::VectorXd& x_;
    std::span<const Eigen::VectorXd> window_;
    int t_;
    AgentAccess* log_;
};

namespace detail {

inline int& agent_thread_setting() {
    static int threads = 0;
    return threads;
}

}  // namespace detail

/// Worker threads used for per-agent solves; 0 means hardware_concurrency.
inline void set_agent_threads(int threads) { detail::agent_thread_setting() = std::max(0, threads); }
inline int agent_threads() {
    const int s = detail::agent_thread_setting();
    return s > 0 ? s : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to agent_threads() threads; results must be written
/// to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::max(1, std::min(n, agent_threads()));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline RunRecord finish_record(const Scenario& sc, ControllerSpec spec, std::vector<Eigen::VectorXd> states,
                               std::vector<Eigen::VectorXd> inputs, std::vector<double> residual,
                               std::vector<int> iterations) {
    const auto& g = sc.graph();
    RunRecord rec;
    rec.controller = spec;
    rec.scenario_id = sc.fingerprint();
    rec.states = std::move(states);
    rec.inputs = std::move(inputs);
    for (int t = 0; t <= sc.horizon; ++t) rec.state_costs.push_back(state_cost_at(g, sc.costs, t, rec.states[t]));
    for (int t = 0; t < sc.horizon; ++t) rec.input_costs.push_back(input_cost_at(g, sc.costs, t, rec.inputs[t]));
    rec.total_cost = total_cost(g, sc.costs, rec.states, rec.inputs);
    rec.step_residual = std::move(residual);
    rec.step_iterations = std::move(iterations);
    return rec;
}

inline std::span<const Eigen::VectorXd> window_of(const std::vector<Eigen::VectorXd>& w, int t, int len) {
    return std::span<const Eigen::VectorXd>(w).subspan(t, len);
}

}  // namespace detail

/// Offline optimum: one solve of the full T-step problem with final cost f_T.
inline RunRecord run_opt(const Scenario& sc, const SolveOptions& opts = {}) {
    sc.validate();
    const auto& sys = *sc.system;
    const OcpProblem p = make_problem(sys, sc.costs, 0, sc.horizon, sc.x0, sc.disturbances, TerminalCost::FinalStage);
    const OcpSolution s = solve(p, opts);
    auto states = rollout(sys, sc.x0, s.inputs, sc.disturbances);
    std::vector<double> res(sc.horizon, 0.0);
    std::vector<int> its(sc.horizon, 0);
    res[0] = s.kkt_residual;
    its[0] = s.newton_iters;
    return detail::finish_record(sc, {ControllerKind::Opt, 0, 0, {}}, std::move(states), s.inputs, std::move(res), std::move(its));
}

/// PC_k: receding horizon with regularizer F until t = T-k, then one final solve with f_T
/// whose k inputs are all committed.
inline RunRecord run_pc(const Scenario& sc, int k, AccessLog* log = nullptr, const SolveOptions& opts = {}) {
    sc.validate();
    const int T = sc.horizon;
    if (k < 1 || k > T) throw DimensionError("run_pc: k must lie in [1, T]");
    const auto& sys = *sc.system;
    const auto& g = sys.graph();
    if (log) log->reset(T, 1, g.node_count());
    std::vector<Eigen::VectorXd> states{sc.x0}, inputs;
    std::vector<double> res(T, 0.0);
    std::vector<int> its(T, 0);
    auto fetch = [&](int t, int len) {
        std::vector<Eigen::VectorXd> win;
        for (int tau = 0; tau < len; ++tau) {
            if (log) log->note_disturbance(t, t + tau);
            win.push_back(sc.disturbances[t + tau]);
        }
        return win;
    };
    auto solve_at = [&](int t, int len, TerminalCost term) {
        const auto win = fetch(t, len);
        AgentAccess* a = log ? &log->at(t, 0) : nullptr;
        LocalInformation info(sys, sc.costs, states.back(), win, t, a);
        const auto nodes = all_nodes(g);
        const OcpProblem p = assemble_problem(info, nodes, nodes, t, len, term);
        OcpSolution s = solve(p, opts);
        res[t] = s.kkt_residual;
        its[t] = s.newton_iters;
        return s;
    };
    for (int t = 0; t < T - k; ++t) {
        const OcpSolution s = solve_at(t, k, TerminalCost::Regularizer);
        inputs.push_back(s.inputs.front());
        states.push_back(step(sys, states.back(), inputs.back(), sc.disturbances[t]));
    }
    const int t0 = T - k;
    const OcpSolution s = solve_at(t0, k, TerminalCost::FinalStage);
    for (int tau = 0; tau < k; ++tau) {
        inputs.push_back(s.inputs[tau]);
        states.push_back(step(sys, states.back(), inputs.back(), sc.disturbances[t0 + tau]));
    }
    return detail::finish_record(sc, {ControllerKind::Pc, k, 0, {}}, std::move(states), std::move(inputs), std::move(res),
                                 std::move(its));
}

/// Shared loop of DTPC_k and uDTPC_k. window(t, len) supplies the disturbance predictions
/// zeta_0..zeta_{len-1} used at step t.
inline RunRecord run_distributed(const Scenario& sc, ControllerSpec spec,
                                 const std::function<std::vector<Eigen::VectorXd>(int, int)>& window,
                                 AccessLog* log, const SolveOptions& opts) {
    sc.validate();
    const int T = sc.horizon;
    const int k = spec.k;
    if (k < 1 || k > T) throw DimensionError("distributed controller: k must lie in [1, T]");
    if (spec.kappa < 0) throw DimensionError("distributed controller: kappa must be >= 0");
    const auto& sys = *sc.system;
    const auto& g = sys.graph();
    const int N = g.node_count();
    if (log) log->reset(T, N, g.node_count());

    std::vector<TruncationSet> sets;
    sets.reserve(N);
    for (NodeId i = 0; i < N; ++i) sets.push_back(khop(g, i, spec.kappa));

    std::vector<Eigen::VectorXd> states{sc.x0}, inputs;
    std::vector<double> res(T, 0.0);
    std::vector<int> its(T, 0);
    std::vector<double> agent_res(N);
    std::vector<int> agent_its(N);
    for (int t = 0; t < T; ++t) {
        const bool tail = t >= T - k;
        const int len = tail ? T - t : k;
        const TerminalCost term = tail ? TerminalCost::FinalStage : TerminalCost::Regularizer;
        const std::vector<Eigen::VectorXd> win = window(t, len);
        if (log)
            for (int tau = 0; tau < len; ++tau) log->note_disturbance(t, t + tau);
        Eigen::VectorXd u = Eigen::VectorXd::Zero(g.total_input_dim());
        const Eigen::VectorXd& x = states.back();
        detail::parallel_for(N, [&](int i) {
            AgentAccess* a = log ? &log->at(t, i) : nullptr;
            LocalInformation info(sys, sc.costs, x, win, t, a);
            const auto& ts = sets[i];
            OcpProblem p = assemble_problem(info, ts.state_nodes, ts.input_nodes, t, len, term);
            p.support.truncation = ts;
            OcpSolution s;
            try {
                s = solve(p, opts);
            } catch (const SolverError& e) {
                throw SolverError("agent " + std::to_string(i) + " at step " + std::to_string(t) + ": " + e.what());
            }
            agent_res[i] = s.kkt_residual;
            agent_its[i] = s.newton_iters;
            if (g.input_dim(i) > 0) {
                const int off = p.support.local_offset(i, BlockKind::Input);
                u.segment(g.input_offset(i), g.input_dim(i)) = s.inputs.front().segment(off, g.input_dim(i));
            }
        });
        for (int i = 0; i < N; ++i) {
            res[t] = std::max(res[t], agent_res[i]);
            its[t] += agent_its[i];
        }
        inputs.push_back(u);
        states.push_back(step(sys, x, u, sc.disturbances[t]));
    }
    return detail::finish_record(sc, spec, std::move(states), std::move(inputs), std::move(res), std::move(its));
}

inline RunRecord run_dtpc(const Scenario& sc, int k, int kappa, AccessLog* log = nullptr, const SolveOptions& opts = {}) {
    auto window = [&](int t, int len) {
        const auto w = detail::window_of(sc.disturbances, t, len);
        return std::vector<Eigen::VectorXd>(w.begin(), w.end());
    };
    return run_distributed(sc, {ControllerKind::Dtpc, k, kappa, {}}, window, log, opts);
}

/// uDTPC_k driven by an arbitrary forecaster; the plant still sees the true disturbances.
inline RunRecord run_udtpc(const Scenario& sc, int k, int kappa, const Forecaster& forecaster,
                           const ForecastModel& model_tag = {}, AccessLog* log = nullptr,
                           const SolveOptions& opts = {}) {
    auto window = [&](int t, int len) {
        std::vector<Eigen::VectorXd> win;
        win.reserve(len);
        for (int n = 0; n < len; ++n) win.push_back(forecaster.issue(t, n));
        return win;
    };
    ControllerSpec spec{ControllerKind::Udtpc, k, kappa, model_tag};
    return run_distributed(sc, spec, window, log, opts);
}

/// uDTPC_k with forecasts drawn from an error model around the given ground truth.
inline RunRecord run_udtpc(const Scenario& sc, int k, int kappa, const ParamTrajectory& truth,
                           const ForecastModel& model, AccessLog* log = nullptr, const SolveOptions& opts = {}) {
    ModelForecaster f(truth, model, sc.seed);
    return run_udtpc(sc, k, kappa, f, model, log, opts);
}

inline RunRecord run_controller(const Scenario& sc, const ControllerSpec& spec, const ParamTrajectory* truth = nullptr,
                                AccessLog* log = nullptr, const SolveOptions& opts = {}) {
    switch (spec.kind) {
        case ControllerKind::Opt: return run_opt(sc, opts);
        case ControllerKind::Pc: return run_pc(sc, spec.k, log, opts);
        case ControllerKind::Dtpc: return run_dtpc(sc, spec.k, spec.kappa, log, opts);
        case ControllerKind::Udtpc: {
            if (!truth) throw DimensionError("uDTPC needs a ground-truth parameter trajectory");
            return run_udtpc(sc, spec.k, spec.kappa, *truth, spec.forecast, log, opts);
        }
    }
    throw DimensionError("unknown controller");
}

/// Tolerated negative regret before a run is flagged as inconsistent.
inline constexpr double kRegretSlack = 1e-8;

struct Regret {
    double value = 0.0;
    bool below_slack = false;  ///< cost(ALG) < cost(OPT) - slack: numerical or logic error
};

inline Regret regret(const RunRecord& run, const RunRecord& opt_run) {
    if (run.scenario_id != opt_run.scenario_id || run.states.size() != opt_run.states.size()) {
        throw DimensionError("regret: runs come from different scenarios");
    }
    Regret r;
    r.value = run.total_cost - opt_run.total_cost;
    r.below_slack = r.value < -kRegretSlack;
    return r;
}

/// argmin_v c(v) s.t. x_next = A x + B v + w: minimum-norm component from the
/// pseudo-inverse, null-space component by Newton on the reduced unconstrained problem.
inline Eigen::VectorXd one_step_terminal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& x_next, const Eigen::VectorXd& w, const NodeCost& cost,
                                         double feasibility_tol = 1e-8) {
    if (cost.dim() != b.cols()) throw DimensionError("one_step_terminal: cost dimension differs from input dimension");
    const Eigen::VectorXd delta = x_next - a * x - w;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = 1e-12 * std::max(1.0, sv.size() ? sv[0] : 0.0);
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv[rank] > cutoff) ++rank;
    const Eigen::MatrixXd& U = svd.matrixU();
    const Eigen::MatrixXd& V = svd.matrixV();
    Eigen::VectorXd vy = V.leftCols(rank) * (U.leftCols(rank).transpose() * delta).cwiseQuotient(sv.head(rank));
    if ((b * vy - delta).norm() > feasibility_tol * std::max(1.0, delta.norm())) {
        throw SolverError("one_step_terminal: target not reachable through the column space of B");
    }
    const Eigen::MatrixXd bz = V.rightCols(b.cols() - rank);
    if (bz.cols() == 0) return vy;
    Eigen::VectorXd omega = Eigen::VectorXd::Zero(bz.cols());
    for (int it = 0; it < 50; ++it) {
        const Eigen::VectorXd v = vy + bz * omega;
        const Eigen::VectorXd grad = bz.transpose() * cost.gradient(v);
        if (grad.lpNorm<Eigen::Infinity>() <= 1e-13 * std::max(1.0, v.lpNorm<Eigen::Infinity>())) break;
        const Eigen::MatrixXd hess = bz.transpose() * cost.hessian(v) * bz;
        omega -= hess.llt().solve(grad);
    }
    return vy + bz * omega;
}

}  // namespace netpc
