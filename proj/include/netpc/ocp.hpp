#pragma once

// Finite-horizon optimal control problems on a (possibly truncated) networked system
// and their solution through the KKT saddle-point system
//
//     [ G  J' ] [ z      ]   [ 0 ]
//     [ J  0  ] [ lambda ] = [ b ],   b = (x, zeta_0, ..., zeta_{l-1} [, x_bar])
//
// with z = (y_0, v_0, y_1, v_1, ..., v_{l-1}, y_l) and J the lower block-bidiagonal
// dynamics Jacobian (rows: y_0 = x, y_{t+1} - A y_t - B v_t = zeta_t).

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "netpc/banded_lu.hpp"
#include "netpc/costs.hpp"
#include "netpc/error.hpp"
#include "netpc/lti.hpp"
#include "netpc/network.hpp"

namespace netpc {

/// A node-separable cost piece acting on entries [offset, offset + dim) of y_tau or v_tau.
struct CostTerm {
    int offset = 0;
    NodeCost cost;
};

/// Free terminal state with cost g(y_l) (either the regularizer F or the final-stage f_T).
struct FreeTerminal {
    std::vector<CostTerm> cost;
};

/// Terminal state pinned to target; the terminal stage still pays its state cost.
struct FixedTerminal {
    Eigen::VectorXd target;
    std::vector<CostTerm> cost;
};

using TerminalCondition = std::variant<FreeTerminal, FixedTerminal>;

/// Which cost a free terminal state pays.
enum class TerminalCost {
    Regularizer,  ///< F
    FinalStage,   ///< f_{t+l}, i.e. f_T when the window reaches the end of the run
};

/// Where the problem's variables live on the network. Problems built by hand may leave
/// graph empty; node-level queries then fail.
struct OcpSupport {
    std::shared_ptr<const NetworkGraph> graph;
    std::vector<NodeId> state_nodes;
    std::vector<NodeId> input_nodes;
    std::optional<TruncationSet> truncation;

    /// Offset of node j inside the reduced state (or input) vector, -1 if absent.
    int local_offset(NodeId j, BlockKind kind) const {
        const auto& nodes = kind == BlockKind::State ? state_nodes : input_nodes;
        int off = 0;
        for (NodeId n : nodes) {
            if (n == j) return off;
            off += graph->dim(n, kind);
        }
        return -1;
    }
};

struct OcpProblem {
    int start_time = 0;
    int horizon = 1;
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    Eigen::VectorXd init_state;
    std::vector<Eigen::VectorXd> disturbances;            ///< zeta_0 .. zeta_{l-1}
    std::vector<std::vector<CostTerm>> stage_state_costs; ///< f_{t+tau} on y_tau, tau < l
    std::vector<std::vector<CostTerm>> stage_input_costs; ///< c_{t+tau+1} on v_tau, tau < l
    TerminalCondition terminal = FreeTerminal{};
    OcpSupport support;

    int state_dim() const { return static_cast<int>(A.rows()); }
    int input_dim() const { return static_cast<int>(B.cols()); }
    bool fixed_terminal() const { return std::holds_alternative<FixedTerminal>(terminal); }
    const std::vector<CostTerm>& terminal_costs() const {
        return std::visit([](const auto& t) -> const std::vector<CostTerm>& { return t.cost; }, terminal);
    }

    bool is_quadratic() const {
        auto quad = [](const std::vector<CostTerm>& v) {
            return std::all_of(v.begin(), v.end(), [](const CostTerm& c) { return c.cost.is_quadratic(); });
        };
        return std::all_of(stage_state_costs.begin(), stage_state_costs.end(), quad) &&
               std::all_of(stage_input_costs.begin(), stage_input_costs.end(), quad) && quad(terminal_costs());
    }

    void validate() const {
        const int n = state_dim();
        const int m = input_dim();
        if (horizon < 1) throw DimensionError("OCP horizon must be >= 1");
        if (A.cols() != n || B.rows() != n) throw DimensionError("OCP dynamics have inconsistent shapes");
        if (init_state.size() != n) throw DimensionError("OCP initial state has wrong length");
        if (static_cast<int>(disturbances.size()) != horizon) throw DimensionError("OCP needs one disturbance per stage");
        for (const auto& z : disturbances)
            if (z.size() != n) throw DimensionError("OCP disturbance has wrong length");
        if (static_cast<int>(stage_state_costs.size()) != horizon || static_cast<int>(stage_input_costs.size()) != horizon) {
            throw DimensionError("OCP needs one cost slice per stage");
        }
        auto check_terms = [](const std::vector<CostTerm>& terms, int dim) {
            for (const auto& c : terms)
                if (c.offset < 0 || c.offset + c.cost.dim() > dim) throw DimensionError("OCP cost term out of range");
        };
        for (const auto& s : stage_state_costs) check_terms(s, n);
        for (const auto& s : stage_input_costs) check_terms(s, m);
        check_terms(terminal_costs(), n);
        if (const auto* f = std::get_if<FixedTerminal>(&terminal); f && f->target.size() != n) {
            throw DimensionError("OCP terminal target has wrong length");
        }
    }
};

// ---- problem assembly ------------------------------------------------------------

/// Full-information view of one OCP instance; the template builder below only reads
/// through these accessors so a logging view can stand in for it.
class FullInformation {
public:
    FullInformation(const NetworkedSystem& sys, const CostSchedule& costs, const Eigen::VectorXd& x,
                    std::span<const Eigen::VectorXd> zeta)
        : sys_(sys), costs_(costs), x_(x), zeta_(zeta) {}

    const NetworkGraph& graph() const { return sys_.graph(); }
    const std::shared_ptr<const NetworkGraph>& graph_ptr() const { return sys_.graph_ptr(); }
    Eigen::VectorXd state(NodeId j) const {
        return x_.segment(graph().state_offset(j), graph().state_dim(j));
    }
    Eigen::VectorXd disturbance(int tau, NodeId j) const {
        return zeta_[tau].segment(graph().state_offset(j), graph().state_dim(j));
    }
    Eigen::MatrixXd a_block(NodeId j, NodeId l) const { return sys_.a_block(j, l); }
    Eigen::MatrixXd b_block(NodeId j, NodeId l) const { return sys_.b_block(j, l); }
    const NodeCost& state_cost(int time, NodeId j) const { return costs_.state(time, j); }
    const NodeCost& input_cost(int time, NodeId j) const { return costs_.input(time, j); }
    const NodeCost& terminal_cost(NodeId j) const { return costs_.terminal(j); }

private:
    const NetworkedSystem& sys_;
    const CostSchedule& costs_;
    const Eigen::VectorXd& x_;
    std::span<const Eigen::VectorXd> zeta_;
};

/// Builds the OCP over the given state/input node sets. States outside state_nodes are
/// identically zero in the truncated dynamics, so their columns of A are dropped.
template <class Info>
OcpProblem assemble_problem(const Info& info, std::vector<NodeId> state_nodes, std::vector<NodeId> input_nodes,
                            int start_time, int horizon, TerminalCost terminal_cost,
                            const std::optional<Eigen::VectorXd>& fixed_target = std::nullopt) {
    const NetworkGraph& g = info.graph();
    OcpProblem p;
    p.start_time = start_time;
    p.horizon = horizon;
    p.support.graph = info.graph_ptr();
    p.support.state_nodes = std::move(state_nodes);
    p.support.input_nodes = std::move(input_nodes);

    const auto& sn = p.support.state_nodes;
    const auto& in = p.support.input_nodes;
    std::vector<int> soff(g.node_count(), -1), ioff(g.node_count(), -1);
    int n = 0, m = 0;
    for (NodeId j : sn) {
        soff[j] = n;
        n += g.state_dim(j);
    }
    for (NodeId j : in) {
        ioff[j] = m;
        m += g.input_dim(j);
    }

    p.A = Eigen::MatrixXd::Zero(n, n);
    p.B = Eigen::MatrixXd::Zero(n, m);
    p.init_state.resize(n);
    p.disturbances.assign(horizon, Eigen::VectorXd(n));
    for (NodeId j : sn) {
        const int dj = g.state_dim(j);
        p.init_state.segment(soff[j], dj) = info.state(j);
        for (int tau = 0; tau < horizon; ++tau) p.disturbances[tau].segment(soff[j], dj) = info.disturbance(tau, j);
        auto couple = [&](NodeId l) {
            if (soff[l] >= 0) p.A.block(soff[j], soff[l], dj, g.state_dim(l)) = info.a_block(j, l);
            if (ioff[l] >= 0 && g.input_dim(l) > 0) p.B.block(soff[j], ioff[l], dj, g.input_dim(l)) = info.b_block(j, l);
        };
        couple(j);
        for (NodeId l : g.neighbors(j)) couple(l);
    }

    p.stage_state_costs.resize(horizon);
    p.stage_input_costs.resize(horizon);
    for (int tau = 0; tau < horizon; ++tau) {
        for (NodeId j : sn) p.stage_state_costs[tau].push_back({soff[j], info.state_cost(start_time + tau, j)});
        for (NodeId j : in)
            if (g.input_dim(j) > 0) p.stage_input_costs[tau].push_back({ioff[j], info.input_cost(start_time + tau, j)});
    }
    std::vector<CostTerm> term;
    const bool final_stage = fixed_target.has_value() || terminal_cost == TerminalCost::FinalStage;
    for (NodeId j : sn) {
        term.push_back({soff[j], final_stage ? info.state_cost(start_time + horizon, j) : info.terminal_cost(j)});
    }
    if (fixed_target) {
        Eigen::VectorXd target(n);
        for (NodeId j : sn) target.segment(soff[j], g.state_dim(j)) = fixed_target->segment(g.state_offset(j), g.state_dim(j));
        p.terminal = FixedTerminal{std::move(target), std::move(term)};
    } else {
        p.terminal = FreeTerminal{std::move(term)};
    }
    return p;
}

inline std::vector<NodeId> all_nodes(const NetworkGraph& g) {
    std::vector<NodeId> v(g.node_count());
    std::iota(v.begin(), v.end(), 0);
    return v;
}

/// Centralized problem starting at time t with horizon l (free terminal state).
inline OcpProblem make_problem(const NetworkedSystem& sys, const CostSchedule& costs, int t, int horizon,
                               const Eigen::VectorXd& x, std::span<const Eigen::VectorXd> zeta,
                               TerminalCost terminal) {
    if (static_cast<int>(zeta.size()) < horizon) throw DimensionError("make_problem: too few disturbances");
    if (terminal == TerminalCost::FinalStage && t + horizon > costs.horizon()) {
        throw DimensionError("make_problem: final-stage cost beyond schedule");
    }
    FullInformation info(sys, costs, x, zeta);
    auto nodes = all_nodes(sys.graph());
    return assemble_problem(info, nodes, nodes, t, horizon, terminal);
}

/// Centralized problem with y_l pinned to target; stage costs f_{t..t+l}.
inline OcpProblem make_fixed_terminal_problem(const NetworkedSystem& sys, const CostSchedule& costs, int t,
                                              int horizon, const Eigen::VectorXd& x,
                                              std::span<const Eigen::VectorXd> zeta, const Eigen::VectorXd& target) {
    if (static_cast<int>(zeta.size()) < horizon) throw DimensionError("make_fixed_terminal_problem: too few disturbances");
    if (target.size() != sys.state_dim()) throw DimensionError("make_fixed_terminal_problem: target has wrong length");
    FullInformation info(sys, costs, x, zeta);
    auto nodes = all_nodes(sys.graph());
    return assemble_problem(info, nodes, nodes, t, horizon, TerminalCost::FinalStage, target);
}

/// Restricts a full-support problem to a truncation set by index selection.
inline OcpProblem truncate_problem(const OcpProblem& full, const TruncationSet& ts) {
    if (!full.support.graph) throw DimensionError("truncate_problem: problem has no graph support");
    const NetworkGraph& g = *full.support.graph;
    if (full.state_dim() != g.total_state_dim() || full.input_dim() != g.total_input_dim()) {
        throw DimensionError("truncate_problem: problem is not full-support");
    }
    const auto sidx = scalar_indices(g, ts.state_nodes, BlockKind::State);
    const auto iidx = scalar_indices(g, ts.input_nodes, BlockKind::Input);
    std::vector<int> snew(g.total_state_dim(), -1), inew(g.total_input_dim(), -1);
    for (std::size_t r = 0; r < sidx.size(); ++r) snew[sidx[r]] = static_cast<int>(r);
    for (std::size_t r = 0; r < iidx.size(); ++r) inew[iidx[r]] = static_cast<int>(r);

    OcpProblem p;
    p.start_time = full.start_time;
    p.horizon = full.horizon;
    p.A = full.A(sidx, sidx);
    p.B = full.B(sidx, iidx);
    p.init_state = full.init_state(sidx);
    for (const auto& z : full.disturbances) p.disturbances.push_back(z(sidx));
    auto remap = [](const std::vector<CostTerm>& terms, const std::vector<int>& map) {
        std::vector<CostTerm> out;
        for (const auto& c : terms)
            if (c.cost.dim() > 0 && map[c.offset] >= 0) out.push_back({map[c.offset], c.cost});
        return out;
    };
    for (const auto& s : full.stage_state_costs) p.stage_state_costs.push_back(remap(s, snew));
    for (const auto& s : full.stage_input_costs) p.stage_input_costs.push_back(remap(s, inew));
    if (const auto* f = std::get_if<FixedTerminal>(&full.terminal)) {
        p.terminal = FixedTerminal{f->target(sidx), remap(f->cost, snew)};
    } else {
        p.terminal = FreeTerminal{remap(full.terminal_costs(), snew)};
    }
    p.support.graph = full.support.graph;
    p.support.state_nodes = ts.state_nodes;
    p.support.input_nodes = ts.input_nodes;
    p.support.truncation = ts;
    return p;
}

// ---- KKT system --------------------------------------------------------------------

/// Row layout of the KKT system: primal z = (y_0, v_0, ..., v_{l-1}, y_l), then
/// lambda_0..lambda_l, then the terminal multiplier of a fixed-terminal problem.
struct KktIndex {
    int n = 0;
    int m = 0;
    int horizon = 0;
    bool fixed_terminal = false;

    int y(int tau) const { return tau * (n + m); }
    int v(int tau) const { return tau * (n + m) + n; }
    int primal_dim() const { return horizon * (n + m) + n; }
    int lambda(int tau) const { return primal_dim() + tau * n; }
    int terminal_dual() const { return primal_dim() + (horizon + 1) * n; }
    int dual_dim() const { return (horizon + 1 + (fixed_terminal ? 1 : 0)) * n; }
    int size() const { return primal_dim() + dual_dim(); }

    /// Position in the stage-interleaved ordering (lambda_t, y_t, v_t)_t used for the
    /// banded factorization.
    int band_position(int row) const {
        const int stage = 2 * n + m;
        const int pd = primal_dim();
        if (row < pd) {
            const int tau = row / (n + m);
            const int r = row % (n + m);
            return tau * stage + n + r;
        }
        const int d = row - pd;
        const int tau = d / n;
        if (tau <= horizon) return tau * stage + d % n;
        return horizon * stage + 2 * n + d % n;  // terminal multiplier after y_l
    }
};

struct KktSystem {
    Eigen::SparseMatrix<double> H;
    Eigen::VectorXd b;
    KktIndex index;
};

namespace detail {

inline void add_dense(std::vector<Eigen::Triplet<double>>& trips, int r0, int c0, const Eigen::MatrixXd& blk,
                      double sign, bool symmetric_copy) {
    for (Eigen::Index c = 0; c < blk.cols(); ++c) {
        for (Eigen::Index r = 0; r < blk.rows(); ++r) {
            const double v = blk(r, c);
            if (v == 0.0) continue;
            trips.emplace_back(r0 + static_cast<int>(r), c0 + static_cast<int>(c), sign * v);
            if (symmetric_copy) trips.emplace_back(c0 + static_cast<int>(c), r0 + static_cast<int>(r), sign * v);
        }
    }
}

inline void add_identity(std::vector<Eigen::Triplet<double>>& trips, int r0, int c0, int n) {
    for (int i = 0; i < n; ++i) {
        trips.emplace_back(r0 + i, c0 + i, 1.0);
        trips.emplace_back(c0 + i, r0 + i, 1.0);
    }
}

inline void add_hessians(std::vector<Eigen::Triplet<double>>& trips, int base, const std::vector<CostTerm>& terms,
                         const Eigen::VectorXd* lin, int lin_base) {
    for (const auto& c : terms) {
        const int d = c.cost.dim();
        if (d == 0) continue;
        const Eigen::MatrixXd h = (lin && !c.cost.is_quadratic())
                                      ? c.cost.hessian(lin->segment(lin_base + c.offset, d))
                                      : c.cost.hessian(Eigen::VectorXd::Zero(d));
        add_dense(trips, base + c.offset, base + c.offset, h, 1.0, false);
    }
}

}  // namespace detail

inline KktIndex kkt_index(const OcpProblem& p) {
    return {p.state_dim(), p.input_dim(), p.horizon, p.fixed_terminal()};
}

/// H with G = cost Hessian at the linearization point (zero if none given).
inline KktSystem build_kkt(const OcpProblem& p, const Eigen::VectorXd* linearization = nullptr) {
    p.validate();
    KktSystem sys;
    sys.index = kkt_index(p);
    const auto& ix = sys.index;
    if (linearization && linearization->size() != ix.primal_dim()) {
        throw DimensionError("build_kkt: linearization point has wrong length");
    }
    const int n = ix.n;
    std::vector<Eigen::Triplet<double>> trips;
    for (int tau = 0; tau < p.horizon; ++tau) {
        detail::add_hessians(trips, ix.y(tau), p.stage_state_costs[tau], linearization, ix.y(tau));
        detail::add_hessians(trips, ix.v(tau), p.stage_input_costs[tau], linearization, ix.v(tau));
    }
    detail::add_hessians(trips, ix.y(p.horizon), p.terminal_costs(), linearization, ix.y(p.horizon));

    detail::add_identity(trips, ix.lambda(0), ix.y(0), n);
    for (int tau = 0; tau < p.horizon; ++tau) {
        const int row = ix.lambda(tau + 1);
        detail::add_dense(trips, row, ix.y(tau), p.A, -1.0, true);
        detail::add_dense(trips, row, ix.v(tau), p.B, -1.0, true);
        detail::add_identity(trips, row, ix.y(tau + 1), n);
    }
    if (ix.fixed_terminal) detail::add_identity(trips, ix.terminal_dual(), ix.y(p.horizon), n);

    sys.H.resize(ix.size(), ix.size());
    sys.H.setFromTriplets(trips.begin(), trips.end());

    sys.b = Eigen::VectorXd::Zero(ix.size());
    sys.b.segment(ix.lambda(0), n) = p.init_state;
    for (int tau = 0; tau < p.horizon; ++tau) sys.b.segment(ix.lambda(tau + 1), n) = p.disturbances[tau];
    if (const auto* f = std::get_if<FixedTerminal>(&p.terminal)) sys.b.segment(ix.terminal_dual(), n) = f->target;
    return sys;
}

/// Banded factorization of a KKT matrix in the stage-interleaved ordering.
class KktFactorization {
public:
    explicit KktFactorization(const KktSystem& sys) : index_(sys.index), lu_(make_lu(sys)) { lu_.factorize(); }

    /// Solve H q = rhs (rhs and q in the KktIndex ordering).
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        Eigen::VectorXd permuted(rhs.size());
        for (Eigen::Index r = 0; r < rhs.size(); ++r) permuted[index_.band_position(static_cast<int>(r))] = rhs[r];
        lu_.solve_in_place(permuted);
        Eigen::VectorXd out(rhs.size());
        for (Eigen::Index r = 0; r < rhs.size(); ++r) out[r] = permuted[index_.band_position(static_cast<int>(r))];
        return out;
    }

    int lower_bandwidth() const { return lu_.lower_bandwidth(); }

private:
    static BandedLu make_lu(const KktSystem& sys) {
        const auto& ix = sys.index;
        int kl = 0, ku = 0;
        for (int c = 0; c < sys.H.outerSize(); ++c) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(sys.H, c); it; ++it) {
                const int d = ix.band_position(static_cast<int>(it.row())) - ix.band_position(static_cast<int>(it.col()));
                kl = std::max(kl, d);
                ku = std::max(ku, -d);
            }
        }
        BandedLu lu(ix.size(), kl, ku);
        for (int c = 0; c < sys.H.outerSize(); ++c) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(sys.H, c); it; ++it) {
                lu.add(ix.band_position(static_cast<int>(it.row())), ix.band_position(static_cast<int>(it.col())), it.value());
            }
        }
        return lu;
    }

    KktIndex index_;
    BandedLu lu_;
};

// ---- solution -----------------------------------------------------------------------

struct OcpSolution {
    std::vector<Eigen::VectorXd> states;  ///< y_0..y_l
    std::vector<Eigen::VectorXd> inputs;  ///< v_0..v_{l-1}
    std::vector<Eigen::VectorXd> duals;   ///< lambda_0..lambda_l
    std::optional<Eigen::VectorXd> terminal_dual;
    double kkt_residual = 0.0;
    int newton_iters = 0;
    double objective = 0.0;
};

struct SolveOptions {
    double tolerance = 1e-9;
    int max_iterations = 50;
    int refinement_steps = 3;
};

namespace detail {

inline double terms_value(const std::vector<CostTerm>& terms, const Eigen::VectorXd& z) {
    double v = 0.0;
    for (const auto& c : terms)
        if (c.cost.dim() > 0) v += c.cost.value(z.segment(c.offset, c.cost.dim()));
    return v;
}

inline void terms_gradient(const std::vector<CostTerm>& terms, const Eigen::VectorXd& z, Eigen::Ref<Eigen::VectorXd> out) {
    out.setZero();
    for (const auto& c : terms)
        if (c.cost.dim() > 0) out.segment(c.offset, c.cost.dim()) += c.cost.gradient(z.segment(c.offset, c.cost.dim()));
}

}  // namespace detail

/// Nonlinear KKT residual [grad f(z) + J' lambda ; J z - b] in the KktIndex ordering.
inline Eigen::VectorXd kkt_residual_vector(const OcpProblem& p, const Eigen::VectorXd& q) {
    const KktIndex ix = kkt_index(p);
    const int n = ix.n, m = ix.m, l = p.horizon;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(ix.size());
    auto y = [&](int tau) { return q.segment(ix.y(tau), n); };
    auto v = [&](int tau) { return q.segment(ix.v(tau), m); };
    auto lam = [&](int tau) { return q.segment(ix.lambda(tau), n); };
    for (int tau = 0; tau < l; ++tau) {
        const Eigen::VectorXd yt = y(tau), vt = v(tau);
        detail::terms_gradient(p.stage_state_costs[tau], yt, r.segment(ix.y(tau), n));
        detail::terms_gradient(p.stage_input_costs[tau], vt, r.segment(ix.v(tau), m));
        r.segment(ix.y(tau), n) += lam(tau) - p.A.transpose() * lam(tau + 1);
        r.segment(ix.v(tau), m) -= p.B.transpose() * lam(tau + 1);
        r.segment(ix.lambda(tau + 1), n) = y(tau + 1) - p.A * yt - p.B * vt - p.disturbances[tau];
    }
    const Eigen::VectorXd yl = y(l);
    detail::terms_gradient(p.terminal_costs(), yl, r.segment(ix.y(l), n));
    r.segment(ix.y(l), n) += lam(l);
    r.segment(ix.lambda(0), n) = y(0) - p.init_state;
    if (const auto* f = std::get_if<FixedTerminal>(&p.terminal)) {
        r.segment(ix.y(l), n) += q.segment(ix.terminal_dual(), n);
        r.segment(ix.terminal_dual(), n) = yl - f->target;
    }
    return r;
}

inline double objective_value(const OcpProblem& p, const OcpSolution& s) {
    double v = 0.0;
    for (int tau = 0; tau < p.horizon; ++tau) {
        v += detail::terms_value(p.stage_state_costs[tau], s.states[tau]);
        v += detail::terms_value(p.stage_input_costs[tau], s.inputs[tau]);
    }
    return v + detail::terms_value(p.terminal_costs(), s.states[p.horizon]);
}

inline OcpSolution unpack_solution(const OcpProblem& p, const Eigen::VectorXd& q) {
    const KktIndex ix = kkt_index(p);
    OcpSolution s;
    for (int tau = 0; tau <= p.horizon; ++tau) {
        s.states.push_back(q.segment(ix.y(tau), ix.n));
        s.duals.push_back(q.segment(ix.lambda(tau), ix.n));
        if (tau < p.horizon) s.inputs.push_back(q.segment(ix.v(tau), ix.m));
    }
    if (ix.fixed_terminal) s.terminal_dual = q.segment(ix.terminal_dual(), ix.n);
    return s;
}

inline Eigen::VectorXd pack_solution(const OcpProblem& p, const OcpSolution& s) {
    const KktIndex ix = kkt_index(p);
    Eigen::VectorXd q(ix.size());
    for (int tau = 0; tau <= p.horizon; ++tau) {
        q.segment(ix.y(tau), ix.n) = s.states[tau];
        q.segment(ix.lambda(tau), ix.n) = s.duals[tau];
        if (tau < p.horizon) q.segment(ix.v(tau), ix.m) = s.inputs[tau];
    }
    if (ix.fixed_terminal) q.segment(ix.terminal_dual(), ix.n) = *s.terminal_dual;
    return q;
}

/// Quadratic costs: one factorization plus iterative refinement. Otherwise pure Newton
/// on the KKT residual, re-linearizing G each iterate, aborting if the residual grows.
inline OcpSolution solve(const OcpProblem& p, const SolveOptions& opts = {}) {
    p.validate();
    const KktIndex ix = kkt_index(p);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(ix.size());
    double res = 0.0;
    int iters = 0;
    // Residuals are judged relative to the data magnitude.
    double scale = std::max(1.0, p.init_state.lpNorm<Eigen::Infinity>());
    for (const auto& z : p.disturbances) scale = std::max(scale, z.lpNorm<Eigen::Infinity>());
    if (const auto* f = std::get_if<FixedTerminal>(&p.terminal)) scale = std::max(scale, f->target.lpNorm<Eigen::Infinity>());
    if (p.is_quadratic()) {
        const KktSystem sys = build_kkt(p);
        const KktFactorization fact(sys);
        q = fact.solve(sys.b);
        iters = 1;
        for (int k = 0; k < opts.refinement_steps; ++k) {
            const Eigen::VectorXd r = sys.b - sys.H * q;
            if (r.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, q.lpNorm<Eigen::Infinity>())) break;
            q += fact.solve(r);
        }
        res = kkt_residual_vector(p, q).lpNorm<Eigen::Infinity>();
        if (!std::isfinite(res) || res > opts.tolerance * scale) {
            throw SingularKktError("KKT solve inaccurate (residual " + std::to_string(res) + ")");
        }
    } else {
        double prev = std::numeric_limits<double>::infinity();
        for (;;) {
            const Eigen::VectorXd r = kkt_residual_vector(p, q);
            res = r.lpNorm<Eigen::Infinity>();
            if (!std::isfinite(res)) throw NewtonError("Newton iterate is not finite", res, iters);
            if (res <= opts.tolerance * scale) break;
            if (iters >= 2 && res > prev) {
                throw NewtonError("Newton residual increased at iteration " + std::to_string(iters), res, iters);
            }
            if (iters >= opts.max_iterations) {
                throw NewtonError("Newton did not converge in " + std::to_string(iters) + " iterations", res, iters);
            }
            prev = res;
            const Eigen::VectorXd z = q.head(ix.primal_dim());
            const KktSystem sys = build_kkt(p, &z);
            const KktFactorization fact(sys);
            q -= fact.solve(r);
            ++iters;
        }
    }
    OcpSolution s = unpack_solution(p, q);
    s.kkt_residual = res;
    s.newton_iters = iters;
    s.objective = objective_value(p, s);
    return s;
}

/// A solution on a truncation set together with the problem that produced it.
struct TruncatedSolution {
    OcpProblem problem;
    OcpSolution solution;

    /// v_0[j] for a node in the input support.
    Eigen::VectorXd first_input(NodeId j) const {
        const int off = problem.support.local_offset(j, BlockKind::Input);
        if (off < 0) throw DimensionError("node outside the truncation input support");
        return solution.inputs.front().segment(off, problem.support.graph->input_dim(j));
    }
    /// Predicted trajectory embedded into full state dimension (zero outside the set).
    std::vector<Eigen::VectorXd> embedded_states() const {
        const auto& g = *problem.support.graph;
        const auto idx = scalar_indices(g, problem.support.state_nodes, BlockKind::State);
        std::vector<Eigen::VectorXd> out;
        for (const auto& y : solution.states) {
            Eigen::VectorXd full = Eigen::VectorXd::Zero(g.total_state_dim());
            full(idx) = y;
            out.push_back(std::move(full));
        }
        return out;
    }
};

inline TruncatedSolution solve_truncated(const OcpProblem& full, const TruncationSet& ts, const SolveOptions& opts = {}) {
    TruncatedSolution out{truncate_problem(full, ts), {}};
    out.solution = solve(out.problem, opts);
    return out;
}

/// The horizon-(l-1) problem starting one stage later from initial state y1, same terminal.
inline OcpProblem shift_problem(const OcpProblem& p, const Eigen::VectorXd& y1) {
    if (p.horizon < 2) throw DimensionError("shift_problem: horizon must be >= 2");
    OcpProblem s = p;
    s.start_time = p.start_time + 1;
    s.horizon = p.horizon - 1;
    s.init_state = y1;
    s.disturbances.erase(s.disturbances.begin());
    s.stage_state_costs.erase(s.stage_state_costs.begin());
    s.stage_input_costs.erase(s.stage_input_costs.begin());
    return s;
}

/// Principle-of-optimality residual: re-solve from y_1 with one stage fewer and return
/// max_tau ||y_{tau+1} - y'_tau||.
inline double popt_check(const OcpSolution& sol, const OcpProblem& p, const SolveOptions& opts = {}) {
    if (p.fixed_terminal()) throw DimensionError("popt_check: requires a free-terminal problem");
    const OcpSolution tail = solve(shift_problem(p, sol.states[1]), opts);
    double worst = 0.0;
    for (int tau = 0; tau < static_cast<int>(tail.states.size()); ++tau) {
        worst = std::max(worst, (sol.states[tau + 1] - tail.states[tau]).norm());
    }
    return worst;
}

/// All primal and dual entries belonging to one node across every stage, stacked as
/// (y_0[j], ..., y_l[j], v_0[j], ..., v_{l-1}[j], lambda_0[j], ..., lambda_l[j]).
inline Eigen::VectorXd node_vector(const OcpProblem& p, const OcpSolution& s, NodeId j) {
    const auto& g = *p.support.graph;
    const int so = p.support.local_offset(j, BlockKind::State);
    const int io = p.support.local_offset(j, BlockKind::Input);
    if (so < 0) throw DimensionError("node_vector: node not in problem support");
    const int ds = g.state_dim(j), du = io >= 0 ? g.input_dim(j) : 0;
    const int l = p.horizon;
    Eigen::VectorXd out((l + 1) * ds * 2 + l * du);
    int k = 0;
    for (int tau = 0; tau <= l; ++tau, k += ds) out.segment(k, ds) = s.states[tau].segment(so, ds);
    for (int tau = 0; tau < l; ++tau, k += du) out.segment(k, du) = s.inputs[tau].segment(std::max(io, 0), du);
    for (int tau = 0; tau <= l; ++tau, k += ds) out.segment(k, ds) = s.duals[tau].segment(so, ds);
    return out;
}

}  // namespace netpc
