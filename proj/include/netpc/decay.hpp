#pragma once

// Empirical decay measurements: block norms of the KKT inverse binned by distance,
// centralized-vs-truncated solution gaps, and closed-loop DTPC-vs-PC trajectory gaps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netpc/control.hpp"
#include "netpc/error.hpp"
#include "netpc/network.hpp"
#include "netpc/ocp.hpp"

namespace netpc {

inline constexpr double kDecayNoiseFloor = 1e-12;

struct DecayProfile {
    std::vector<int> distances;
    std::vector<double> max_norms;
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double rho = std::numeric_limits<double>::quiet_NaN();
    double r2 = std::numeric_limits<double>::quiet_NaN();
    int fitted_points = 0;

    double slope() const { return std::log(rho); }
};

/// Least-squares fit of log(norm) = log(alpha) + d log(rho) over entries above the floor.
inline void fit_profile(DecayProfile& p, double floor = kDecayNoiseFloor) {
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < p.distances.size(); ++k) {
        if (p.max_norms[k] > floor) {
            xs.push_back(p.distances[k]);
            ys.push_back(std::log(p.max_norms[k]));
        }
    }
    p.fitted_points = static_cast<int>(xs.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    p.alpha = p.rho = p.r2 = nan;
    if (xs.size() < 2) return;
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        mx += xs[k];
        my += ys[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        sxy += (xs[k] - mx) * (ys[k] - my);
        syy += (ys[k] - my) * (ys[k] - my);
    }
    if (sxx == 0.0) return;
    const double b = sxy / sxx;
    const double a = my - b * mx;
    p.alpha = std::exp(a);
    p.rho = std::exp(b);
    double sse = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) sse += std::pow(ys[k] - (a + b * xs[k]), 2);
    p.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
}

inline DecayProfile make_profile(std::vector<int> distances, std::vector<double> norms, double floor = kDecayNoiseFloor) {
    DecayProfile p;
    p.distances = std::move(distances);
    p.max_norms = std::move(norms);
    fit_profile(p, floor);
    return p;
}

/// How the KKT unknowns are grouped and how far apart two groups are.
enum class DecayPartition {
    Spatial,   ///< one group per node (all stages), network distance
    Temporal,  ///< one group per stage (all nodes), |tau - tau'|
    Product,   ///< one group per (node, stage), max(network distance, |tau - tau'|)
};

/// Dense H^{-1} from column-by-column solves with the banded factorization.
inline Eigen::MatrixXd kkt_inverse(const KktSystem& sys) {
    const KktFactorization fact(sys);
    const int n = sys.index.size();
    Eigen::MatrixXd inv(n, n);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    for (int c = 0; c < n; ++c) {
        e[c] = 1.0;
        inv.col(c) = fact.solve(e);
        e[c] = 0.0;
    }
    return inv;
}

namespace detail {

struct KktGroup {
    NodeId node = -1;
    int stage = -1;
    std::vector<int> rows;
};

inline std::vector<KktGroup> kkt_groups(const OcpProblem& p, DecayPartition part) {
    const auto& g = *p.support.graph;
    const KktIndex ix = kkt_index(p);
    const auto& sn = p.support.state_nodes;
    const int l = p.horizon;
    auto stage_rows = [&](NodeId j, int tau, std::vector<int>& out) {
        const int so = p.support.local_offset(j, BlockKind::State);
        const int io = p.support.local_offset(j, BlockKind::Input);
        if (so >= 0) {
            for (int r = 0; r < g.state_dim(j); ++r) {
                out.push_back(ix.y(tau) + so + r);
                out.push_back(ix.lambda(tau) + so + r);
                if (tau == l && ix.fixed_terminal) out.push_back(ix.terminal_dual() + so + r);
            }
        }
        if (io >= 0 && tau < l)
            for (int r = 0; r < g.input_dim(j); ++r) out.push_back(ix.v(tau) + io + r);
    };
    std::vector<NodeId> nodes = sn;
    for (NodeId j : p.support.input_nodes)
        if (std::find(nodes.begin(), nodes.end(), j) == nodes.end()) nodes.push_back(j);
    std::sort(nodes.begin(), nodes.end());

    std::vector<KktGroup> groups;
    switch (part) {
        case DecayPartition::Spatial:
            for (NodeId j : nodes) {
                KktGroup gr{j, -1, {}};
                for (int tau = 0; tau <= l; ++tau) stage_rows(j, tau, gr.rows);
                groups.push_back(std::move(gr));
            }
            break;
        case DecayPartition::Temporal:
            for (int tau = 0; tau <= l; ++tau) {
                KktGroup gr{-1, tau, {}};
                for (NodeId j : nodes) stage_rows(j, tau, gr.rows);
                groups.push_back(std::move(gr));
            }
            break;
        case DecayPartition::Product:
            for (NodeId j : nodes)
                for (int tau = 0; tau <= l; ++tau) {
                    KktGroup gr{j, tau, {}};
                    stage_rows(j, tau, gr.rows);
                    groups.push_back(std::move(gr));
                }
            break;
    }
    std::erase_if(groups, [](const KktGroup& gr) { return gr.rows.empty(); });
    return groups;
}

inline int group_distance(const NetworkGraph& g, const KktGroup& a, const KktGroup& b, DecayPartition part) {
    switch (part) {
        case DecayPartition::Spatial: return g.distance(a.node, b.node);
        case DecayPartition::Temporal: return std::abs(a.stage - b.stage);
        case DecayPartition::Product: {
            const int d = g.distance(a.node, b.node);
            return d == kUnreachable ? d : std::max(d, std::abs(a.stage - b.stage));
        }
    }
    return kUnreachable;
}

}  // namespace detail

/// Binned max spectral norm of H^{-1}[I, J] over group pairs at each distance.
/// Pairs in different connected components are skipped.
inline DecayProfile kkt_inverse_decay(const OcpProblem& p, DecayPartition part = DecayPartition::Spatial,
                                      double floor = kDecayNoiseFloor) {
    if (!p.is_quadratic()) throw DimensionError("kkt_inverse_decay: requires quadratic costs");
    if (!p.support.graph) throw DimensionError("kkt_inverse_decay: problem has no graph support");
    const KktSystem sys = build_kkt(p);
    const Eigen::MatrixXd inv = kkt_inverse(sys);
    const auto groups = detail::kkt_groups(p, part);
    std::vector<double> best;
    for (const auto& a : groups) {
        for (const auto& b : groups) {
            const int d = detail::group_distance(*p.support.graph, a, b, part);
            if (d == kUnreachable) continue;
            const Eigen::MatrixXd blk = inv(a.rows, b.rows);
            const double nrm = blk.rows() == 1 || blk.cols() == 1
                                   ? blk.norm()
                                   : Eigen::JacobiSVD<Eigen::MatrixXd>(blk).singularValues()(0);
            if (static_cast<int>(best.size()) <= d) best.resize(d + 1, -1.0);
            best[d] = std::max(best[d], nrm);
        }
    }
    std::vector<int> ds;
    std::vector<double> ns;
    for (int d = 0; d < static_cast<int>(best.size()); ++d) {
        if (best[d] < 0.0) continue;
        ds.push_back(d);
        ns.push_back(best[d]);
    }
    return make_profile(std::move(ds), std::move(ns), floor);
}

/// ||q^c[i] - q^d[i]|| for each radius, with q[i] every primal/dual entry of node i.
inline DecayProfile truncation_gap(const OcpProblem& full, NodeId center, const std::vector<int>& kappas,
                                   const SolveOptions& opts = {}) {
    if (!std::is_sorted(kappas.begin(), kappas.end())) throw DimensionError("truncation_gap: radii must be ascending");
    const OcpSolution c = solve(full, opts);
    const Eigen::VectorXd qc = node_vector(full, c, center);
    std::vector<double> gaps;
    for (int kappa : kappas) {
        const TruncatedSolution d = solve_truncated(full, khop(*full.support.graph, center, kappa), opts);
        gaps.push_back((qc - node_vector(d.problem, d.solution, center)).norm());
    }
    return make_profile(kappas, std::move(gaps));
}

/// sum_t ||x_t^DTPC - x_t^PC|| for each radius.
inline DecayProfile trajectory_gap_curve(const Scenario& sc, int k, const std::vector<int>& kappas,
                                         const SolveOptions& opts = {}) {
    const RunRecord pc = run_pc(sc, k, nullptr, opts);
    std::vector<double> gaps;
    for (int kappa : kappas) {
        const RunRecord d = run_dtpc(sc, k, kappa, nullptr, opts);
        double s = 0.0;
        for (std::size_t t = 0; t < pc.states.size(); ++t) s += (d.states[t] - pc.states[t]).norm();
        gaps.push_back(s);
    }
    return make_profile(kappas, std::move(gaps));
}

struct DisturbanceBounds {
    double D = 0.0;   ///< max_{t <= T-k} ||w_t||
    double Dk = 0.0;  ///< max_{t <= T-k} sum_{tau < k} ||w_{t+tau}||
};

inline DisturbanceBounds disturbance_bounds(const std::vector<Eigen::VectorXd>& w, int k) {
    const int T = static_cast<int>(w.size());
    if (k < 1 || k > T) throw DimensionError("disturbance_bounds: need 1 <= k <= len(w)");
    DisturbanceBounds b;
    for (int t = 0; t <= T - k; ++t) {
        b.D = std::max(b.D, w[t].norm());
        double s = 0.0;
        for (int tau = 0; tau < k; ++tau) s += w[t + tau].norm();
        b.Dk = std::max(b.Dk, s);
    }
    return b;
}

}  // namespace netpc
