#pragma once

// Networked LTI dynamics x_{t+1} = A x_t + B u_t + w_t whose blocks respect the graph,
// plus numerical regularity diagnostics (controllability index, stabilizability).

#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netpc/error.hpp"
#include "netpc/network.hpp"

namespace netpc {

/// One dense block A[i,j] or B[i,j].
struct BlockEntry {
    NodeId row = 0;
    NodeId col = 0;
    Eigen::MatrixXd block;
};

class NetworkedSystem {
public:
    NetworkedSystem(std::shared_ptr<const NetworkGraph> graph, Eigen::MatrixXd a, Eigen::MatrixXd b)
        : graph_(std::move(graph)), a_(std::move(a)), b_(std::move(b)) {
        if (!graph_) throw DimensionError("system requires a graph");
        const int n = graph_->total_state_dim();
        const int m = graph_->total_input_dim();
        if (a_.rows() != n || a_.cols() != n || b_.rows() != n || b_.cols() != m) {
            throw DimensionError("system matrices do not match graph dimensions");
        }
        for (NodeId i = 0; i < graph_->node_count(); ++i) {
            for (NodeId j = 0; j < graph_->node_count(); ++j) {
                if (graph_->distance(i, j) <= 1) continue;
                if (a_block(i, j).cwiseAbs().maxCoeff() != 0.0 ||
                    (graph_->input_dim(j) > 0 && b_block(i, j).cwiseAbs().maxCoeff() != 0.0)) {
                    throw DimensionError("system block nonzero for non-adjacent pair");
                }
            }
        }
    }

    const NetworkGraph& graph() const { return *graph_; }
    const std::shared_ptr<const NetworkGraph>& graph_ptr() const { return graph_; }
    const Eigen::MatrixXd& A() const { return a_; }
    const Eigen::MatrixXd& B() const { return b_; }
    int state_dim() const { return static_cast<int>(a_.rows()); }
    int input_dim() const { return static_cast<int>(b_.cols()); }

    Eigen::Block<const Eigen::MatrixXd> a_block(NodeId i, NodeId j) const {
        return a_.block(graph_->state_offset(i), graph_->state_offset(j), graph_->state_dim(i), graph_->state_dim(j));
    }
    Eigen::Block<const Eigen::MatrixXd> b_block(NodeId i, NodeId j) const {
        return b_.block(graph_->state_offset(i), graph_->input_offset(j), graph_->state_dim(i), graph_->input_dim(j));
    }

private:
    std::shared_ptr<const NetworkGraph> graph_;
    Eigen::MatrixXd a_;
    Eigen::MatrixXd b_;
};

inline NetworkedSystem assemble(std::shared_ptr<const NetworkGraph> graph, const std::vector<BlockEntry>& a_blocks,
                                const std::vector<BlockEntry>& b_blocks) {
    if (!graph) throw DimensionError("assemble: null graph");
    const auto& g = *graph;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.total_state_dim(), g.total_state_dim());
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(g.total_state_dim(), g.total_input_dim());
    auto place = [&](const BlockEntry& e, Eigen::MatrixXd& target, BlockKind col_kind, const char* name) {
        if (e.row < 0 || e.col < 0 || e.row >= g.node_count() || e.col >= g.node_count()) {
            throw DimensionError(std::string(name) + " block references unknown node");
        }
        if (g.distance(e.row, e.col) > 1) {
            throw DimensionError(std::string(name) + " block supplied for non-adjacent pair (" +
                                 std::to_string(e.row) + "," + std::to_string(e.col) + ")");
        }
        if (e.block.rows() != g.state_dim(e.row) || e.block.cols() != g.dim(e.col, col_kind)) {
            throw DimensionError(std::string(name) + " block has wrong shape");
        }
        target.block(g.state_offset(e.row), g.offset(e.col, col_kind), e.block.rows(), e.block.cols()) = e.block;
    };
    for (const auto& e : a_blocks) place(e, a, BlockKind::State, "A");
    for (const auto& e : b_blocks) place(e, b, BlockKind::Input, "B");
    return NetworkedSystem(std::move(graph), std::move(a), std::move(b));
}

/// One step of the dynamics, accumulated per node over its closed neighborhood.
inline Eigen::VectorXd step(const NetworkedSystem& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                            const Eigen::VectorXd& w) {
    const auto& g = sys.graph();
    if (x.size() != g.total_state_dim() || w.size() != g.total_state_dim() || u.size() != g.total_input_dim()) {
        throw DimensionError("step: dimension mismatch");
    }
    Eigen::VectorXd next(x.size());
    for (NodeId i = 0; i < g.node_count(); ++i) {
        auto xi = next.segment(g.state_offset(i), g.state_dim(i));
        xi = w.segment(g.state_offset(i), g.state_dim(i));
        auto add = [&](NodeId j) {
            xi.noalias() += sys.a_block(i, j) * x.segment(g.state_offset(j), g.state_dim(j));
            if (g.input_dim(j) > 0) xi.noalias() += sys.b_block(i, j) * u.segment(g.input_offset(j), g.input_dim(j));
        };
        add(i);
        for (NodeId j : g.neighbors(i)) add(j);
    }
    return next;
}

inline std::vector<Eigen::VectorXd> rollout(const NetworkedSystem& sys, const Eigen::VectorXd& x0,
                                            const std::vector<Eigen::VectorXd>& u_seq,
                                            const std::vector<Eigen::VectorXd>& w_seq) {
    if (u_seq.size() != w_seq.size()) throw DimensionError("rollout: input and disturbance lengths differ");
    std::vector<Eigen::VectorXd> traj;
    traj.reserve(u_seq.size() + 1);
    traj.push_back(x0);
    for (std::size_t t = 0; t < u_seq.size(); ++t) traj.push_back(step(sys, traj.back(), u_seq[t], w_seq[t]));
    return traj;
}

// ---- diagnostics -----------------------------------------------------------------

struct ControllabilityResult {
    std::optional<int> index;  ///< smallest qualifying d, empty if none up to n
    double sigma_min = 0.0;    ///< sigma_min of [B, AB, ..., A^{d-1}B] at the reported (or last tried) d
};

inline ControllabilityResult controllability_index(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                                   double sigma_threshold = 1e-8) {
    const Eigen::Index n = a.rows();
    ControllabilityResult res;
    if (b.cols() == 0 || n == 0) return res;
    Eigen::MatrixXd ctrb(n, 0);
    Eigen::MatrixXd power_b = b;
    for (int d = 1; d <= n; ++d) {
        Eigen::MatrixXd next(n, ctrb.cols() + b.cols());
        next << ctrb, power_b;
        ctrb = std::move(next);
        power_b = a * power_b;
        if (ctrb.cols() < n) {
            res.sigma_min = 0.0;
            continue;
        }
        Eigen::BDCSVD<Eigen::MatrixXd> svd(ctrb);
        res.sigma_min = svd.singularValues()(n - 1);
        if (res.sigma_min >= sigma_threshold) {
            res.index = d;
            return res;
        }
    }
    return res;
}

inline ControllabilityResult controllability_index(const NetworkedSystem& sys, double sigma_threshold = 1e-8) {
    return controllability_index(sys.A(), sys.B(), sigma_threshold);
}

/// Operator 2-norm of the Moore-Penrose pseudo-inverse of B (reported, not enforced).
inline double pinv_norm(const Eigen::MatrixXd& b, double rank_tol = 1e-12) {
    if (b.size() == 0) return 0.0;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(b);
    const auto& s = svd.singularValues();
    double smallest = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > rank_tol * std::max(1.0, s[0])) smallest = s[i];
    return smallest > 0.0 ? 1.0 / smallest : 0.0;
}

struct StabilizabilityResult {
    bool stabilizable = false;
    double l_hat = 0.0;      ///< fitted L in ||(A-BK)^t|| <= L gamma^t
    double gamma_hat = 0.0;  ///< fitted gamma
    double spectral_radius = 0.0;
    int riccati_iterations = 0;
    Eigen::MatrixXd gain;  ///< K
    std::string reason;    ///< set on failure
};

/// Synthesizes K from the discrete Riccati equation with identity weights, then fits
/// log ||(A-BK)^t|| = log L + t log gamma over t = 0..horizon by least squares.
inline StabilizabilityResult stabilizability_probe(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int horizon,
                                                   int max_iterations = 20000, double tol = 1e-11) {
    if (horizon < 2) throw DimensionError("stabilizability_probe: horizon must be >= 2");
    StabilizabilityResult res;
    const Eigen::Index n = a.rows();
    const Eigen::Index m = b.cols();
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m, n);
    bool converged = false;
    for (int it = 1; it <= max_iterations; ++it) {
        res.riccati_iterations = it;
        const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(m, m) + b.transpose() * p * b;
        k = s.ldlt().solve(b.transpose() * p * a);
        Eigen::MatrixXd next = Eigen::MatrixXd::Identity(n, n) + a.transpose() * p * (a - b * k);
        next = 0.5 * (next + next.transpose());
        if (!next.allFinite() || next.norm() > 1e14) break;
        const double change = (next - p).norm();
        p = std::move(next);
        if (change <= tol * std::max(1.0, p.norm())) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        res.reason = "Riccati iteration did not converge within " + std::to_string(max_iterations) + " iterations";
        return res;
    }
    res.gain = k;
    const Eigen::MatrixXd closed = a - b * k;
    res.spectral_radius = closed.eigenvalues().cwiseAbs().maxCoeff();
    if (res.spectral_radius >= 1.0) {
        res.reason = "closed loop spectral radius >= 1";
        return res;
    }
    // Regress over the powers until they vanish (nilpotent closed loops stop early).
    std::vector<double> ts, logs;
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
    for (int t = 0; t <= horizon; ++t) {
        const double nrm = Eigen::JacobiSVD<Eigen::MatrixXd>(power).singularValues()(0);
        if (!(nrm > 1e-300)) break;
        ts.push_back(t);
        logs.push_back(std::log(nrm));
        power = closed * power;
    }
    if (ts.size() < 2) {
        res.stabilizable = true;
        res.l_hat = 1.0;
        res.gamma_hat = 0.0;
        return res;
    }
    const double count = static_cast<double>(ts.size());
    double mt = 0, ml = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        mt += ts[i];
        ml += logs[i];
    }
    mt /= count;
    ml /= count;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        sxy += (ts[i] - mt) * (logs[i] - ml);
        sxx += (ts[i] - mt) * (ts[i] - mt);
    }
    const double slope = sxy / sxx;
    res.gamma_hat = std::exp(slope);
    res.l_hat = std::exp(ml - slope * mt);
    res.stabilizable = true;
    return res;
}

inline StabilizabilityResult stabilizability_probe(const NetworkedSystem& sys, int horizon) {
    return stabilizability_probe(sys.A(), sys.B(), horizon);
}

// ---- block text format -----------------------------------------------------------
//
//   A i j v_11 v_12 ... (row-major, n_x_i * n_x_j values)
//   B i j v_11 ...      (row-major, n_x_i * n_u_j values)

inline NetworkedSystem read_system(std::istream& in, std::shared_ptr<const NetworkGraph> graph) {
    std::vector<BlockEntry> a_blocks, b_blocks;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        BlockEntry e;
        if ((key != "A" && key != "B") || !(ls >> e.row >> e.col)) {
            throw ConfigError("system file line " + std::to_string(lineno) + ": expected 'A i j ...' or 'B i j ...'");
        }
        if (e.row < 0 || e.col < 0 || e.row >= graph->node_count() || e.col >= graph->node_count()) {
            throw DimensionError("system file line " + std::to_string(lineno) + ": node out of range");
        }
        const int rows = graph->state_dim(e.row);
        const int cols = key == "A" ? graph->state_dim(e.col) : graph->input_dim(e.col);
        e.block.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                if (!(ls >> e.block(r, c))) {
                    throw DimensionError("system file line " + std::to_string(lineno) + ": too few block entries");
                }
        double extra;
        if (ls >> extra) throw DimensionError("system file line " + std::to_string(lineno) + ": too many block entries");
        (key == "A" ? a_blocks : b_blocks).push_back(std::move(e));
    }
    return assemble(std::move(graph), a_blocks, b_blocks);
}

inline void write_system(std::ostream& out, const NetworkedSystem& sys) {
    const auto& g = sys.graph();
    out.precision(17);
    auto emit = [&](const char* key, NodeId i, NodeId j, const Eigen::MatrixXd& blk) {
        if (blk.size() == 0 || blk.cwiseAbs().maxCoeff() == 0.0) return;
        out << key << ' ' << i << ' ' << j;
        for (Eigen::Index r = 0; r < blk.rows(); ++r)
            for (Eigen::Index c = 0; c < blk.cols(); ++c) out << ' ' << blk(r, c);
        out << '\n';
    };
    for (NodeId i = 0; i < g.node_count(); ++i) {
        emit("A", i, i, sys.a_block(i, i));
        for (NodeId j : g.neighbors(i)) emit("A", i, j, sys.a_block(i, j));
    }
    for (NodeId i = 0; i < g.node_count(); ++i) {
        emit("B", i, i, sys.b_block(i, i));
        for (NodeId j : g.neighbors(i)) emit("B", i, j, sys.b_block(i, j));
    }
}

inline NetworkedSystem load_system(const std::string& path, std::shared_ptr<const NetworkGraph> graph) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open system file: " + path);
    return read_system(in, std::move(graph));
}

}  // namespace netpc
