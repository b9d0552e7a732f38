#pragma once

// Node-separable, strongly convex stage costs and their time-indexed schedules.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netpc/error.hpp"
#include "netpc/network.hpp"
#include "netpc/rng.hpp"

namespace netpc {

enum class CostKind { Quadratic, QuadraticLogCosh };

/// Cost on one node's state or input: 1/2 z'Mz, optionally plus scale * sum_i log cosh(z_i).
class NodeCost {
public:
    NodeCost() = default;

    explicit NodeCost(Eigen::MatrixXd matrix, double logcosh_scale = 0.0)
        : kind_(logcosh_scale > 0.0 ? CostKind::QuadraticLogCosh : CostKind::Quadratic),
          matrix_(std::move(matrix)), scale_(logcosh_scale) {
        if (matrix_.rows() != matrix_.cols()) throw DimensionError("cost matrix must be square");
        if (scale_ < 0.0) throw DimensionError("log-cosh scale must be non-negative");
        if (matrix_.size() == 0) return;
        if ((matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, matrix_.cwiseAbs().maxCoeff())) {
            throw DimensionError("cost matrix must be symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(matrix_, Eigen::EigenvaluesOnly);
        mu_ = eig.eigenvalues()(0);
        lmax_ = eig.eigenvalues()(matrix_.rows() - 1);
        if (!(mu_ > 0.0)) throw DimensionError("cost matrix must be positive definite");
    }

    static NodeCost quadratic(Eigen::MatrixXd m) { return NodeCost(std::move(m)); }
    static NodeCost quadratic_logcosh(Eigen::MatrixXd m, double scale) { return NodeCost(std::move(m), scale); }
    static NodeCost scaled_identity(int dim, double s) {
        return NodeCost(s * Eigen::MatrixXd::Identity(dim, dim));
    }

    CostKind kind() const { return kind_; }
    const Eigen::MatrixXd& matrix() const { return matrix_; }
    double scale() const { return scale_; }
    int dim() const { return static_cast<int>(matrix_.rows()); }
    bool is_quadratic() const { return kind_ == CostKind::Quadratic; }

    /// Strong convexity modulus (smallest Hessian eigenvalue over all z).
    double mu() const { return mu_; }
    /// Smoothness constant (largest Hessian eigenvalue over all z).
    double lipschitz() const { return lmax_ + scale_; }
    bool isotropic() const { return matrix_.size() == 0 || (lmax_ - mu_) <= 1e-12 * lmax_; }

    double value(const Eigen::VectorXd& z) const {
        check(z);
        double v = 0.5 * z.dot(matrix_ * z);
        if (scale_ > 0.0) {
            for (Eigen::Index i = 0; i < z.size(); ++i) v += scale_ * log_cosh(z[i]);
        }
        return v;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& z) const {
        check(z);
        Eigen::VectorXd g = matrix_ * z;
        if (scale_ > 0.0) g.array() += scale_ * z.array().tanh();
        return g;
    }

    Eigen::MatrixXd hessian(const Eigen::VectorXd& z) const {
        check(z);
        Eigen::MatrixXd h = matrix_;
        if (scale_ > 0.0) {
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                const double c = std::cosh(z[i]);
                h(i, i) += scale_ / (c * c);
            }
        }
        return h;
    }

private:
    static double log_cosh(double x) {
        const double a = std::abs(x);
        return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    }
    void check(const Eigen::VectorXd& z) const {
        if (z.size() != matrix_.rows()) throw DimensionError("cost evaluated at vector of wrong length");
    }

    CostKind kind_ = CostKind::Quadratic;
    Eigen::MatrixXd matrix_;
    double scale_ = 0.0;
    double mu_ = 0.0;
    double lmax_ = 0.0;
};

struct CostEval {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

inline CostEval eval(const NodeCost& cost, const Eigen::VectorXd& z) {
    return {cost.value(z), cost.gradient(z), cost.hessian(z)};
}

/// f_t[i] for t = 0..T, c_{t+1}[i] (the cost of u_t) for t = 0..T-1, and the terminal
/// regularizer F[i] used when a predictive controller cuts the horizon short.
class CostSchedule {
public:
    CostSchedule() = default;
    CostSchedule(std::vector<std::vector<NodeCost>> state_costs, std::vector<std::vector<NodeCost>> input_costs,
                 std::vector<NodeCost> terminal)
        : state_(std::move(state_costs)), input_(std::move(input_costs)), terminal_(std::move(terminal)) {
        if (state_.size() != input_.size() + 1) {
            throw DimensionError("schedule needs T+1 state cost slices and T input cost slices");
        }
        const std::size_t n = terminal_.size();
        for (const auto& s : state_)
            if (s.size() != n) throw DimensionError("state cost slice has wrong node count");
        for (const auto& s : input_)
            if (s.size() != n) throw DimensionError("input cost slice has wrong node count");
    }

    int horizon() const { return static_cast<int>(input_.size()); }
    int node_count() const { return static_cast<int>(terminal_.size()); }

    /// f_t[i]
    const NodeCost& state(int t, NodeId i) const { return state_.at(t).at(i); }
    /// c_{t+1}[i], charged on u_t
    const NodeCost& input(int t, NodeId i) const { return input_.at(t).at(i); }
    /// F[i]
    const NodeCost& terminal(NodeId i) const { return terminal_.at(i); }

    bool all_quadratic() const {
        for (const auto& s : state_)
            for (const auto& c : s)
                if (!c.is_quadratic()) return false;
        for (const auto& s : input_)
            for (const auto& c : s)
                if (!c.is_quadratic()) return false;
        for (const auto& c : terminal_)
            if (!c.is_quadratic()) return false;
        return true;
    }
    bool terminal_isotropic() const {
        for (const auto& c : terminal_)
            if (!c.isotropic()) return false;
        return true;
    }

private:
    std::vector<std::vector<NodeCost>> state_;
    std::vector<std::vector<NodeCost>> input_;
    std::vector<NodeCost> terminal_;
};

inline double state_cost_at(const NetworkGraph& g, const CostSchedule& s, int t, const Eigen::VectorXd& x) {
    double v = 0.0;
    for (NodeId i = 0; i < g.node_count(); ++i) v += s.state(t, i).value(x.segment(g.state_offset(i), g.state_dim(i)));
    return v;
}

inline double input_cost_at(const NetworkGraph& g, const CostSchedule& s, int t, const Eigen::VectorXd& u) {
    double v = 0.0;
    for (NodeId i = 0; i < g.node_count(); ++i) {
        if (g.input_dim(i) == 0) continue;
        v += s.input(t, i).value(u.segment(g.input_offset(i), g.input_dim(i)));
    }
    return v;
}

inline double total_cost(const NetworkGraph& g, const CostSchedule& s, const std::vector<Eigen::VectorXd>& states,
                         const std::vector<Eigen::VectorXd>& inputs) {
    if (states.size() != inputs.size() + 1) throw DimensionError("total_cost: need T+1 states and T inputs");
    if (static_cast<int>(inputs.size()) > s.horizon()) throw DimensionError("total_cost: trajectory longer than schedule");
    double v = 0.0;
    for (std::size_t t = 0; t < states.size(); ++t) v += state_cost_at(g, s, static_cast<int>(t), states[t]);
    for (std::size_t t = 0; t < inputs.size(); ++t) v += input_cost_at(g, s, static_cast<int>(t), inputs[t]);
    return v;
}

/// R_t = diag(5|z|) + I per node, z standard normal, drawn in node order.
inline std::vector<NodeCost> random_input_cost(const std::vector<int>& input_dims, CounterRng& rng) {
    std::vector<NodeCost> out;
    out.reserve(input_dims.size());
    for (int d : input_dims) {
        Eigen::VectorXd diag(d);
        for (int r = 0; r < d; ++r) diag[r] = 5.0 * std::abs(rng.normal()) + 1.0;
        out.emplace_back(Eigen::MatrixXd(diag.asDiagonal()));
    }
    return out;
}

}  // namespace netpc
