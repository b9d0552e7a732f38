#pragma once

// Reference solver for the test suite. It reads the OcpProblem fields directly, orders the
// unknowns as (y_0..y_l, v_0..v_{l-1}), and eliminates the equality constraints with a
// null-space basis from a column-pivoted QR of E'. Nothing here touches the KKT assembly
// or the banded factorization under test.

#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "netpc/ocp.hpp"

namespace oracle {

struct Solution {
    std::vector<Eigen::VectorXd> states;
    std::vector<Eigen::VectorXd> inputs;
    double objective = 0.0;
};

struct Layout {
    int n, m, l;
    int y(int tau) const { return tau * n; }
    int v(int tau) const { return (l + 1) * n + tau * m; }
    int size() const { return (l + 1) * n + l * m; }
};

inline void add_terms(const std::vector<netpc::CostTerm>& terms, int base, const Eigen::VectorXd& z, Eigen::MatrixXd* h,
                      Eigen::VectorXd* g, double* f) {
    for (const auto& c : terms) {
        const int d = c.cost.dim();
        if (d == 0) continue;
        const Eigen::VectorXd zi = z.segment(base + c.offset, d);
        if (h) h->block(base + c.offset, base + c.offset, d, d) += c.cost.hessian(zi);
        if (g) g->segment(base + c.offset, d) += c.cost.gradient(zi);
        if (f) *f += c.cost.value(zi);
    }
}

/// Cost value, gradient and Hessian at z in the oracle layout.
inline void evaluate(const netpc::OcpProblem& p, const Layout& L, const Eigen::VectorXd& z, Eigen::MatrixXd* h,
                     Eigen::VectorXd* g, double* f) {
    if (h) h->setZero(L.size(), L.size());
    if (g) g->setZero(L.size());
    if (f) *f = 0.0;
    for (int tau = 0; tau < L.l; ++tau) {
        add_terms(p.stage_state_costs[tau], L.y(tau), z, h, g, f);
        add_terms(p.stage_input_costs[tau], L.v(tau), z, h, g, f);
    }
    add_terms(p.terminal_costs(), L.y(L.l), z, h, g, f);
}

inline Solution solve(const netpc::OcpProblem& p) {
    const Layout L{p.state_dim(), p.input_dim(), p.horizon};
    const int N = L.size();
    const bool fixed = p.fixed_terminal();
    const int rows = (L.l + 1 + (fixed ? 1 : 0)) * L.n;
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(rows, N);
    Eigen::VectorXd e(rows);
    E.block(0, L.y(0), L.n, L.n).setIdentity();
    e.head(L.n) = p.init_state;
    for (int tau = 0; tau < L.l; ++tau) {
        const int r = (tau + 1) * L.n;
        E.block(r, L.y(tau + 1), L.n, L.n).setIdentity();
        E.block(r, L.y(tau), L.n, L.n) = -p.A;
        if (L.m > 0) E.block(r, L.v(tau), L.n, L.m) = -p.B;
        e.segment(r, L.n) = p.disturbances[tau];
    }
    if (fixed) {
        const int r = (L.l + 1) * L.n;
        E.block(r, L.y(L.l), L.n, L.n).setIdentity();
        e.segment(r, L.n) = std::get<netpc::FixedTerminal>(p.terminal).target;
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(E.transpose());
    const Eigen::Index rank = qr.rank();
    const Eigen::MatrixXd Q = qr.householderQ();
    const Eigen::MatrixXd Z = Q.rightCols(N - rank);
    const Eigen::VectorXd zp = E.completeOrthogonalDecomposition().solve(e);
    if ((E * zp - e).norm() > 1e-9 * std::max(1.0, e.norm())) throw std::runtime_error("oracle: infeasible constraints");

    // Newton on the reduced unconstrained problem (a single step when costs are quadratic).
    Eigen::VectorXd w = Eigen::VectorXd::Zero(Z.cols());
    Eigen::MatrixXd h;
    Eigen::VectorXd g;
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd z = zp + Z * w;
        evaluate(p, L, z, &h, &g, nullptr);
        const Eigen::VectorXd rg = Z.transpose() * g;
        if (rg.lpNorm<Eigen::Infinity>() < 1e-13 * std::max(1.0, z.lpNorm<Eigen::Infinity>())) break;
        const Eigen::MatrixXd rh = Z.transpose() * h * Z;
        const Eigen::VectorXd step = rh.ldlt().solve(rg);
        w -= step;
        if (step.lpNorm<Eigen::Infinity>() < 1e-15 * std::max(1.0, w.lpNorm<Eigen::Infinity>())) break;
    }
    const Eigen::VectorXd z = zp + Z * w;
    Solution s;
    for (int tau = 0; tau <= L.l; ++tau) s.states.push_back(z.segment(L.y(tau), L.n));
    for (int tau = 0; tau < L.l; ++tau) s.inputs.push_back(z.segment(L.v(tau), L.m));
    evaluate(p, L, z, nullptr, nullptr, &s.objective);
    return s;
}

/// Largest per-coordinate primal difference between a solver result and the oracle.
inline double max_primal_gap(const netpc::OcpSolution& a, const Solution& b) {
    double worst = 0.0;
    for (std::size_t t = 0; t < a.states.size(); ++t) worst = std::max(worst, (a.states[t] - b.states[t]).lpNorm<Eigen::Infinity>());
    for (std::size_t t = 0; t < a.inputs.size(); ++t) {
        if (a.inputs[t].size() > 0) worst = std::max(worst, (a.inputs[t] - b.inputs[t]).lpNorm<Eigen::Infinity>());
    }
    return worst;
}

}  // namespace oracle
