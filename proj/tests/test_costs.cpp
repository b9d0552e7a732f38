#include <cmath>

#include <gtest/gtest.h>

#include "netpc/costs.hpp"
#include "test_util.hpp"

using namespace netpc;

TEST(NodeCost, QuadraticValue) {
    const auto c = NodeCost::quadratic(Eigen::MatrixXd::Identity(2, 2));
    EXPECT_DOUBLE_EQ(c.value(Eigen::Vector2d(3, 4)), 12.5);
}

TEST(NodeCost, OriginNormalization) {
    Eigen::MatrixXd m(2, 2);
    m << 2, 0.5, 0.5, 1;
    for (double scale : {0.0, 0.7}) {
        const NodeCost c(m, scale);
        const auto e = eval(c, Eigen::Vector2d::Zero());
        EXPECT_EQ(e.value, 0.0);
        EXPECT_TRUE(e.gradient.isZero(0.0));
        EXPECT_LE((e.hessian - (m + scale * Eigen::MatrixXd::Identity(2, 2))).norm(), 1e-15);
    }
}

TEST(NodeCost, LogcoshGradientAtHalf) {
    const auto c = NodeCost::quadratic_logcosh(Eigen::MatrixXd::Constant(1, 1, 1.5), 0.8);
    const double h = 1e-6;
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 0.5);
    const double fd = (c.value((z.array() + h).matrix()) - c.value((z.array() - h).matrix())) / (2 * h);
    EXPECT_NEAR(c.gradient(z)[0], fd, 1e-6 * std::abs(fd));
}

TEST(NodeCost, RejectsInvalidMatrices) {
    Eigen::MatrixXd asym(2, 2);
    asym << 1, 0.5, 0, 1;
    EXPECT_THROW(NodeCost::quadratic(asym), DimensionError);
    EXPECT_THROW(NodeCost::quadratic(Eigen::Vector2d(1, -1).asDiagonal().toDenseMatrix()), DimensionError);
    EXPECT_THROW(NodeCost(Eigen::MatrixXd::Identity(2, 2), -1.0), DimensionError);
    EXPECT_THROW(NodeCost::quadratic(Eigen::MatrixXd::Identity(2, 3)), DimensionError);
    EXPECT_THROW(NodeCost::scaled_identity(2, 1.0).value(Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(NodeCost, ReportedConstants) {
    Eigen::MatrixXd m = Eigen::Vector3d(1, 2, 4).asDiagonal();
    const NodeCost c(m, 0.5);
    EXPECT_NEAR(c.mu(), 1.0, 1e-14);
    EXPECT_NEAR(c.lipschitz(), 4.5, 1e-14);
    EXPECT_FALSE(c.isotropic());
    EXPECT_TRUE(NodeCost::scaled_identity(3, 10).isotropic());
}

TEST(NodeCostProperty, BregmanBoundsGradientAndSign) {
    CounterRng rng(derive_seed(7, "cost-props"));
    for (int kind = 0; kind < 2; ++kind) {
        for (int trial = 0; trial < 100; ++trial) {
            const int d = testutil::uniform_int(rng, 1, 4);
            const NodeCost c = testutil::random_cost(rng, d, kind == 1 ? 0.3 + rng.uniform() : 0.0);
            const Eigen::VectorXd z = 2.0 * rng.normal_vector(d);
            const Eigen::VectorXd zp = 2.0 * rng.normal_vector(d);

            const double breg = c.value(z) - c.value(zp) - c.gradient(zp).dot(z - zp);
            const double dist2 = (z - zp).squaredNorm();
            EXPECT_GE(breg, 0.5 * c.mu() * dist2 - 1e-10 * (1 + dist2));
            EXPECT_LE(breg, 0.5 * c.lipschitz() * dist2 + 1e-10 * (1 + dist2));

            const double h = 1e-5;
            const Eigen::VectorXd g = c.gradient(z);
            for (int r = 0; r < d; ++r) {
                Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
                e[r] = h;
                const double fd = (c.value(z + e) - c.value(z - e)) / (2 * h);
                EXPECT_LE(std::abs(fd - g[r]), 1e-5 * std::max(1.0, std::abs(g[r])));
            }
            EXPECT_GE(c.value(z), 0.0);
            EXPECT_EQ(c.value(Eigen::VectorXd::Zero(d)), 0.0);
        }
    }
}

TEST(TotalCost, ZeroTrajectory) {
    CounterRng rng(1);
    const auto g = mesh_graph(2, 2, 1);
    const auto s = testutil::random_schedule(rng, g, 3);
    std::vector<Eigen::VectorXd> x(4, Eigen::VectorXd::Zero(8)), u(3, Eigen::VectorXd::Zero(4));
    EXPECT_EQ(total_cost(g, s, x, u), 0.0);
}

TEST(TotalCost, SingleStepHandSum) {
    const auto g = build_graph(2, {{0, 1}}, {1, 1}, {1, 0});
    std::vector<std::vector<NodeCost>> st(2, {NodeCost::scaled_identity(1, 1.0), NodeCost::scaled_identity(1, 1.0)});
    std::vector<std::vector<NodeCost>> in(1, {NodeCost::scaled_identity(1, 1.0), NodeCost::scaled_identity(0, 1.0)});
    const CostSchedule s(st, in, {NodeCost::scaled_identity(1, 1.0), NodeCost::scaled_identity(1, 1.0)});
    const std::vector<Eigen::VectorXd> x{Eigen::Vector2d(1, 2), Eigen::Vector2d(0.5, -1)};
    const std::vector<Eigen::VectorXd> u{Eigen::VectorXd::Constant(1, 1.0)};
    // f_0 = (1 + 4)/2, f_1 = (0.25 + 1)/2, c_1 = 1/2
    EXPECT_DOUBLE_EQ(total_cost(g, s, x, u), 2.5 + 0.625 + 0.5);
}

TEST(TotalCost, LengthMismatch) {
    CounterRng rng(1);
    const auto g = mesh_graph(2, 1, 1);
    const auto s = testutil::random_schedule(rng, g, 2);
    std::vector<Eigen::VectorXd> x(2, Eigen::VectorXd::Zero(4)), u(2, Eigen::VectorXd::Zero(4));
    EXPECT_THROW(total_cost(g, s, x, u), DimensionError);
}

TEST(TotalCost, SeparableOverTruncationSet) {
    CounterRng rng(derive_seed(7, "separable"));
    const auto g = mesh_graph(3, 2, 1);
    const auto s = testutil::random_schedule(rng, g, 2);
    const auto ts = khop(g, 4, 1);
    std::vector<Eigen::VectorXd> x, u;
    for (int t = 0; t < 3; ++t) {
        Eigen::VectorXd xt = Eigen::VectorXd::Zero(g.total_state_dim());
        for (NodeId j : ts.state_nodes) xt.segment(g.state_offset(j), 2) = rng.normal_vector(2);
        x.push_back(xt);
    }
    for (int t = 0; t < 2; ++t) {
        Eigen::VectorXd ut = Eigen::VectorXd::Zero(g.total_input_dim());
        for (NodeId j : ts.state_nodes) ut[g.input_offset(j)] = rng.normal();
        u.push_back(ut);
    }
    double restricted = 0.0;
    for (int t = 0; t < 3; ++t)
        for (NodeId j : ts.state_nodes) restricted += s.state(t, j).value(x[t].segment(g.state_offset(j), 2));
    for (int t = 0; t < 2; ++t)
        for (NodeId j : ts.state_nodes) restricted += s.input(t, j).value(u[t].segment(g.input_offset(j), 1));
    EXPECT_NEAR(total_cost(g, s, x, u), restricted, 1e-12 * (1 + restricted));
}

TEST(CostSchedule, ShapeChecks) {
    EXPECT_THROW(CostSchedule({{NodeCost::scaled_identity(1, 1)}}, {{NodeCost::scaled_identity(1, 1)}},
                              {NodeCost::scaled_identity(1, 1)}),
                 DimensionError);
}

TEST(RandomInputCost, EntriesAndDeterminism) {
    CounterRng a(derive_seed(9, "input_cost", {0}));
    CounterRng b(derive_seed(9, "input_cost", {0}));
    const auto ra = random_input_cost({1, 2, 3}, a);
    const auto rb = random_input_cost({1, 2, 3}, b);
    ASSERT_EQ(ra.size(), 3u);
    for (std::size_t i = 0; i < ra.size(); ++i) {
        EXPECT_EQ(ra[i].matrix(), rb[i].matrix());
        const Eigen::MatrixXd& m = ra[i].matrix();
        EXPECT_TRUE((m - Eigen::MatrixXd(m.diagonal().asDiagonal())).isZero(0.0));
        EXPECT_GE(m.diagonal().minCoeff(), 1.0);
    }
    // 5|z| + 1 reproduced from the same stream.
    CounterRng c(derive_seed(9, "input_cost", {0}));
    EXPECT_DOUBLE_EQ(ra[0].matrix()(0, 0), 5.0 * std::abs(c.normal()) + 1.0);
}
