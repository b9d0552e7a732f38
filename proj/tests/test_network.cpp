#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "netpc/network.hpp"
#include "test_util.hpp"

using namespace netpc;

TEST(Graph, MeshFiveByFiveHasDiameterEight) {
    const auto g = mesh_graph(5, 2, 1);
    EXPECT_EQ(g.node_count(), 25);
    EXPECT_EQ(g.diameter(), 8);
    EXPECT_TRUE(g.connected());
}

TEST(Graph, EdgelessGraphIsDisconnected) {
    const auto g = build_graph(3, {}, {1, 1, 1}, {1, 1, 1});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_EQ(g.distance(i, j), i == j ? 0 : kUnreachable);
    EXPECT_FALSE(g.connected());
}

TEST(Graph, PathDistance) {
    const auto g = path_graph(3, 1, 1);
    EXPECT_EQ(g.distance(0, 2), 2);
    EXPECT_EQ(g.distance(2, 0), 2);
}

TEST(Graph, RejectsBadInput) {
    EXPECT_THROW(build_graph(3, {{0, 1}}, {1, 1}, {1, 1, 1}), DimensionError);
    EXPECT_THROW(build_graph(3, {{0, 1}, {1, 0}}, {1, 1, 1}, {1, 1, 1}), DimensionError);
    EXPECT_THROW(build_graph(3, {{1, 1}}, {1, 1, 1}, {1, 1, 1}), DimensionError);
    EXPECT_THROW(build_graph(3, {{0, 3}}, {1, 1, 1}, {1, 1, 1}), DimensionError);
    EXPECT_THROW(build_graph(2, {}, {0, 1}, {1, 1}), DimensionError);
}

TEST(Graph, DistanceMatrixProperties) {
    CounterRng rng(derive_seed(11, "graph-props"));
    for (int trial = 0; trial < 40; ++trial) {
        const int n = testutil::uniform_int(rng, 1, 12);
        const auto g = testutil::random_sparse_graph(rng, n, 0.25);
        std::set<std::pair<int, int>> edges(g.edges().begin(), g.edges().end());
        for (int i = 0; i < n; ++i) {
            EXPECT_EQ(g.distance(i, i), 0);
            for (int j = 0; j < n; ++j) {
                EXPECT_EQ(g.distance(i, j), g.distance(j, i));
                EXPECT_EQ(g.distance(i, j) == 1, edges.count({std::min(i, j), std::max(i, j)}) == 1);
                for (int k = 0; k < n; ++k) {
                    const long dij = g.distance(i, j), dik = g.distance(i, k), dkj = g.distance(k, j);
                    if (dik != kUnreachable && dkj != kUnreachable) { EXPECT_LE(dij, dik + dkj); }
                }
            }
        }
    }
}

TEST(Khop, ZeroRadius) {
    const auto g = mesh_graph(5, 2, 1);
    const auto ts = khop(g, 7, 0);
    EXPECT_EQ(ts.state_nodes, std::vector<NodeId>{7});
    EXPECT_EQ(ts.boundary_nodes, std::vector<NodeId>{7});
}

TEST(Khop, RadiusAtDiameterCoversGraph) {
    const auto g = mesh_graph(5, 2, 1);
    for (NodeId i : {0, 12, 24}) {
        const auto ts = khop(g, i, g.diameter());
        EXPECT_EQ(ts.state_nodes.size(), 25u);
        EXPECT_EQ(ts.input_nodes.size(), 25u);
    }
}

TEST(Khop, MeshCornerRadiusOne) {
    const auto g = mesh_graph(5, 2, 1);
    const auto ts = khop(g, 0, 1);
    EXPECT_EQ(ts.state_nodes, (std::vector<NodeId>{0, 1, 5}));
    EXPECT_EQ(ts.input_nodes, (std::vector<NodeId>{0, 1, 2, 5, 6, 10}));
}

TEST(Khop, SetInvariants) {
    CounterRng rng(derive_seed(11, "khop-props"));
    for (int trial = 0; trial < 30; ++trial) {
        const auto g = testutil::random_graph(rng, testutil::uniform_int(rng, 1, 15), 0.15, 2, 2);
        for (NodeId i = 0; i < g.node_count(); ++i) {
            for (int kappa = 0; kappa <= 4; ++kappa) {
                const auto ts = khop(g, i, kappa);
                EXPECT_TRUE(std::is_sorted(ts.state_nodes.begin(), ts.state_nodes.end()));
                EXPECT_TRUE(ts.has_state_node(i));
                for (NodeId j = 0; j < g.node_count(); ++j) {
                    const int d = g.distance(i, j);
                    EXPECT_EQ(ts.has_state_node(j), d <= kappa);
                    const bool on_boundary = std::binary_search(ts.boundary_nodes.begin(), ts.boundary_nodes.end(), j);
                    EXPECT_EQ(on_boundary, d == kappa);
                    EXPECT_EQ(ts.has_input_node(j), d <= kappa + 1);
                }
                for (NodeId j : ts.state_nodes) EXPECT_TRUE(ts.has_input_node(j));
            }
        }
    }
}

namespace {

Eigen::MatrixXd chain_a(const NetworkGraph& g, CounterRng& rng) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.total_state_dim(), g.total_state_dim());
    for (NodeId i = 0; i < g.node_count(); ++i) {
        a.block(g.state_offset(i), g.state_offset(i), g.state_dim(i), g.state_dim(i)) =
            testutil::random_matrix(rng, g.state_dim(i), g.state_dim(i));
        for (NodeId j : g.neighbors(i))
            a.block(g.state_offset(i), g.state_offset(j), g.state_dim(i), g.state_dim(j)) =
                testutil::random_matrix(rng, g.state_dim(i), g.state_dim(j));
    }
    return a;
}

}  // namespace

TEST(Truncate, FullRadiusIsIdentity) {
    CounterRng rng(5);
    const auto g = mesh_graph(3, 2, 1);
    const Eigen::MatrixXd a = chain_a(g, rng);
    const auto t = truncate(g, a, BlockKind::State, BlockKind::State, khop(g, 4, g.diameter()));
    EXPECT_EQ(t.expand(g), a);
    EXPECT_EQ(t.values, a);
}

TEST(Truncate, PathCenterZeroRadius) {
    CounterRng rng(6);
    const auto g = path_graph(3, 1, 1);
    const Eigen::MatrixXd a = chain_a(g, rng);
    const auto t = truncate(g, a, BlockKind::State, BlockKind::State, khop(g, 0, 0));
    EXPECT_EQ(t.row_nodes, std::vector<NodeId>{0});
    EXPECT_EQ(t.col_nodes, (std::vector<NodeId>{0, 1}));
    const Eigen::MatrixXd full = t.expand(g);
    EXPECT_EQ(full.row(0), a.row(0));
    EXPECT_TRUE(full.bottomRows(2).isZero(0.0));
}

TEST(Truncate, ZeroStaysZero) {
    const auto g = mesh_graph(3, 2, 1);
    const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(g.total_state_dim(), g.total_input_dim());
    const auto t = truncate(g, z, BlockKind::State, BlockKind::Input, khop(g, 4, 1));
    EXPECT_TRUE(t.expand(g).isZero(0.0));
}

TEST(Truncate, ShapeMismatch) {
    const auto g = mesh_graph(3, 2, 1);
    EXPECT_THROW(truncate(g, Eigen::MatrixXd::Zero(3, 3), BlockKind::State, BlockKind::State, khop(g, 0, 1)),
                 DimensionError);
    EXPECT_THROW(truncate(g, Eigen::VectorXd::Zero(4), BlockKind::State, khop(g, 0, 1)), DimensionError);
}

TEST(Truncate, IdempotentMonotoneAndRoundTrip) {
    CounterRng rng(derive_seed(11, "truncate-props"));
    for (int trial = 0; trial < 25; ++trial) {
        const auto g = testutil::random_graph(rng, testutil::uniform_int(rng, 2, 10), 0.2, 2, 2);
        const Eigen::MatrixXd a = chain_a(g, rng);
        const Eigen::VectorXd v = rng.normal_vector(g.total_state_dim());
        const NodeId i = testutil::uniform_int(rng, 0, g.node_count() - 1);
        for (int kappa = 0; kappa <= 3; ++kappa) {
            const auto ts = khop(g, i, kappa);
            const auto once = truncate(g, a, BlockKind::State, BlockKind::State, ts);
            const Eigen::MatrixXd full_once = once.expand(g);
            const auto twice = truncate(g, full_once, BlockKind::State, BlockKind::State, ts);
            EXPECT_EQ(twice.expand(g), full_once);
            EXPECT_EQ(twice.values, once.values);

            const auto bigger = truncate(g, a, BlockKind::State, BlockKind::State, khop(g, i, kappa + 1)).expand(g);
            for (Eigen::Index r = 0; r < a.rows(); ++r)
                for (Eigen::Index c = 0; c < a.cols(); ++c)
                    if (full_once(r, c) != 0.0) { EXPECT_EQ(full_once(r, c), bigger(r, c)); }

            const auto tv = truncate(g, v, BlockKind::State, ts);
            const Eigen::VectorXd ev = tv.expand(g).col(0);
            EXPECT_EQ(truncate(g, ev, BlockKind::State, ts).values, tv.values);
            for (NodeId j = 0; j < g.node_count(); ++j) {
                const auto seg = ev.segment(g.state_offset(j), g.state_dim(j));
                if (ts.has_state_node(j)) { EXPECT_EQ(seg, v.segment(g.state_offset(j), g.state_dim(j))); }
                else EXPECT_TRUE(seg.isZero(0.0));
            }
        }
    }
}

TEST(GraphIo, RoundTrip) {
    CounterRng rng(derive_seed(11, "graph-io"));
    const auto g = testutil::random_graph(rng, 9, 0.3, 3, 2);
    std::stringstream ss;
    write_graph(ss, g);
    const auto back = read_graph(ss);
    EXPECT_EQ(back.edges(), g.edges());
    EXPECT_EQ(back.state_dims(), g.state_dims());
    EXPECT_EQ(back.input_dims(), g.input_dims());
}

TEST(GraphIo, Malformed) {
    std::istringstream missing("0 1\n");
    EXPECT_THROW(read_graph(missing), ConfigError);
    std::istringstream bad("nodes 2\n0 1 1\n1 1 1\n0 1 2 3\n");
    EXPECT_THROW(read_graph(bad), ConfigError);
    std::istringstream nodims("nodes 2\n0 1 1\n0 1\n");
    EXPECT_THROW(read_graph(nodims), DimensionError);
}
