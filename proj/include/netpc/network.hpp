#pragma once

// Graph topology, k-hop neighborhoods and the (i, kappa)-truncation of block objects.

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netpc/error.hpp"

namespace netpc {

using NodeId = int;
using Edge = std::pair<NodeId, NodeId>;

/// Distance sentinel for node pairs with no connecting path.
inline constexpr int kUnreachable = std::numeric_limits<int>::max();

/// Which per-node dimension indexes a block row or column.
enum class BlockKind { State, Input };

/// Undirected graph with per-node state/input dimensions and all-pairs hop distances.
/// Immutable after construction.
class NetworkGraph {
public:
    NetworkGraph(int node_count, std::vector<Edge> edges, std::vector<int> state_dims,
                 std::vector<int> input_dims)
        : n_(node_count), edges_(std::move(edges)), state_dims_(std::move(state_dims)),
          input_dims_(std::move(input_dims)) {
        if (n_ <= 0) throw DimensionError("graph must have at least one node");
        if (static_cast<int>(state_dims_.size()) != n_ || static_cast<int>(input_dims_.size()) != n_) {
            throw DimensionError("dimension lists must have one entry per node");
        }
        for (int i = 0; i < n_; ++i) {
            if (state_dims_[i] <= 0) throw DimensionError("state dimension must be positive");
            if (input_dims_[i] < 0) throw DimensionError("input dimension must be non-negative");
        }
        neighbors_.assign(n_, {});
        for (auto& [a, b] : edges_) {
            if (a < 0 || b < 0 || a >= n_ || b >= n_) throw DimensionError("edge references unknown node");
            if (a == b) throw DimensionError("self-loop edges are not allowed");
            if (a > b) std::swap(a, b);
        }
        std::sort(edges_.begin(), edges_.end());
        if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end()) {
            throw DimensionError("duplicate edge");
        }
        for (const auto& [a, b] : edges_) {
            neighbors_[a].push_back(b);
            neighbors_[b].push_back(a);
        }
        for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());

        dist_.assign(static_cast<std::size_t>(n_) * n_, kUnreachable);
        std::vector<int> queue(n_);
        for (int s = 0; s < n_; ++s) {
            int* row = &dist_[static_cast<std::size_t>(s) * n_];
            row[s] = 0;
            int head = 0, tail = 0;
            queue[tail++] = s;
            while (head < tail) {
                const int u = queue[head++];
                for (int v : neighbors_[u]) {
                    if (row[v] == kUnreachable) {
                        row[v] = row[u] + 1;
                        queue[tail++] = v;
                    }
                }
            }
        }

        state_offsets_.resize(n_ + 1, 0);
        input_offsets_.resize(n_ + 1, 0);
        for (int i = 0; i < n_; ++i) {
            state_offsets_[i + 1] = state_offsets_[i] + state_dims_[i];
            input_offsets_[i + 1] = input_offsets_[i] + input_dims_[i];
        }
    }

    int node_count() const { return n_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<int>& neighbors(NodeId i) const { return neighbors_.at(i); }

    int distance(NodeId i, NodeId j) const { return dist_[static_cast<std::size_t>(i) * n_ + j]; }
    bool adjacent(NodeId i, NodeId j) const { return distance(i, j) == 1; }

    /// Largest finite distance.
    int diameter() const {
        int d = 0;
        for (int v : dist_)
            if (v != kUnreachable) d = std::max(d, v);
        return d;
    }
    bool connected() const {
        return std::none_of(dist_.begin(), dist_.end(), [](int v) { return v == kUnreachable; });
    }

    int state_dim(NodeId i) const { return state_dims_.at(i); }
    int input_dim(NodeId i) const { return input_dims_.at(i); }
    int dim(NodeId i, BlockKind k) const { return k == BlockKind::State ? state_dim(i) : input_dim(i); }
    const std::vector<int>& state_dims() const { return state_dims_; }
    const std::vector<int>& input_dims() const { return input_dims_; }

    int state_offset(NodeId i) const { return state_offsets_.at(i); }
    int input_offset(NodeId i) const { return input_offsets_.at(i); }
    int offset(NodeId i, BlockKind k) const { return k == BlockKind::State ? state_offset(i) : input_offset(i); }
    int total_state_dim() const { return state_offsets_.back(); }
    int total_input_dim() const { return input_offsets_.back(); }
    int total_dim(BlockKind k) const { return k == BlockKind::State ? total_state_dim() : total_input_dim(); }

private:
    int n_;
    std::vector<Edge> edges_;
    std::vector<int> state_dims_;
    std::vector<int> input_dims_;
    std::vector<std::vector<NodeId>> neighbors_;
    std::vector<int> dist_;
    std::vector<int> state_offsets_;
    std::vector<int> input_offsets_;
};

inline NetworkGraph build_graph(int node_count, std::vector<Edge> edges, std::vector<int> state_dims,
                                std::vector<int> input_dims) {
    return NetworkGraph(node_count, std::move(edges), std::move(state_dims), std::move(input_dims));
}

/// n x n grid, node id = row * n + col, 4-neighbor edges.
inline NetworkGraph mesh_graph(int n, int state_dim, int input_dim) {
    if (n < 1) throw DimensionError("mesh side must be positive");
    std::vector<Edge> edges;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const int id = r * n + c;
            if (c + 1 < n) edges.emplace_back(id, id + 1);
            if (r + 1 < n) edges.emplace_back(id, id + n);
        }
    }
    return NetworkGraph(n * n, std::move(edges), std::vector<int>(n * n, state_dim),
                        std::vector<int>(n * n, input_dim));
}

inline NetworkGraph path_graph(int n, int state_dim, int input_dim) {
    std::vector<Edge> edges;
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    return NetworkGraph(n, std::move(edges), std::vector<int>(n, state_dim), std::vector<int>(n, input_dim));
}

/// The kappa-hop neighborhood of a node and the input support it induces.
/// All node lists are ascending by id.
struct TruncationSet {
    NodeId center = 0;
    int radius = 0;
    std::vector<NodeId> state_nodes;
    std::vector<NodeId> input_nodes;
    std::vector<NodeId> boundary_nodes;

    bool has_state_node(NodeId j) const { return std::binary_search(state_nodes.begin(), state_nodes.end(), j); }
    bool has_input_node(NodeId j) const { return std::binary_search(input_nodes.begin(), input_nodes.end(), j); }
};

inline TruncationSet khop(const NetworkGraph& g, NodeId i, int kappa) {
    if (i < 0 || i >= g.node_count()) throw DimensionError("khop: node out of range");
    if (kappa < 0) throw DimensionError("khop: radius must be non-negative");
    TruncationSet ts;
    ts.center = i;
    ts.radius = kappa;
    std::vector<char> in_input(g.node_count(), 0);
    for (NodeId j = 0; j < g.node_count(); ++j) {
        const int d = g.distance(i, j);
        if (d == kUnreachable || d > kappa) continue;
        ts.state_nodes.push_back(j);
        if (d == kappa) ts.boundary_nodes.push_back(j);
        in_input[j] = 1;
        for (NodeId l : g.neighbors(j)) in_input[l] = 1;
    }
    for (NodeId j = 0; j < g.node_count(); ++j)
        if (in_input[j]) ts.input_nodes.push_back(j);
    return ts;
}

/// Scalar indices covered by the given nodes, in node order.
inline std::vector<int> scalar_indices(const NetworkGraph& g, const std::vector<NodeId>& nodes, BlockKind kind) {
    std::vector<int> idx;
    for (NodeId j : nodes) {
        const int off = g.offset(j, kind);
        for (int r = 0; r < g.dim(j, kind); ++r) idx.push_back(off + r);
    }
    return idx;
}

/// Reduced representation of M^{(i,kappa)}: only the block rows of the neighborhood's
/// state nodes are stored, over the column support of those rows (the neighborhood's
/// input nodes). For a vector, col_nodes is empty and values has one column.
struct TruncatedBlock {
    BlockKind row_kind = BlockKind::State;
    BlockKind col_kind = BlockKind::State;
    bool is_vector = false;
    std::vector<NodeId> row_nodes;
    std::vector<NodeId> col_nodes;
    std::vector<int> row_index;
    std::vector<int> col_index;
    Eigen::MatrixXd values;

    /// Embed back into full dimension with zero rows outside the neighborhood.
    Eigen::MatrixXd expand(const NetworkGraph& g) const {
        const int rows = g.total_dim(row_kind);
        const int cols = is_vector ? 1 : g.total_dim(col_kind);
        Eigen::MatrixXd full = Eigen::MatrixXd::Zero(rows, cols);
        for (std::size_t r = 0; r < row_index.size(); ++r) {
            if (is_vector) {
                full(row_index[r], 0) = values(r, 0);
            } else {
                for (std::size_t c = 0; c < col_index.size(); ++c) full(row_index[r], col_index[c]) = values(r, c);
            }
        }
        return full;
    }
};

inline TruncatedBlock truncate(const NetworkGraph& g, const Eigen::MatrixXd& m, BlockKind row_kind,
                               BlockKind col_kind, const TruncationSet& ts) {
    if (m.rows() != g.total_dim(row_kind) || m.cols() != g.total_dim(col_kind)) {
        throw DimensionError("truncate: matrix shape does not match graph dimensions");
    }
    TruncatedBlock out;
    out.row_kind = row_kind;
    out.col_kind = col_kind;
    out.row_nodes = ts.state_nodes;
    out.col_nodes = ts.input_nodes;
    out.row_index = scalar_indices(g, out.row_nodes, row_kind);
    out.col_index = scalar_indices(g, out.col_nodes, col_kind);
    for (NodeId j : out.row_nodes) {
        for (NodeId l = 0; l < g.node_count(); ++l) {
            if (ts.has_input_node(l)) continue;
            const auto blk = m.block(g.offset(j, row_kind), g.offset(l, col_kind), g.dim(j, row_kind), g.dim(l, col_kind));
            if (blk.size() > 0 && blk.cwiseAbs().maxCoeff() != 0.0) {
                throw DimensionError("truncate: matrix has a nonzero block outside the graph support");
            }
        }
    }
    out.values = m(out.row_index, out.col_index);
    return out;
}

inline TruncatedBlock truncate(const NetworkGraph& g, const Eigen::VectorXd& v, BlockKind kind,
                               const TruncationSet& ts) {
    if (v.size() != g.total_dim(kind)) throw DimensionError("truncate: vector length does not match graph");
    TruncatedBlock out;
    out.row_kind = kind;
    out.is_vector = true;
    out.row_nodes = ts.state_nodes;
    out.row_index = scalar_indices(g, out.row_nodes, kind);
    out.values = v(out.row_index).eval();
    return out;
}

// ---- edge-list text format -------------------------------------------------------
//
//   nodes N
//   i n_x n_u        (one line per node)
//   i j              (one line per edge)
//
// Lines starting with '#' are comments; dims and edge lines are told apart by token count.

inline NetworkGraph read_graph(std::istream& in) {
    int n = -1;
    std::vector<int> sdims, idims;
    std::vector<char> seen;
    std::vector<Edge> edges;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        auto bad = [&](const std::string& why) {
            return ConfigError("graph file line " + std::to_string(lineno) + ": " + why);
        };
        try {
            if (tok[0] == "nodes") {
                if (tok.size() != 2 || n != -1) throw bad("expected a single 'nodes N' header");
                n = std::stoi(tok[1]);
                if (n <= 0) throw bad("node count must be positive");
                sdims.assign(n, 0);
                idims.assign(n, 0);
                seen.assign(n, 0);
                continue;
            }
            if (n == -1) throw bad("missing 'nodes N' header");
            if (tok.size() == 3) {
                const int i = std::stoi(tok[0]);
                if (i < 0 || i >= n) throw bad("node id out of range");
                if (seen[i]) throw bad("dims given twice for node " + tok[0]);
                seen[i] = 1;
                sdims[i] = std::stoi(tok[1]);
                idims[i] = std::stoi(tok[2]);
            } else if (tok.size() == 2) {
                edges.emplace_back(std::stoi(tok[0]), std::stoi(tok[1]));
            } else {
                throw bad("expected 'i n_x n_u' or 'i j'");
            }
        } catch (const std::logic_error&) {
            throw bad("malformed number");
        }
    }
    if (n == -1) throw ConfigError("graph file: missing 'nodes N' header");
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw DimensionError("graph file: dims missing for some node");
    return NetworkGraph(n, std::move(edges), std::move(sdims), std::move(idims));
}

inline void write_graph(std::ostream& out, const NetworkGraph& g) {
    out << "nodes " << g.node_count() << '\n';
    for (int i = 0; i < g.node_count(); ++i) out << i << ' ' << g.state_dim(i) << ' ' << g.input_dim(i) << '\n';
    for (const auto& [a, b] : g.edges()) out << a << ' ' << b << '\n';
}

inline NetworkGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open graph file: " + path);
    return read_graph(in);
}

}  // namespace netpc
