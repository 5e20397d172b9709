#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensor.hpp"

namespace gdpo {

// Undirected graph with categorical node and edge attributes. Edge category 0
// means "no edge"; the diagonal is always category 0 (no self loops). Storage
// is by category index, so the one-hot representation invariants hold by
// construction; symmetry is enforced by mirroring on every write.
class Graph {
 public:
  Graph() = default;
  Graph(int n, int node_cats, int edge_cats);

  int n() const { return n_; }
  int node_cats() const { return a_; }
  int edge_cats() const { return b_; }

  int node_cat(int i) const { return node_cat_[static_cast<size_t>(i)]; }
  void set_node_cat(int i, int c);

  int edge_cat(int i, int j) const {
    return edge_cat_[static_cast<size_t>(i) * n_ + j];
  }
  void set_edge_cat(int i, int j, int c);  // mirrors to (j,i)

  bool has_edge(int i, int j) const { return edge_cat(i, j) != 0; }
  int degree(int i) const;
  int edge_count() const;  // unordered pairs with category != 0
  std::vector<int> neighbors(int i) const;

  void validate() const;  // throws Error on any invariant violation

  bool operator==(const Graph&) const = default;

  nlohmann::json to_json() const;
  static Graph from_json(const nlohmann::json& j);

 private:
  int n_ = 0, a_ = 1, b_ = 2;
  std::vector<int> node_cat_;  // n
  std::vector<int> edge_cat_;  // n*n, symmetric, zero diagonal
};

struct GraphBatch {
  int node_cats = 1;
  int edge_cats = 2;
  std::vector<Graph> graphs;

  size_t size() const { return graphs.size(); }
  bool empty() const { return graphs.empty(); }
  void push(Graph g);  // validates shared category counts
  void validate() const;
};

// ---- graph algorithms -------------------------------------------------

bool is_connected(const Graph& g);

// Connected, exactly one maximal clique of the given size, and contracting
// that clique to a single vertex (keeping edge multiplicities) leaves a tree.
bool is_tree_with_clique(const Graph& g, int clique_size);

// counts[d] = number of nodes with degree d, d in [0, n)
std::vector<int> degree_histogram(const Graph& g);

// local clustering coefficient per node; 0 for degree < 2
std::vector<double> clustering_coefficients(const Graph& g);

// Per-node count of connected induced 4-node subgraphs containing the node,
// by exhaustive enumeration of all 4-subsets. Quartic; fine for n <= 64.
std::vector<int64_t> orbit_counts_4(const Graph& g);

// Weisfeiler-Leman color refinement over the edge-colored complete graph.
// Isomorphic graphs always collide; distinct graphs may (rarely) collide.
uint64_t wl_hash(const Graph& g, int rounds = 3);

bool is_planar(const Graph& g);

// ---- tensor views ------------------------------------------------------

Tensor node_onehot(const Graph& g);  // [n, a]
Tensor edge_onehot(const Graph& g);  // [n*n, b], row i*n+j

// One-hot coordinates as a flat vector: nodes then upper-triangle edges.
// Dimension = n*a + n*(n-1)/2 * b.
std::vector<double> graph_unit_vector(const Graph& g);

}  // namespace gdpo
