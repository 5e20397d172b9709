#include "graph.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>

#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/boyer_myrvold_planar_test.hpp>

#include "error.hpp"

namespace gdpo {

Graph::Graph(int n, int node_cats, int edge_cats)
    : n_(n), a_(node_cats), b_(edge_cats) {
  if (n < 0 || node_cats < 1 || edge_cats < 1)
    throw_invalid("graph dimensions must be positive");
  node_cat_.assign(static_cast<size_t>(n), 0);
  edge_cat_.assign(static_cast<size_t>(n) * n, 0);
}

void Graph::set_node_cat(int i, int c) {
  if (i < 0 || i >= n_) throw_invalid("node index out of range");
  if (c < 0 || c >= a_) throw_invalid("node category out of range");
  node_cat_[static_cast<size_t>(i)] = c;
}

void Graph::set_edge_cat(int i, int j, int c) {
  if (i < 0 || i >= n_ || j < 0 || j >= n_)
    throw_invalid("edge index out of range");
  if (c < 0 || c >= b_) throw_invalid("edge category out of range");
  if (i == j) {
    if (c != 0) throw_invalid("self loops are not representable");
    return;
  }
  edge_cat_[static_cast<size_t>(i) * n_ + j] = c;
  edge_cat_[static_cast<size_t>(j) * n_ + i] = c;
}

int Graph::degree(int i) const {
  int d = 0;
  for (int j = 0; j < n_; ++j)
    if (j != i && has_edge(i, j)) ++d;
  return d;
}

int Graph::edge_count() const {
  int m = 0;
  for (int i = 0; i < n_; ++i)
    for (int j = i + 1; j < n_; ++j)
      if (has_edge(i, j)) ++m;
  return m;
}

std::vector<int> Graph::neighbors(int i) const {
  std::vector<int> out;
  for (int j = 0; j < n_; ++j)
    if (j != i && has_edge(i, j)) out.push_back(j);
  return out;
}

void Graph::validate() const {
  if (static_cast<int>(node_cat_.size()) != n_ ||
      static_cast<int>(edge_cat_.size()) != n_ * n_)
    throw_invalid("graph storage inconsistent with node count");
  for (int i = 0; i < n_; ++i)
    if (node_cat_[static_cast<size_t>(i)] < 0 ||
        node_cat_[static_cast<size_t>(i)] >= a_)
      throw_invalid("node category out of range at node " + std::to_string(i));
  for (int i = 0; i < n_; ++i) {
    if (edge_cat(i, i) != 0)
      throw_invalid("nonzero diagonal (self loop) at node " +
                    std::to_string(i));
    for (int j = 0; j < n_; ++j) {
      const int c = edge_cat(i, j);
      if (c < 0 || c >= b_) throw_invalid("edge category out of range");
      if (c != edge_cat(j, i))
        throw_invalid("edge categories not symmetric at (" +
                      std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
}

nlohmann::json Graph::to_json() const {
  nlohmann::json j;
  j["n"] = n_;
  j["a"] = a_;
  j["b"] = b_;
  j["X"] = node_cat_;
  nlohmann::json e = nlohmann::json::array();
  for (int i = 0; i < n_; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < n_; ++k) row.push_back(edge_cat(i, k));
    e.push_back(std::move(row));
  }
  j["E"] = std::move(e);
  return j;
}

Graph Graph::from_json(const nlohmann::json& j) {
  if (!j.contains("n") || !j.contains("a") || !j.contains("b") ||
      !j.contains("X") || !j.contains("E"))
    throw_config("graph json requires keys n, a, b, X, E");
  Graph g(j.at("n").get<int>(), j.at("a").get<int>(), j.at("b").get<int>());
  const auto& x = j.at("X");
  if (static_cast<int>(x.size()) != g.n())
    throw_config("graph json: X length != n");
  for (int i = 0; i < g.n(); ++i) g.set_node_cat(i, x.at(i).get<int>());
  const auto& e = j.at("E");
  if (static_cast<int>(e.size()) != g.n())
    throw_config("graph json: E row count != n");
  for (int i = 0; i < g.n(); ++i) {
    const auto& row = e.at(i);
    if (static_cast<int>(row.size()) != g.n())
      throw_config("graph json: E row length != n");
    for (int k = 0; k < g.n(); ++k) {
      const int c = row.at(k).get<int>();
      if (i == k && c != 0) throw_config("graph json: nonzero diagonal");
      if (k > i) {
        if (c != e.at(k).at(i).get<int>())
          throw_config("graph json: E not symmetric");
        g.set_edge_cat(i, k, c);
      }
    }
  }
  return g;
}

void GraphBatch::push(Graph g) {
  if (g.node_cats() != node_cats || g.edge_cats() != edge_cats)
    throw_invalid("graph category counts do not match the batch");
  graphs.push_back(std::move(g));
}

void GraphBatch::validate() const {
  for (const auto& g : graphs) {
    if (g.node_cats() != node_cats || g.edge_cats() != edge_cats)
      throw_invalid("batch members disagree on category counts");
    g.validate();
  }
}

// ---- algorithms -----------------------------------------------------------

bool is_connected(const Graph& g) {
  const int n = g.n();
  if (n <= 1) return true;
  std::vector<char> seen(static_cast<size_t>(n), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v = 0; v < n; ++v)
      if (!seen[static_cast<size_t>(v)] && g.has_edge(u, v)) {
        seen[static_cast<size_t>(v)] = 1;
        ++reached;
        stack.push_back(v);
      }
  }
  return reached == n;
}

namespace {

std::vector<uint64_t> adjacency_masks(const Graph& g) {
  if (g.n() > 64) throw_invalid("bitset graph algorithms support n <= 64");
  std::vector<uint64_t> adj(static_cast<size_t>(g.n()), 0);
  for (int i = 0; i < g.n(); ++i)
    for (int j = 0; j < g.n(); ++j)
      if (j != i && g.has_edge(i, j)) adj[static_cast<size_t>(i)] |= 1ULL << j;
  return adj;
}

void bron_kerbosch(const std::vector<uint64_t>& adj, uint64_t r, uint64_t p,
                   uint64_t x, std::vector<uint64_t>& out) {
  if (p == 0 && x == 0) {
    out.push_back(r);
    return;
  }
  // pivot with most neighbors in p
  uint64_t px = p | x;
  int pivot = -1, best = -1;
  for (uint64_t m = px; m;) {
    const int v = std::countr_zero(m);
    m &= m - 1;
    const int cnt = std::popcount(p & adj[static_cast<size_t>(v)]);
    if (cnt > best) {
      best = cnt;
      pivot = v;
    }
  }
  uint64_t candidates = p & ~adj[static_cast<size_t>(pivot)];
  for (uint64_t m = candidates; m;) {
    const int v = std::countr_zero(m);
    m &= m - 1;
    const uint64_t vb = 1ULL << v;
    bron_kerbosch(adj, r | vb, p & adj[static_cast<size_t>(v)],
                  x & adj[static_cast<size_t>(v)], out);
    p &= ~vb;
    x |= vb;
  }
}

}  // namespace

bool is_tree_with_clique(const Graph& g, int clique_size) {
  if (clique_size < 3)
    throw_invalid("clique size must be at least 3");
  if (clique_size > g.n())
    throw_invalid("clique size exceeds node count");
  if (!is_connected(g)) return false;

  auto adj = adjacency_masks(g);
  std::vector<uint64_t> cliques;
  uint64_t all = g.n() == 64 ? ~0ULL : ((1ULL << g.n()) - 1);
  bron_kerbosch(adj, 0, all, 0, cliques);
  uint64_t clique = 0;
  int matches = 0;
  for (uint64_t c : cliques)
    if (std::popcount(c) == clique_size) {
      clique = c;
      ++matches;
    }
  if (matches != 1) return false;

  // contract the clique, counting edge multiplicities: the result is a tree
  // iff it stays connected with exactly n' - 1 edges
  int edges_after = 0;
  for (int i = 0; i < g.n(); ++i)
    for (int j = i + 1; j < g.n(); ++j) {
      if (!g.has_edge(i, j)) continue;
      const bool ic = (clique >> i) & 1, jc = (clique >> j) & 1;
      if (ic && jc) continue;  // internal clique edge vanishes
      ++edges_after;
    }
  const int contracted_nodes = g.n() - clique_size + 1;
  return edges_after == contracted_nodes - 1;
}

std::vector<int> degree_histogram(const Graph& g) {
  std::vector<int> hist(static_cast<size_t>(std::max(g.n(), 1)), 0);
  for (int i = 0; i < g.n(); ++i) ++hist[static_cast<size_t>(g.degree(i))];
  return hist;
}

std::vector<double> clustering_coefficients(const Graph& g) {
  std::vector<double> out(static_cast<size_t>(g.n()), 0.0);
  for (int v = 0; v < g.n(); ++v) {
    auto nb = g.neighbors(v);
    const int d = static_cast<int>(nb.size());
    if (d < 2) continue;
    int closed = 0;
    for (size_t i = 0; i < nb.size(); ++i)
      for (size_t j = i + 1; j < nb.size(); ++j)
        if (g.has_edge(nb[i], nb[j])) ++closed;
    out[static_cast<size_t>(v)] =
        2.0 * closed / (static_cast<double>(d) * (d - 1));
  }
  return out;
}

namespace {

// connectivity of a 4-node graph keyed by its 6-bit edge mask
// bit order: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
std::array<bool, 64> four_node_connectivity() {
  std::array<bool, 64> table{};
  constexpr int pair_u[6] = {0, 0, 0, 1, 1, 2};
  constexpr int pair_v[6] = {1, 2, 3, 2, 3, 3};
  for (int mask = 0; mask < 64; ++mask) {
    bool adj[4][4] = {};
    for (int e = 0; e < 6; ++e)
      if ((mask >> e) & 1) adj[pair_u[e]][pair_v[e]] = adj[pair_v[e]][pair_u[e]] = true;
    bool seen[4] = {true, false, false, false};
    int stack[4] = {0};
    int top = 1, reached = 1;
    while (top) {
      const int u = stack[--top];
      for (int v = 0; v < 4; ++v)
        if (adj[u][v] && !seen[v]) {
          seen[v] = true;
          ++reached;
          stack[top++] = v;
        }
    }
    table[static_cast<size_t>(mask)] = reached == 4;
  }
  return table;
}

}  // namespace

std::vector<int64_t> orbit_counts_4(const Graph& g) {
  static const std::array<bool, 64> connected4 = four_node_connectivity();
  const int n = g.n();
  std::vector<int64_t> counts(static_cast<size_t>(n), 0);
  if (n < 4) return counts;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k)
        for (int l = k + 1; l < n; ++l) {
          int mask = 0;
          if (g.has_edge(i, j)) mask |= 1 << 0;
          if (g.has_edge(i, k)) mask |= 1 << 1;
          if (g.has_edge(i, l)) mask |= 1 << 2;
          if (g.has_edge(j, k)) mask |= 1 << 3;
          if (g.has_edge(j, l)) mask |= 1 << 4;
          if (g.has_edge(k, l)) mask |= 1 << 5;
          if (connected4[static_cast<size_t>(mask)]) {
            ++counts[static_cast<size_t>(i)];
            ++counts[static_cast<size_t>(j)];
            ++counts[static_cast<size_t>(k)];
            ++counts[static_cast<size_t>(l)];
          }
        }
  return counts;
}

namespace {

uint64_t fnv1a(uint64_t h, uint64_t x) {
  for (int byte = 0; byte < 8; ++byte) {
    h ^= (x >> (8 * byte)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

uint64_t wl_hash(const Graph& g, int rounds) {
  if (rounds < 1) throw_invalid("wl_hash needs at least one round");
  const int n = g.n();
  std::vector<int> color(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) color[static_cast<size_t>(i)] = g.node_cat(i);

  uint64_t digest = 0xcbf29ce484222325ULL;
  digest = fnv1a(digest, static_cast<uint64_t>(n));
  digest = fnv1a(digest, static_cast<uint64_t>(g.node_cats()));
  digest = fnv1a(digest, static_cast<uint64_t>(g.edge_cats()));

  for (int r = 0; r < rounds; ++r) {
    // signature: own color plus the sorted multiset of (edge category, color)
    // over all other vertices, "no edge" included as category 0
    std::vector<std::pair<int, std::vector<std::pair<int, int>>>> sigs(
        static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto& s = sigs[static_cast<size_t>(i)];
      s.first = color[static_cast<size_t>(i)];
      for (int j = 0; j < n; ++j)
        if (j != i)
          s.second.emplace_back(g.edge_cat(i, j), color[static_cast<size_t>(j)]);
      std::sort(s.second.begin(), s.second.end());
    }
    // canonical relabeling: ids assigned in sorted signature order
    std::map<std::pair<int, std::vector<std::pair<int, int>>>, int> ids;
    for (const auto& s : sigs) ids.emplace(s, 0);
    int next = 0;
    for (auto& kv : ids) kv.second = next++;
    for (int i = 0; i < n; ++i)
      color[static_cast<size_t>(i)] = ids.at(sigs[static_cast<size_t>(i)]);
    // fold the color histogram of this round into the digest
    std::vector<int> sorted_colors = color;
    std::sort(sorted_colors.begin(), sorted_colors.end());
    for (int c : sorted_colors) digest = fnv1a(digest, static_cast<uint64_t>(c));
  }
  return digest;
}

bool is_planar(const Graph& g) {
  using BoostGraph = boost::adjacency_list<boost::vecS, boost::vecS,
                                           boost::undirectedS>;
  BoostGraph bg(static_cast<size_t>(std::max(g.n(), 1)));
  for (int i = 0; i < g.n(); ++i)
    for (int j = i + 1; j < g.n(); ++j)
      if (g.has_edge(i, j)) boost::add_edge(static_cast<size_t>(i),
                                            static_cast<size_t>(j), bg);
  return boost::boyer_myrvold_planarity_test(bg);
}

// ---- tensor views -----------------------------------------------------------

Tensor node_onehot(const Graph& g) {
  Tensor t({g.n(), g.node_cats()});
  auto v = t.value();
  for (int i = 0; i < g.n(); ++i)
    v[static_cast<size_t>(i) * g.node_cats() + g.node_cat(i)] = 1.0;
  return t;
}

Tensor edge_onehot(const Graph& g) {
  Tensor t({g.n() * g.n(), g.edge_cats()});
  auto v = t.value();
  for (int i = 0; i < g.n(); ++i)
    for (int j = 0; j < g.n(); ++j)
      v[(static_cast<size_t>(i) * g.n() + j) * g.edge_cats() +
        g.edge_cat(i, j)] = 1.0;
  return t;
}

std::vector<double> graph_unit_vector(const Graph& g) {
  const int n = g.n(), a = g.node_cats(), b = g.edge_cats();
  std::vector<double> v(static_cast<size_t>(n) * a +
                        static_cast<size_t>(n) * (n - 1) / 2 * b);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * a + g.node_cat(i)] = 1.0;
  size_t off = static_cast<size_t>(n) * a;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      v[off + g.edge_cat(i, j)] = 1.0;
      off += b;
    }
  return v;
}

}  // namespace gdpo
