#include "dataset.hpp"

#include <filesystem>
#include <fstream>

#include "error.hpp"

namespace gdpo {

GraphBatch load_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_io("cannot open dataset file " + path);
  GraphBatch batch;
  std::string line;
  bool first = true;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw_config(path + ":" + std::to_string(lineno) +
                   ": invalid json: " + e.what());
    }
    Graph g = Graph::from_json(j);
    if (first) {
      batch.node_cats = g.node_cats();
      batch.edge_cats = g.edge_cats();
      first = false;
    }
    batch.push(std::move(g));
  }
  if (batch.empty()) throw_config("dataset file " + path + " is empty");
  return batch;
}

void save_jsonl(const GraphBatch& batch, const std::string& path,
                const std::vector<nlohmann::json>* extra_fields) {
  if (extra_fields && extra_fields->size() != batch.size())
    throw_invalid("extra_fields size must match batch size");
  std::ofstream os(path);
  if (!os) throw_io("cannot write dataset file " + path);
  for (size_t i = 0; i < batch.graphs.size(); ++i) {
    nlohmann::json j = batch.graphs[i].to_json();
    if (extra_fields)
      for (auto it = (*extra_fields)[i].begin(); it != (*extra_fields)[i].end();
           ++it)
        j[it.key()] = it.value();
    os << j.dump() << "\n";
  }
  if (!os) throw_io("failed writing dataset file " + path);
}

void TreeCliqueSpec::validate() const {
  if (samples < 1) throw_config("dataset.samples must be >= 1");
  if (train_count + val_count + test_count != samples)
    throw_config("dataset split counts must sum to samples");
  if (train_count < 1) throw_config("dataset.train_count must be >= 1");
  if (clique_size < 3) throw_config("dataset.clique_size must be >= 3");
  if (clique_size >= nodes)
    throw_config("dataset.clique_size must be smaller than nodes");
  if (rewrite_steps < 0) throw_config("dataset.rewrite_steps must be >= 0");
  if (clique_position != "shallow" && clique_position != "middle" &&
      clique_position != "deep")
    throw_config("dataset.clique_position must be shallow|middle|deep");
}

namespace {

// uniform labeled tree on m nodes via a random Pruefer sequence
std::vector<std::pair<int, int>> random_tree_edges(int m, Rng& rng) {
  std::vector<std::pair<int, int>> edges;
  if (m == 1) return edges;
  if (m == 2) {
    edges.emplace_back(0, 1);
    return edges;
  }
  std::vector<int> seq(static_cast<size_t>(m - 2));
  for (auto& s : seq) s = rng.uniform_int(0, m - 1);
  std::vector<int> deg(static_cast<size_t>(m), 1);
  for (int s : seq) ++deg[static_cast<size_t>(s)];
  // repeatedly join the smallest leaf to the next sequence entry
  std::vector<bool> used(static_cast<size_t>(m), false);
  for (int s : seq) {
    int leaf = -1;
    for (int v = 0; v < m; ++v)
      if (deg[static_cast<size_t>(v)] == 1 && !used[static_cast<size_t>(v)]) {
        leaf = v;
        break;
      }
    edges.emplace_back(leaf, s);
    used[static_cast<size_t>(leaf)] = true;
    --deg[static_cast<size_t>(s)];
  }
  int u = -1, v = -1;
  for (int w = 0; w < m; ++w)
    if (deg[static_cast<size_t>(w)] == 1 && !used[static_cast<size_t>(w)]) {
      if (u < 0)
        u = w;
      else
        v = w;
    }
  edges.emplace_back(u, v);
  return edges;
}

std::vector<int> depths_from_root(int m,
                                  const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(m));
  for (auto [u, v] : edges) {
    adj[static_cast<size_t>(u)].push_back(v);
    adj[static_cast<size_t>(v)].push_back(u);
  }
  std::vector<int> depth(static_cast<size_t>(m), -1);
  std::vector<int> queue{0};
  depth[0] = 0;
  size_t head = 0;
  while (head < queue.size()) {
    const int u = queue[head++];
    for (int w : adj[static_cast<size_t>(u)])
      if (depth[static_cast<size_t>(w)] < 0) {
        depth[static_cast<size_t>(w)] = depth[static_cast<size_t>(u)] + 1;
        queue.push_back(w);
      }
  }
  return depth;
}

}  // namespace

Graph random_tree_with_clique(int nodes, int clique_size,
                              const std::string& position, Rng& rng) {
  const int m = nodes - clique_size + 1;  // tree size before attaching
  if (m < 2) throw_invalid("clique size must be smaller than node count");
  auto edges = random_tree_edges(m, rng);
  auto depth = depths_from_root(m, edges);
  const int maxd = *std::max_element(depth.begin(), depth.end());

  std::vector<int> band;
  for (int v = 0; v < m; ++v) {
    const int d = depth[static_cast<size_t>(v)];
    bool in_band = false;
    if (position == "shallow")
      in_band = 3 * d <= maxd;
    else if (position == "middle")
      in_band = 3 * d > maxd && 3 * d <= 2 * maxd;
    else
      in_band = 3 * d > 2 * maxd;
    if (in_band) band.push_back(v);
  }
  if (band.empty())
    for (int v = 0; v < m; ++v) band.push_back(v);  // degenerate tiny trees
  const int attach = band[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(band.size()) - 1))];

  Graph g(nodes, 1, 2);
  for (auto [u, v] : edges) g.set_edge_cat(u, v, 1);
  std::vector<int> clique{attach};
  for (int v = m; v < nodes; ++v) clique.push_back(v);
  for (size_t i = 0; i < clique.size(); ++i)
    for (size_t j = i + 1; j < clique.size(); ++j)
      g.set_edge_cat(clique[i], clique[j], 1);
  return g;
}

void rewrite_edges(Graph& g, int count, Rng& rng) {
  for (int r = 0; r < count; ++r) {
    std::vector<std::pair<int, int>> present, absent;
    for (int i = 0; i < g.n(); ++i)
      for (int j = i + 1; j < g.n(); ++j)
        (g.has_edge(i, j) ? present : absent).emplace_back(i, j);
    if (present.empty() || absent.empty()) return;
    auto [di, dj] = present[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(present.size()) - 1))];
    auto [ai, aj] = absent[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(absent.size()) - 1))];
    g.set_edge_cat(di, dj, 0);
    g.set_edge_cat(ai, aj, 1);
  }
}

TreeCliqueDataset gen_tree_clique_dataset(const TreeCliqueSpec& spec) {
  spec.validate();
  TreeCliqueDataset ds;
  for (GraphBatch* b : {&ds.train, &ds.val, &ds.test}) {
    b->node_cats = 1;
    b->edge_cats = 2;
  }
  Rng rng(derive_seed(spec.seed, 0x74726565ULL));
  for (int i = 0; i < spec.samples; ++i) {
    Graph g = random_tree_with_clique(spec.nodes, spec.clique_size,
                                      spec.clique_position, rng);
    rewrite_edges(g, spec.rewrite_steps, rng);
    const bool valid = is_tree_with_clique(g, spec.clique_size);
    if (i < spec.train_count) {
      ds.train.push(std::move(g));
      ds.train_valid.push_back(valid);
    } else if (i < spec.train_count + spec.val_count) {
      ds.val.push(std::move(g));
      ds.val_valid.push_back(valid);
    } else {
      ds.test.push(std::move(g));
      ds.test_valid.push_back(valid);
    }
  }
  return ds;
}

void save_tree_clique_dataset(const TreeCliqueDataset& ds,
                              const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto save = [&](const GraphBatch& b, const std::vector<bool>& valid,
                  const std::string& name) {
    std::vector<nlohmann::json> extra(b.size());
    for (size_t i = 0; i < b.size(); ++i)
      extra[i] = {{"valid", static_cast<bool>(valid[i])},
                  {"valid_pre_rewrite", true}};
    save_jsonl(b, dir + "/" + name, &extra);
  };
  save(ds.train, ds.train_valid, "train.jsonl");
  save(ds.val, ds.val_valid, "val.jsonl");
  save(ds.test, ds.test_valid, "test.jsonl");
}

}  // namespace gdpo
