#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace gdpo {

// JSON-lines dataset files: one graph object per line; unknown keys ignored.
GraphBatch load_jsonl(const std::string& path);
void save_jsonl(const GraphBatch& batch, const std::string& path,
                const std::vector<nlohmann::json>* extra_fields = nullptr);

struct TreeCliqueSpec {
  int samples = 400;
  int train_count = 256;
  int val_count = 72;
  int test_count = 72;
  int nodes = 16;
  int clique_size = 4;
  int rewrite_steps = 0;
  std::string clique_position = "middle";  // shallow | middle | deep
  uint64_t seed = 0;

  void validate() const;
};

struct TreeCliqueDataset {
  GraphBatch train, val, test;
  // post-rewrite predicate outcome per sample (pre-rewrite validity is true
  // by construction)
  std::vector<bool> train_valid, val_valid, test_valid;
};

// A uniform random tree (node 0 is the root) with a clique attached at the
// requested depth band, followed by the configured number of edge rewrites.
// One rewrite deletes a uniformly random existing edge and inserts a
// uniformly random absent one.
Graph random_tree_with_clique(int nodes, int clique_size,
                              const std::string& position, Rng& rng);
void rewrite_edges(Graph& g, int count, Rng& rng);

TreeCliqueDataset gen_tree_clique_dataset(const TreeCliqueSpec& spec);

// Writes train/val/test JSONL files with per-line validity labels into dir.
void save_tree_clique_dataset(const TreeCliqueDataset& ds,
                              const std::string& dir);

}  // namespace gdpo
