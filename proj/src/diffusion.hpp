#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace gdpo {

// Node and edge chains may run on distinct schedules; by default both share
// one schedule since the forward process is presented with a single alpha_t.
struct DiffusionProcess {
  NoiseSchedule nodes;
  NoiseSchedule edges;

  int T() const { return nodes.T(); }

  static DiffusionProcess shared(const NoiseSchedule& s) { return {s, s}; }
  static DiffusionProcess make(int T, const std::string& node_kind,
                               const std::string& edge_kind) {
    return {make_schedule(T, node_kind), make_schedule(T, edge_kind)};
  }
};

// Per-entry clean-category distributions. Edge rows are pair-major [n*n, b],
// symmetric, with the diagonal a point mass on "no edge".
struct Prediction {
  Tensor node_probs;  // [n, a]
  Tensor edge_probs;  // [n*n, b]

  int n() const { return node_probs.dim(0); }
  // throws a contract error if any row is off normalization by more than tol
  void check_normalized(double tol = 1e-6) const;
};

// Forward corruption q(G_t | G_0): every node and upper-triangle edge is
// resampled independently from its closed-form marginal; symmetry restored by
// mirroring.
Graph forward_sample(const Graph& g0, int t, const DiffusionProcess& proc,
                     Rng& rng);

// One reverse step: the mixture of posteriors over candidate clean categories
// weighted by pred0 (x0-parameterization). At t == 1 the output equals pred0.
Prediction reverse_step_distribution(const Graph& gt, int t,
                                     const Prediction& pred0,
                                     const DiffusionProcess& proc);

struct Trajectory {
  // G_T first, G_0 last when recorded; only G_0 otherwise
  std::vector<Graph> graphs;
  // log p(G_{t-1} | G_t) of the sampled transition, index t-1, length T
  std::vector<double> step_log_prob;
  uint64_t seed = 0;
  double reward = std::numeric_limits<double>::quiet_NaN();
  bool recorded = true;

  int T() const { return static_cast<int>(step_log_prob.size()); }
  const Graph& final_graph() const { return graphs.back(); }
  // t in [0, T]; requires recorded
  const Graph& graph_at(int t) const;
};

using PredictFn = std::function<Prediction(const Graph& gt, int t)>;

// Runs the reverse chain from a uniform G_T down to G_0. Deterministic given
// (predict, n, seed). With record=false only G_0 is retained.
Trajectory sample_trajectory(const PredictFn& predict, int n, int node_cats,
                             int edge_cats, const DiffusionProcess& proc,
                             uint64_t seed, bool record);

// JSON lines, one graph per line plus its step index (T down to 0).
void dump_trajectory_jsonl(const Trajectory& traj, std::ostream& os);

}  // namespace gdpo
