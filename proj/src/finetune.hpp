#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "diffusion.hpp"
#include "graph.hpp"

namespace gdpo {

struct FinetuneConfig {
  std::string estimator = "gdpo";  // ddpo | gdpo | ddpo_is | gdpo_is
  int K = 256;                     // trajectories per update
  int Tsub = 8;                    // timestep-subset size |T_k|
  int steps = 60;                  // training steps N
  double lr = 1e-5;
  double reward_clip = 5.0;  // clip bound on standardized advantages
  double grad_clip = 1.0;
  std::string advantage = "standardized";  // standardized | raw
  double is_ratio_clip = 0.2;  // density ratios clamped to [1-d, 1+d]
  int is_reuse = 2;            // updates per sampled batch for *_is kinds
  bool attention_only = false;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // steps between checkpoints; 0 disables
  // stop once the batch mean reward holds at or above this level for
  // `early_stop_patience` consecutive steps; 0 disables
  double early_stop_reward = 0.0;
  int early_stop_patience = 5;

  bool is_importance_sampled() const {
    return estimator == "ddpo_is" || estimator == "gdpo_is";
  }
  void validate() const;
};

// Node counts of generated graphs follow the empirical distribution of the
// training set; toy experiments use a constant.
class NodeCountSampler {
 public:
  static NodeCountSampler constant(int n);
  static NodeCountSampler empirical(const GraphBatch& dataset);
  int sample(Rng& rng) const;

 private:
  std::vector<int> counts_;
};

using RewardFn = std::function<double(const Graph&)>;

struct TrajectoryBatch {
  std::vector<Trajectory> trajectories;  // scored, invalid ones excluded
  int requested = 0;
  int invalid = 0;
};

// K recorded trajectories with rewards; a trajectory whose reward evaluation
// throws is excluded with a warning, and the batch aborts if more than half
// are invalid.
TrajectoryBatch sample_batch(const DenoiserModel& model,
                             const DiffusionProcess& proc,
                             const NodeCountSampler& nodes,
                             const FinetuneConfig& cfg,
                             const RewardFn& reward_fn, uint64_t batch_seed);

struct AdvantageStats {
  double mean = 0.0;
  double stddev = 0.0;                // sample std, divisor K-1
  std::vector<double> advantage;      // standardized and clipped (or raw)
  bool degenerate = false;            // std below epsilon: all-zero advantages
};

AdvantageStats compute_advantages(const std::vector<double>& rewards,
                                  const FinetuneConfig& cfg);

// REINFORCE estimator over per-step transition log probabilities.
std::vector<double> ddpo_gradient(const DenoiserModel& model,
                                  const DiffusionProcess& proc,
                                  const TrajectoryBatch& batch,
                                  const FinetuneConfig& cfg);

// Eager policy gradient: per-step terms replaced by the clean-graph log
// probability log p(G_0 | G_t). Biased but far less fluctuating.
std::vector<double> gdpo_gradient(const DenoiserModel& model,
                                  const DiffusionProcess& proc,
                                  const TrajectoryBatch& batch,
                                  const FinetuneConfig& cfg);

// Importance-sampled variants for reusing a batch sampled under params_prev;
// density ratios are clamped to [1 - is_ratio_clip, 1 + is_ratio_clip].
// kind: ddpo_is | gdpo_is
std::vector<double> is_weighted_gradient(const DenoiserModel& model,
                                         const DenoiserModel& model_prev,
                                         const DiffusionProcess& proc,
                                         const TrajectoryBatch& batch,
                                         const FinetuneConfig& cfg,
                                         const std::string& kind);

struct FinetuneStepRecord {
  int step = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  int64_t queries = 0;  // cumulative reward queries
  double grad_norm = 0.0;
  std::string estimator;
};

struct FinetuneResult {
  std::vector<FinetuneStepRecord> curve;
  int64_t reward_queries = 0;
};

// Sample -> score -> standardize -> estimate -> clip -> ascend, N times.
FinetuneResult finetune(DenoiserModel& model, const DiffusionProcess& proc,
                        const NodeCountSampler& nodes,
                        const FinetuneConfig& cfg, const RewardFn& reward_fn,
                        const std::string& checkpoint_dir = "");

}  // namespace gdpo
