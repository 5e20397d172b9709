#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffusion.hpp"
#include "graph.hpp"
#include "tensor.hpp"

namespace gdpo {

struct DenoiserConfig {
  int layers = 1;
  int hidden = 32;    // must be even (sinusoidal time embedding)
  int node_cats = 1;
  int edge_cats = 2;
  int T = 50;
  int ffn_mult = 2;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

// Reduced graph transformer predicting clean-category distributions from a
// noisy graph and timestep. Attention over nodes with an edge-feature score
// bias; edge features updated from endpoint pairs; output heads are
// zero-initialized so a fresh model predicts exactly uniform distributions.
class DenoiserModel {
 public:
  DenoiserModel(DenoiserConfig cfg, uint64_t init_seed);

  // parameter tensors share storage, so copies are explicit
  DenoiserModel(const DenoiserModel&) = delete;
  DenoiserModel& operator=(const DenoiserModel&) = delete;
  DenoiserModel(DenoiserModel&&) = default;
  DenoiserModel& operator=(DenoiserModel&&) = default;
  DenoiserModel clone() const;

  const DenoiserConfig& config() const { return cfg_; }

  // ---- parameters ----
  int64_t param_count() const;
  const std::vector<std::string>& param_names() const { return names_; }
  const std::vector<Tensor>& param_tensors() const { return params_; }
  std::vector<Tensor>& param_tensors() { return params_; }
  // grad buffers are shared mutable state; zeroing them is const-safe
  void zero_grads() const;
  std::vector<double> flat_grads() const;
  void add_to_values(std::span<const double> delta);
  // flat-index ranges of parameters whose name contains the substring
  std::vector<std::pair<int64_t, int64_t>> ranges_matching(
      const std::string& substr) const;
  void check_finite() const;

  // ---- inference / losses ----
  Prediction forward(Tape* tape, const Graph& gt, int t) const;
  // sum of per-entry log probabilities of g0's categories under forward(gt,t)
  Tensor log_prob_g0_given_gt(Tape* tape, const Graph& g0, const Graph& gt,
                              int t) const;
  // log probability of the observed one-step transition g_t -> g_prev under
  // the posterior mixture; differentiable through the mixture
  Tensor log_prob_step(Tape* tape, const Graph& g_prev, const Graph& g_t,
                       int t, const DiffusionProcess& proc) const;

  // ---- checkpoints ----
  nlohmann::json to_json() const;
  static DenoiserModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static DenoiserModel load(const std::string& path);

 private:
  struct Logits {
    Tensor node;  // [n, a]
    Tensor edge;  // [n*n, b], symmetrized
  };
  Logits forward_logits(Tape* tape, const Graph& gt, int t) const;
  Tensor param(const std::string& name) const;
  void register_param(const std::string& name, Tensor t);

  DenoiserConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

PredictFn predictor(const DenoiserModel& model);

Trajectory sample_trajectory(const DenoiserModel& model, int n,
                             const DiffusionProcess& proc, uint64_t seed,
                             bool record);
Graph sample_graph(const DenoiserModel& model, int n,
                   const DiffusionProcess& proc, uint64_t seed);

// Second-moment-normalized ascent/descent steps (no momentum term).
class AdaptiveOptimizer {
 public:
  explicit AdaptiveOptimizer(double lr, double beta2 = 0.999,
                             double eps = 1e-8)
      : lr_(lr), beta2_(beta2), eps_(eps) {}

  // theta += direction * lr * g_hat; direction +1 maximizes, -1 minimizes
  void step(DenoiserModel& model, std::span<const double> grad,
            double direction);

  double lr() const { return lr_; }

 private:
  double lr_, beta2_, eps_;
  int64_t steps_ = 0;
  std::vector<double> v_;
};

// Scales grad in place so its L2 norm is at most max_norm; returns the norm
// before clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

}  // namespace gdpo
