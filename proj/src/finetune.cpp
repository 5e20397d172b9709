#include "finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "error.hpp"
#include "util.hpp"

namespace gdpo {

namespace {
constexpr double kStdEps = 1e-8;
constexpr uint64_t kTagNodeCount = 0x6e636e74ULL;
constexpr uint64_t kTagTimesteps = 0x7473756206ULL;
}  // namespace

void FinetuneConfig::validate() const {
  if (estimator != "ddpo" && estimator != "gdpo" && estimator != "ddpo_is" &&
      estimator != "gdpo_is")
    throw_config("finetune.estimator must be ddpo|gdpo|ddpo_is|gdpo_is");
  if (K < 2) throw_config("finetune.K must be >= 2");
  if (Tsub < 1) throw_config("finetune.Tsub must be >= 1");
  if (steps < 0) throw_config("finetune.steps must be >= 0");
  if (!(lr > 0.0)) throw_config("finetune.lr must be > 0");
  if (!(reward_clip > 0.0)) throw_config("finetune.reward_clip must be > 0");
  if (!(grad_clip > 0.0)) throw_config("finetune.grad_clip must be > 0");
  if (advantage != "standardized" && advantage != "raw")
    throw_config("finetune.advantage must be standardized|raw");
  if (!(is_ratio_clip >= 0.0))
    throw_config("finetune.is_ratio_clip must be >= 0");
  if (is_reuse < 1) throw_config("finetune.is_reuse must be >= 1");
  if (checkpoint_every < 0)
    throw_config("finetune.checkpoint_every must be >= 0");
  if (early_stop_reward < 0.0)
    throw_config("finetune.early_stop_reward must be >= 0");
  if (early_stop_patience < 1)
    throw_config("finetune.early_stop_patience must be >= 1");
}

NodeCountSampler NodeCountSampler::constant(int n) {
  if (n < 1) throw_invalid("node count must be >= 1");
  NodeCountSampler s;
  s.counts_ = {n};
  return s;
}

NodeCountSampler NodeCountSampler::empirical(const GraphBatch& dataset) {
  if (dataset.empty()) throw_invalid("empirical node counts need a dataset");
  NodeCountSampler s;
  for (const auto& g : dataset.graphs) s.counts_.push_back(g.n());
  return s;
}

int NodeCountSampler::sample(Rng& rng) const {
  if (counts_.size() == 1) return counts_[0];
  return counts_[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(counts_.size()) - 1))];
}

TrajectoryBatch sample_batch(const DenoiserModel& model,
                             const DiffusionProcess& proc,
                             const NodeCountSampler& nodes,
                             const FinetuneConfig& cfg,
                             const RewardFn& reward_fn, uint64_t batch_seed) {
  // sampling and scoring are pure per trajectory, so they may run on worker
  // threads; results land in per-index slots and are merged in order
  std::vector<Trajectory> trajs(static_cast<size_t>(cfg.K));
  std::vector<std::string> errors(static_cast<size_t>(cfg.K));
  parallel_for(cfg.K, max_workers(), [&](int k) {
    const uint64_t traj_seed =
        derive_seed(batch_seed, static_cast<uint64_t>(k));
    Rng nrng(derive_seed(traj_seed, kTagNodeCount));
    const int n = nodes.sample(nrng);
    trajs[static_cast<size_t>(k)] =
        sample_trajectory(model, n, proc, traj_seed, true);
    try {
      trajs[static_cast<size_t>(k)].reward =
          reward_fn(trajs[static_cast<size_t>(k)].final_graph());
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(k)] = e.what();
      if (errors[static_cast<size_t>(k)].empty())
        errors[static_cast<size_t>(k)] = "unknown error";
    }
  });

  TrajectoryBatch batch;
  batch.requested = cfg.K;
  for (int k = 0; k < cfg.K; ++k) {
    if (!errors[static_cast<size_t>(k)].empty()) {
      ++batch.invalid;
      std::fprintf(stderr,
                   "warning: reward evaluation failed for trajectory %d "
                   "(seed %llu): %s; excluding it\n",
                   k,
                   static_cast<unsigned long long>(
                       trajs[static_cast<size_t>(k)].seed),
                   errors[static_cast<size_t>(k)].c_str());
      continue;
    }
    batch.trajectories.push_back(std::move(trajs[static_cast<size_t>(k)]));
  }
  if (batch.invalid * 2 > cfg.K)
    throw_runtime("more than half of the batch failed reward evaluation (" +
                  std::to_string(batch.invalid) + "/" + std::to_string(cfg.K) +
                  ")");
  return batch;
}

AdvantageStats compute_advantages(const std::vector<double>& rewards,
                                  const FinetuneConfig& cfg) {
  AdvantageStats stats;
  const size_t k = rewards.size();
  if (k < 2) throw_invalid("advantage statistics need at least 2 rewards");
  stats.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) /
               static_cast<double>(k);
  double ss = 0.0;
  for (double r : rewards) ss += (r - stats.mean) * (r - stats.mean);
  stats.stddev = std::sqrt(ss / static_cast<double>(k - 1));
  stats.advantage.resize(k);
  if (cfg.advantage == "raw") {
    stats.advantage = rewards;
    return stats;
  }
  if (stats.stddev < kStdEps) {
    // zero-variance batch: no information, the update is skipped
    stats.degenerate = true;
    std::fill(stats.advantage.begin(), stats.advantage.end(), 0.0);
    return stats;
  }
  for (size_t i = 0; i < k; ++i) {
    double a = (rewards[i] - stats.mean) / stats.stddev;
    stats.advantage[i] = std::clamp(a, -cfg.reward_clip, cfg.reward_clip);
  }
  return stats;
}

namespace {

// Tsub distinct timesteps from [1, T], seeded per trajectory so the draw is
// independent of batch order; returned sorted.
std::vector<int> sample_timesteps(int T, int Tsub, uint64_t traj_seed) {
  if (Tsub > T) throw_invalid("Tsub exceeds T");
  std::vector<int> all(static_cast<size_t>(T));
  std::iota(all.begin(), all.end(), 1);
  Rng rng(derive_seed(traj_seed, kTagTimesteps));
  for (int i = 0; i < Tsub; ++i) {
    const int j = rng.uniform_int(i, T - 1);
    std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
  }
  std::vector<int> out(all.begin(), all.begin() + Tsub);
  std::sort(out.begin(), out.end());
  return out;
}

enum class TermKind { step, clean };

std::vector<double> policy_gradient(const DenoiserModel& model,
                                    const DiffusionProcess& proc,
                                    const TrajectoryBatch& batch,
                                    const FinetuneConfig& cfg, TermKind term,
                                    const DenoiserModel* model_prev) {
  if (batch.trajectories.empty())
    throw_invalid("policy gradient needs a nonempty batch");
  const int T = proc.T();
  std::vector<double> rewards;
  rewards.reserve(batch.trajectories.size());
  for (const auto& t : batch.trajectories) rewards.push_back(t.reward);
  AdvantageStats adv = compute_advantages(rewards, cfg);

  const size_t m = static_cast<size_t>(model.param_count());
  if (adv.degenerate) return std::vector<double>(m, 0.0);

  // canonical trajectory order (by seed): the estimate is invariant under
  // permutations of the batch
  std::vector<size_t> order(batch.trajectories.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return batch.trajectories[a].seed < batch.trajectories[b].seed;
  });

  // grads accumulate directly into the parameters, each term's backward
  // seeded with its coefficient
  model.zero_grads();
  const double k_inv = 1.0 / static_cast<double>(batch.trajectories.size());
  for (size_t idx : order) {
    const Trajectory& traj = batch.trajectories[idx];
    if (!traj.recorded || traj.T() != T)
      throw_invalid("trajectory was not recorded at the process horizon");
    auto timesteps = sample_timesteps(T, cfg.Tsub, traj.seed);
    const double base = adv.advantage[idx] * static_cast<double>(T) /
                        static_cast<double>(cfg.Tsub) * k_inv;
    if (base == 0.0) continue;
    for (int t : timesteps) {
      Tape tape;
      Tensor logp =
          term == TermKind::clean
              ? model.log_prob_g0_given_gt(&tape, traj.final_graph(),
                                           traj.graph_at(t), t)
              : model.log_prob_step(&tape, traj.graph_at(t - 1),
                                    traj.graph_at(t), t, proc);
      double coeff = base;
      if (model_prev != nullptr) {
        const double lp_now = logp.item();
        Tensor lp_prev_t =
            term == TermKind::clean
                ? model_prev->log_prob_g0_given_gt(nullptr, traj.final_graph(),
                                                   traj.graph_at(t), t)
                : model_prev->log_prob_step(nullptr, traj.graph_at(t - 1),
                                            traj.graph_at(t), t, proc);
        double ratio = std::exp(lp_now - lp_prev_t.item());
        ratio = std::clamp(ratio, 1.0 - cfg.is_ratio_clip,
                           1.0 + cfg.is_ratio_clip);
        coeff *= ratio;
      }
      tape.backward(mul_scalar(&tape, logp, coeff));
    }
  }
  std::vector<double> grads = model.flat_grads();
  model.zero_grads();
  for (double g : grads)
    if (!std::isfinite(g))
      throw_numeric("policy gradient estimate is non-finite");
  return grads;
}

}  // namespace

std::vector<double> ddpo_gradient(const DenoiserModel& model,
                                  const DiffusionProcess& proc,
                                  const TrajectoryBatch& batch,
                                  const FinetuneConfig& cfg) {
  return policy_gradient(model, proc, batch, cfg, TermKind::step, nullptr);
}

std::vector<double> gdpo_gradient(const DenoiserModel& model,
                                  const DiffusionProcess& proc,
                                  const TrajectoryBatch& batch,
                                  const FinetuneConfig& cfg) {
  return policy_gradient(model, proc, batch, cfg, TermKind::clean, nullptr);
}

std::vector<double> is_weighted_gradient(const DenoiserModel& model,
                                         const DenoiserModel& model_prev,
                                         const DiffusionProcess& proc,
                                         const TrajectoryBatch& batch,
                                         const FinetuneConfig& cfg,
                                         const std::string& kind) {
  if (kind != "ddpo_is" && kind != "gdpo_is")
    throw_invalid("is_weighted_gradient kind must be ddpo_is|gdpo_is");
  return policy_gradient(model, proc, batch, cfg,
                         kind == "gdpo_is" ? TermKind::clean : TermKind::step,
                         &model_prev);
}

FinetuneResult finetune(DenoiserModel& model, const DiffusionProcess& proc,
                        const NodeCountSampler& nodes,
                        const FinetuneConfig& cfg, const RewardFn& reward_fn,
                        const std::string& checkpoint_dir) {
  cfg.validate();
  if (proc.T() != model.config().T)
    throw_config("finetune schedule horizon does not match the model");
  if (cfg.Tsub > proc.T()) throw_config("finetune.Tsub exceeds T");

  AdaptiveOptimizer opt(cfg.lr);
  FinetuneResult result;
  auto frozen = cfg.attention_only
                    ? model.ranges_matching("attn")
                    : std::vector<std::pair<int64_t, int64_t>>{};

  DenoiserModel snapshot(model.config(), 0);
  TrajectoryBatch batch;
  bool have_batch = false;
  int streak = 0;

  auto save_checkpoint = [&](const std::string& name) {
    if (checkpoint_dir.empty()) return;
    std::filesystem::create_directories(checkpoint_dir);
    model.save(checkpoint_dir + "/" + name);
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    const uint64_t batch_seed =
        derive_seed(cfg.seed, static_cast<uint64_t>(step));
    const bool resample =
        !cfg.is_importance_sampled() || !have_batch ||
        ((step - 1) % cfg.is_reuse == 0);
    if (resample) {
      batch = sample_batch(model, proc, nodes, cfg, reward_fn, batch_seed);
      have_batch = true;
      result.reward_queries +=
          static_cast<int64_t>(batch.trajectories.size());
      if (cfg.is_importance_sampled()) snapshot = model.clone();
    }

    std::vector<double> grad;
    if (cfg.estimator == "ddpo")
      grad = ddpo_gradient(model, proc, batch, cfg);
    else if (cfg.estimator == "gdpo")
      grad = gdpo_gradient(model, proc, batch, cfg);
    else
      grad = is_weighted_gradient(model, snapshot, proc, batch, cfg,
                                  cfg.estimator);

    if (cfg.attention_only)
      for (int64_t i = 0, m = static_cast<int64_t>(grad.size()); i < m; ++i) {
        bool keep = false;
        for (auto [lo, hi] : frozen)
          if (i >= lo && i < hi) {
            keep = true;
            break;
          }
        if (!keep) grad[static_cast<size_t>(i)] = 0.0;
      }

    const double norm = clip_grad_norm(grad, cfg.grad_clip);
    const bool all_zero =
        std::all_of(grad.begin(), grad.end(), [](double g) { return g == 0.0; });
    if (!all_zero) {
      opt.step(model, grad, +1.0);
      try {
        model.check_finite();
      } catch (const Error&) {
        save_checkpoint("checkpoint_abort.json");
        throw;
      }
    }

    double mean = 0.0, ss = 0.0;
    for (const auto& t : batch.trajectories) mean += t.reward;
    mean /= static_cast<double>(batch.trajectories.size());
    for (const auto& t : batch.trajectories)
      ss += (t.reward - mean) * (t.reward - mean);
    const double stddev =
        batch.trajectories.size() > 1
            ? std::sqrt(ss / static_cast<double>(batch.trajectories.size() - 1))
            : 0.0;
    result.curve.push_back(
        {step, mean, stddev, result.reward_queries, norm, cfg.estimator});

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save_checkpoint("checkpoint_step" + std::to_string(step) + ".json");

    if (cfg.early_stop_reward > 0.0) {
      streak = mean >= cfg.early_stop_reward ? streak + 1 : 0;
      if (streak >= cfg.early_stop_patience) break;
    }
  }
  return result;
}

}  // namespace gdpo
