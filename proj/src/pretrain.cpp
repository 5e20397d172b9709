#include "pretrain.hpp"

#include <cmath>
#include <filesystem>

#include "error.hpp"

namespace gdpo {

void PretrainConfig::validate() const {
  if (epochs < 0) throw_config("pretrain.epochs must be >= 0");
  if (batch_size < 1) throw_config("pretrain.batch_size must be >= 1");
  if (!(lr > 0.0)) throw_config("pretrain.lr must be > 0");
  if (T < 1) throw_config("pretrain.T must be >= 1");
  if (checkpoint_every < 0) throw_config("pretrain.checkpoint_every must be >= 0");
}

Tensor gdpm_loss(Tape* tape, const DenoiserModel& model,
                 const GraphBatch& batch, const DiffusionProcess& proc,
                 Rng& rng) {
  if (batch.empty()) throw_invalid("gdpm_loss needs a nonempty batch");
  Tensor total;
  for (const auto& g0 : batch.graphs) {
    const int t = rng.uniform_int(1, proc.T());
    Graph gt = forward_sample(g0, t, proc, rng);
    Tensor lp = model.log_prob_g0_given_gt(tape, g0, gt, t);
    total = total.defined() ? add(tape, total, lp) : lp;
  }
  return mul_scalar(tape, total, -1.0 / static_cast<double>(batch.size()));
}

std::vector<PretrainRecord> train(DenoiserModel& model,
                                  const GraphBatch& dataset,
                                  const PretrainConfig& cfg,
                                  const std::string& checkpoint_dir) {
  cfg.validate();
  dataset.validate();
  if (dataset.empty()) throw_invalid("train needs a nonempty dataset");
  if (dataset.node_cats != model.config().node_cats ||
      dataset.edge_cats != model.config().edge_cats)
    throw_config("dataset category counts do not match the model");
  if (cfg.T != model.config().T)
    throw_config("pretrain.T does not match the model's diffusion horizon");

  const DiffusionProcess proc =
      DiffusionProcess::shared(make_schedule(cfg.T, cfg.schedule));
  AdaptiveOptimizer opt(cfg.lr);
  Rng rng(derive_seed(cfg.seed, 0x70726574ULL));
  std::vector<PretrainRecord> records;
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // deterministic Fisher-Yates shuffle
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      GraphBatch mini;
      mini.node_cats = dataset.node_cats;
      mini.edge_cats = dataset.edge_cats;
      const size_t end =
          std::min(off + static_cast<size_t>(cfg.batch_size), order.size());
      for (size_t i = off; i < end; ++i)
        mini.graphs.push_back(dataset.graphs[order[i]]);

      model.zero_grads();
      Tape tape;
      Tensor loss = gdpm_loss(&tape, model, mini, proc, rng);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw_numeric("pretraining diverged: non-finite loss at epoch " +
                      std::to_string(epoch) + " step " + std::to_string(step));
      tape.backward(loss);
      auto grads = model.flat_grads();
      opt.step(model, grads, -1.0);
      ++step;
      records.push_back({epoch, step, value});
    }
    if (cfg.checkpoint_every > 0 && !checkpoint_dir.empty() &&
        epoch % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(checkpoint_dir);
      model.save(checkpoint_dir + "/checkpoint_epoch" + std::to_string(epoch) +
                 ".json");
    }
  }
  return records;
}

}  // namespace gdpo
