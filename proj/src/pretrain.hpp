#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "diffusion.hpp"
#include "graph.hpp"
#include "rng.hpp"

namespace gdpo {

struct PretrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr = 3e-3;
  int T = 50;
  std::string schedule = "cosine";
  uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 disables

  void validate() const;
};

struct PretrainRecord {
  int epoch = 0;
  int step = 0;  // global optimizer step
  double loss = 0.0;
};

// Monte Carlo estimate of the (negated) likelihood objective: per sample, a
// uniform t and a forward-corrupted G_t, scored by -log p(G_0 | G_t).
// Returns the batch mean as a differentiable scalar.
Tensor gdpm_loss(Tape* tape, const DenoiserModel& model,
                 const GraphBatch& batch, const DiffusionProcess& proc,
                 Rng& rng);

// Epochs of shuffled minibatch descent. Deterministic under a fixed seed;
// aborts with a numeric error if the loss goes non-finite.
std::vector<PretrainRecord> train(DenoiserModel& model,
                                  const GraphBatch& dataset,
                                  const PretrainConfig& cfg,
                                  const std::string& checkpoint_dir = "");

}  // namespace gdpo
