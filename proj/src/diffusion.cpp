#include "diffusion.hpp"

#include <cmath>

#include "error.hpp"

namespace gdpo {

void Prediction::check_normalized(double tol) const {
  const int n = node_probs.dim(0), a = node_probs.dim(1);
  auto nv = node_probs.value();
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < a; ++c) s += nv[static_cast<size_t>(i) * a + c];
    if (std::abs(s - 1.0) > tol)
      throw_invalid("prediction node row " + std::to_string(i) +
                    " is not normalized");
  }
  const int b = edge_probs.dim(1);
  auto ev = edge_probs.value();
  for (int r = 0; r < edge_probs.dim(0); ++r) {
    double s = 0.0;
    for (int c = 0; c < b; ++c) s += ev[static_cast<size_t>(r) * b + c];
    if (std::abs(s - 1.0) > tol)
      throw_invalid("prediction edge row " + std::to_string(r) +
                    " is not normalized");
  }
}

Graph forward_sample(const Graph& g0, int t, const DiffusionProcess& proc,
                     Rng& rng) {
  if (t < 1 || t > proc.T()) throw_invalid("forward_sample: t out of range");
  Graph gt(g0.n(), g0.node_cats(), g0.edge_cats());
  for (int i = 0; i < g0.n(); ++i) {
    auto p = q_t_given_0(g0.node_cat(i), t, proc.nodes, g0.node_cats());
    gt.set_node_cat(i, rng.categorical(p));
  }
  for (int i = 0; i < g0.n(); ++i)
    for (int j = i + 1; j < g0.n(); ++j) {
      auto p = q_t_given_0(g0.edge_cat(i, j), t, proc.edges, g0.edge_cats());
      gt.set_edge_cat(i, j, rng.categorical(p));
    }
  return gt;
}

Prediction reverse_step_distribution(const Graph& gt, int t,
                                     const Prediction& pred0,
                                     const DiffusionProcess& proc) {
  if (t < 1 || t > proc.T())
    throw_invalid("reverse_step_distribution: t out of range");
  const int n = gt.n(), a = gt.node_cats(), b = gt.edge_cats();
  if (pred0.node_probs.dim(0) != n || pred0.node_probs.dim(1) != a ||
      pred0.edge_probs.dim(0) != n * n || pred0.edge_probs.dim(1) != b)
    throw_invalid("reverse_step_distribution: prediction shape mismatch");
  pred0.check_normalized();

  Prediction out;
  out.node_probs = Tensor({n, a});
  out.edge_probs = Tensor({n * n, b});
  auto onv = out.node_probs.value();
  auto oev = out.edge_probs.value();
  auto pnv = pred0.node_probs.value();
  auto pev = pred0.edge_probs.value();

  if (t == 1) {  // the final step samples the clean prediction directly
    std::copy(pnv.begin(), pnv.end(), onv.begin());
    std::copy(pev.begin(), pev.end(), oev.begin());
    for (int i = 0; i < n; ++i) {
      double* row = &oev[(static_cast<size_t>(i) * n + i) * b];
      std::fill(row, row + b, 0.0);
      row[0] = 1.0;
    }
    return out;
  }

  for (int i = 0; i < n; ++i) {
    double* row = &onv[static_cast<size_t>(i) * a];
    const double* pr = &pnv[static_cast<size_t>(i) * a];
    for (int c = 0; c < a; ++c) {
      if (pr[c] == 0.0) continue;
      auto post = q_posterior(gt.node_cat(i), c, t, proc.nodes, a);
      for (int j = 0; j < a; ++j) row[j] += pr[c] * post[static_cast<size_t>(j)];
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double* row = &oev[(static_cast<size_t>(i) * n + j) * b];
      const double* pr = &pev[(static_cast<size_t>(i) * n + j) * b];
      for (int c = 0; c < b; ++c) {
        if (pr[c] == 0.0) continue;
        auto post = q_posterior(gt.edge_cat(i, j), c, t, proc.edges, b);
        for (int x = 0; x < b; ++x)
          row[x] += pr[c] * post[static_cast<size_t>(x)];
      }
      std::copy(row, row + b, &oev[(static_cast<size_t>(j) * n + i) * b]);
    }
  for (int i = 0; i < n; ++i)
    oev[(static_cast<size_t>(i) * n + i) * b] = 1.0;
  return out;
}

const Graph& Trajectory::graph_at(int t) const {
  if (!recorded) throw_invalid("trajectory was sampled without record");
  const int T = static_cast<int>(graphs.size()) - 1;
  if (t < 0 || t > T) throw_invalid("trajectory step out of range");
  return graphs[static_cast<size_t>(T - t)];
}

namespace {
constexpr double kProbFloor = 1e-12;
}

Trajectory sample_trajectory(const PredictFn& predict, int n, int node_cats,
                             int edge_cats, const DiffusionProcess& proc,
                             uint64_t seed, bool record) {
  Rng rng(seed);
  const int T = proc.T();
  Trajectory traj;
  traj.seed = seed;
  traj.recorded = record;
  traj.step_log_prob.assign(static_cast<size_t>(T), 0.0);

  Graph g(n, node_cats, edge_cats);
  for (int i = 0; i < n; ++i) g.set_node_cat(i, rng.uniform_int(0, node_cats - 1));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      g.set_edge_cat(i, j, rng.uniform_int(0, edge_cats - 1));

  if (record) traj.graphs.push_back(g);
  for (int t = T; t >= 1; --t) {
    Prediction pred = predict(g, t);
    Prediction dist = reverse_step_distribution(g, t, pred, proc);
    Graph next(n, node_cats, edge_cats);
    double logp = 0.0;
    auto nv = dist.node_probs.value();
    for (int i = 0; i < n; ++i) {
      std::span<const double> row{&nv[static_cast<size_t>(i) * node_cats],
                                  static_cast<size_t>(node_cats)};
      const int c = rng.categorical(row);
      next.set_node_cat(i, c);
      logp += std::log(std::max(row[static_cast<size_t>(c)], kProbFloor));
    }
    auto ev = dist.edge_probs.value();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        std::span<const double> row{
            &ev[(static_cast<size_t>(i) * n + j) * edge_cats],
            static_cast<size_t>(edge_cats)};
        const int c = rng.categorical(row);
        next.set_edge_cat(i, j, c);
        logp += std::log(std::max(row[static_cast<size_t>(c)], kProbFloor));
      }
    traj.step_log_prob[static_cast<size_t>(t - 1)] = logp;
    g = std::move(next);
    if (record || t == 1) traj.graphs.push_back(g);
  }
  return traj;
}

void dump_trajectory_jsonl(const Trajectory& traj, std::ostream& os) {
  if (!traj.recorded) {
    nlohmann::json line = traj.final_graph().to_json();
    line["step"] = 0;
    os << line.dump() << "\n";
    return;
  }
  const int T = static_cast<int>(traj.graphs.size()) - 1;
  for (int idx = 0; idx <= T; ++idx) {
    nlohmann::json line = traj.graphs[static_cast<size_t>(idx)].to_json();
    line["step"] = T - idx;
    os << line.dump() << "\n";
  }
}

}  // namespace gdpo
