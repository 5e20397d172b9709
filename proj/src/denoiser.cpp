#include "denoiser.hpp"

#include <cmath>
#include <fstream>

#include "error.hpp"
#include "rng.hpp"

namespace gdpo {

namespace {
constexpr double kProbFloor = 1e-12;
const double kLogFloor = std::log(1e-12);
}  // namespace

void DenoiserConfig::validate() const {
  if (layers < 1 || layers > 10)
    throw_config("denoiser layers must be in [1, 10]");
  if (hidden < 2 || hidden % 2 != 0)
    throw_config("denoiser hidden width must be even and >= 2");
  if (node_cats < 1 || edge_cats < 2)
    throw_config("denoiser needs node_cats >= 1 and edge_cats >= 2");
  if (T < 1) throw_config("denoiser T must be >= 1");
  if (ffn_mult < 1) throw_config("denoiser ffn_mult must be >= 1");
}

DenoiserModel::DenoiserModel(DenoiserConfig cfg, uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, 0x64656e6fULL));
  const int d = cfg_.hidden;
  const int f = d * cfg_.ffn_mult;

  auto uniform_fan_in = [&](std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape), true);
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.value()) x = rng.uniform_symmetric(s);
    return t;
  };
  auto zeros = [&](std::vector<int> shape) { return Tensor(std::move(shape), true); };
  auto ones = [&](std::vector<int> shape) {
    Tensor t(std::move(shape), true);
    std::fill(t.value().begin(), t.value().end(), 1.0);
    return t;
  };

  register_param("embed.node", uniform_fan_in({cfg_.node_cats, d}, d));
  register_param("embed.edge", uniform_fan_in({cfg_.edge_cats, d}, d));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    register_param(p + "attn.wq", uniform_fan_in({d, d}, d));
    register_param(p + "attn.wk", uniform_fan_in({d, d}, d));
    register_param(p + "attn.wv", uniform_fan_in({d, d}, d));
    register_param(p + "attn.wo", uniform_fan_in({d, d}, d));
    register_param(p + "attn.edge_bias", uniform_fan_in({d, 1}, d));
    register_param(p + "ln1.gain", ones({d}));
    register_param(p + "ln1.bias", zeros({d}));
    register_param(p + "ffn.w1", uniform_fan_in({d, f}, d));
    register_param(p + "ffn.b1", zeros({f}));
    register_param(p + "ffn.w2", uniform_fan_in({f, d}, f));
    register_param(p + "ffn.b2", zeros({d}));
    register_param(p + "ln2.gain", ones({d}));
    register_param(p + "ln2.bias", zeros({d}));
    register_param(p + "edge.pair", uniform_fan_in({2 * d, d}, 2 * d));
    register_param(p + "edge.self", uniform_fan_in({d, d}, d));
    register_param(p + "edge.bias", zeros({d}));
    register_param(p + "ln3.gain", ones({d}));
    register_param(p + "ln3.bias", zeros({d}));
  }
  // zero heads: the untrained model is exactly uniform
  register_param("head.node.w", zeros({d, cfg_.node_cats}));
  register_param("head.node.b", zeros({cfg_.node_cats}));
  register_param("head.edge.w", zeros({d, cfg_.edge_cats}));
  register_param("head.edge.b", zeros({cfg_.edge_cats}));
}

void DenoiserModel::register_param(const std::string& name, Tensor t) {
  names_.push_back(name);
  params_.push_back(std::move(t));
}

Tensor DenoiserModel::param(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return params_[i];
  throw_invalid("unknown parameter " + name);
}

int64_t DenoiserModel::param_count() const {
  int64_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

DenoiserModel DenoiserModel::clone() const {
  DenoiserModel copy(cfg_, 0);
  for (size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].value();
    std::copy(src.begin(), src.end(), copy.params_[i].value().begin());
  }
  return copy;
}

void DenoiserModel::zero_grads() const {
  for (const auto& t : params_) {
    auto& g = t.impl()->grad;
    std::fill(g.begin(), g.end(), 0.0);
  }
}

std::vector<double> DenoiserModel::flat_grads() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(param_count()));
  for (const auto& t : params_) {
    auto g = t.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

void DenoiserModel::add_to_values(std::span<const double> delta) {
  if (static_cast<int64_t>(delta.size()) != param_count())
    throw_invalid("parameter update has wrong length");
  size_t off = 0;
  for (auto& t : params_) {
    auto v = t.value();
    for (size_t i = 0; i < v.size(); ++i) v[i] += delta[off + i];
    off += v.size();
  }
}

std::vector<std::pair<int64_t, int64_t>> DenoiserModel::ranges_matching(
    const std::string& substr) const {
  std::vector<std::pair<int64_t, int64_t>> out;
  int64_t off = 0;
  for (size_t i = 0; i < params_.size(); ++i) {
    const int64_t sz = params_[i].size();
    if (names_[i].find(substr) != std::string::npos)
      out.emplace_back(off, off + sz);
    off += sz;
  }
  return out;
}

void DenoiserModel::check_finite() const {
  for (size_t i = 0; i < params_.size(); ++i)
    for (double x : params_[i].value())
      if (!std::isfinite(x))
        throw_numeric("non-finite parameter value in " + names_[i]);
}

namespace {

Tensor sinusoidal_embedding(int t, int d) {
  Tensor emb({d});
  auto v = emb.value();
  for (int i = 0; i < d / 2; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / d);
    v[static_cast<size_t>(2 * i)] = std::sin(t * freq);
    v[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
  }
  return emb;
}

void check_layer_finite(const Tensor& t, int layer, const char* what) {
  for (double x : t.value())
    if (!std::isfinite(x))
      throw_numeric(std::string("denoiser: non-finite ") + what +
                    " activations in layer " + std::to_string(layer));
}

}  // namespace

DenoiserModel::Logits DenoiserModel::forward_logits(Tape* tape,
                                                    const Graph& gt,
                                                    int t) const {
  gt.validate();
  if (gt.node_cats() != cfg_.node_cats || gt.edge_cats() != cfg_.edge_cats)
    throw_invalid("graph category counts do not match the model");
  if (t < 1 || t > cfg_.T) throw_invalid("timestep out of model range");
  const int n = gt.n();
  const int d = cfg_.hidden;

  std::vector<int> node_idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) node_idx[static_cast<size_t>(i)] = gt.node_cat(i);
  std::vector<int> edge_idx(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      edge_idx[static_cast<size_t>(i) * n + j] = gt.edge_cat(i, j);
  // pair-major endpoint lookups used by the edge update
  std::vector<int> row_i(static_cast<size_t>(n) * n), row_j(row_i.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      row_i[static_cast<size_t>(i) * n + j] = i;
      row_j[static_cast<size_t>(i) * n + j] = j;
    }

  Tensor h = add(tape, embedding(tape, param("embed.node"), node_idx),
                 sinusoidal_embedding(t, d));
  Tensor f = embedding(tape, param("embed.edge"), edge_idx);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor q = matmul(tape, h, param(p + "attn.wq"));
    Tensor k = matmul(tape, h, param(p + "attn.wk"));
    Tensor v = matmul(tape, h, param(p + "attn.wv"));
    Tensor scores = mul_scalar(tape, matmul(tape, q, transpose(tape, k)), scale);
    Tensor bias = reshape(tape, matmul(tape, f, param(p + "attn.edge_bias")),
                          {n, n});
    scores = add(tape, scores, bias);
    Tensor attn = softmax(tape, scores, 1);
    Tensor h_att = matmul(tape, matmul(tape, attn, v), param(p + "attn.wo"));
    h = layer_norm(tape, add(tape, h, h_att), param(p + "ln1.gain"),
                   param(p + "ln1.bias"));
    Tensor ff = matmul(
        tape,
        relu(tape, add(tape, matmul(tape, h, param(p + "ffn.w1")),
                       param(p + "ffn.b1"))),
        param(p + "ffn.w2"));
    ff = add(tape, ff, param(p + "ffn.b2"));
    h = layer_norm(tape, add(tape, h, ff), param(p + "ln2.gain"),
                   param(p + "ln2.bias"));
    check_layer_finite(h, l, "node");

    Tensor hi = select_rows(tape, h, row_i);
    Tensor hj = select_rows(tape, h, row_j);
    Tensor pair = concat(tape, hi, hj, 1);
    Tensor fmix = add(tape,
                      add(tape, matmul(tape, pair, param(p + "edge.pair")),
                          matmul(tape, f, param(p + "edge.self"))),
                      param(p + "edge.bias"));
    f = layer_norm(tape, add(tape, f, relu(tape, fmix)),
                   param(p + "ln3.gain"), param(p + "ln3.bias"));
    check_layer_finite(f, l, "edge");
  }

  Logits out;
  out.node = add(tape, matmul(tape, h, param("head.node.w")),
                 param("head.node.b"));
  Tensor ze = add(tape, matmul(tape, f, param("head.edge.w")),
                  param("head.edge.b"));
  out.edge = mul_scalar(tape, add(tape, ze, pair_transpose(tape, ze, n)), 0.5);
  check_layer_finite(out.node, cfg_.layers, "node-head");
  check_layer_finite(out.edge, cfg_.layers, "edge-head");
  return out;
}

Prediction DenoiserModel::forward(Tape* tape, const Graph& gt, int t) const {
  Logits logits = forward_logits(tape, gt, t);
  Prediction pred;
  pred.node_probs = softmax(tape, logits.node, 1);
  pred.edge_probs = softmax(tape, logits.edge, 1);
  return pred;
}

Tensor DenoiserModel::log_prob_g0_given_gt(Tape* tape, const Graph& g0,
                                           const Graph& gt, int t) const {
  if (g0.n() != gt.n()) throw_invalid("g0 and gt must share node count");
  const int n = gt.n();
  Logits logits = forward_logits(tape, gt, t);

  Tensor node_logp =
      clamp_min(tape, log_softmax(tape, logits.node, 1), kLogFloor);
  std::vector<int> node_cats(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) node_cats[static_cast<size_t>(i)] = g0.node_cat(i);
  Tensor node_term =
      sum_all(tape, gather_per_row(tape, node_logp, node_cats));

  std::vector<int> upper_rows, edge_cats;
  upper_rows.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      upper_rows.push_back(i * n + j);
      edge_cats.push_back(g0.edge_cat(i, j));
    }
  if (upper_rows.empty()) return node_term;
  Tensor edge_logp = clamp_min(
      tape,
      log_softmax(tape, select_rows(tape, logits.edge, upper_rows), 1),
      kLogFloor);
  Tensor edge_term = sum_all(tape, gather_per_row(tape, edge_logp, edge_cats));
  return add(tape, node_term, edge_term);
}

Tensor DenoiserModel::log_prob_step(Tape* tape, const Graph& g_prev,
                                    const Graph& g_t, int t,
                                    const DiffusionProcess& proc) const {
  if (g_prev.n() != g_t.n()) throw_invalid("graphs must share node count");
  if (t < 1 || t > proc.T()) throw_invalid("log_prob_step: t out of range");
  const int n = g_t.n(), a = cfg_.node_cats, b = cfg_.edge_cats;
  Logits logits = forward_logits(tape, g_t, t);
  Tensor node_probs = softmax(tape, logits.node, 1);

  // mixture over candidate clean categories: the posterior weights carry no
  // parameter dependence, so they enter as constants
  Tensor w_node({n, a});
  {
    auto wv = w_node.value();
    for (int i = 0; i < n; ++i) {
      auto w = posterior_weights(g_t.node_cat(i), g_prev.node_cat(i), t,
                                 proc.nodes, a);
      std::copy(w.begin(), w.end(), &wv[static_cast<size_t>(i) * a]);
    }
  }
  Tensor node_mix = sum_axis(tape, mul(tape, node_probs, w_node), 1);
  Tensor node_term = sum_all(tape, log_clamped(tape, node_mix, kProbFloor));

  std::vector<int> upper_rows;
  upper_rows.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) upper_rows.push_back(i * n + j);
  if (upper_rows.empty()) return node_term;
  Tensor edge_probs =
      softmax(tape, select_rows(tape, logits.edge, upper_rows), 1);
  Tensor w_edge({static_cast<int>(upper_rows.size()), b});
  {
    auto wv = w_edge.value();
    size_t r = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        auto w = posterior_weights(g_t.edge_cat(i, j), g_prev.edge_cat(i, j),
                                   t, proc.edges, b);
        std::copy(w.begin(), w.end(), &wv[r * b]);
        ++r;
      }
  }
  Tensor edge_mix = sum_axis(tape, mul(tape, edge_probs, w_edge), 1);
  Tensor edge_term = sum_all(tape, log_clamped(tape, edge_mix, kProbFloor));
  return add(tape, node_term, edge_term);
}

// ---- checkpoints -------------------------------------------------------------

nlohmann::json DenoiserModel::to_json() const {
  nlohmann::json j;
  j["format"] = "gdpo-checkpoint";
  j["version"] = 1;
  j["header"] = {{"layers", cfg_.layers},   {"hidden", cfg_.hidden},
                 {"node_cats", cfg_.node_cats}, {"edge_cats", cfg_.edge_cats},
                 {"T", cfg_.T},             {"ffn_mult", cfg_.ffn_mult}};
  nlohmann::json params = nlohmann::json::object();
  for (size_t i = 0; i < names_.size(); ++i) {
    auto v = params_[i].value();
    params[names_[i]] = std::vector<double>(v.begin(), v.end());
  }
  j["params"] = std::move(params);
  return j;
}

DenoiserModel DenoiserModel::from_json(const nlohmann::json& j) {
  if (!j.contains("format") || j.at("format") != "gdpo-checkpoint")
    throw_config("not a gdpo checkpoint");
  if (!j.contains("version") || j.at("version").get<int>() != 1)
    throw_config("unsupported checkpoint version");
  const auto& h = j.at("header");
  DenoiserConfig cfg;
  cfg.layers = h.at("layers").get<int>();
  cfg.hidden = h.at("hidden").get<int>();
  cfg.node_cats = h.at("node_cats").get<int>();
  cfg.edge_cats = h.at("edge_cats").get<int>();
  cfg.T = h.at("T").get<int>();
  cfg.ffn_mult = h.at("ffn_mult").get<int>();
  DenoiserModel model(cfg, 0);
  const auto& params = j.at("params");
  for (size_t i = 0; i < model.names_.size(); ++i) {
    if (!params.contains(model.names_[i]))
      throw_config("checkpoint missing parameter " + model.names_[i]);
    auto vals = params.at(model.names_[i]).get<std::vector<double>>();
    if (static_cast<int64_t>(vals.size()) != model.params_[i].size())
      throw_config("checkpoint parameter " + model.names_[i] +
                   " has wrong size");
    std::copy(vals.begin(), vals.end(), model.params_[i].value().begin());
  }
  model.check_finite();
  return model;
}

void DenoiserModel::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw_io("cannot write checkpoint to " + path);
  os << to_json().dump();
  if (!os) throw_io("failed writing checkpoint to " + path);
}

DenoiserModel DenoiserModel::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_io("cannot read checkpoint from " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_config("checkpoint parse error: " + std::string(e.what()));
  }
  return from_json(j);
}

// ---- sampling wrappers ---------------------------------------------------------

PredictFn predictor(const DenoiserModel& model) {
  return [&model](const Graph& gt, int t) {
    return model.forward(nullptr, gt, t);
  };
}

Trajectory sample_trajectory(const DenoiserModel& model, int n,
                             const DiffusionProcess& proc, uint64_t seed,
                             bool record) {
  return sample_trajectory(predictor(model), n, model.config().node_cats,
                           model.config().edge_cats, proc, seed, record);
}

Graph sample_graph(const DenoiserModel& model, int n,
                   const DiffusionProcess& proc, uint64_t seed) {
  return sample_trajectory(model, n, proc, seed, false).final_graph();
}

// ---- optimizer -------------------------------------------------------------------

void AdaptiveOptimizer::step(DenoiserModel& model, std::span<const double> grad,
                             double direction) {
  const size_t m = grad.size();
  if (v_.empty()) v_.assign(m, 0.0);
  if (v_.size() != m) throw_invalid("optimizer state size mismatch");
  ++steps_;
  const double correction =
      1.0 - std::pow(beta2_, static_cast<double>(steps_));
  std::vector<double> delta(m);
  for (size_t i = 0; i < m; ++i) {
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double vhat = v_[i] / correction;
    delta[i] = direction * lr_ * grad[i] / (std::sqrt(vhat) + eps_);
  }
  model.add_to_values(delta);
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grad) g *= s;
  }
  return norm;
}

}  // namespace gdpo
