#include "rewards.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "error.hpp"

namespace gdpo {

void MmdConfig::validate() const {
  if (kind != "degree" && kind != "clustering" && kind != "orbit")
    throw_config("mmd statistic kind '" + kind +
                 "' unknown (degree|clustering|orbit)");
  if (!(bandwidth > 0.0)) throw_config("mmd kernel bandwidth must be > 0");
  if (!(sigma > 0.0)) throw_config("mmd reward sigma must be > 0");
}

namespace {

constexpr int kCoefBins = 100;  // uniform bins on [0,1]

std::vector<double> degree_hist(const Graph& g) {
  auto h = degree_histogram(g);
  std::vector<double> out(h.size());
  const double inv = 1.0 / std::max(g.n(), 1);
  for (size_t i = 0; i < h.size(); ++i) out[i] = h[i] * inv;
  return out;
}

std::vector<double> binned_unit_hist(const std::vector<double>& values) {
  std::vector<double> out(kCoefBins, 0.0);
  if (values.empty()) return out;
  const double inv = 1.0 / static_cast<double>(values.size());
  for (double v : values) {
    int bin = static_cast<int>(v * kCoefBins);
    bin = std::clamp(bin, 0, kCoefBins - 1);
    out[static_cast<size_t>(bin)] += inv;
  }
  return out;
}

std::vector<double> clustering_hist(const Graph& g) {
  return binned_unit_hist(clustering_coefficients(g));
}

std::vector<double> orbit_hist(const Graph& g) {
  auto counts = orbit_counts_4(g);
  // per-node participation normalized by the C(n-1, 3) possible 4-subsets
  const int n = g.n();
  double denom = 1.0;
  if (n >= 4)
    denom = static_cast<double>(n - 1) * (n - 2) * (n - 3) / 6.0;
  std::vector<double> vals(counts.size());
  for (size_t i = 0; i < counts.size(); ++i)
    vals[i] = static_cast<double>(counts[i]) / denom;
  return binned_unit_hist(vals);
}

std::vector<double> statistic_hist(const Graph& g, const std::string& kind) {
  if (kind == "degree") return degree_hist(g);
  if (kind == "clustering") return clustering_hist(g);
  return orbit_hist(g);
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  const size_t n = std::max(p.size(), q.size());
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double a = i < p.size() ? p[i] : 0.0;
    const double b = i < q.size() ? q[i] : 0.0;
    s += std::abs(a - b);
  }
  return 0.5 * s;
}

double gaussian_tv_kernel(const std::vector<double>& p,
                          const std::vector<double>& q, double bw) {
  const double d = tv_distance(p, q);
  return std::exp(-d * d / (2.0 * bw * bw));
}

double mmd_from_hists(const std::vector<std::vector<double>>& ha,
                      const std::vector<std::vector<double>>& hb, double bw) {
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (const auto& x : ha)
    for (const auto& y : ha) kaa += gaussian_tv_kernel(x, y, bw);
  for (const auto& x : hb)
    for (const auto& y : hb) kbb += gaussian_tv_kernel(x, y, bw);
  for (const auto& x : ha)
    for (const auto& y : hb) kab += gaussian_tv_kernel(x, y, bw);
  const double na = static_cast<double>(ha.size());
  const double nb = static_cast<double>(hb.size());
  const double m = kaa / (na * na) + kbb / (nb * nb) - 2.0 * kab / (na * nb);
  return m > 0.0 ? m : 0.0;
}

std::vector<std::vector<double>> batch_hists(const GraphBatch& set,
                                             const std::string& kind) {
  std::vector<std::vector<double>> out;
  out.reserve(set.graphs.size());
  for (const auto& g : set.graphs) out.push_back(statistic_hist(g, kind));
  return out;
}

}  // namespace

double mmd(const GraphBatch& set_a, const GraphBatch& set_b,
           const MmdConfig& cfg) {
  cfg.validate();
  if (set_a.empty() || set_b.empty())
    throw_invalid("mmd requires nonempty graph sets");
  return mmd_from_hists(batch_hists(set_a, cfg.kind),
                        batch_hists(set_b, cfg.kind), cfg.bandwidth);
}

double r_similarity(const Graph& g, const GraphBatch& ref,
                    const MmdConfig& cfg) {
  GraphBatch single;
  single.node_cats = g.node_cats();
  single.edge_cats = g.edge_cats();
  single.graphs.push_back(g);
  const double m = mmd(single, ref, cfg);
  return std::exp(-m * m / (cfg.sigma * cfg.sigma));
}

double r_validity(const Graph& g, const std::string& predicate,
                  int clique_size) {
  if (predicate == "connected") return is_connected(g) ? 1.0 : 0.0;
  if (predicate == "planar") return is_planar(g) ? 1.0 : 0.0;
  if (predicate == "tree_with_clique") {
    if (clique_size < 3)
      throw_config("tree_with_clique predicate needs clique_size >= 3");
    return is_tree_with_clique(g, clique_size) ? 1.0 : 0.0;
  }
  throw_config("unknown validity predicate '" + predicate + "'");
}

double mmd_ratio(const GraphBatch& gen, const GraphBatch& train,
                 const GraphBatch& test, const MmdConfig& cfg) {
  const double denom = mmd(train, test, cfg);
  if (denom <= 0.0)
    throw_numeric("mmd_ratio undefined: MMD(train, test) is zero");
  return mmd(gen, test, cfg) / denom;
}

double vun_rate(const GraphBatch& samples, const GraphBatch& train,
                const std::string& predicate, int clique_size) {
  if (samples.empty()) return 0.0;
  std::unordered_set<uint64_t> train_hashes;
  for (const auto& g : train.graphs) train_hashes.insert(wl_hash(g));
  std::unordered_set<uint64_t> seen;
  int count = 0;
  for (const auto& g : samples.graphs) {
    const uint64_t h = wl_hash(g);
    const bool unique = seen.insert(h).second;
    if (!unique) continue;
    if (train_hashes.count(h)) continue;  // not novel
    if (r_validity(g, predicate, clique_size) == 1.0) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(samples.size());
}

// ---- RewardSpec ---------------------------------------------------------

namespace {

const char* const kStubTerms[] = {"novelty", "docking_score", "qed",
                                  "synthetic_accessibility"};

bool is_stub_term(const std::string& name) {
  for (const char* s : kStubTerms)
    if (name == s) return true;
  return false;
}

bool is_similarity_term(const std::string& name) {
  return name == "degree_mmd" || name == "clustering_mmd" ||
         name == "orbit_mmd";
}

MmdConfig term_mmd_config(const RewardTerm& term) {
  MmdConfig cfg;
  if (term.term == "degree_mmd") cfg.kind = "degree";
  else if (term.term == "clustering_mmd") cfg.kind = "clustering";
  else cfg.kind = "orbit";
  if (term.params.contains("bandwidth"))
    cfg.bandwidth = term.params.at("bandwidth").get<double>();
  if (term.params.contains("sigma"))
    cfg.sigma = term.params.at("sigma").get<double>();
  return cfg;
}

double eval_term(const Graph& g, const RewardTerm& term,
                 const GraphBatch* reference) {
  if (term.term == "validity") {
    const std::string pred = term.params.value("predicate", "");
    const int k = term.params.value("clique_size", 0);
    return r_validity(g, pred, k);
  }
  if (is_similarity_term(term.term)) {
    if (reference == nullptr || reference->empty())
      throw_config("term '" + term.term + "' needs a reference dataset");
    return r_similarity(g, *reference, term_mmd_config(term));
  }
  if (is_stub_term(term.term))
    throw_config("term '" + term.term +
                 "' requires external chemistry tooling and is unavailable");
  throw_config("unknown reward term '" + term.term + "'");
}

}  // namespace

RewardSpec RewardSpec::general_graph(const std::string& validity_predicate,
                                     int clique_size) {
  RewardSpec spec;
  for (const char* name : {"degree_mmd", "clustering_mmd", "orbit_mmd"})
    spec.terms.push_back({name, 0.1, nlohmann::json::object()});
  nlohmann::json vp{{"predicate", validity_predicate}};
  if (clique_size > 0) vp["clique_size"] = clique_size;
  spec.terms.push_back({"validity", 0.7, std::move(vp)});
  return spec;
}

RewardSpec RewardSpec::from_json(const nlohmann::json& j) {
  RewardSpec spec;
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    if (preset != "general_graph")
      throw_config("reward.preset: unknown preset '" + preset + "'");
    spec = general_graph(j.value("validity_predicate", "connected"),
                         j.value("clique_size", 0));
    return spec;
  }
  if (!j.contains("terms") || !j.at("terms").is_array())
    throw_config("reward.terms: expected an array of {term, weight, params}");
  for (const auto& t : j.at("terms")) {
    RewardTerm term;
    term.term = t.value("term", "");
    if (term.term.empty()) throw_config("reward.terms[].term: missing name");
    if (!t.contains("weight"))
      throw_config("reward.terms[].weight: missing for term '" + term.term +
                   "'");
    term.weight = t.at("weight").get<double>();
    term.params = t.value("params", nlohmann::json::object());
    spec.terms.push_back(std::move(term));
  }
  return spec;
}

nlohmann::json RewardSpec::to_json() const {
  nlohmann::json j;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : terms)
    arr.push_back({{"term", t.term}, {"weight", t.weight}, {"params", t.params}});
  j["terms"] = std::move(arr);
  return j;
}

void RewardSpec::validate() const {
  if (terms.empty()) throw_config("reward: no terms configured");
  for (const auto& t : terms) {
    if (!std::isfinite(t.weight))
      throw_config("reward term '" + t.term + "': weight must be finite");
    if (is_stub_term(t.term))
      throw_config("reward term '" + t.term +
                   "' requires external chemistry tooling and is unavailable");
    if (t.term == "validity") {
      const std::string pred = t.params.value("predicate", "");
      if (pred != "connected" && pred != "planar" &&
          pred != "tree_with_clique")
        throw_config("reward term 'validity': unknown predicate '" + pred +
                     "'");
      if (pred == "tree_with_clique" && t.params.value("clique_size", 0) < 3)
        throw_config("reward term 'validity': clique_size must be >= 3");
    } else if (!is_similarity_term(t.term)) {
      throw_config("unknown reward term '" + t.term + "'");
    }
  }
}

double composite_reward(const Graph& g, const RewardSpec& spec) {
  double total = 0.0;
  for (const auto& term : spec.terms) {
    double v = 0.0;
    try {
      v = eval_term(g, term, spec.reference.get());
    } catch (const Error& e) {
      throw Error(e.kind(), "reward term '" + term.term + "': " + e.what());
    }
    total += term.weight * v;
  }
  return total;
}

}  // namespace gdpo
