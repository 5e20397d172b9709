#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "graph.hpp"

namespace gdpo {

// Similarity statistics compare per-graph histograms with a Gaussian kernel
// over total-variation distance.
struct MmdConfig {
  std::string kind = "degree";  // degree | clustering | orbit
  double bandwidth = 1.0;       // kernel bandwidth
  double sigma = 1.0;           // reward scale for exp(-mmd^2 / sigma^2)

  void validate() const;
};

// Squared MMD between the two sets' statistic histograms (biased V-statistic,
// zero on identical sets).
double mmd(const GraphBatch& set_a, const GraphBatch& set_b,
           const MmdConfig& cfg);

// exp(-mmd({g}, ref)^2 / sigma^2), in (0, 1]; equals 1 iff mmd is 0
double r_similarity(const Graph& g, const GraphBatch& ref,
                    const MmdConfig& cfg);

// predicates: connected | planar | tree_with_clique (requires clique_size)
double r_validity(const Graph& g, const std::string& predicate,
                  int clique_size = 0);

// MMD(gen, test) / MMD(train, test) on squared MMD values; errors on a zero
// denominator
double mmd_ratio(const GraphBatch& gen, const GraphBatch& train,
                 const GraphBatch& test, const MmdConfig& cfg);

// Fraction of samples that pass the predicate, are the first occurrence of
// their WL class within the sample set, and have no WL match in train.
double vun_rate(const GraphBatch& samples, const GraphBatch& train,
                const std::string& predicate, int clique_size = 0);

struct RewardTerm {
  std::string term;  // validity | degree_mmd | clustering_mmd | orbit_mmd |
                     // novelty | docking_score | qed | synthetic_accessibility
  double weight = 0.0;
  nlohmann::json params;  // per-term configuration
};

// Declarative weighted sum of reward terms. The reference batch backs the
// similarity terms and is attached by the caller after parsing.
struct RewardSpec {
  std::vector<RewardTerm> terms;
  std::shared_ptr<const GraphBatch> reference;

  // named preset implementing the general-graph reward
  // 0.1*(deg + clus + orb) + 0.7*validity
  static RewardSpec general_graph(const std::string& validity_predicate,
                                  int clique_size = 0);
  static RewardSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // throws a config error naming the offending term/field
  void validate() const;
};

double composite_reward(const Graph& g, const RewardSpec& spec);

}  // namespace gdpo
