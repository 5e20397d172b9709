#include "../include/gdpo.h"

#include <cstring>
#include <string>

#include "dataset.hpp"
#include "denoiser.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "harness.hpp"
#include "rewards.hpp"
#include "util.hpp"

namespace {

thread_local std::string g_last_error;

gdpo_status to_status(gdpo::ErrorKind kind) {
  switch (kind) {
    case gdpo::ErrorKind::invalid_argument: return GDPO_ERR_INVALID_ARGUMENT;
    case gdpo::ErrorKind::config: return GDPO_ERR_CONFIG;
    case gdpo::ErrorKind::numeric: return GDPO_ERR_NUMERIC;
    case gdpo::ErrorKind::io: return GDPO_ERR_IO;
    case gdpo::ErrorKind::runtime: return GDPO_ERR_RUNTIME;
  }
  return GDPO_ERR_RUNTIME;
}

template <typename Fn>
gdpo_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return GDPO_OK;
  } catch (const gdpo::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GDPO_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return GDPO_ERR_RUNTIME;
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool cond, const char* msg) {
  if (!cond) gdpo::throw_invalid(msg);
}

nlohmann::json parse_config(const char* config_json) {
  require(config_json != nullptr, "null configuration");
  try {
    return nlohmann::json::parse(config_json);
  } catch (const nlohmann::json::exception& e) {
    gdpo::throw_config(std::string("configuration parse error: ") + e.what());
  }
}

}  // namespace

struct gdpo_graph {
  gdpo::Graph graph;
};

struct gdpo_model {
  explicit gdpo_model(gdpo::DenoiserModel m) : model(std::move(m)) {}
  gdpo::DenoiserModel model;
};

extern "C" {

const char* gdpo_version(void) { return gdpo::kVersion; }

const char* gdpo_last_error(void) { return g_last_error.c_str(); }

void gdpo_string_free(char* s) { delete[] s; }

gdpo_status gdpo_graph_parse(const char* json, gdpo_graph** out) {
  return guarded([&] {
    require(json != nullptr && out != nullptr, "null argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      gdpo::throw_config(std::string("graph json parse error: ") + e.what());
    }
    auto g = gdpo::Graph::from_json(j);
    g.validate();
    *out = new gdpo_graph{std::move(g)};
  });
}

gdpo_status gdpo_graph_dump(const gdpo_graph* g, char** json_out) {
  return guarded([&] {
    require(g != nullptr && json_out != nullptr, "null argument");
    *json_out = dup_string(g->graph.to_json().dump());
  });
}

void gdpo_graph_free(gdpo_graph* g) { delete g; }

gdpo_status gdpo_graph_node_count(const gdpo_graph* g, int* out) {
  return guarded([&] {
    require(g != nullptr && out != nullptr, "null argument");
    *out = g->graph.n();
  });
}

gdpo_status gdpo_graph_edge_count(const gdpo_graph* g, int* out) {
  return guarded([&] {
    require(g != nullptr && out != nullptr, "null argument");
    *out = g->graph.edge_count();
  });
}

gdpo_status gdpo_graph_is_connected(const gdpo_graph* g, int* out) {
  return guarded([&] {
    require(g != nullptr && out != nullptr, "null argument");
    *out = gdpo::is_connected(g->graph) ? 1 : 0;
  });
}

gdpo_status gdpo_graph_is_planar(const gdpo_graph* g, int* out) {
  return guarded([&] {
    require(g != nullptr && out != nullptr, "null argument");
    *out = gdpo::is_planar(g->graph) ? 1 : 0;
  });
}

gdpo_status gdpo_graph_is_tree_with_clique(const gdpo_graph* g,
                                           int clique_size, int* out) {
  return guarded([&] {
    require(g != nullptr && out != nullptr, "null argument");
    *out = gdpo::is_tree_with_clique(g->graph, clique_size) ? 1 : 0;
  });
}

gdpo_status gdpo_graph_wl_hash(const gdpo_graph* g, int rounds,
                               uint64_t* out) {
  return guarded([&] {
    require(g != nullptr && out != nullptr, "null argument");
    *out = gdpo::wl_hash(g->graph, rounds);
  });
}

gdpo_status gdpo_model_load(const char* path, gdpo_model** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = new gdpo_model(gdpo::DenoiserModel::load(path));
  });
}

gdpo_status gdpo_model_save(const gdpo_model* m, const char* path) {
  return guarded([&] {
    require(m != nullptr && path != nullptr, "null argument");
    m->model.save(path);
  });
}

void gdpo_model_free(gdpo_model* m) { delete m; }

gdpo_status gdpo_model_sample(const gdpo_model* m, int n,
                              const char* schedule, uint64_t seed,
                              gdpo_graph** out) {
  return guarded([&] {
    require(m != nullptr && schedule != nullptr && out != nullptr,
            "null argument");
    require(n >= 1, "node count must be >= 1");
    auto proc = gdpo::DiffusionProcess::shared(
        gdpo::make_schedule(m->model.config().T, schedule));
    *out = new gdpo_graph{gdpo::sample_graph(m->model, n, proc, seed)};
  });
}

gdpo_status gdpo_reward_eval(const char* spec_json,
                             const char* ref_dataset_path,
                             const gdpo_graph* g, double* out) {
  return guarded([&] {
    require(spec_json != nullptr && g != nullptr && out != nullptr,
            "null argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(spec_json);
    } catch (const nlohmann::json::exception& e) {
      gdpo::throw_config(std::string("reward spec parse error: ") + e.what());
    }
    auto spec = gdpo::RewardSpec::from_json(j);
    spec.validate();
    if (ref_dataset_path != nullptr && *ref_dataset_path != '\0')
      spec.reference = std::make_shared<const gdpo::GraphBatch>(
          gdpo::load_jsonl(ref_dataset_path));
    *out = gdpo::composite_reward(g->graph, spec);
  });
}

gdpo_status gdpo_run_gen_dataset(const char* config_json) {
  return guarded([&] {
    gdpo::run_gen_dataset(
        gdpo::resolve_config(parse_config(config_json), "gen-dataset"));
  });
}

gdpo_status gdpo_run_pretrain(const char* config_json) {
  return guarded([&] {
    gdpo::run_pretrain(
        gdpo::resolve_config(parse_config(config_json), "pretrain"));
  });
}

gdpo_status gdpo_run_finetune(const char* config_json) {
  return guarded([&] {
    gdpo::run_finetune(
        gdpo::resolve_config(parse_config(config_json), "finetune"));
  });
}

gdpo_status gdpo_run_eval(const char* config_json, char** result_json_out) {
  return guarded([&] {
    auto result =
        gdpo::run_eval(gdpo::resolve_config(parse_config(config_json), "eval"));
    if (result_json_out != nullptr)
      *result_json_out = dup_string(result.dump(2));
  });
}

gdpo_status gdpo_run_experiment(const char* config_json) {
  return guarded([&] {
    gdpo::run_experiment(
        gdpo::resolve_config(parse_config(config_json), "experiment"));
  });
}

gdpo_status gdpo_resolve_config(const char* command, const char* config_json,
                                char** resolved_json_out) {
  return guarded([&] {
    require(command != nullptr && resolved_json_out != nullptr,
            "null argument");
    auto resolved =
        gdpo::resolve_config(parse_config(config_json), command);
    *resolved_json_out = dup_string(resolved.dump(2));
  });
}

}  // extern "C"
