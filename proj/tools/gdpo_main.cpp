// Command-line front end. Talks to the core exclusively through the C API;
// config files are plain JSON with dotted-key overrides applied here.
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gdpo.h"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;  // string so "unset" is representable
};

int fail(gdpo_status status) {
  std::fprintf(stderr, "error: %s\n", gdpo_last_error());
  return status == GDPO_ERR_CONFIG ? 2 : 1;
}

// Reads the config file, applies --set overrides and the --seed flag, and
// resolves it through the library so config errors surface before running.
bool prepare_config(const std::string& command, const CommonArgs& args,
                    std::string& out_json, int& exit_code) {
  nlohmann::json cfg = nlohmann::json::object();
  if (!args.config_path.empty()) {
    std::ifstream is(args.config_path);
    if (!is) {
      std::fprintf(stderr, "error: cannot open config file %s\n",
                   args.config_path.c_str());
      exit_code = 2;
      return false;
    }
    try {
      is >> cfg;
    } catch (const nlohmann::json::exception& e) {
      std::fprintf(stderr, "error: %s: invalid json: %s\n",
                   args.config_path.c_str(), e.what());
      exit_code = 2;
      return false;
    }
  }
  for (const auto& kv : args.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key.path=value, got '%s'\n",
                   kv.c_str());
      exit_code = 2;
      return false;
    }
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(kv.substr(eq + 1));
    } catch (const nlohmann::json::exception&) {
      value = kv.substr(eq + 1);
    }
    nlohmann::json* cur = &cfg;
    std::istringstream ss(kv.substr(0, eq));
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!cur->contains(parts[i]) || !(*cur)[parts[i]].is_object())
        (*cur)[parts[i]] = nlohmann::json::object();
      cur = &(*cur)[parts[i]];
    }
    (*cur)[parts.back()] = value;
  }
  if (!args.seed.empty()) cfg["seed"] = std::stoll(args.seed);

  char* resolved = nullptr;
  const gdpo_status status =
      gdpo_resolve_config(command.c_str(), cfg.dump().c_str(), &resolved);
  if (status != GDPO_OK) {
    exit_code = fail(status);
    return false;
  }
  out_json = resolved;
  gdpo_string_free(resolved);
  return true;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool seed_required) {
  cmd->add_option("--config", args.config_path, "JSON configuration file");
  cmd->add_option("--set", args.overrides,
                  "dotted-key override, e.g. finetune.K=64 (repeatable)");
  auto* seed =
      cmd->add_option("--seed", args.seed, "root random seed (integer)");
  if (seed_required) seed->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph diffusion models with policy-gradient fine-tuning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gdpo_version()));

  struct Sub {
    const char* cli_name;
    const char* command;     // resolver command
    const char* experiment;  // non-null for experiment subcommands
    const char* help;
    bool seed_required;
  };
  const Sub subs[] = {
      {"gen-dataset", "gen-dataset", nullptr,
       "generate a synthetic tree+clique dataset", false},
      {"pretrain", "pretrain", nullptr,
       "pretrain a denoiser on a graph dataset", false},
      {"finetune", "finetune", nullptr,
       "policy-gradient fine-tuning against a reward", false},
      {"eval", "eval", nullptr,
       "evaluate generated graphs (validity, V.U.N, MMD ratios)", false},
      {"exp-connectivity", "experiment", "connectivity",
       "estimator comparison on the connectivity reward", true},
      {"exp-tree-clique", "experiment", "tree_clique",
       "pretrain + fine-tune ablation on tree+clique data", true},
      {"exp-step-distance", "experiment", "step_distance",
       "consecutive-step distance profile of sampled trajectories", true},
  };

  std::vector<CommonArgs> args(std::size(subs));
  std::vector<CLI::App*> cmds;
  for (size_t i = 0; i < std::size(subs); ++i) {
    CLI::App* cmd = app.add_subcommand(subs[i].cli_name, subs[i].help);
    add_common(cmd, args[i], subs[i].seed_required);
    cmds.push_back(cmd);
  }

  CLI11_PARSE(app, argc, argv);

  for (size_t i = 0; i < std::size(subs); ++i) {
    if (!cmds[i]->parsed()) continue;
    CommonArgs a = args[i];
    if (subs[i].experiment != nullptr)
      a.overrides.insert(a.overrides.begin(),
                         std::string("experiment=") + subs[i].experiment);
    std::string resolved;
    int exit_code = 0;
    if (!prepare_config(subs[i].command, a, resolved, exit_code))
      return exit_code;

    gdpo_status status = GDPO_OK;
    const std::string cmd = subs[i].command;
    if (cmd == "gen-dataset") {
      status = gdpo_run_gen_dataset(resolved.c_str());
    } else if (cmd == "pretrain") {
      status = gdpo_run_pretrain(resolved.c_str());
    } else if (cmd == "finetune") {
      status = gdpo_run_finetune(resolved.c_str());
    } else if (cmd == "eval") {
      char* result = nullptr;
      status = gdpo_run_eval(resolved.c_str(), &result);
      if (status == GDPO_OK) {
        std::printf("%s\n", result);
        gdpo_string_free(result);
      }
    } else {
      status = gdpo_run_experiment(resolved.c_str());
    }
    if (status != GDPO_OK) return fail(status);
    return 0;
  }
  return 0;
}
