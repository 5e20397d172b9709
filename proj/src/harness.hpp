#pragma once

#include <string>

#include <json.hpp>

namespace gdpo {

// Fills in defaults for the given command, validates field types and ranges
// (errors carry dotted field paths), and rejects unknown keys.
// commands: gen-dataset | pretrain | finetune | eval | experiment
nlohmann::json resolve_config(const nlohmann::json& user,
                              const std::string& command);

// "a.b.c=value" with the value parsed as JSON when possible, else a string
void apply_override(nlohmann::json& cfg, const std::string& dotted_kv);

void run_gen_dataset(const nlohmann::json& resolved);
void run_pretrain(const nlohmann::json& resolved);
void run_finetune(const nlohmann::json& resolved);
nlohmann::json run_eval(const nlohmann::json& resolved);

// dispatches on resolved["experiment"]: connectivity | tree_clique |
// step_distance
void run_experiment(const nlohmann::json& resolved);

}  // namespace gdpo
