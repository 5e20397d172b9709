#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "dataset.hpp"
#include "error.hpp"
#include "harness.hpp"
#include "rewards.hpp"
#include "util.hpp"

using namespace gdpo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::path("test_tmp") / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all("test_tmp"); }
  std::string str(const std::string& sub = "") const {
    return (sub.empty() ? path : path / sub).string();
  }
};

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("tree+clique dataset generation") {
  SUBCASE("zero rewrites keep every sample valid") {
    TreeCliqueSpec spec;
    spec.samples = 40;
    spec.train_count = 30;
    spec.val_count = 5;
    spec.test_count = 5;
    spec.nodes = 16;
    spec.seed = 3;
    auto ds = gen_tree_clique_dataset(spec);
    CHECK(ds.train.size() == 30);
    for (bool v : ds.train_valid) CHECK(v);
    for (const auto& g : ds.train.graphs) {
      g.validate();
      CHECK(g.n() == 16);
      CHECK(is_tree_with_clique(g, 4));
      // edge count follows the tree+clique structure exactly
      CHECK(g.edge_count() == (16 - 1) + 6 - 3);
    }
  }
  SUBCASE("rewrites strictly lower the validity rate") {
    TreeCliqueSpec spec;
    spec.samples = 60;
    spec.train_count = 50;
    spec.val_count = 5;
    spec.test_count = 5;
    spec.rewrite_steps = 3;
    spec.seed = 5;
    auto ds = gen_tree_clique_dataset(spec);
    int valid = 0;
    for (bool v : ds.train_valid) valid += v ? 1 : 0;
    CHECK(valid < 50);  // strictly below the rewrite-free rate of 100%
  }
  SUBCASE("all documented node counts are supported") {
    for (int nodes : {16, 24, 32, 40}) {
      TreeCliqueSpec spec;
      spec.samples = 4;
      spec.train_count = 2;
      spec.val_count = 1;
      spec.test_count = 1;
      spec.nodes = nodes;
      spec.seed = 7;
      auto ds = gen_tree_clique_dataset(spec);
      for (const auto& g : ds.train.graphs) CHECK(g.n() == nodes);
    }
  }
  SUBCASE("clique position bands are honored") {
    for (const char* pos : {"shallow", "middle", "deep"}) {
      TreeCliqueSpec spec;
      spec.samples = 6;
      spec.train_count = 4;
      spec.val_count = 1;
      spec.test_count = 1;
      spec.nodes = 20;
      spec.clique_position = pos;
      spec.seed = 11;
      auto ds = gen_tree_clique_dataset(spec);
      for (const auto& g : ds.train.graphs) CHECK(is_tree_with_clique(g, 4));
    }
  }
  SUBCASE("jsonl round trip") {
    TempDir dir("ds");
    TreeCliqueSpec spec;
    spec.samples = 10;
    spec.train_count = 6;
    spec.val_count = 2;
    spec.test_count = 2;
    spec.seed = 1;
    auto ds = gen_tree_clique_dataset(spec);
    save_tree_clique_dataset(ds, dir.str());
    GraphBatch back = load_jsonl(dir.str("train.jsonl"));
    REQUIRE(back.size() == ds.train.size());
    for (size_t i = 0; i < back.size(); ++i)
      CHECK(back.graphs[i] == ds.train.graphs[i]);
  }
  SUBCASE("spec validation") {
    TreeCliqueSpec spec;
    spec.samples = 10;  // split no longer sums
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = TreeCliqueSpec{};
    spec.clique_size = spec.nodes;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = TreeCliqueSpec{};
    spec.clique_position = "root";
    CHECK_THROWS_AS(spec.validate(), Error);
  }
}

TEST_CASE("config resolution") {
  SUBCASE("defaults are merged and validated") {
    auto cfg = resolve_config(nlohmann::json::object(), "pretrain");
    CHECK(cfg.at("diffusion").at("T") == 50);
    CHECK(cfg.at("pretrain").at("batch_size") == 32);
    CHECK(cfg.at("seed") == 0);
  }
  SUBCASE("unknown keys are rejected with their path") {
    nlohmann::json cfg{{"pretrian", {{"epochs", 3}}}};
    CHECK_THROWS_WITH_AS(resolve_config(cfg, "pretrain"),
                         doctest::Contains("pretrian"), Error);
  }
  SUBCASE("experiment requires a known name") {
    CHECK_THROWS_AS(resolve_config(nlohmann::json::object(), "experiment"),
                    Error);
    nlohmann::json cfg{{"experiment", "warp_drive"}};
    CHECK_THROWS_AS(resolve_config(cfg, "experiment"), Error);
  }
  SUBCASE("overrides parse values as json with string fallback") {
    nlohmann::json cfg = nlohmann::json::object();
    apply_override(cfg, "finetune.K=64");
    apply_override(cfg, "diffusion.schedule=linear");
    apply_override(cfg, "connectivity.node_counts=[4,6]");
    CHECK(cfg.at("finetune").at("K") == 64);
    CHECK(cfg.at("diffusion").at("schedule") == "linear");
    CHECK(cfg.at("connectivity").at("node_counts").size() == 2);
    CHECK_THROWS_AS(apply_override(cfg, "no-equals-sign"), Error);
  }
  SUBCASE("schema version is checked") {
    nlohmann::json cfg{{"schema_version", 2}};
    CHECK_THROWS_WITH_AS(resolve_config(cfg, "pretrain"),
                         doctest::Contains("schema_version"), Error);
  }
}

TEST_CASE("gen-dataset and pretrain commands") {
  TempDir dir("cmd");
  nlohmann::json cfg{
      {"seed", 9},
      {"out_dir", dir.str("data")},
      {"dataset", {{"samples", 12}, {"train_count", 8}, {"val_count", 2},
                   {"test_count", 2}, {"nodes", 8}, {"clique_size", 4}}}};
  run_gen_dataset(resolve_config(cfg, "gen-dataset"));
  CHECK(fs::exists(dir.str("data") + "/train.jsonl"));
  CHECK(fs::exists(dir.str("data") + "/manifest.json"));
  auto manifest =
      nlohmann::json::parse(read_text_file(dir.str("data") + "/manifest.json"));
  CHECK(manifest.at("validity_rate").at("train") == 1.0);

  nlohmann::json pre{
      {"seed", 9},
      {"out_dir", dir.str("pre")},
      {"dataset", {{"kind", "file"}, {"path", dir.str("data") + "/train.jsonl"}}},
      {"model", {{"hidden", 8}}},
      {"diffusion", {{"T", 4}}},
      {"pretrain", {{"epochs", 2}, {"batch_size", 4}}}};
  run_pretrain(resolve_config(pre, "pretrain"));
  CHECK(fs::exists(dir.str("pre") + "/checkpoint.json"));
  const std::string loss = read_text_file(dir.str("pre") + "/loss.csv");
  CHECK(loss.rfind("epoch,step,loss\n", 0) == 0);
  CHECK(count_lines(loss) == 1 + 2 * 2);  // header + 2 epochs x 2 steps
}

TEST_CASE("finetune command emits the documented interface") {
  TempDir dir("ft");
  nlohmann::json cfg{
      {"seed", 4},
      {"out_dir", dir.str("run")},
      {"model", {{"hidden", 8}}},
      {"diffusion", {{"T", 3}}},
      {"finetune",
       {{"K", 4}, {"Tsub", 2}, {"steps", 2}, {"node_count", 4}, {"lr", 1e-3}}},
      {"reward",
       {{"terms", {{{"term", "validity"}, {"weight", 1.0},
                    {"params", {{"predicate", "connected"}}}}}}}}};
  run_finetune(resolve_config(cfg, "finetune"));
  const std::string csv = read_text_file(dir.str("run") + "/curves.csv");
  CHECK(csv.rfind("step,reward_mean,reward_std,queries,grad_norm,estimator\n",
                  0) == 0);
  CHECK(count_lines(csv) == 3);
  CHECK(fs::exists(dir.str("run") + "/checkpoint.json"));
  auto manifest =
      nlohmann::json::parse(read_text_file(dir.str("run") + "/manifest.json"));
  CHECK(manifest.at("reward_queries") == 8);

  // rerunning from the emitted resolved snapshot reproduces the curve bytes
  auto resolved =
      nlohmann::json::parse(read_text_file(dir.str("run") + "/config.json"));
  resolved["out_dir"] = dir.str("rerun");
  run_finetune(resolved);
  CHECK(read_text_file(dir.str("rerun") + "/curves.csv") == csv);
}

TEST_CASE("connectivity experiment grid and determinism") {
  TempDir dir("conn");
  nlohmann::json cfg{
      {"seed", 12},
      {"out_dir", dir.str("a")},
      {"experiment", "connectivity"},
      {"model", {{"hidden", 8}}},
      {"diffusion", {{"T", 3}}},
      {"finetune", {{"K", 4}, {"Tsub", 2}, {"steps", 2}, {"lr", 1e-3}}},
      {"connectivity",
       {{"node_counts", {4, 5}}, {"estimators", {"ddpo", "gdpo"}}}}};
  run_experiment(resolve_config(cfg, "experiment"));
  const std::string csv = read_text_file(dir.str("a") + "/curves.csv");
  CHECK(csv.rfind("n,step,", 0) == 0);
  // completeness: both estimators at both node counts
  for (const char* cell : {"ddpo", "gdpo"}) {
    size_t count = 0, pos = 0;
    std::string needle = std::string(",") + cell;
    while ((pos = csv.find(needle, pos)) != std::string::npos) {
      ++count;
      pos += needle.size();
    }
    CHECK(count == 4);  // 2 node counts x 2 steps
  }
  CHECK(fs::exists(dir.str("a") + "/checkpoint_n4_ddpo.json"));
  CHECK(fs::exists(dir.str("a") + "/checkpoint_n5_gdpo.json"));

  // rerun from the snapshot: byte-identical curves
  auto resolved =
      nlohmann::json::parse(read_text_file(dir.str("a") + "/config.json"));
  resolved["out_dir"] = dir.str("b");
  run_experiment(resolved);
  CHECK(read_text_file(dir.str("b") + "/curves.csv") == csv);
}

TEST_CASE("step distance experiment") {
  SUBCASE("one flipped binary edge moves the unit vector by sqrt(2)/sqrt(D)") {
    Graph a(5, 1, 2);
    Graph b = a;
    b.set_edge_cat(1, 3, 1);
    auto va = graph_unit_vector(a);
    auto vb = graph_unit_vector(b);
    double sq = 0.0;
    for (size_t i = 0; i < va.size(); ++i)
      sq += (va[i] - vb[i]) * (va[i] - vb[i]);
    CHECK(std::sqrt(sq) / std::sqrt(static_cast<double>(va.size())) ==
          doctest::Approx(std::sqrt(2.0) /
                          std::sqrt(static_cast<double>(va.size()))));
  }
  SUBCASE("emits T rows of mean and std") {
    TempDir dir("dist");
    nlohmann::json cfg{{"seed", 3},
                       {"out_dir", dir.str("d")},
                       {"experiment", "step_distance"},
                       {"model", {{"hidden", 8}}},
                       {"diffusion", {{"T", 5}}},
                       {"step_distance",
                        {{"trajectories", 8}, {"node_count", 4},
                         {"dump_trajectories", 2}}}};
    run_experiment(resolve_config(cfg, "experiment"));
    const std::string csv = read_text_file(dir.str("d") + "/distance.csv");
    CHECK(csv.rfind("t,mean,std\n", 0) == 0);
    CHECK(count_lines(csv) == 1 + 5);
    const std::string dump =
        read_text_file(dir.str("d") + "/trajectories.jsonl");
    CHECK(count_lines(dump) == 2 * 6);  // two trajectories, T+1 lines each
  }
}

TEST_CASE("eval command") {
  TempDir dir("eval");
  // gen a dataset, then evaluate the training split against the test split
  nlohmann::json gen{
      {"seed", 2},
      {"out_dir", dir.str("data")},
      {"dataset", {{"samples", 20}, {"train_count", 12}, {"val_count", 4},
                   {"test_count", 4}, {"nodes", 10}, {"clique_size", 4}}}};
  run_gen_dataset(resolve_config(gen, "gen-dataset"));
  nlohmann::json ev{
      {"seed", 2},
      {"out_dir", dir.str("out")},
      {"eval",
       {{"generated_path", dir.str("data") + "/train.jsonl"},
        {"train_path", dir.str("data") + "/train.jsonl"},
        {"test_path", dir.str("data") + "/test.jsonl"},
        {"predicate", "tree_with_clique"},
        {"clique_size", 4}}}};
  auto out = run_eval(resolve_config(ev, "eval"));
  CHECK(out.at("validity_rate") == 1.0);
  CHECK(out.at("vun").get<double>() == 0.0);  // generated == train: nothing novel
  CHECK(out.at("mmd_ratio").at("degree") == 1.0);  // gen == train exactly
  CHECK(out.at("mmd_ratio").contains("clustering"));
  CHECK(out.at("mmd_ratio").contains("orbit"));
  CHECK(fs::exists(dir.str("out") + "/eval.json"));
}
