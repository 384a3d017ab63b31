#include <filesystem>

#include "attmix/commands.hpp"
#include "attmix/error.hpp"
#include "attmix/io.hpp"
#include "doctest.h"

using namespace attmix;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(const std::string& name) {
  const fs::path root = fs::temp_directory_path() / ("attmix_cli_" + name);
  fs::remove_all(root);
  const nlohmann::json j = nlohmann::json::parse(R"({
    "synth": {"n_patients": 30, "side": 8, "d_m": 5},
    "encoder": {"side": 8, "patch": 4, "d_enc": 8, "depth": 1, "heads": 2, "d_f": 8},
    "model": {"fusion_heads": 2, "mixer_blocks": 1},
    "train": {"max_epochs": 2, "patience": 2},
    "pretrain": {"steps": 5}})");
  RunConfig c = run_config_from_json(j);
  c.cohort_dir = root / "cohort";
  c.out_dir = root / "out";
  return c;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST_CASE("run config defaults and schema") {
  const RunConfig d = run_config_from_json(nlohmann::json::object());
  CHECK(d.eval.k == 5);
  CHECK(d.train.lr == 1e-3);
  CHECK(d.variants.size() == 6);
  CHECK(d.eval_seeds() == std::vector<std::uint64_t>{d.seed});
  const RunConfig back = run_config_from_json(run_config_to_json(d));
  CHECK(run_config_to_json(back) == run_config_to_json(d));

  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"trian": {}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"eval": {"k": 1}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"variants": ["late"]})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"train": {"patience": 60}})")), ConfigError);

  RunConfig c = d;
  apply_overrides(c, {std::uint64_t{3}, fs::path("x"), std::string("meta_only"), std::size_t{2}});
  CHECK(c.seed == 3);
  CHECK(c.out_dir == "x");
  CHECK(c.model.variant == Variant::kMetaOnly);
  CHECK(c.variants == std::vector<Variant>{Variant::kMetaOnly});
  CHECK(c.eval.jobs == 2);
  CHECK_THROWS_AS(apply_overrides(c, {{}, {}, {}, std::size_t{0}}), ConfigError);
}

TEST_CASE("synth then ablate gives six rows and reruns byte-identically") {
  RunConfig c = small_run("ablate");
  c.train.max_epochs = 1;
  c.train.patience = 1;
  cmd_synth(c);
  cmd_ablate(c);
  const std::string csv = read_text(c.out_dir / "ablation.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  const std::string json = read_text(c.out_dir / "ablation.json");
  cmd_ablate(c);
  CHECK(read_text(c.out_dir / "ablation.csv") == csv);
  CHECK(read_text(c.out_dir / "ablation.json") == json);
  CHECK(count_files(c.out_dir) == 3);
}

TEST_CASE("eval reruns give byte-identical metrics") {
  RunConfig c = small_run("eval");
  c.model.variant = Variant::kMetaOnly;
  cmd_synth(c);
  cmd_eval(c);
  const std::string first = read_text(c.out_dir / "metrics.json");
  cmd_eval(c);
  CHECK(read_text(c.out_dir / "metrics.json") == first);
  const nlohmann::json m = nlohmann::json::parse(first);
  CHECK(m.at("variant") == "meta_only");
}

TEST_CASE("pretrain, train and importance produce their artifacts") {
  RunConfig c = small_run("stages");
  cmd_synth(c);
  cmd_pretrain(c);
  CHECK(fs::exists(c.out_dir / "encoder.ckpt"));
  c.encoder_checkpoint = c.out_dir / "encoder.ckpt";
  c.train.freeze_encoder = true;
  cmd_train(c);
  CHECK(fs::exists(c.out_dir / "model.ckpt"));
  CHECK(read_text(c.out_dir / "train_log.csv").rfind("epoch,train_loss,val_loss,val_auc\n", 0) == 0);
  cmd_importance(c);
  const std::string imp = read_text(c.out_dir / "importance.csv");
  CHECK(imp.rfind("rank,feature,mean_delta_auc,fold0", 0) == 0);
}

TEST_CASE("stage prerequisites are explicit") {
  RunConfig c = small_run("prereq");
  CHECK_THROWS_AS(cmd_eval(c), PrerequisiteError);
  cmd_synth(c);
  c.train.freeze_encoder = true;
  CHECK_THROWS_AS(cmd_train(c), PrerequisiteError);
  c.encoder_checkpoint = c.out_dir / "missing.ckpt";
  CHECK_THROWS_AS(cmd_train(c), PrerequisiteError);
  c.model.variant = Variant::kHctOnly;
  CHECK_THROWS_AS(cmd_importance(c), ConfigError);
  CHECK_THROWS_AS(load_run_config(c.out_dir / "nope.json"), PrerequisiteError);
  write_file_atomic(c.out_dir / "bad.json", "{\"seed\": ");
  CHECK_THROWS_AS(load_run_config(c.out_dir / "bad.json"), FormatError);
}
