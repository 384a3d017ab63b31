// attmix: synthetic cohorts, encoder pretraining, training and evaluation.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "attmix/commands.hpp"
#include "attmix/error.hpp"
#include "json.hpp"

namespace {

int report_error(const std::string& category, const std::string& message, int code) {
  nlohmann::json j = {{"error", {{"category", category}, {"message", message}, {"exit_code", code}}}};
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal edema classifier: 3D scans plus tabular metadata", "attmix"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.footer("Log verbosity: AM_LOG=error|warn|info|debug (default warn).");

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, variant;
  std::optional<std::size_t> jobs;
  app.add_option("--config", config_path, "JSON run configuration (defaults when omitted)");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--out", out, "Output directory (synth: cohort directory)");
  app.add_option("--variant", variant,
                 "Model variant: full, no_ca, no_mixer, early_fusion, meta_only, hct_only");
  app.add_option("--jobs", jobs, "Folds trained in parallel")->check(CLI::PositiveNumber);

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const attmix::RunConfig&);
  };
  const Command commands[] = {
      {"synth", "Generate a synthetic cohort", attmix::cmd_synth},
      {"pretrain", "Masked-reconstruction pretraining of the image encoder", attmix::cmd_pretrain},
      {"train", "Train one model on a held-out split", attmix::cmd_train},
      {"eval", "K-fold cross-validation with ROC, probability and log reports", attmix::cmd_eval},
      {"importance", "Permutation importance of metadata features", attmix::cmd_importance},
      {"ablate", "Cross-validate every configured variant", attmix::cmd_ablate},
  };
  for (const Command& c : commands) app.add_subcommand(c.name, c.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), attmix::category_exit_code(attmix::ErrorCategory::kConfig));
  }

  try {
    attmix::RunConfig cfg = config_path.empty() ? attmix::RunConfig{} : attmix::load_run_config(config_path);
    const bool synth = app.got_subcommand("synth");
    attmix::Overrides ov{seed, std::nullopt, variant, jobs};
    if (out) {
      if (synth) {
        cfg.cohort_dir = *out;
      } else {
        ov.out = *out;
      }
    }
    attmix::apply_overrides(cfg, ov);
    for (const Command& c : commands) {
      if (app.got_subcommand(c.name)) c.run(cfg);
    }
  } catch (const attmix::Error& e) {
    return report_error(std::string(attmix::category_name(e.category())), e.what(),
                        attmix::category_exit_code(e.category()));
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
  return 0;
}
