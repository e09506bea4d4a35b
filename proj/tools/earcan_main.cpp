#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "earcan/config.hpp"
#include "earcan/error.hpp"
#include "earcan/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

std::string resolve_output_root(const std::string& flag_value, const earcan::ExperimentConfig& cfg) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("EARCAN_OUT"); env && *env) return env;
  return cfg.output_root;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"earcan: ear-canal continuous-authentication experiment harness"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_flag;
  app.add_option("-c,--config", config_path, "experiment config file (key = value lines)");
  app.add_option("-o,--out", out_flag, "output root (overrides EARCAN_OUT and the config)");

  struct Stage {
    const char* name;
    const char* help;
  };
  const Stage stages[] = {
      {"synth-corpus", "synthesize the playback corpus and write corpus/"},
      {"enroll", "sample the population and run chirp enrollment into enroll/"},
      {"augment", "build labeled playback-response pairs into augment/"},
      {"train", "train the embedding network into train/"},
      {"watermark", "optimize per-user watermark patches into watermark/"},
      {"eval", "calibrate thresholds and measure EER/ROC into eval/"},
      {"session-sim", "run session and intrusion simulations into sessions/"},
      {"run-all", "run the full pipeline and write report.json"},
  };
  for (const auto& s : stages) app.add_subcommand(s.name, s.help);

  std::string scenario = "";
  app.get_subcommand("session-sim")
      ->add_option("--scenario", scenario,
                   "insider_takeover_mid_session | replay_login | delayed_response "
                   "(default: all)");

  CLI11_PARSE(app, argc, argv);
  const std::string sub = app.get_subcommands().front()->get_name();

  earcan::ExperimentConfig cfg;
  try {
    cfg = config_path.empty() ? earcan::ExperimentConfig::defaults()
                              : earcan::ExperimentConfig::from_file(config_path);
    if (!scenario.empty()) earcan::intrusion_scenario_from_name(scenario);  // validate
  } catch (const earcan::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::string out_root = resolve_output_root(out_flag, cfg);
  earcan::Pipeline pipeline(cfg, out_root);

  try {
    if (sub == "synth-corpus") {
      pipeline.ensure_corpus();
      std::cout << "corpus: " << pipeline.corpus().clips.size() << " clips + "
                << pipeline.session_corpus().clips.size() << " session clips -> " << out_root
                << "/corpus\n";
    } else if (sub == "enroll") {
      pipeline.ensure_enrollment();
      std::cout << "enrolled " << pipeline.users().size() << " users -> " << out_root
                << "/enroll\n";
    } else if (sub == "augment") {
      pipeline.ensure_dataset();
      std::cout << "augmentation manifest -> " << out_root << "/augment\n";
    } else if (sub == "train") {
      pipeline.ensure_net();
      pipeline.ensure_templates();
      std::cout << "checkpoint and templates -> " << out_root << "/train (final loss "
                << (pipeline.epoch_loss().empty() ? 0.0 : pipeline.epoch_loss().back()) << ")\n";
    } else if (sub == "watermark") {
      pipeline.ensure_patches();
      const auto& r = pipeline.report();
      std::cout << "patches -> " << out_root << "/watermark (cells " << r.watermark_cells_total
                << ", over ceiling " << r.watermark_cells_over << ")\n";
    } else if (sub == "eval") {
      pipeline.ensure_eval();
      for (const auto& [name, m] : pipeline.report().conditions)
        std::cout << name << ": EER " << m.eer * 100.0 << "% (threshold " << m.eer_threshold
                  << ", accuracy " << m.accuracy_at_eer * 100.0 << "%)\n";
    } else if (sub == "session-sim") {
      pipeline.ensure_sessions();
      const auto& r = pipeline.report();
      std::cout << "insider: locked within k_fail in " << r.insider.locked_within_k << "/"
                << r.insider.trials << " trials\n"
                << "replay_login rejected: " << r.replay_login.rejected << "/"
                << r.replay_login.trials << "\n"
                << "delayed rejected: " << r.delayed_response.rejected << "/"
                << r.delayed_response.trials << "\n"
                << "genuine false-lock rate: " << r.genuine_control.false_lock_rate << "\n";
    } else if (sub == "run-all") {
      const earcan::MetricsReport report = pipeline.run_all();
      std::cout << "report -> " << out_root << "/report.json\n";
      for (const auto& [name, m] : report.conditions)
        std::cout << name << ": EER " << m.eer * 100.0 << "%\n";
    }
  } catch (const earcan::Error& e) {
    if (e.code() == earcan::Errc::config) {
      std::cerr << "config error in stage " << sub << ": " << e.what() << "\n";
      return kExitConfig;
    }
    std::cerr << "stage " << sub << " failed: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "stage " << sub << " failed: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
