#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "earcan/config.hpp"
#include "earcan/error.hpp"
#include "earcan/harness.hpp"

using namespace earcan;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config() {
  return ExperimentConfig::from_text(
      "seed = 42\n"
      "population.n_users = 3\n"
      "enroll.sessions = 1\n"
      "corpus.train_clips = 4\n"
      "corpus.calib_clips = 2\n"
      "corpus.test_clips = 2\n"
      "corpus.session_clips = 2\n"
      "corpus.min_duration_s = 1.0\n"
      "corpus.max_duration_s = 1.3\n"
      "session.window_seconds = 1.5\n"
      "train.epochs = 3\n"
      "train.lr = 0.002\n"
      "watermark.iters = 2\n"
      "session.trials = 6\n"
      "session.windows_per_trial = 6\n"
      "session.takeover_window = 3\n"
      "output.write_pair_wavs = true\n");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string report_without_wall_clock(const fs::path& p) {
  auto j = nlohmann::json::parse(slurp(p));
  j.erase("wall_clock_seconds");
  return j.dump(2);
}

}  // namespace

TEST_CASE("smoke pipeline: runs end to end, writes every declared artifact") {
  const fs::path root = fs::temp_directory_path() / "earcan_smoke";
  fs::remove_all(root);
  const ExperimentConfig cfg = smoke_config();
  const MetricsReport report = run_experiment(cfg, root.string());

  CHECK(report.config_hash == cfg.hash());
  REQUIRE(report.conditions.count("chirp"));
  REQUIRE(report.conditions.count("playback"));
  REQUIRE(report.conditions.count("watermarked"));
  for (const auto& [name, m] : report.conditions) {
    CHECK(m.n_genuine == 3 * 2);        // users x test clips
    CHECK(m.n_imposter == 3 * 2 * 2);   // users x others x test clips
    CHECK(m.eer >= 0.0);
    CHECK(m.eer <= 0.5 + 1e-12);
    CHECK(m.theta_update >= m.theta_accept);
  }
  CHECK(report.watermark_cells_total > 0);
  CHECK(report.watermark_cells_over == 0);
  CHECK(report.watermark_gains_off_mask == 0);
  CHECK(report.train_epoch_loss.size() == 3);
  CHECK(report.replay_login.trials == 6);
  CHECK(report.replay_login.rejected == 6);
  CHECK(report.delayed_response.rejected == 6);

  for (const char* rel :
       {"config.snapshot.cfg", "corpus/manifest.json", "corpus/clip_000.wav",
        "corpus/session_000.wav", "enroll/population.json",
        "enroll/user_000/session_0/ir_est.wav", "enroll/user_000/session_0/ir_est.json",
        "augment/manifest.json", "train/checkpoint.json", "train/loss_trace.csv",
        "train/templates.json", "watermark/audit.json", "eval/thresholds.json",
        "eval/metrics.json", "eval/roc_chirp.csv", "eval/roc_playback.csv",
        "eval/roc_watermarked.csv", "sessions/stats.json", "report.json"}) {
    INFO(rel);
    CHECK(fs::exists(root / rel));
  }

  // augment responses on disk when write_pair_wavs is on
  CHECK(fs::exists(root / "augment/responses"));
  const auto manifest = nlohmann::json::parse(slurp(root / "augment/manifest.json"));
  CHECK(manifest.at("pairs").size() == 3 * 4);  // users x train clips x 1 session
}

TEST_CASE("determinism: identical config and seed give byte-identical reports") {
  const fs::path a = fs::temp_directory_path() / "earcan_det_a";
  const fs::path b = fs::temp_directory_path() / "earcan_det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ExperimentConfig cfg = smoke_config();
  cfg.write_pair_wavs = false;
  run_experiment(cfg, a.string());
  run_experiment(cfg, b.string());

  CHECK(report_without_wall_clock(a / "report.json") ==
        report_without_wall_clock(b / "report.json"));
  // full artifact byte equality for the metric and trace files
  for (const char* rel : {"eval/metrics.json", "eval/roc_chirp.csv", "eval/roc_playback.csv",
                          "eval/roc_watermarked.csv", "sessions/stats.json",
                          "train/checkpoint.json", "corpus/manifest.json"}) {
    INFO(rel);
    CHECK(slurp(a / rel) == slurp(b / rel));
  }
}

TEST_CASE("stage reuse: a second pipeline on the same root loads artifacts instead of recomputing") {
  const fs::path root = fs::temp_directory_path() / "earcan_stage_reuse";
  fs::remove_all(root);
  ExperimentConfig cfg = smoke_config();
  cfg.write_pair_wavs = false;
  {
    Pipeline p(cfg, root.string());
    p.ensure_corpus();
    p.ensure_enrollment();
  }
  {
    Pipeline p(cfg, root.string());
    p.ensure_net();  // loads corpus + enrollment from disk, trains
    CHECK(fs::exists(root / "train/checkpoint.json"));
  }
  {
    Pipeline p(cfg, root.string());
    p.ensure_eval();
    CHECK(fs::exists(root / "eval/metrics.json"));
  }
}

TEST_CASE("intrusion scenario names parse; unknown scenario refused") {
  CHECK(intrusion_scenario_from_name("insider_takeover_mid_session") ==
        IntrusionScenario::insider_takeover_mid_session);
  CHECK(intrusion_scenario_from_name("replay_login") == IntrusionScenario::replay_login);
  CHECK(intrusion_scenario_from_name("delayed_response") == IntrusionScenario::delayed_response);
  CHECK_THROWS_AS(intrusion_scenario_from_name("evil_twin"), Error);
}
