#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "earcan/augmentation.hpp"
#include "earcan/config.hpp"
#include "earcan/matcher.hpp"
#include "earcan/session.hpp"
#include "earcan/sounding.hpp"
#include "earcan/watermark.hpp"

namespace earcan {

struct ConditionMetrics {
  double eer = 0.0;
  double eer_threshold = 0.0;
  double accuracy_at_eer = 0.0;
  std::size_t n_genuine = 0;
  std::size_t n_imposter = 0;
  double theta_accept = 0.0;  // calibration-set EER threshold
  double theta_update = 0.0;  // calibration threshold at the strict FAR target
};

struct InsiderStats {
  std::size_t trials = 0;
  std::size_t authenticated = 0;     // trials that passed initial login
  std::size_t locked = 0;            // locked at some point after takeover
  std::size_t locked_within_k = 0;   // locked within k_fail windows of takeover
  double median_windows_to_lock = 0.0;
};

struct RejectStats {
  std::size_t trials = 0;
  std::size_t rejected = 0;
  double rate() const { return trials ? static_cast<double>(rejected) / trials : 0.0; }
};

struct GenuineControlStats {
  std::size_t trials = 0;
  std::size_t locked = 0;
  double false_lock_rate = 0.0;
};

struct MetricsReport {
  std::string config_hash;
  std::map<std::string, ConditionMetrics> conditions;  // chirp, playback, watermarked
  std::size_t watermark_cells_total = 0;
  std::size_t watermark_cells_over = 0;
  std::size_t watermark_gains_off_mask = 0;
  std::size_t watermark_clipped_samples = 0;
  InsiderStats insider;
  RejectStats replay_login;
  RejectStats delayed_response;
  GenuineControlStats genuine_control;
  std::vector<double> train_epoch_loss;
  double wall_clock_seconds = 0.0;
};

std::string report_to_json(const MetricsReport& report, bool include_wall_clock);

// One enrolled user: ground-truth profile plus per-session estimated IRs.
struct EnrolledUser {
  EarProfile profile;
  std::vector<ImpulseResponse> session_irs;
  std::vector<double> session_nmse;  // vs ground truth, enrollment band
};

// End-to-end state shared by the CLI stages. Every ensure_* step computes
// its piece (loading prior stage artifacts from disk when they are not in
// memory) and, when an output root is set, writes the declared artifacts.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::string out_root);

  const ExperimentConfig& cfg() const { return cfg_; }
  const std::string& out_root() const { return out_root_; }

  void ensure_corpus();
  void ensure_enrollment();
  void ensure_dataset();     // augmentation + feature extraction
  void ensure_net();
  void ensure_templates();
  void ensure_patches();     // watermark optimization for calib/test/session clips
  void ensure_eval();        // calibration thresholds + test metrics
  void ensure_sessions();    // intrusion + control simulations
  MetricsReport run_all();   // full chain + report.json

  // exposed for tests and the acceptance suite
  const Corpus& corpus() const { return corpus_; }
  const Corpus& session_corpus() const { return session_corpus_; }
  const std::vector<EnrolledUser>& users() const { return users_; }
  const NetParams& net() const { return net_->params; }
  const std::vector<double>& epoch_loss() const { return net_->epoch_loss; }
  const std::vector<Template>& templates() const { return templates_; }
  const MetricsReport& report() const { return report_; }
  const WatermarkPatch& patch_for(std::size_t user, const std::string& key) const;

  Signal chirp_signal() const;
  std::string user_id(std::size_t u) const;

 private:
  struct ProbeSet {
    // genuine[u][p]; imposter scores flattened
    std::vector<double> genuine, imposter;
  };

  Signal condition_playback(const std::string& condition, std::size_t target_user,
                            const std::string& clip_key) const;
  Embedding probe_embedding(const Signal& playback, std::size_t occupant,
                            std::uint64_t jitter_seed, std::uint64_t noise_seed) const;
  ProbeSet run_probes(const std::string& condition, const std::vector<std::string>& clip_keys,
                      const char* purpose);
  const Signal& clip_by_key(const std::string& key) const;

  void write_corpus_artifacts() const;
  void write_enroll_artifacts() const;
  void write_dataset_artifacts() const;
  void write_net_artifacts() const;
  void write_patch_artifacts() const;
  void write_eval_artifacts() const;

  bool load_corpus();
  bool load_enrollment();
  bool load_net();
  bool load_templates();
  bool load_patches();
  bool load_thresholds();

  ExperimentConfig cfg_;
  std::string out_root_;

  Corpus corpus_;  // train + calib + test clips, in that order
  std::vector<std::size_t> train_idx_, calib_idx_, test_idx_;
  Corpus session_corpus_;
  bool have_corpus_ = false;

  std::vector<EnrolledUser> users_;
  std::vector<TrainSample> dataset_;
  std::optional<TrainResult> net_;
  std::vector<Template> templates_;
  // patches keyed "calib_N" / "test_N" / "session_N", one map per user
  std::vector<std::map<std::string, WatermarkPatch>> patches_;
  bool have_eval_ = false;
  bool have_sessions_ = false;

  MetricsReport report_;
};

// run-all in one call; equivalent to Pipeline(cfg, out_root).run_all().
MetricsReport run_experiment(const ExperimentConfig& cfg, const std::string& out_root);

enum class IntrusionScenario { insider_takeover_mid_session, replay_login, delayed_response };

IntrusionScenario intrusion_scenario_from_name(const std::string& name);

}  // namespace earcan
