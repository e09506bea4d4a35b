#include "earcan/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "earcan/error.hpp"
#include "earcan/rng.hpp"
#include "earcan/wav.hpp"

namespace earcan {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::format, "cannot open " + path.string() + " for writing");
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::format, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Split a loop over [0, n) across two workers; each index is computed
// independently and written to its own slot, so the merge is deterministic.
template <typename F>
void parallel_over(std::size_t n, F&& body) {
  const unsigned hw = std::thread::hardware_concurrency();
  if (n < 2 || hw < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mu;
  auto run = [&](std::size_t lo, std::size_t hi) {
    try {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = std::current_exception();
    }
  };
  const std::size_t mid = n / 2;
  std::thread worker(run, mid, n);
  run(0, mid);
  worker.join();
  if (error) std::rethrow_exception(error);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

ordered_json profile_json(const EarProfile& p) {
  return ordered_json::parse(profile_to_json(p));
}

ordered_json condition_json(const ConditionMetrics& m) {
  ordered_json j;
  j["eer"] = m.eer;
  j["eer_threshold"] = m.eer_threshold;
  j["accuracy_at_eer"] = m.accuracy_at_eer;
  j["n_genuine"] = m.n_genuine;
  j["n_imposter"] = m.n_imposter;
  j["theta_accept"] = m.theta_accept;
  j["theta_update"] = m.theta_update;
  return j;
}

}  // namespace

std::string report_to_json(const MetricsReport& report, bool include_wall_clock) {
  ordered_json j;
  j["format"] = "earcan-report";
  j["version"] = 1;
  j["config_hash"] = report.config_hash;
  j["conditions"] = ordered_json::object();
  for (const auto& [name, m] : report.conditions) j["conditions"][name] = condition_json(m);
  j["watermark_audit"] = {{"cells_total", report.watermark_cells_total},
                          {"cells_over_ceiling", report.watermark_cells_over},
                          {"gains_off_mask", report.watermark_gains_off_mask},
                          {"clipped_samples", report.watermark_clipped_samples}};
  j["attacks"] = {
      {"insider",
       {{"trials", report.insider.trials},
        {"authenticated", report.insider.authenticated},
        {"locked", report.insider.locked},
        {"locked_within_k_fail", report.insider.locked_within_k},
        {"median_windows_to_lock", report.insider.median_windows_to_lock}}},
      {"replay_login",
       {{"trials", report.replay_login.trials}, {"rejected", report.replay_login.rejected}}},
      {"delayed_response",
       {{"trials", report.delayed_response.trials},
        {"rejected", report.delayed_response.rejected}}},
      {"genuine_control",
       {{"trials", report.genuine_control.trials},
        {"locked", report.genuine_control.locked},
        {"false_lock_rate", report.genuine_control.false_lock_rate}}}};
  j["training"] = {{"epoch_loss", report.train_epoch_loss}};
  if (include_wall_clock) j["wall_clock_seconds"] = report.wall_clock_seconds;
  return j.dump(2) + "\n";
}

Pipeline::Pipeline(ExperimentConfig cfg, std::string out_root)
    : cfg_(std::move(cfg)), out_root_(std::move(out_root)) {
  cfg_.validate();
  report_.config_hash = cfg_.hash();
}

Signal Pipeline::chirp_signal() const { return exponential_chirp(cfg_.chirp, cfg_.sample_rate); }

std::string Pipeline::user_id(std::size_t u) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "user_%03zu", u);
  return buf;
}

const WatermarkPatch& Pipeline::patch_for(std::size_t user, const std::string& key) const {
  return patches_.at(user).at(key);
}

// ---------------------------------------------------------------- corpus

void Pipeline::ensure_corpus() {
  if (have_corpus_) return;
  if (!out_root_.empty() && load_corpus()) return;

  Rng master(cfg_.seed);
  CorpusSpec spec;
  spec.kind = cfg_.corpus_kind;
  spec.n_clips = cfg_.train_clips + cfg_.calib_clips + cfg_.test_clips;
  spec.silence_profile = cfg_.silence_profile;
  spec.min_duration_s = cfg_.clip_min_s;
  spec.max_duration_s = cfg_.clip_max_s;
  spec.sample_rate = cfg_.sample_rate;
  corpus_ = synth_corpus(spec, master.fork("corpus").next_u64(), cfg_.features);

  train_idx_.clear();
  calib_idx_.clear();
  test_idx_.clear();
  for (std::size_t i = 0; i < cfg_.train_clips; ++i) train_idx_.push_back(i);
  for (std::size_t i = 0; i < cfg_.calib_clips; ++i) calib_idx_.push_back(cfg_.train_clips + i);
  for (std::size_t i = 0; i < cfg_.test_clips; ++i)
    test_idx_.push_back(cfg_.train_clips + cfg_.calib_clips + i);

  CorpusSpec sess = spec;
  sess.n_clips = cfg_.session_clips;
  sess.min_duration_s = cfg_.session.window_seconds;
  sess.max_duration_s = cfg_.session.window_seconds;
  session_corpus_ = synth_corpus(sess, master.fork("session_corpus").next_u64(), cfg_.features);

  have_corpus_ = true;
  if (!out_root_.empty()) write_corpus_artifacts();
}

void Pipeline::write_corpus_artifacts() const {
  const fs::path dir = fs::path(out_root_) / "corpus";
  fs::create_directories(dir);
  ordered_json manifest;
  manifest["format"] = "earcan-corpus";
  manifest["version"] = 1;
  manifest["sample_rate"] = cfg_.sample_rate;
  manifest["kind"] =
      cfg_.corpus_kind == CorpusKind::synthetic_musiclike ? "musiclike" : "speechlike";
  auto clips = ordered_json::array();
  auto role_of = [&](std::size_t i) -> std::string {
    if (i < cfg_.train_clips) return "train";
    if (i < cfg_.train_clips + cfg_.calib_clips) return "calib";
    return "test";
  };
  for (std::size_t i = 0; i < corpus_.clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%03zu.wav", i);
    write_wav((dir / name).string(), corpus_.clips[i]);
    clips.push_back({{"file", name},
                     {"role", role_of(i)},
                     {"duration_s", corpus_.clips[i].duration()},
                     {"silence_fraction", corpus_.silence_fraction[i]}});
  }
  manifest["clips"] = std::move(clips);
  auto sess = ordered_json::array();
  for (std::size_t i = 0; i < session_corpus_.clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "session_%03zu.wav", i);
    write_wav((dir / name).string(), session_corpus_.clips[i]);
    sess.push_back({{"file", name},
                    {"duration_s", session_corpus_.clips[i].duration()},
                    {"silence_fraction", session_corpus_.silence_fraction[i]}});
  }
  manifest["session_clips"] = std::move(sess);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

bool Pipeline::load_corpus() {
  const fs::path dir = fs::path(out_root_) / "corpus";
  if (!fs::exists(dir / "manifest.json")) return false;
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  corpus_ = Corpus{};
  session_corpus_ = Corpus{};
  corpus_.kind = manifest.at("kind") == "musiclike" ? CorpusKind::synthetic_musiclike
                                                    : CorpusKind::synthetic_speechlike;
  train_idx_.clear();
  calib_idx_.clear();
  test_idx_.clear();
  std::size_t i = 0;
  for (const auto& c : manifest.at("clips")) {
    corpus_.clips.push_back(read_wav((dir / c.at("file").get<std::string>()).string()));
    corpus_.silence_fraction.push_back(c.at("silence_fraction").get<double>());
    const std::string role = c.at("role").get<std::string>();
    if (role == "train")
      train_idx_.push_back(i);
    else if (role == "calib")
      calib_idx_.push_back(i);
    else
      test_idx_.push_back(i);
    ++i;
  }
  for (const auto& c : manifest.at("session_clips")) {
    session_corpus_.clips.push_back(read_wav((dir / c.at("file").get<std::string>()).string()));
    session_corpus_.silence_fraction.push_back(c.at("silence_fraction").get<double>());
  }
  have_corpus_ = true;
  return true;
}

// ------------------------------------------------------------- enrollment

void Pipeline::ensure_enrollment() {
  if (!users_.empty()) return;
  if (!out_root_.empty() && load_enrollment()) return;

  Rng master(cfg_.seed);
  const Signal probe = chirp_signal();
  users_.resize(cfg_.n_users);
  parallel_over(cfg_.n_users, [&](std::size_t u) {
    EnrolledUser user;
    user.profile = sample_profile(master.fork("profile", u).next_u64(), cfg_.population);
    user.profile.user_id = user_id(u);
    for (std::size_t s = 0; s < cfg_.enroll_sessions; ++s) {
      const EarProfile session_profile = jitter_profile(
          user.profile, cfg_.jitter, master.fork("enroll_jitter", u * 100 + s).next_u64(),
          cfg_.population);
      const Signal recorded =
          simulate_in_ear(session_profile, probe, cfg_.sounding_noise,
                          master.fork("enroll_noise", u * 100 + s).next_u64(), cfg_.ir_length);
      SoundingInfo info;
      ImpulseResponse est = estimate_ir(probe, recorded, cfg_.chirp, cfg_.ir_length, &info,
                                        cfg_.min_peak_to_rms_db);
      const ImpulseResponse truth =
          realize_ir(session_profile, cfg_.sample_rate, cfg_.ir_length);
      user.session_nmse.push_back(
          band_limited_nmse(est, truth, 2.0 * cfg_.chirp.f0_hz, 0.95 * cfg_.chirp.f1_hz));
      user.session_irs.push_back(std::move(est));
    }
    users_[u] = std::move(user);
  });
  if (!out_root_.empty()) write_enroll_artifacts();
}

void Pipeline::write_enroll_artifacts() const {
  const fs::path dir = fs::path(out_root_) / "enroll";
  ordered_json population;
  population["format"] = "earcan-population";
  population["version"] = 1;
  auto arr = ordered_json::array();
  for (const auto& u : users_) arr.push_back(profile_json(u.profile));
  population["users"] = std::move(arr);
  write_text(dir / "population.json", population.dump(2) + "\n");

  for (std::size_t u = 0; u < users_.size(); ++u) {
    for (std::size_t s = 0; s < users_[u].session_irs.size(); ++s) {
      char name[64];
      std::snprintf(name, sizeof name, "%s/session_%zu", user_id(u).c_str(), s);
      const fs::path base = dir / name;
      fs::create_directories(base);
      write_wav((base / "ir_est.wav").string(), users_[u].session_irs[s].taps);
      ordered_json side;
      side["chirp"] = {{"f0_hz", cfg_.chirp.f0_hz},
                       {"f1_hz", cfg_.chirp.f1_hz},
                       {"duration_s", cfg_.chirp.duration_s},
                       {"amplitude", cfg_.chirp.amplitude}};
      side["ir_length"] = cfg_.ir_length;
      side["nmse_vs_ground_truth"] = users_[u].session_nmse[s];
      write_text(base / "ir_est.json", side.dump(2) + "\n");
    }
  }
}

bool Pipeline::load_enrollment() {
  const fs::path dir = fs::path(out_root_) / "enroll";
  if (!fs::exists(dir / "population.json")) return false;
  const auto population = nlohmann::json::parse(read_text(dir / "population.json"));
  users_.clear();
  std::size_t u = 0;
  for (const auto& pj : population.at("users")) {
    EnrolledUser user;
    user.profile = profile_from_json(pj.dump());
    for (std::size_t s = 0; s < cfg_.enroll_sessions; ++s) {
      char name[64];
      std::snprintf(name, sizeof name, "%s/session_%zu", user_id(u).c_str(), s);
      const fs::path base = dir / name;
      if (!fs::exists(base / "ir_est.wav")) return false;
      ImpulseResponse ir;
      ir.origin = ImpulseResponse::Origin::estimated;
      ir.taps = read_wav((base / "ir_est.wav").string());
      user.session_irs.push_back(std::move(ir));
      const auto side = nlohmann::json::parse(read_text(base / "ir_est.json"));
      user.session_nmse.push_back(side.at("nmse_vs_ground_truth").get<double>());
    }
    users_.push_back(std::move(user));
    ++u;
  }
  return users_.size() == cfg_.n_users;
}

// ---------------------------------------------------- augmentation dataset

void Pipeline::ensure_dataset() {
  if (!dataset_.empty()) return;
  ensure_corpus();
  ensure_enrollment();

  Corpus train_corpus;
  train_corpus.kind = corpus_.kind;
  for (std::size_t i : train_idx_) {
    train_corpus.clips.push_back(corpus_.clips[i]);
    train_corpus.silence_fraction.push_back(corpus_.silence_fraction[i]);
  }

  Rng master(cfg_.seed);
  std::vector<std::vector<LabeledPair>> per_user(users_.size());
  parallel_over(users_.size(), [&](std::size_t u) {
    for (std::size_t s = 0; s < users_[u].session_irs.size(); ++s) {
      auto pairs = make_pairs(users_[u].session_irs[s], train_corpus, cfg_.acquisition_noise,
                              master.fork("pairs", u * 100 + s).next_u64(), user_id(u),
                              static_cast<int>(s));
      for (auto& p : pairs) per_user[u].push_back(std::move(p));
    }
  });

  std::vector<std::vector<TrainSample>> samples(users_.size());
  parallel_over(users_.size(), [&](std::size_t u) {
    for (const auto& pair : per_user[u]) {
      TrainSample s;
      s.label = u;
      s.feats = rtf_features(train_corpus.clips[pair.clip_index], pair.response, cfg_.features);
      samples[u].push_back(std::move(s));
    }
  });
  dataset_.clear();
  for (auto& group : samples)
    for (auto& s : group) dataset_.push_back(std::move(s));

  if (!out_root_.empty()) {
    const fs::path dir = fs::path(out_root_) / "augment";
    ordered_json manifest;
    manifest["format"] = "earcan-pairs";
    manifest["version"] = 1;
    manifest["responses_written"] = cfg_.write_pair_wavs;
    auto arr = ordered_json::array();
    for (std::size_t u = 0; u < per_user.size(); ++u) {
      for (const auto& pair : per_user[u]) {
        char clip_name[32];
        std::snprintf(clip_name, sizeof clip_name, "clip_%03zu.wav",
                      train_idx_[pair.clip_index]);
        ordered_json row = {{"user_id", pair.user_id},
                            {"label", u},
                            {"session_id", pair.session_id},
                            {"clip_file", std::string("corpus/") + clip_name}};
        if (cfg_.write_pair_wavs) {
          char rname[64];
          std::snprintf(rname, sizeof rname, "responses/u%03zu_s%d_c%03zu.wav", u,
                        pair.session_id, pair.clip_index);
          fs::create_directories(dir / "responses");
          write_wav((dir / rname).string(), pair.response);
          row["response_file"] = rname;
        }
        arr.push_back(std::move(row));
      }
    }
    manifest["pairs"] = std::move(arr);
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  }
}

// ----------------------------------------------------------------- train

void Pipeline::ensure_net() {
  if (net_) return;
  if (!out_root_.empty() && load_net()) return;
  ensure_dataset();
  Rng master(cfg_.seed);
  net_ = train(dataset_, cfg_.net, cfg_.train, master.fork("train").next_u64());
  report_.train_epoch_loss = net_->epoch_loss;
  if (!out_root_.empty()) write_net_artifacts();
}

void Pipeline::write_net_artifacts() const {
  const fs::path dir = fs::path(out_root_) / "train";
  write_text(dir / "checkpoint.json", checkpoint_to_json(net_->params) + "\n");
  std::string csv = "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < net_->epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e, net_->epoch_loss[e]);
    csv += buf;
  }
  write_text(dir / "loss_trace.csv", csv);
}

bool Pipeline::load_net() {
  const fs::path path = fs::path(out_root_) / "train" / "checkpoint.json";
  if (!fs::exists(path)) return false;
  TrainResult r;
  r.params = checkpoint_from_json(read_text(path));
  const fs::path trace = fs::path(out_root_) / "train" / "loss_trace.csv";
  if (fs::exists(trace)) {
    std::istringstream in(read_text(trace));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma != std::string::npos) r.epoch_loss.push_back(std::stod(line.substr(comma + 1)));
    }
  }
  net_ = std::move(r);
  report_.train_epoch_loss = net_->epoch_loss;
  return true;
}

// -------------------------------------------------------------- templates

void Pipeline::ensure_templates() {
  if (!templates_.empty()) return;
  if (!out_root_.empty() && load_templates()) return;
  ensure_net();
  ensure_dataset();
  std::vector<std::vector<Embedding>> per_user(users_.size());
  for (const auto& s : dataset_) per_user[s.label].push_back(forward(net_->params, s.feats));
  templates_.clear();
  for (auto& embs : per_user)
    templates_.push_back(make_template(embs, Template::CreatedFrom::chirp_enrollment));

  if (!out_root_.empty()) {
    ordered_json j;
    j["format"] = "earcan-templates";
    j["version"] = 1;
    auto arr = ordered_json::array();
    for (std::size_t u = 0; u < templates_.size(); ++u)
      arr.push_back({{"user_id", user_id(u)},
                     {"n_enrolled", templates_[u].n_enrolled},
                     {"created_from", "chirp_enrollment"},
                     {"vector", templates_[u].v}});
    j["templates"] = std::move(arr);
    write_text(fs::path(out_root_) / "train" / "templates.json", j.dump(2) + "\n");
  }
}

bool Pipeline::load_templates() {
  const fs::path path = fs::path(out_root_) / "train" / "templates.json";
  if (!fs::exists(path)) return false;
  const auto j = nlohmann::json::parse(read_text(path));
  templates_.clear();
  for (const auto& tj : j.at("templates")) {
    Template t;
    t.v = tj.at("vector").get<std::vector<double>>();
    t.n_enrolled = tj.at("n_enrolled").get<std::size_t>();
    t.created_from = Template::CreatedFrom::chirp_enrollment;
    templates_.push_back(std::move(t));
  }
  return templates_.size() == cfg_.n_users;
}

// -------------------------------------------------------------- watermark

const Signal& Pipeline::clip_by_key(const std::string& key) const {
  const auto split = key.find('_');
  const std::string kind = key.substr(0, split);
  const std::size_t idx = std::stoul(key.substr(split + 1));
  if (kind == "calib") return corpus_.clips[calib_idx_[idx]];
  if (kind == "test") return corpus_.clips[test_idx_[idx]];
  if (kind == "session") return session_corpus_.clips[idx];
  fail(Errc::config, "unknown clip key " + key);
}

void Pipeline::ensure_patches() {
  if (!patches_.empty()) return;
  if (!out_root_.empty() && load_patches()) return;
  ensure_corpus();
  ensure_enrollment();
  ensure_net();
  ensure_templates();

  std::vector<std::string> keys;
  for (std::size_t i = 0; i < cfg_.calib_clips; ++i) keys.push_back("calib_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg_.test_clips; ++i) keys.push_back("test_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg_.session_clips; ++i)
    keys.push_back("session_" + std::to_string(i));

  // ceilings and masks depend only on the clip
  std::map<std::string, DeficiencyMask> masks;
  std::map<std::string, AudibilityCeiling> ceilings;
  for (const auto& key : keys) {
    const Signal& clip = clip_by_key(key);
    masks[key] = deficiency_mask(clip, cfg_.features);
    ceilings[key] = compute_ceiling(clip, masks[key], cfg_.features, cfg_.masking_offset_db);
  }

  Rng master(cfg_.seed);
  patches_.assign(users_.size(), {});
  std::size_t cells_total = 0, cells_over = 0, off_mask = 0, clipped_total = 0;
  std::mutex audit_mu;
  parallel_over(users_.size(), [&](std::size_t u) {
    std::size_t my_cells = 0, my_over = 0, my_off = 0, my_clipped = 0;
    for (std::size_t ki = 0; ki < keys.size(); ++ki) {
      const std::string& key = keys[ki];
      const Signal& clip = clip_by_key(key);
      WatermarkOptions opts;
      opts.iters = cfg_.watermark_iters;
      opts.step = cfg_.watermark_step;
      opts.masking_offset_db = cfg_.masking_offset_db;
      opts.seed = master.fork("patch", u * 1000 + ki).next_u64();
      OptimizeResult res =
          optimize_patch(clip, users_[u].session_irs[0], templates_[u], net_->params,
                         ceilings[key], masks[key], cfg_.features, opts);
      const PatchAudit audit =
          audit_patch(clip, res.patch, cfg_.features, cfg_.masking_offset_db);
      my_cells += audit.cells_total;
      my_over += audit.cells_over;
      my_off += audit.gains_off_mask;
      std::size_t clipped = 0;
      apply_patch(clip, res.patch, &clipped);
      my_clipped += clipped;
      patches_[u].emplace(key, std::move(res.patch));
    }
    std::lock_guard<std::mutex> lock(audit_mu);
    cells_total += my_cells;
    cells_over += my_over;
    off_mask += my_off;
    clipped_total += my_clipped;
  });
  report_.watermark_cells_total = cells_total;
  report_.watermark_cells_over = cells_over;
  report_.watermark_gains_off_mask = off_mask;
  report_.watermark_clipped_samples = clipped_total;

  if (!out_root_.empty()) write_patch_artifacts();
}

void Pipeline::write_patch_artifacts() const {
  const fs::path dir = fs::path(out_root_) / "watermark";
  for (std::size_t u = 0; u < patches_.size(); ++u) {
    for (const auto& [key, patch] : patches_[u]) {
      write_text(dir / "patches" / (user_id(u) + "_" + key + ".json"),
                 patch_to_json(patch) + "\n");
      if (cfg_.write_watermarked_wavs && key.rfind("test_", 0) == 0) {
        const Signal wm = apply_patch(clip_by_key(key), patch);
        fs::create_directories(dir / "wavs");
        write_wav((dir / "wavs" / (user_id(u) + "_" + key + ".wav")).string(), wm);
      }
    }
  }
  ordered_json audit;
  audit["format"] = "earcan-watermark-audit";
  audit["cells_total"] = report_.watermark_cells_total;
  audit["cells_over_ceiling"] = report_.watermark_cells_over;
  audit["gains_off_mask"] = report_.watermark_gains_off_mask;
  audit["clipped_samples"] = report_.watermark_clipped_samples;
  write_text(dir / "audit.json", audit.dump(2) + "\n");
}

bool Pipeline::load_patches() {
  const fs::path dir = fs::path(out_root_) / "watermark" / "patches";
  if (!fs::exists(dir)) return false;
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < cfg_.calib_clips; ++i) keys.push_back("calib_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg_.test_clips; ++i) keys.push_back("test_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg_.session_clips; ++i)
    keys.push_back("session_" + std::to_string(i));
  patches_.assign(cfg_.n_users, {});
  for (std::size_t u = 0; u < cfg_.n_users; ++u) {
    for (const auto& key : keys) {
      const fs::path p = dir / (user_id(u) + "_" + key + ".json");
      if (!fs::exists(p)) {
        patches_.clear();
        return false;
      }
      patches_[u].emplace(key, patch_from_json(read_text(p)));
    }
  }
  const fs::path audit = fs::path(out_root_) / "watermark" / "audit.json";
  if (fs::exists(audit)) {
    const auto j = nlohmann::json::parse(read_text(audit));
    report_.watermark_cells_total = j.at("cells_total").get<std::size_t>();
    report_.watermark_cells_over = j.at("cells_over_ceiling").get<std::size_t>();
    report_.watermark_gains_off_mask = j.at("gains_off_mask").get<std::size_t>();
    report_.watermark_clipped_samples = j.at("clipped_samples").get<std::size_t>();
  }
  return true;
}

// ------------------------------------------------------------------ eval

Signal Pipeline::condition_playback(const std::string& condition, std::size_t target_user,
                                    const std::string& clip_key) const {
  if (condition == "chirp") return chirp_signal();
  const Signal& clip = clip_by_key(clip_key);
  if (condition == "playback") return clip;
  if (condition == "watermarked") return apply_patch(clip, patches_.at(target_user).at(clip_key));
  fail(Errc::config, "unknown condition " + condition);
}

Embedding Pipeline::probe_embedding(const Signal& playback, std::size_t occupant,
                                    std::uint64_t jitter_seed, std::uint64_t noise_seed) const {
  const EarProfile session_profile =
      jitter_profile(users_[occupant].profile, cfg_.jitter, jitter_seed, cfg_.population);
  const Signal response =
      simulate_in_ear(session_profile, playback, cfg_.acquisition_noise, noise_seed,
                      cfg_.ir_length);
  const FeatureMatrix feats = rtf_features(playback, response, cfg_.features);
  return forward(net_->params, feats);
}

Pipeline::ProbeSet Pipeline::run_probes(const std::string& condition,
                                        const std::vector<std::string>& clip_keys,
                                        const char* purpose) {
  Rng master(cfg_.seed);
  const std::size_t n = users_.size();
  const std::size_t p = clip_keys.size();
  ProbeSet out;

  const std::uint64_t purpose_salt = Rng(0).fork(purpose).next_u64();

  if (condition != "watermarked") {
    // one acquisition per (occupant, probe), scored against every template
    std::vector<Embedding> embs(n * p);
    parallel_over(n, [&](std::size_t v) {
      for (std::size_t i = 0; i < p; ++i) {
        const Signal playback = condition_playback(condition, v, clip_keys[i]);
        const std::uint64_t jseed =
            master.fork(purpose, v * 4096 + i).fork("jitter").next_u64();
        const std::uint64_t nseed =
            master.fork(purpose, v * 4096 + i).fork("noise", purpose_salt).next_u64();
        embs[v * p + i] = probe_embedding(playback, v, jseed, nseed);
      }
    });
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = 0; v < n; ++v)
        for (std::size_t i = 0; i < p; ++i) {
          const double s = score(templates_[u], embs[v * p + i]);
          (u == v ? out.genuine : out.imposter).push_back(s);
        }
    return out;
  }

  // watermarked: the playback is crafted per target user
  std::vector<std::vector<double>> genuine(n), imposter(n);
  parallel_over(n, [&](std::size_t u) {
    for (std::size_t i = 0; i < p; ++i) {
      const Signal playback = condition_playback(condition, u, clip_keys[i]);
      for (std::size_t v = 0; v < n; ++v) {
        const std::uint64_t jseed =
            master.fork(purpose, v * 4096 + i).fork("jitter").next_u64();
        const std::uint64_t nseed =
            master.fork(purpose, (u * n + v) * 4096 + i).fork("noise_wm", purpose_salt).next_u64();
        const Embedding e = probe_embedding(playback, v, jseed, nseed);
        const double s = score(templates_[u], e);
        (u == v ? genuine[u] : imposter[u]).push_back(s);
      }
    }
  });
  for (std::size_t u = 0; u < n; ++u) {
    out.genuine.insert(out.genuine.end(), genuine[u].begin(), genuine[u].end());
    out.imposter.insert(out.imposter.end(), imposter[u].begin(), imposter[u].end());
  }
  return out;
}

void Pipeline::ensure_eval() {
  if (have_eval_) return;
  ensure_corpus();
  ensure_enrollment();
  ensure_net();
  ensure_templates();
  ensure_patches();

  std::vector<std::string> calib_keys, test_keys;
  for (std::size_t i = 0; i < cfg_.calib_clips; ++i)
    calib_keys.push_back("calib_" + std::to_string(i));
  for (std::size_t i = 0; i < cfg_.test_clips; ++i) test_keys.push_back("test_" + std::to_string(i));

  for (const std::string condition : {"chirp", "playback", "watermarked"}) {
    ConditionMetrics m;
    // calibration: thresholds come from held-out clips, never test data
    const ProbeSet calib = run_probes(condition, calib_keys, "calib");
    const EerResult calib_eer = eer(calib.genuine, calib.imposter);
    m.theta_accept = calib_eer.threshold;
    m.theta_update = m.theta_accept;
    for (const auto& pt : roc_points(calib.genuine, calib.imposter)) {
      if (pt.far <= cfg_.update_far_target) {
        m.theta_update = std::max(m.theta_accept, pt.threshold);
        break;
      }
    }

    const ProbeSet test = run_probes(condition, test_keys, "test");
    const EerResult test_eer = eer(test.genuine, test.imposter);
    m.eer = test_eer.eer;
    m.eer_threshold = test_eer.threshold;
    m.n_genuine = test.genuine.size();
    m.n_imposter = test.imposter.size();
    std::size_t correct = 0;
    for (double s : test.genuine) correct += s >= test_eer.threshold;
    for (double s : test.imposter) correct += s < test_eer.threshold;
    m.accuracy_at_eer =
        static_cast<double>(correct) / static_cast<double>(m.n_genuine + m.n_imposter);
    report_.conditions[condition] = m;

    if (!out_root_.empty()) {
      const auto roc = roc_points(test.genuine, test.imposter);
      write_text(fs::path(out_root_) / "eval" / ("roc_" + condition + ".csv"), roc_to_csv(roc));
    }
  }
  have_eval_ = true;
  if (!out_root_.empty()) write_eval_artifacts();
}

void Pipeline::write_eval_artifacts() const {
  ordered_json thresholds;
  thresholds["format"] = "earcan-thresholds";
  for (const auto& [name, m] : report_.conditions)
    thresholds[name] = {{"theta_accept", m.theta_accept}, {"theta_update", m.theta_update}};
  write_text(fs::path(out_root_) / "eval" / "thresholds.json", thresholds.dump(2) + "\n");

  ordered_json metrics;
  metrics["format"] = "earcan-metrics";
  for (const auto& [name, m] : report_.conditions) metrics[name] = condition_json(m);
  write_text(fs::path(out_root_) / "eval" / "metrics.json", metrics.dump(2) + "\n");
}

bool Pipeline::load_thresholds() {
  const fs::path path = fs::path(out_root_) / "eval" / "metrics.json";
  if (!fs::exists(path)) return false;
  const auto j = nlohmann::json::parse(read_text(path));
  for (const std::string name : {"chirp", "playback", "watermarked"}) {
    if (!j.contains(name)) return false;
    ConditionMetrics m;
    const auto& cj = j.at(name);
    m.eer = cj.at("eer").get<double>();
    m.eer_threshold = cj.at("eer_threshold").get<double>();
    m.accuracy_at_eer = cj.at("accuracy_at_eer").get<double>();
    m.n_genuine = cj.at("n_genuine").get<std::size_t>();
    m.n_imposter = cj.at("n_imposter").get<std::size_t>();
    m.theta_accept = cj.at("theta_accept").get<double>();
    m.theta_update = cj.at("theta_update").get<double>();
    report_.conditions[name] = m;
  }
  have_eval_ = true;
  return true;
}

// -------------------------------------------------------------- sessions

void Pipeline::ensure_sessions() {
  if (have_sessions_) return;
  ensure_corpus();
  ensure_enrollment();
  ensure_net();
  ensure_templates();
  ensure_patches();
  if (!have_eval_ && !(out_root_.empty() ? false : load_thresholds())) ensure_eval();

  const std::string condition = cfg_.session_condition;
  const ConditionMetrics& cm = report_.conditions.at(condition);
  SessionConfig scfg = cfg_.session;
  scfg.theta_accept = cm.theta_accept;
  scfg.theta_update = cm.theta_update;
  scfg.validate();

  Rng master(cfg_.seed);
  const std::size_t n = users_.size();
  const double nominal_latency = 50.0;

  // per-user watermarked session playbacks, built once
  std::vector<std::vector<Signal>> session_playback(n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t i = 0; i < cfg_.session_clips; ++i) {
      session_playback[u].push_back(
          condition_playback(condition, u, "session_" + std::to_string(i)));
    }
  }

  struct TrialOutcome {
    bool authenticated = false;
    bool locked = false;
    long lock_window = -1;
    std::string trace;
  };

  auto window_probe = [&](std::size_t target, std::size_t occupant, std::size_t clip,
                          std::uint64_t jseed, std::uint64_t nseed, Embedding* emb_out) {
    const Signal& playback = session_playback[target][clip];
    const Embedding e = probe_embedding(playback, occupant, jseed, nseed);
    if (emb_out) *emb_out = e;
    return score(templates_[target], e);
  };

  auto run_trial = [&](std::size_t trial, bool with_takeover) {
    TrialOutcome outcome;
    const std::size_t u = trial % n;
    std::size_t v = static_cast<std::size_t>(
        Rng(master.fork("imposter_pick", trial).next_u64()).uniform_int(0, static_cast<std::int64_t>(n) - 2));
    if (v >= u) ++v;

    SessionState st(scfg, templates_[u]);
    // strict initial login by the genuine user, up to 3 attempts
    for (int attempt = 0; attempt < 3 && st.phase() == Phase::initial_login; ++attempt) {
      const std::uint64_t cs = master.fork("login_challenge", trial * 8 + attempt).next_u64();
      const std::size_t clip = cs % cfg_.session_clips;
      const double s =
          window_probe(u, u, clip, master.fork("login_jitter", trial * 8 + attempt).next_u64(),
                       master.fork("login_noise", trial * 8 + attempt).next_u64(), nullptr);
      st.initial_login(s, 0.0);
    }
    if (st.phase() != Phase::authenticated) {
      outcome.trace = st.trace_jsonl();
      return outcome;
    }
    outcome.authenticated = true;

    for (std::size_t w = 1; w <= cfg_.session_windows; ++w) {
      const double now = static_cast<double>(w) * cfg_.session.window_seconds * 1000.0;
      const std::size_t occupant = (with_takeover && w >= cfg_.takeover_window) ? v : u;
      Challenge ch =
          issue_challenge(master.fork("challenge", trial * 100 + w).next_u64(), now, scfg);
      const std::size_t clip = ch.nonce % cfg_.session_clips;
      Embedding emb;
      const double s =
          window_probe(u, occupant, clip, master.fork("sess_jitter", trial * 100 + w).next_u64(),
                       master.fork("sess_noise", trial * 100 + w).next_u64(), &emb);
      const VerifyOutcome vr =
          verify_response(ch, {ch.nonce, nominal_latency, s}, scfg);
      // CRI rejections that are not score-based invalidate the window outright
      const double effective =
          (vr == VerifyOutcome::accept || vr == VerifyOutcome::reject_score) ? s : -1.0;
      st.window_step(effective, now);
      if (st.phase() == Phase::locked) {
        outcome.locked = true;
        outcome.lock_window = static_cast<long>(w);
        break;
      }
      st.maybe_update_template(emb, s, now);
    }
    outcome.trace = st.trace_jsonl();
    return outcome;
  };

  // insider takeover
  InsiderStats insider;
  insider.trials = cfg_.intrusion_trials;
  std::vector<double> windows_to_lock;
  std::vector<TrialOutcome> outcomes(cfg_.intrusion_trials);
  parallel_over(cfg_.intrusion_trials, [&](std::size_t t) { outcomes[t] = run_trial(t, true); });
  for (std::size_t t = 0; t < cfg_.intrusion_trials; ++t) {
    const auto& oc = outcomes[t];
    if (!oc.authenticated) continue;
    ++insider.authenticated;
    if (oc.locked) {
      ++insider.locked;
      const long wtl = oc.lock_window - static_cast<long>(cfg_.takeover_window) + 1;
      windows_to_lock.push_back(static_cast<double>(wtl));
      if (wtl <= static_cast<long>(scfg.k_fail)) ++insider.locked_within_k;
    }
  }
  insider.median_windows_to_lock = median(windows_to_lock);
  report_.insider = insider;

  // genuine control (no takeover): false-lock rate
  GenuineControlStats control;
  control.trials = cfg_.intrusion_trials;
  std::vector<TrialOutcome> control_outcomes(cfg_.intrusion_trials);
  parallel_over(cfg_.intrusion_trials,
                [&](std::size_t t) { control_outcomes[t] = run_trial(t, false); });
  for (const auto& oc : control_outcomes) control.locked += oc.locked;
  control.false_lock_rate =
      static_cast<double>(control.locked) / static_cast<double>(control.trials);
  report_.genuine_control = control;

  // replay of a recorded response against a fresh challenge nonce
  RejectStats replay;
  replay.trials = cfg_.intrusion_trials;
  for (std::size_t t = 0; t < replay.trials; ++t) {
    Challenge original =
        issue_challenge(master.fork("replay_orig", t).next_u64(), 0.0, scfg);
    Challenge fresh = issue_challenge(master.fork("replay_fresh", t).next_u64(),
                                      cfg_.session.window_seconds * 1000.0, scfg);
    // the recorded response scored high under its own challenge; the nonce
    // still pins it to the window it was captured in
    const ResponseMeta meta{original.nonce, nominal_latency, 1.0};
    if (verify_response(fresh, meta, scfg) == VerifyOutcome::reject_nonce) ++replay.rejected;
  }
  report_.replay_login = replay;

  // genuine-shaped but late
  RejectStats delayed;
  delayed.trials = cfg_.intrusion_trials;
  for (std::size_t t = 0; t < delayed.trials; ++t) {
    Challenge ch = issue_challenge(master.fork("delay_ch", t).next_u64(), 0.0, scfg);
    const ResponseMeta meta{ch.nonce, nominal_latency + 500.0, 1.0};
    if (verify_response(ch, meta, scfg) == VerifyOutcome::reject_late) ++delayed.rejected;
  }
  report_.delayed_response = delayed;

  if (!out_root_.empty()) {
    const fs::path dir = fs::path(out_root_) / "sessions";
    for (std::size_t t = 0; t < std::min<std::size_t>(outcomes.size(), 8); ++t) {
      char name[40];
      std::snprintf(name, sizeof name, "insider_trial_%03zu.jsonl", t);
      write_text(dir / name, outcomes[t].trace);
    }
    ordered_json stats;
    stats["format"] = "earcan-session-stats";
    stats["condition"] = condition;
    stats["theta_accept"] = scfg.theta_accept;
    stats["theta_update"] = scfg.theta_update;
    stats["insider"] = {{"trials", insider.trials},
                        {"authenticated", insider.authenticated},
                        {"locked", insider.locked},
                        {"locked_within_k_fail", insider.locked_within_k},
                        {"median_windows_to_lock", insider.median_windows_to_lock}};
    stats["replay_login"] = {{"trials", replay.trials}, {"rejected", replay.rejected}};
    stats["delayed_response"] = {{"trials", delayed.trials}, {"rejected", delayed.rejected}};
    stats["genuine_control"] = {{"trials", control.trials},
                                {"locked", control.locked},
                                {"false_lock_rate", control.false_lock_rate}};
    write_text(dir / "stats.json", stats.dump(2) + "\n");
  }
  have_sessions_ = true;
}

MetricsReport Pipeline::run_all() {
  const auto t0 = std::chrono::steady_clock::now();
  if (!out_root_.empty())
    write_text(fs::path(out_root_) / "config.snapshot.cfg", cfg_.canonical_text());
  ensure_corpus();
  ensure_enrollment();
  ensure_dataset();
  ensure_net();
  ensure_templates();
  ensure_patches();
  ensure_eval();
  ensure_sessions();
  report_.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_root_.empty())
    write_text(fs::path(out_root_) / "report.json", report_to_json(report_, true));
  return report_;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, const std::string& out_root) {
  Pipeline p(cfg, out_root);
  return p.run_all();
}

IntrusionScenario intrusion_scenario_from_name(const std::string& name) {
  if (name == "insider_takeover_mid_session") return IntrusionScenario::insider_takeover_mid_session;
  if (name == "replay_login") return IntrusionScenario::replay_login;
  if (name == "delayed_response") return IntrusionScenario::delayed_response;
  fail(Errc::config, "unknown intrusion scenario '" + name + "'");
}

}  // namespace earcan
