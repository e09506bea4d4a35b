#include "earcan/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "earcan/error.hpp"

namespace earcan {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct KeyBinding {
  enum class Type { u64, size, integer, real, boolean, text };
  std::string key;
  Type type;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

double parse_real(const std::string& v) {
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return x;
}

long long parse_int(const std::string& v) {
  std::size_t pos = 0;
  const long long x = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false");
}

#define REAL_KEY(name, field)                                                       \
  {name, KeyBinding::Type::real, [](const ExperimentConfig& c) { return fmt_double(c.field); }, \
   [](ExperimentConfig& c, const std::string& v) { c.field = parse_real(v); }}
#define SIZE_KEY(name, field)                                                        \
  {name, KeyBinding::Type::size, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
   [](ExperimentConfig& c, const std::string& v) {                                   \
     const long long x = parse_int(v);                                               \
     if (x < 0) throw std::invalid_argument("must be non-negative");                 \
     c.field = static_cast<std::size_t>(x);                                          \
   }}
#define INT_KEY(name, field)                                                         \
  {name, KeyBinding::Type::integer, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
   [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<int>(parse_int(v)); }}
#define BOOL_KEY(name, field)                                                        \
  {name, KeyBinding::Type::boolean, [](const ExperimentConfig& c) { return c.field ? "true" : "false"; }, \
   [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(v); }}

const std::vector<KeyBinding>& schema() {
  static const std::vector<KeyBinding> keys = {
      {"seed", KeyBinding::Type::u64,
       [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(std::stoull(v));
       }},
      INT_KEY("audio.sample_rate", sample_rate),

      SIZE_KEY("population.n_users", n_users),
      INT_KEY("population.resonators_min", population.resonators_min),
      INT_KEY("population.resonators_max", population.resonators_max),
      REAL_KEY("population.fc_min_hz", population.fc_min_hz),
      REAL_KEY("population.fc_max_hz", population.fc_max_hz),
      REAL_KEY("population.q_min", population.q_min),
      REAL_KEY("population.q_max", population.q_max),
      REAL_KEY("population.peak_min", population.peak_min),
      REAL_KEY("population.peak_max", population.peak_max),
      REAL_KEY("population.min_spacing_hz", population.min_spacing_hz),
      REAL_KEY("population.direct_gain_min", population.direct_gain_min),
      REAL_KEY("population.direct_gain_max", population.direct_gain_max),
      INT_KEY("population.direct_delay_min", population.direct_delay_min),
      INT_KEY("population.direct_delay_max", population.direct_delay_max),
      REAL_KEY("jitter.fc_fraction", jitter.fc_fraction),
      REAL_KEY("jitter.gain_fraction", jitter.gain_fraction),

      REAL_KEY("sounding.f0_hz", chirp.f0_hz),
      REAL_KEY("sounding.f1_hz", chirp.f1_hz),
      REAL_KEY("sounding.duration_s", chirp.duration_s),
      REAL_KEY("sounding.amplitude", chirp.amplitude),
      SIZE_KEY("sounding.ir_length", ir_length),
      REAL_KEY("sounding.noise_amplitude", sounding_noise),
      REAL_KEY("sounding.min_peak_to_rms_db", min_peak_to_rms_db),
      SIZE_KEY("enroll.sessions", enroll_sessions),

      {"corpus.kind", KeyBinding::Type::text,
       [](const ExperimentConfig& c) {
         return c.corpus_kind == CorpusKind::synthetic_musiclike ? std::string("musiclike")
                                                                 : std::string("speechlike");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "speechlike")
           c.corpus_kind = CorpusKind::synthetic_speechlike;
         else if (v == "musiclike")
           c.corpus_kind = CorpusKind::synthetic_musiclike;
         else
           throw std::invalid_argument("expected speechlike or musiclike");
       }},
      SIZE_KEY("corpus.train_clips", train_clips),
      SIZE_KEY("corpus.calib_clips", calib_clips),
      SIZE_KEY("corpus.test_clips", test_clips),
      SIZE_KEY("corpus.session_clips", session_clips),
      REAL_KEY("corpus.silence_profile", silence_profile),
      REAL_KEY("corpus.min_duration_s", clip_min_s),
      REAL_KEY("corpus.max_duration_s", clip_max_s),
      REAL_KEY("corpus.noise_amplitude", acquisition_noise),

      SIZE_KEY("features.frame_len", features.frame_len),
      SIZE_KEY("features.hop", features.hop),
      SIZE_KEY("features.nfft", features.nfft),
      SIZE_KEY("features.n_bands", features.n_bands),
      REAL_KEY("features.band_lo_hz", features.band_lo_hz),
      REAL_KEY("features.band_hi_hz", features.band_hi_hz),
      REAL_KEY("features.silence_dbfs", features.silence_dbfs),
      REAL_KEY("features.deficiency_margin_db", features.deficiency_margin_db),

      SIZE_KEY("net.conv1_ch", net.conv1_ch),
      SIZE_KEY("net.conv1_k", net.conv1_k),
      SIZE_KEY("net.conv2_ch", net.conv2_ch),
      SIZE_KEY("net.conv2_k", net.conv2_k),
      SIZE_KEY("net.emb_dim", net.emb_dim),

      REAL_KEY("train.lr", train.lr),
      REAL_KEY("train.momentum", train.momentum),
      SIZE_KEY("train.epochs", train.epochs),
      SIZE_KEY("train.batch", train.batch),
      REAL_KEY("train.aam_scale", train.aam.scale),
      REAL_KEY("train.aam_margin", train.aam.margin),

      SIZE_KEY("watermark.iters", watermark_iters),
      REAL_KEY("watermark.step", watermark_step),
      REAL_KEY("watermark.masking_offset_db", masking_offset_db),

      REAL_KEY("session.window_seconds", session.window_seconds),
      SIZE_KEY("session.k_fail", session.k_fail),
      REAL_KEY("session.ema_lambda", session.ema_lambda),
      REAL_KEY("session.alpha_update", session.alpha_update),
      REAL_KEY("session.latency_budget_ms", session.latency_budget_ms),
      REAL_KEY("session.update_far_target", update_far_target),
      SIZE_KEY("session.windows_per_trial", session_windows),
      SIZE_KEY("session.takeover_window", takeover_window),
      SIZE_KEY("session.trials", intrusion_trials),
      {"session.condition", KeyBinding::Type::text,
       [](const ExperimentConfig& c) { return c.session_condition; },
       [](ExperimentConfig& c, const std::string& v) {
         if (v != "chirp" && v != "playback" && v != "watermarked")
           throw std::invalid_argument("expected chirp, playback or watermarked");
         c.session_condition = v;
       }},

      {"output.root", KeyBinding::Type::text,
       [](const ExperimentConfig& c) { return c.output_root; },
       [](ExperimentConfig& c, const std::string& v) { c.output_root = v; }},
      BOOL_KEY("output.write_pair_wavs", write_pair_wavs),
      BOOL_KEY("output.write_watermarked_wavs", write_watermarked_wavs),
  };
  return keys;
}

#undef REAL_KEY
#undef SIZE_KEY
#undef INT_KEY
#undef BOOL_KEY

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::config, "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& keys = schema();
    const auto it = std::find_if(keys.begin(), keys.end(),
                                 [&](const KeyBinding& k) { return k.key == key; });
    if (it == keys.end())
      fail(Errc::config, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const std::exception& e) {
      fail(Errc::config, "config line " + std::to_string(line_no) + ": bad value for '" + key +
                             "' (" + e.what() + ")");
    }
  }
  cfg.features.sample_rate = cfg.sample_rate;
  cfg.population.sample_rate = cfg.sample_rate;
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::config, "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

std::string ExperimentConfig::canonical_text() const {
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& k : schema()) rows.emplace_back(k.key, k.get(*this));
  std::sort(rows.begin(), rows.end());
  std::string out;
  for (const auto& [k, v] : rows) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : text) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical_text()); }

void ExperimentConfig::validate() const {
  if (sample_rate <= 0) fail(Errc::config, "audio.sample_rate must be positive");
  if (n_users < 2) fail(Errc::config, "population.n_users must be >= 2");
  if (train_clips < 2) fail(Errc::config, "corpus.train_clips must be >= 2");
  if (calib_clips < 1 || test_clips < 1) fail(Errc::config, "corpus needs calib and test clips");
  if (enroll_sessions < 1) fail(Errc::config, "enroll.sessions must be >= 1");
  if (silence_profile < 0.0 || silence_profile >= 1.0)
    fail(Errc::config, "corpus.silence_profile must lie in [0, 1)");
  if (train.epochs > 10000) fail(Errc::config, "train.epochs is implausibly large");
  if (watermark_step <= 0.0) fail(Errc::config, "watermark.step must be positive");
  if (takeover_window < 1 || takeover_window >= session_windows)
    fail(Errc::config, "session.takeover_window must fall inside the trial");
  if (update_far_target < 0.0 || update_far_target > 1.0)
    fail(Errc::config, "session.update_far_target must lie in [0, 1]");
}

}  // namespace earcan
