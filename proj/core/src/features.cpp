#include "earcan/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>

#include "earcan/error.hpp"
#include "earcan/fft.hpp"
#include "earcan/psychoacoustics.hpp"

namespace earcan {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kPowerFloor = 1e-12;  // dB conversion floor, well under any threshold

double mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_inv(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n)));
  return w;
}

struct BandMap {
  std::vector<std::size_t> first_bin;  // per band
  std::vector<std::size_t> last_bin;   // inclusive
};

BandMap make_band_map(const FeatureConfig& cfg, const std::vector<double>& edges) {
  BandMap bm;
  bm.first_bin.resize(cfg.n_bands);
  bm.last_bin.resize(cfg.n_bands);
  const double hz_per_bin = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.nfft);
  for (std::size_t b = 0; b < cfg.n_bands; ++b) {
    const std::size_t k_lo =
        static_cast<std::size_t>(std::ceil(edges[b] / hz_per_bin - 1e-9));
    std::size_t k_hi = static_cast<std::size_t>(std::ceil(edges[b + 1] / hz_per_bin - 1e-9));
    if (k_hi > cfg.nfft / 2 + 1) k_hi = cfg.nfft / 2 + 1;
    if (k_hi <= k_lo)
      fail(Errc::config, "features: band " + std::to_string(b) +
                             " contains no FFT bin; raise nfft or widen bands");
    bm.first_bin[b] = k_lo;
    bm.last_bin[b] = k_hi - 1;
  }
  return bm;
}

}  // namespace

bool DeficiencyMask::any() const {
  return std::any_of(deficient.begin(), deficient.end(), [](std::uint8_t v) { return v != 0; });
}

std::size_t DeficiencyMask::count() const {
  std::size_t c = 0;
  for (auto v : deficient) c += v != 0;
  return c;
}

std::vector<double> band_edges(const FeatureConfig& cfg) {
  if (cfg.n_bands == 0 || cfg.band_lo_hz <= 0.0 || cfg.band_lo_hz >= cfg.band_hi_hz ||
      cfg.band_hi_hz > cfg.sample_rate / 2.0)
    fail(Errc::config, "features: invalid band layout");
  std::vector<double> edges(cfg.n_bands + 1);
  const double m0 = mel(cfg.band_lo_hz), m1 = mel(cfg.band_hi_hz);
  for (std::size_t i = 0; i <= cfg.n_bands; ++i)
    edges[i] = mel_inv(m0 + (m1 - m0) * static_cast<double>(i) / static_cast<double>(cfg.n_bands));
  edges.front() = cfg.band_lo_hz;
  edges.back() = cfg.band_hi_hz;
  return edges;
}

std::vector<double> band_centers(const FeatureConfig& cfg) {
  const auto edges = band_edges(cfg);
  std::vector<double> centers(cfg.n_bands);
  for (std::size_t b = 0; b < cfg.n_bands; ++b) centers[b] = std::sqrt(edges[b] * edges[b + 1]);
  return centers;
}

std::vector<std::vector<double>> frame_signal(const Signal& s, std::size_t frame_len,
                                              std::size_t hop) {
  if (hop < 1) fail(Errc::config, "frame_signal: hop must be >= 1");
  if (frame_len > s.size())
    fail(Errc::short_input, "frame_signal: frame length " + std::to_string(frame_len) +
                                " exceeds signal length " + std::to_string(s.size()));
  const std::size_t count = (s.size() - frame_len) / hop + 1;
  const auto w = hann(frame_len);
  std::vector<std::vector<double>> frames(count);
  for (std::size_t t = 0; t < count; ++t) {
    frames[t].resize(frame_len);
    const double* src = s.samples.data() + t * hop;
    for (std::size_t i = 0; i < frame_len; ++i) frames[t][i] = w[i] * src[i];
  }
  return frames;
}

std::vector<double> band_power_matrix(const Signal& s, const FeatureConfig& cfg,
                                      std::size_t* n_frames_out) {
  if (cfg.nfft < cfg.frame_len) fail(Errc::config, "features: nfft below frame length");
  if (cfg.frame_len > s.size())
    fail(Errc::short_input, "features: signal shorter than one frame");
  const auto edges = band_edges(cfg);
  const auto bm = make_band_map(cfg, edges);
  const auto w = hann(cfg.frame_len);
  double wsq = 0.0;
  for (double v : w) wsq += v * v;
  const double scale = 2.0 / (static_cast<double>(cfg.nfft) * wsq);

  const std::size_t n_frames = (s.size() - cfg.frame_len) / cfg.hop + 1;
  const Fft& plan = fft_plan(cfg.nfft);
  std::vector<double> powers(n_frames * cfg.n_bands, 0.0);
  std::vector<double> buf(cfg.nfft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const double* src = s.samples.data() + t * cfg.hop;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) buf[i] = w[i] * src[i];
    const auto bins = plan.forward_real(buf);
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      double p = 0.0;
      for (std::size_t k = bm.first_bin[b]; k <= bm.last_bin[b]; ++k) p += std::norm(bins[k]);
      powers[t * cfg.n_bands + b] = p * scale;
    }
  }
  if (n_frames_out) *n_frames_out = n_frames;
  return powers;
}

double band_power_to_dbfs(double power) { return 10.0 * std::log10(power + kPowerFloor); }

DeficiencyMask deficiency_mask(const Signal& playback, const FeatureConfig& cfg) {
  std::size_t n_frames = 0;
  const auto powers = band_power_matrix(playback, cfg, &n_frames);
  const auto centers = band_centers(cfg);
  std::vector<double> gate_dbfs(cfg.n_bands);
  for (std::size_t b = 0; b < cfg.n_bands; ++b)
    gate_dbfs[b] = threshold_in_quiet_dbfs(centers[b]) - cfg.deficiency_margin_db;

  DeficiencyMask mask;
  mask.n_frames = n_frames;
  mask.n_bands = cfg.n_bands;
  mask.deficient.assign(n_frames * cfg.n_bands, 0);
  mask.silent_frames.assign(n_frames, 0);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* src = playback.samples.data() + t * cfg.hop;
    double ms = 0.0;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) ms += src[i] * src[i];
    const double frame_rms_db =
        10.0 * std::log10(ms / static_cast<double>(cfg.frame_len) + kPowerFloor);
    const bool silent = frame_rms_db < cfg.silence_dbfs;
    mask.silent_frames[t] = silent;
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      const double level = band_power_to_dbfs(powers[t * cfg.n_bands + b]);
      mask.deficient[t * cfg.n_bands + b] = silent || level < gate_dbfs[b];
    }
  }
  return mask;
}

std::size_t alignment_lag(const Signal& playback, const Signal& response) {
  const std::size_t n = playback.size(), m = response.size();
  if (n == 0 || m == 0) fail(Errc::empty_input, "alignment_lag: empty signal");
  const std::size_t nfft = Fft::next_pow2(n + m);
  const Fft& plan = fft_plan(nfft);
  auto fp = plan.forward_real(playback.samples);
  auto fr = plan.forward_real(response.samples);
  for (std::size_t k = 0; k < fp.size(); ++k) fp[k] = std::conj(fp[k]) * fr[k];
  const auto corr = plan.inverse_real(fp);  // corr[lag] = sum_n p[n] r[n+lag]
  std::size_t best_lag = 0;
  double best = corr[0];
  for (std::size_t lag = 1; lag < m; ++lag) {
    if (corr[lag] > best) {  // strict: ties resolve toward the smaller lag
      best = corr[lag];
      best_lag = lag;
    }
  }
  return best_lag;
}

FeatureMatrix rtf_features(const Signal& playback, const Signal& response,
                           const FeatureConfig& cfg, const DeficiencyMask* mask) {
  if (playback.sample_rate != response.sample_rate)
    fail(Errc::rate_mismatch, "rtf_features: sample rates differ");
  const std::size_t lag = alignment_lag(playback, response);

  std::size_t frames_p = 0;
  const auto pp = band_power_matrix(playback, cfg, &frames_p);

  Signal shifted;
  shifted.sample_rate = response.sample_rate;
  shifted.samples.assign(response.samples.begin() + static_cast<std::ptrdiff_t>(lag),
                         response.samples.end());
  if (shifted.size() < cfg.frame_len)
    fail(Errc::short_input, "rtf_features: response too short after alignment");
  std::size_t frames_r = 0;
  const auto pr = band_power_matrix(shifted, cfg, &frames_r);

  DeficiencyMask local;
  if (!mask) {
    local = deficiency_mask(playback, cfg);
    mask = &local;
  }

  FeatureMatrix fm;
  fm.n_frames = std::min(frames_p, frames_r);
  fm.n_bands = cfg.n_bands;
  fm.band_edges_hz = band_edges(cfg);
  fm.values.resize(fm.n_frames * cfg.n_bands);
  const double k = 10.0 / std::log(10.0);
  for (std::size_t t = 0; t < fm.n_frames; ++t) {
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      const std::size_t i = t * cfg.n_bands + b;
      double v;
      if (t < mask->n_frames && mask->deficient[i]) {
        v = cfg.clamp_lo_db;
      } else {
        v = k * (std::log(pr[i] + cfg.ratio_eps) - std::log(pp[i] + cfg.ratio_eps));
        v = std::clamp(v, cfg.clamp_lo_db, cfg.clamp_hi_db);
      }
      fm.values[i] = v;
    }
  }
  return fm;
}

std::string features_to_csv(const FeatureMatrix& fm) {
  std::string out;
  out.reserve(fm.values.size() * 12);
  char buf[32];
  for (std::size_t t = 0; t < fm.n_frames; ++t) {
    for (std::size_t b = 0; b < fm.n_bands; ++b) {
      std::snprintf(buf, sizeof buf, "%.9g", fm.at(t, b));
      out += buf;
      out += (b + 1 == fm.n_bands) ? '\n' : ',';
    }
  }
  return out;
}

}  // namespace earcan
