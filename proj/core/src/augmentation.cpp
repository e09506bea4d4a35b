#include "earcan/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "earcan/error.hpp"
#include "earcan/rng.hpp"

namespace earcan {

namespace {
constexpr double kPi = 3.14159265358979323846;

// 5 ms raised-cosine attack/release so burst edges stay click-free without
// dropping a whole frame under the silence threshold.
void apply_ramps(std::vector<double>& seg, int sample_rate) {
  const std::size_t ramp = std::min<std::size_t>(seg.size() / 4, static_cast<std::size_t>(0.005 * sample_rate));
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(i) / static_cast<double>(ramp)));
    seg[i] *= g;
    seg[seg.size() - 1 - i] *= g;
  }
}

std::vector<double> speechlike_burst(std::size_t len, int fs, Rng& rng) {
  const double f0 = rng.uniform(100.0, 300.0);
  const int harmonics = static_cast<int>(rng.uniform_int(3, 8));
  const double phase0 = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> seg(len, 0.0);
  double norm = 0.0;
  for (int h = 1; h <= harmonics; ++h) norm += 1.0 / h;
  const double a0 = 0.45 / norm;
  for (int h = 1; h <= harmonics; ++h) {
    const double f = f0 * h;
    if (f > 0.48 * fs) break;
    const double a = a0 / h;
    for (std::size_t i = 0; i < len; ++i)
      seg[i] += a * std::sin(2.0 * kPi * f * static_cast<double>(i) / fs + phase0 * h);
  }
  apply_ramps(seg, fs);
  return seg;
}

std::vector<double> musiclike_burst(std::size_t len, int fs, Rng& rng) {
  std::vector<double> seg(len, 0.0);
  const int tones = static_cast<int>(rng.uniform_int(2, 4));
  for (int j = 0; j < tones; ++j) {
    const double f = rng.uniform(200.0, 3500.0);
    const double a = rng.uniform(0.08, 0.18);
    const double ph = rng.uniform(0.0, 2.0 * kPi);
    for (std::size_t i = 0; i < len; ++i)
      seg[i] += a * std::sin(2.0 * kPi * f * static_cast<double>(i) / fs + ph);
  }
  // filtered noise bed: first-order smoothed white noise
  double state = 0.0;
  const double alpha = 0.3;
  for (std::size_t i = 0; i < len; ++i) {
    state += alpha * ((2.0 * rng.uniform() - 1.0) - state);
    seg[i] += 0.12 * state;
  }
  apply_ramps(seg, fs);
  return seg;
}

Signal synth_clip(const CorpusSpec& spec, Rng& rng) {
  const int fs = spec.sample_rate;
  const double dur = rng.uniform(spec.min_duration_s, spec.max_duration_s);
  const std::size_t len = static_cast<std::size_t>(std::llround(dur * fs));
  Signal clip;
  clip.sample_rate = fs;
  clip.samples.assign(len, 0.0);

  const std::size_t active_total =
      static_cast<std::size_t>(std::llround((1.0 - spec.silence_profile) * static_cast<double>(len)));
  // Partition the active budget into bursts of ~0.15-0.3 s, then spread the
  // silence budget across the gaps between them.
  std::vector<std::size_t> burst_lens;
  std::size_t remaining = active_total;
  while (remaining > 0) {
    std::size_t b = static_cast<std::size_t>(std::llround(rng.uniform(0.15, 0.30) * fs));
    b = std::min(b, remaining);
    if (remaining - b < static_cast<std::size_t>(0.08 * fs)) b = remaining;
    burst_lens.push_back(b);
    remaining -= b;
  }
  const std::size_t n_gaps = burst_lens.size();  // one gap after each burst (last may be cut)
  std::vector<double> gap_weights(n_gaps);
  double wsum = 0.0;
  for (auto& g : gap_weights) {
    g = rng.uniform(0.5, 1.5);
    wsum += g;
  }
  const std::size_t silence_total = len - active_total;

  std::size_t pos = 0;
  for (std::size_t i = 0; i < burst_lens.size() && pos < len; ++i) {
    const std::size_t blen = std::min(burst_lens[i], len - pos);
    auto seg = spec.kind == CorpusKind::synthetic_musiclike ? musiclike_burst(blen, fs, rng)
                                                            : speechlike_burst(blen, fs, rng);
    std::copy(seg.begin(), seg.end(), clip.samples.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += blen;
    const std::size_t gap =
        static_cast<std::size_t>(std::llround(static_cast<double>(silence_total) * gap_weights[i] / wsum));
    pos += gap;  // silence: leave zeros
  }
  return clip;
}

}  // namespace

double measure_silence_fraction(const Signal& s, const FeatureConfig& cfg) {
  if (s.size() < cfg.frame_len) return 0.0;
  const std::size_t n_frames = (s.size() - cfg.frame_len) / cfg.hop + 1;
  std::size_t silent = 0;
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* src = s.samples.data() + t * cfg.hop;
    double ms = 0.0;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) ms += src[i] * src[i];
    const double db = 10.0 * std::log10(ms / static_cast<double>(cfg.frame_len) + 1e-12);
    silent += db < cfg.silence_dbfs;
  }
  return static_cast<double>(silent) / static_cast<double>(n_frames);
}

Corpus synth_corpus(const CorpusSpec& spec, std::uint64_t seed, const FeatureConfig& feature_cfg) {
  if (spec.n_clips < 1) fail(Errc::config, "corpus: n_clips must be >= 1");
  if (spec.silence_profile < 0.0 || spec.silence_profile >= 1.0)
    fail(Errc::config, "corpus: silence_profile must lie in [0, 1)");
  if (spec.min_duration_s < 1.0 || spec.max_duration_s > 10.0 ||
      spec.min_duration_s > spec.max_duration_s)
    fail(Errc::config, "corpus: clip duration range must sit inside [1 s, 10 s]");
  if (spec.kind == CorpusKind::external_wav)
    fail(Errc::config, "corpus: external_wav clips are ingested, not synthesized");
  Corpus corpus;
  corpus.kind = spec.kind;
  Rng base(seed);
  for (std::size_t c = 0; c < spec.n_clips; ++c) {
    Rng rng = base.fork("clip", c);
    corpus.clips.push_back(synth_clip(spec, rng));
    corpus.silence_fraction.push_back(measure_silence_fraction(corpus.clips.back(), feature_cfg));
  }
  return corpus;
}

std::vector<LabeledPair> make_pairs(const ImpulseResponse& ir, const Corpus& corpus,
                                    double noise_amplitude, std::uint64_t seed,
                                    const std::string& user_id, int session_id) {
  if (ir.origin != ImpulseResponse::Origin::estimated)
    fail(Errc::config, "make_pairs: training must use the estimated IR, not ground truth");
  if (corpus.clips.empty()) fail(Errc::config, "make_pairs: empty corpus");
  Rng base(seed);
  std::vector<LabeledPair> pairs;
  pairs.reserve(corpus.clips.size());
  for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
    LabeledPair p;
    p.clip_index = c;
    p.user_id = user_id;
    p.session_id = session_id;
    p.response = convolve(corpus.clips[c], ir.taps);
    if (noise_amplitude > 0.0) {
      const Signal noise =
          white_noise(p.response.size(), noise_amplitude, base.fork("pair_noise", c).next_u64(),
                      p.response.sample_rate);
      for (std::size_t i = 0; i < p.response.size(); ++i) p.response.samples[i] += noise.samples[i];
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

DatasetSplit split_dataset(const std::vector<LabeledPair>& pairs, double train_fraction,
                           std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    fail(Errc::config, "split_dataset: train_fraction must lie in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < pairs.size(); ++i) by_user[pairs[i].user_id].push_back(i);

  DatasetSplit split;
  Rng base(seed);
  std::uint64_t user_index = 0;
  for (auto& [user, indices] : by_user) {
    if (indices.size() < 2)
      fail(Errc::stratification, "split_dataset: user " + user + " has fewer than 2 pairs");
    Rng rng = base.fork("split", user_index++);
    for (std::size_t i = indices.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(indices[i - 1], indices[j]);
    }
    std::size_t n_train =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(indices.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, indices.size() - 1);
    for (std::size_t i = 0; i < indices.size(); ++i)
      (i < n_train ? split.train : split.eval).push_back(indices[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

}  // namespace earcan
