#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earcan/ear_model.hpp"
#include "earcan/features.hpp"
#include "earcan/signal.hpp"

namespace earcan {

enum class CorpusKind { synthetic_speechlike, synthetic_musiclike, external_wav };

struct Corpus {
  std::vector<Signal> clips;
  std::vector<double> silence_fraction;  // measured per clip (frame-RMS detector)
  CorpusKind kind = CorpusKind::synthetic_speechlike;
};

struct CorpusSpec {
  CorpusKind kind = CorpusKind::synthetic_speechlike;
  std::size_t n_clips = 1;
  double silence_profile = 0.0;  // target fraction of silent time per clip
  double min_duration_s = 1.0;
  double max_duration_s = 2.0;
  int sample_rate = 16000;
};

// Deterministic synthetic corpus. Speechlike clips are harmonic bursts
// (100-300 Hz fundamental, 3-8 harmonics) alternating with silence gaps;
// musiclike clips are sustained tone stacks plus filtered noise, gapped
// the same way. Silence is budgeted exactly, so the measured fraction
// lands close to silence_profile.
Corpus synth_corpus(const CorpusSpec& spec, std::uint64_t seed,
                    const FeatureConfig& feature_cfg);

// One augmented playback-response pair. The playback lives in the corpus;
// pairs reference it by index.
struct LabeledPair {
  std::size_t clip_index = 0;
  Signal response;
  std::string user_id;
  int session_id = 0;
};

// response = convolve(clip, ir.taps) + noise per clip. Refuses ground-truth
// IRs: training data must only ever see the estimated channel.
std::vector<LabeledPair> make_pairs(const ImpulseResponse& ir, const Corpus& corpus,
                                    double noise_amplitude, std::uint64_t seed,
                                    const std::string& user_id, int session_id = 0);

struct DatasetSplit {
  std::vector<std::size_t> train;  // indices into the input pair list
  std::vector<std::size_t> eval;
};

// Label-stratified disjoint split, deterministic in seed.
DatasetSplit split_dataset(const std::vector<LabeledPair>& pairs, double train_fraction,
                           std::uint64_t seed);

// Fraction of frames whose RMS falls below the silence threshold.
double measure_silence_fraction(const Signal& s, const FeatureConfig& cfg);

}  // namespace earcan
