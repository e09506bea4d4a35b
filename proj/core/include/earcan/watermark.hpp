#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earcan/ear_model.hpp"
#include "earcan/embedding.hpp"
#include "earcan/features.hpp"
#include "earcan/matcher.hpp"
#include "earcan/psychoacoustics.hpp"
#include "earcan/signal.hpp"

namespace earcan {

// Per-frame, per-band maximum allowed watermark power in dBFS:
// max(threshold_in_quiet, playback band power - masking_offset_db).
struct AudibilityCeiling {
  std::size_t n_frames = 0;
  std::size_t n_bands = 0;
  std::vector<double> dbfs;

  double at(std::size_t t, std::size_t b) const { return dbfs[t * n_bands + b]; }
};

AudibilityCeiling compute_ceiling(const Signal& playback, const DeficiencyMask& mask,
                                  const FeatureConfig& cfg, double masking_offset_db = 13.0);

// Gains over the analysis frame grid applied to seeded band-limited noise
// carriers. Gains are zero outside deficient cells; after projection the
// realized band power never exceeds the ceiling in any cell.
struct WatermarkPatch {
  std::uint64_t seed = 0;
  std::size_t frame_len = 0;
  std::size_t hop = 0;
  std::size_t nfft = 0;
  std::size_t n_frames = 0;
  std::size_t n_bands = 0;
  std::size_t signal_len = 0;
  int sample_rate = 0;
  std::vector<double> band_edges_hz;
  std::vector<double> gains;  // row-major [frame][band], amplitude units

  double gain_at(std::size_t t, std::size_t b) const { return gains[t * n_bands + b]; }
  bool empty() const;
};

// Deterministic unit-power carrier for one cell; regenerable from
// (patch seed, frame, band) alone, which is what lets a verifier rebuild
// the exact watermark from the serialized patch.
std::vector<double> watermark_carrier(const WatermarkPatch& geometry, std::size_t frame,
                                      std::size_t band);

// Sum of gain-scaled carriers on the frame grid.
Signal build_patch_signal(const WatermarkPatch& patch);

enum class WatermarkObjective {
  cosine_to_template,  // deployment: maximize score(template, embed(...))
  aam_training,        // training-time variant: minimize AAMSoftmax
};

struct WatermarkOptions {
  std::size_t iters = 20;
  double step = 0.25;  // ascent step as a fraction of the largest feasible gain
  std::uint64_t seed = 1;
  double masking_offset_db = 13.0;
  WatermarkObjective objective = WatermarkObjective::cosine_to_template;
  std::size_t aam_label = 0;  // used by the aam_training objective
  AamHyper aam;
};

struct OptimizeResult {
  WatermarkPatch patch;
  std::vector<double> objective_trace;  // objective per evaluated iterate
  double initial_objective = 0.0;
  double final_objective = 0.0;
  bool nothing_to_watermark = false;
};

// Projected gradient ascent on the verification objective through the
// simulated playback+patch -> estimated-IR response -> RTF features ->
// network path. Every returned gain matrix satisfies the ceiling exactly.
OptimizeResult optimize_patch(const Signal& playback, const ImpulseResponse& est_ir,
                              const Template& tmpl, const NetParams& net,
                              const AudibilityCeiling& ceiling, const DeficiencyMask& mask,
                              const FeatureConfig& fcfg, const WatermarkOptions& opts);

// Objective value for a fixed patch (no optimization), and the analytic
// gradient w.r.t. the deficient-cell gains. The gradient is what the
// optimizer ascends; a finite-difference test pins it down.
double patch_objective(const Signal& playback, const ImpulseResponse& est_ir,
                       const Template& tmpl, const NetParams& net, const FeatureConfig& fcfg,
                       const WatermarkOptions& opts, const WatermarkPatch& patch);
double patch_objective_grad(const Signal& playback, const ImpulseResponse& est_ir,
                            const Template& tmpl, const NetParams& net,
                            const FeatureConfig& fcfg, const WatermarkOptions& opts,
                            const WatermarkPatch& patch, const DeficiencyMask& mask,
                            std::vector<double>& gain_grad);

// playback + watermark, clipped to [-1, 1]. Clipping more than 1% of
// samples means the constraint system failed upstream.
Signal apply_patch(const Signal& playback, const WatermarkPatch& patch,
                   std::size_t* clipped_samples = nullptr);

struct PatchAudit {
  std::size_t cells_total = 0;    // every frame/band cell of the grid
  std::size_t cells_over = 0;     // realized power above the ceiling
  std::size_t gains_off_mask = 0; // nonzero gains outside deficient cells
  double max_excess_db = -1e30;
};

PatchAudit audit_patch(const Signal& playback, const WatermarkPatch& patch,
                       const FeatureConfig& cfg, double masking_offset_db = 13.0);

std::string patch_to_json(const WatermarkPatch& patch);
WatermarkPatch patch_from_json(const std::string& text);

}  // namespace earcan
