#include "earcan/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>

#include <nlohmann/json.hpp>

#include "earcan/error.hpp"
#include "earcan/fft.hpp"
#include "earcan/rng.hpp"

namespace earcan {

namespace {
constexpr double kPi = 3.14159265358979323846;

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n)));
  return w;
}

struct Grid {
  std::vector<double> window;
  double power_scale = 0.0;                 // band power calibration, see features
  std::vector<std::size_t> first_bin, last_bin;  // per band, inclusive
};

Grid make_grid(const WatermarkPatch& p) {
  Grid g;
  g.window = hann(p.frame_len);
  double wsq = 0.0;
  for (double v : g.window) wsq += v * v;
  g.power_scale = 2.0 / (static_cast<double>(p.nfft) * wsq);
  const double hz_per_bin = static_cast<double>(p.sample_rate) / static_cast<double>(p.nfft);
  g.first_bin.resize(p.n_bands);
  g.last_bin.resize(p.n_bands);
  for (std::size_t b = 0; b < p.n_bands; ++b) {
    const std::size_t k_lo =
        static_cast<std::size_t>(std::ceil(p.band_edges_hz[b] / hz_per_bin - 1e-9));
    std::size_t k_hi =
        static_cast<std::size_t>(std::ceil(p.band_edges_hz[b + 1] / hz_per_bin - 1e-9));
    if (k_hi > p.nfft / 2 + 1) k_hi = p.nfft / 2 + 1;
    if (k_hi <= k_lo) fail(Errc::config, "watermark: band without FFT bins");
    g.first_bin[b] = k_lo;
    g.last_bin[b] = k_hi - 1;
  }
  return g;
}

double cell_band_power(const Grid& grid, const WatermarkPatch& p, const std::vector<double>& frame,
                       std::size_t band) {
  std::vector<double> buf(p.nfft, 0.0);
  for (std::size_t i = 0; i < frame.size() && i < p.frame_len; ++i)
    buf[i] = grid.window[i] * frame[i];
  const auto bins = fft_plan(p.nfft).forward_real(buf);
  double pw = 0.0;
  for (std::size_t k = grid.first_bin[band]; k <= grid.last_bin[band]; ++k)
    pw += std::norm(bins[k]);
  return pw * grid.power_scale;
}

// Band powers of an arbitrary signal on the patch grid.
std::vector<double> grid_band_powers(const Grid& grid, const WatermarkPatch& p, const Signal& s,
                                     std::size_t* frames_out) {
  const std::size_t n_frames =
      s.size() >= p.frame_len ? (s.size() - p.frame_len) / p.hop + 1 : 0;
  std::vector<double> powers(n_frames * p.n_bands, 0.0);
  std::vector<double> buf(p.nfft);
  const Fft& plan = fft_plan(p.nfft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const double* src = s.samples.data() + t * p.hop;
    for (std::size_t i = 0; i < p.frame_len; ++i) buf[i] = grid.window[i] * src[i];
    const auto bins = plan.forward_real(buf);
    for (std::size_t b = 0; b < p.n_bands; ++b) {
      double pw = 0.0;
      for (std::size_t k = grid.first_bin[b]; k <= grid.last_bin[b]; ++k) pw += std::norm(bins[k]);
      powers[t * p.n_bands + b] = pw * grid.power_scale;
    }
  }
  if (frames_out) *frames_out = n_frames;
  return powers;
}

WatermarkPatch make_geometry(const Signal& playback, const DeficiencyMask& mask,
                             const FeatureConfig& cfg, std::uint64_t seed) {
  WatermarkPatch p;
  p.seed = seed;
  p.frame_len = cfg.frame_len;
  p.hop = cfg.hop;
  p.nfft = cfg.nfft;
  p.n_frames = mask.n_frames;
  p.n_bands = mask.n_bands;
  p.signal_len = playback.size();
  p.sample_rate = playback.sample_rate;
  p.band_edges_hz = band_edges(cfg);
  p.gains.assign(p.n_frames * p.n_bands, 0.0);
  return p;
}

}  // namespace

bool WatermarkPatch::empty() const {
  return std::all_of(gains.begin(), gains.end(), [](double g) { return g == 0.0; });
}

AudibilityCeiling compute_ceiling(const Signal& playback, const DeficiencyMask& mask,
                                  const FeatureConfig& cfg, double masking_offset_db) {
  std::size_t n_frames = 0;
  const auto powers = band_power_matrix(playback, cfg, &n_frames);
  if (mask.n_frames != n_frames || mask.n_bands != cfg.n_bands)
    fail(Errc::dim_mismatch, "compute_ceiling: mask does not match this playback");
  const auto centers = band_centers(cfg);
  AudibilityCeiling ceiling;
  ceiling.n_frames = n_frames;
  ceiling.n_bands = cfg.n_bands;
  ceiling.dbfs.resize(n_frames * cfg.n_bands);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      const double tq = threshold_in_quiet_dbfs(centers[b]);
      const double masked =
          band_power_to_dbfs(powers[t * cfg.n_bands + b]) - masking_offset_db;
      ceiling.dbfs[t * cfg.n_bands + b] = std::max(tq, masked);
    }
  }
  return ceiling;
}

std::vector<double> watermark_carrier(const WatermarkPatch& geometry, std::size_t frame,
                                      std::size_t band) {
  const Grid grid = make_grid(geometry);
  Rng rng = Rng(geometry.seed).fork("carrier", frame * geometry.n_bands + band);
  std::vector<std::complex<double>> half(geometry.nfft / 2 + 1, {0.0, 0.0});
  for (std::size_t k = grid.first_bin[band]; k <= grid.last_bin[band]; ++k) {
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    half[k] = {std::cos(phase), std::sin(phase)};
  }
  auto time = fft_plan(geometry.nfft).inverse_real(half);
  std::vector<double> carrier(geometry.frame_len);
  for (std::size_t i = 0; i < geometry.frame_len; ++i) carrier[i] = time[i] * grid.window[i];
  const double p = cell_band_power(grid, geometry, carrier, band);
  if (p > 0.0) {
    const double inv = 1.0 / std::sqrt(p);
    for (auto& x : carrier) x *= inv;
  }
  return carrier;
}

Signal build_patch_signal(const WatermarkPatch& patch) {
  Signal w;
  w.sample_rate = patch.sample_rate;
  w.samples.assign(patch.signal_len, 0.0);
  for (std::size_t t = 0; t < patch.n_frames; ++t) {
    for (std::size_t b = 0; b < patch.n_bands; ++b) {
      const double g = patch.gain_at(t, b);
      if (g == 0.0) continue;
      const auto carrier = watermark_carrier(patch, t, b);
      const std::size_t off = t * patch.hop;
      for (std::size_t i = 0; i < carrier.size() && off + i < patch.signal_len; ++i)
        w.samples[off + i] += g * carrier[i];
    }
  }
  return w;
}

namespace {

// Carrier cache keyed by cell; regeneration is deterministic but costs an
// FFT, and the optimizer touches each active cell every iteration.
struct CarrierBank {
  const WatermarkPatch& geom;
  std::map<std::size_t, std::vector<double>> cells;

  const std::vector<double>& get(std::size_t t, std::size_t b) {
    const std::size_t key = t * geom.n_bands + b;
    auto it = cells.find(key);
    if (it == cells.end()) it = cells.emplace(key, watermark_carrier(geom, t, b)).first;
    return it->second;
  }
};

Signal build_from_bank(const WatermarkPatch& patch, CarrierBank& bank) {
  Signal w;
  w.sample_rate = patch.sample_rate;
  w.samples.assign(patch.signal_len, 0.0);
  for (std::size_t t = 0; t < patch.n_frames; ++t) {
    for (std::size_t b = 0; b < patch.n_bands; ++b) {
      const double g = patch.gain_at(t, b);
      if (g == 0.0) continue;
      const auto& carrier = bank.get(t, b);
      const std::size_t off = t * patch.hop;
      for (std::size_t i = 0; i < carrier.size() && off + i < patch.signal_len; ++i)
        w.samples[off + i] += g * carrier[i];
    }
  }
  return w;
}

// Scale gains down until every cell's realized power sits at or below the
// ceiling. Per-cell scaling handles the bulk; a uniform global scale-down
// (which changes every cell's power by exactly the same factor) finishes
// the job so the audit holds with zero tolerance.
void project_to_ceiling(WatermarkPatch& patch, CarrierBank& bank, const Grid& grid,
                        const std::vector<double>& ceiling_lin) {
  const auto neighbor_reach = patch.frame_len / patch.hop;  // frames sharing samples
  for (int pass = 0; pass < 12; ++pass) {
    const Signal w = build_from_bank(patch, bank);
    std::size_t frames = 0;
    const auto realized = grid_band_powers(grid, patch, w, &frames);
    bool violated = false;
    for (std::size_t t = 0; t < std::min(frames, patch.n_frames); ++t) {
      for (std::size_t b = 0; b < patch.n_bands; ++b) {
        const std::size_t i = t * patch.n_bands + b;
        const double c = ceiling_lin[i];
        const double r = realized[i];
        if (r <= c) continue;
        violated = true;
        const double factor = c <= 0.0 ? 0.0 : std::sqrt(c / r) * 0.9995;
        if (patch.gains[i] > 0.0) {
          patch.gains[i] *= factor;
        } else {
          // leakage-only cell: shrink the same-band contributors nearby
          const std::size_t lo = t > neighbor_reach ? t - neighbor_reach : 0;
          const std::size_t hi = std::min(patch.n_frames, t + neighbor_reach + 1);
          for (std::size_t tt = lo; tt < hi; ++tt) patch.gains[tt * patch.n_bands + b] *= factor;
        }
      }
    }
    if (!violated) return;
  }
  for (int pass = 0; pass < 8; ++pass) {
    const Signal w = build_from_bank(patch, bank);
    std::size_t frames = 0;
    const auto realized = grid_band_powers(grid, patch, w, &frames);
    double worst = 0.0;
    bool hard_zero = false;
    for (std::size_t i = 0; i < std::min(frames, patch.n_frames) * patch.n_bands; ++i) {
      const double c = ceiling_lin[i];
      if (realized[i] > c) {
        if (c <= 0.0) {
          hard_zero = true;
        } else {
          worst = std::max(worst, realized[i] / c);
        }
      }
    }
    if (hard_zero) {
      std::fill(patch.gains.begin(), patch.gains.end(), 0.0);
      return;
    }
    if (worst <= 1.0) return;
    const double scale = (1.0 - 1e-9) / std::sqrt(worst);
    for (auto& g : patch.gains) g *= scale;
  }
}

enum class CellState : std::uint8_t { floored, clamped, active };

struct ObjectiveEval {
  double objective = 0.0;
  std::vector<double> gain_grad;  // same layout as patch.gains
};

// Objective and its gradient w.r.t. the gains, through
//   playback+patch -> [estimated IR] -> response -> RTF features -> net.
// The feature construction here mirrors rtf_features exactly (a unit test
// pins the equality).
ObjectiveEval evaluate_patch(const WatermarkPatch& patch, CarrierBank& bank, const Grid& grid,
                             const Signal& playback, const ImpulseResponse& est_ir,
                             const Template& tmpl, const NetParams& net,
                             const FeatureConfig& fcfg, const WatermarkOptions& opts,
                             const DeficiencyMask& mask, bool want_grad) {
  const Signal wsig = build_from_bank(patch, bank);
  Signal pw = playback;
  for (std::size_t i = 0; i < pw.size(); ++i) pw.samples[i] += wsig.samples[i];

  const Signal response = convolve(pw, est_ir.taps);
  const std::size_t lag = alignment_lag(pw, response);
  const DeficiencyMask mask_w = deficiency_mask(pw, fcfg);

  // framewise spectra on both sides
  const Fft& plan = fft_plan(fcfg.nfft);
  const std::size_t frames_p = (pw.size() - fcfg.frame_len) / fcfg.hop + 1;
  const std::size_t resp_avail = response.size() - lag;
  if (resp_avail < fcfg.frame_len) fail(Errc::short_input, "watermark: response too short");
  const std::size_t frames_r = (resp_avail - fcfg.frame_len) / fcfg.hop + 1;
  const std::size_t n_frames = std::min(frames_p, frames_r);

  std::vector<std::vector<std::complex<double>>> xp(n_frames), xr(n_frames);
  std::vector<double> pp(n_frames * fcfg.n_bands), pr(n_frames * fcfg.n_bands);
  std::vector<double> buf(fcfg.nfft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < fcfg.frame_len; ++i)
      buf[i] = grid.window[i] * pw.samples[t * fcfg.hop + i];
    xp[t] = plan.forward_real(buf);
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < fcfg.frame_len; ++i)
      buf[i] = grid.window[i] * response.samples[lag + t * fcfg.hop + i];
    xr[t] = plan.forward_real(buf);
    for (std::size_t b = 0; b < fcfg.n_bands; ++b) {
      double a = 0.0, r = 0.0;
      for (std::size_t k = grid.first_bin[b]; k <= grid.last_bin[b]; ++k) {
        a += std::norm(xp[t][k]);
        r += std::norm(xr[t][k]);
      }
      pp[t * fcfg.n_bands + b] = a * grid.power_scale;
      pr[t * fcfg.n_bands + b] = r * grid.power_scale;
    }
  }

  FeatureMatrix feats;
  feats.n_frames = n_frames;
  feats.n_bands = fcfg.n_bands;
  feats.band_edges_hz = patch.band_edges_hz;
  feats.values.resize(n_frames * fcfg.n_bands);
  std::vector<CellState> state(n_frames * fcfg.n_bands, CellState::active);
  const double klog = 10.0 / std::log(10.0);
  for (std::size_t i = 0; i < feats.values.size(); ++i) {
    const std::size_t t = i / fcfg.n_bands;
    if (t < mask_w.n_frames && mask_w.deficient[i]) {
      feats.values[i] = fcfg.clamp_lo_db;
      state[i] = CellState::floored;
      continue;
    }
    double v = klog * (std::log(pr[i] + fcfg.ratio_eps) - std::log(pp[i] + fcfg.ratio_eps));
    if (v <= fcfg.clamp_lo_db || v >= fcfg.clamp_hi_db) {
      state[i] = CellState::clamped;
      v = std::clamp(v, fcfg.clamp_lo_db, fcfg.clamp_hi_db);
    }
    feats.values[i] = v;
  }

  ObjectiveEval out;
  std::vector<double> dphi;
  if (opts.objective == WatermarkObjective::cosine_to_template) {
    out.objective =
        cosine_score_backward(net, feats, tmpl.v, want_grad ? &dphi : nullptr);
  } else {
    NetGrads scratch;
    scratch.resize_like(net);
    const double loss =
        backward(net, feats, opts.aam_label, opts.aam, scratch, want_grad ? &dphi : nullptr);
    out.objective = -loss;
    if (want_grad)
      for (auto& g : dphi) g = -g;
  }
  if (!want_grad) return out;

  // feature -> sample adjoint on both sides
  std::vector<double> d_pw(pw.size(), 0.0), d_resp(response.size(), 0.0);
  std::vector<std::complex<double>> z(fcfg.nfft / 2 + 1);
  for (std::size_t t = 0; t < n_frames; ++t) {
    // playback side
    std::fill(z.begin(), z.end(), std::complex<double>{0.0, 0.0});
    bool any = false;
    for (std::size_t b = 0; b < fcfg.n_bands; ++b) {
      const std::size_t i = t * fcfg.n_bands + b;
      if (state[i] != CellState::active || dphi[i] == 0.0) continue;
      const double dP = -dphi[i] * klog / (pp[i] + fcfg.ratio_eps) * grid.power_scale;
      for (std::size_t k = grid.first_bin[b]; k <= grid.last_bin[b]; ++k) z[k] = dP * xp[t][k];
      any = true;
    }
    if (any) {
      const auto back = plan.inverse_real(z);
      const double n = static_cast<double>(fcfg.nfft);
      for (std::size_t i = 0; i < fcfg.frame_len; ++i)
        d_pw[t * fcfg.hop + i] += grid.window[i] * n * back[i];
    }
    // response side
    std::fill(z.begin(), z.end(), std::complex<double>{0.0, 0.0});
    any = false;
    for (std::size_t b = 0; b < fcfg.n_bands; ++b) {
      const std::size_t i = t * fcfg.n_bands + b;
      if (state[i] != CellState::active || dphi[i] == 0.0) continue;
      const double dP = dphi[i] * klog / (pr[i] + fcfg.ratio_eps) * grid.power_scale;
      for (std::size_t k = grid.first_bin[b]; k <= grid.last_bin[b]; ++k) z[k] = dP * xr[t][k];
      any = true;
    }
    if (any) {
      const auto back = plan.inverse_real(z);
      const double n = static_cast<double>(fcfg.nfft);
      for (std::size_t i = 0; i < fcfg.frame_len; ++i)
        d_resp[lag + t * fcfg.hop + i] += grid.window[i] * n * back[i];
    }
  }

  // response = pw (*) h: d_pw[n] += sum_j h[j] d_resp[n+j]
  {
    const std::size_t nfft = Fft::next_pow2(d_resp.size() + est_ir.taps.size());
    const Fft& big = fft_plan(nfft);
    auto fh = big.forward_real(est_ir.taps.samples);
    auto fr = big.forward_real(d_resp);
    for (std::size_t k = 0; k < fh.size(); ++k) fh[k] = std::conj(fh[k]) * fr[k];
    const auto corr = big.inverse_real(fh);
    for (std::size_t n = 0; n < d_pw.size(); ++n) d_pw[n] += corr[n];
  }

  // chain into the gains through the carriers (deficient cells only; the
  // others never carry gain)
  out.gain_grad.assign(patch.gains.size(), 0.0);
  for (std::size_t t = 0; t < patch.n_frames; ++t) {
    for (std::size_t b = 0; b < patch.n_bands; ++b) {
      const std::size_t i = t * patch.n_bands + b;
      if (!mask.deficient[i]) continue;
      const auto& carrier = bank.get(t, b);
      const std::size_t off = t * patch.hop;
      double acc = 0.0;
      for (std::size_t k = 0; k < carrier.size() && off + k < d_pw.size(); ++k)
        acc += d_pw[off + k] * carrier[k];
      out.gain_grad[i] = acc;
    }
  }
  return out;
}

}  // namespace

OptimizeResult optimize_patch(const Signal& playback, const ImpulseResponse& est_ir,
                              const Template& tmpl, const NetParams& net,
                              const AudibilityCeiling& ceiling, const DeficiencyMask& mask,
                              const FeatureConfig& fcfg, const WatermarkOptions& opts) {
  if (est_ir.origin != ImpulseResponse::Origin::estimated)
    fail(Errc::config, "optimize_patch: use the enrollment-estimated IR, not ground truth");
  OptimizeResult result;
  result.patch = make_geometry(playback, mask, fcfg, opts.seed);
  if (!mask.any()) {
    result.nothing_to_watermark = true;
    return result;
  }
  if (ceiling.n_frames != mask.n_frames || ceiling.n_bands != mask.n_bands)
    fail(Errc::dim_mismatch, "optimize_patch: ceiling and mask disagree");

  WatermarkPatch& patch = result.patch;
  const Grid grid = make_grid(patch);
  CarrierBank bank{patch, {}};

  std::vector<double> ceiling_lin(ceiling.dbfs.size());
  double max_feasible_amp = 0.0;
  for (std::size_t i = 0; i < ceiling_lin.size(); ++i) {
    ceiling_lin[i] = std::pow(10.0, ceiling.dbfs[i] / 10.0);
    if (mask.deficient[i]) max_feasible_amp = std::max(max_feasible_amp, std::sqrt(ceiling_lin[i]));
  }

  // start mid-feasible so the ascent has headroom in both directions
  for (std::size_t i = 0; i < patch.gains.size(); ++i)
    if (mask.deficient[i]) patch.gains[i] = 0.4 * std::sqrt(ceiling_lin[i]);
  project_to_ceiling(patch, bank, grid, ceiling_lin);

  const double step_abs = opts.step * max_feasible_amp;
  std::vector<double> best_gains = patch.gains;
  double best_obj = -1e300;

  for (std::size_t it = 0; it <= opts.iters; ++it) {
    const bool last = it == opts.iters;
    ObjectiveEval ev = evaluate_patch(patch, bank, grid, playback, est_ir, tmpl, net, fcfg, opts,
                                      mask, /*want_grad=*/!last);
    result.objective_trace.push_back(ev.objective);
    if (it == 0) result.initial_objective = ev.objective;
    if (ev.objective > best_obj) {
      best_obj = ev.objective;
      best_gains = patch.gains;
    }
    if (last) break;
    double gmax = 0.0;
    for (std::size_t i = 0; i < ev.gain_grad.size(); ++i)
      if (mask.deficient[i]) gmax = std::max(gmax, std::abs(ev.gain_grad[i]));
    if (!std::isfinite(gmax))
      fail(Errc::optimization_failed, "optimize_patch: non-finite gradient");
    if (gmax == 0.0) break;  // flat objective (e.g. empty feasible set)
    for (std::size_t i = 0; i < patch.gains.size(); ++i) {
      if (!mask.deficient[i]) continue;
      patch.gains[i] = std::max(0.0, patch.gains[i] + step_abs * ev.gain_grad[i] / gmax);
    }
    project_to_ceiling(patch, bank, grid, ceiling_lin);
  }

  patch.gains = best_gains;
  result.final_objective = best_obj;
  return result;
}

double patch_objective(const Signal& playback, const ImpulseResponse& est_ir,
                       const Template& tmpl, const NetParams& net, const FeatureConfig& fcfg,
                       const WatermarkOptions& opts, const WatermarkPatch& patch) {
  const Grid grid = make_grid(patch);
  CarrierBank bank{patch, {}};
  DeficiencyMask unused;
  unused.n_frames = patch.n_frames;
  unused.n_bands = patch.n_bands;
  unused.deficient.assign(patch.n_frames * patch.n_bands, 0);
  return evaluate_patch(patch, bank, grid, playback, est_ir, tmpl, net, fcfg, opts, unused,
                        /*want_grad=*/false)
      .objective;
}

double patch_objective_grad(const Signal& playback, const ImpulseResponse& est_ir,
                            const Template& tmpl, const NetParams& net,
                            const FeatureConfig& fcfg, const WatermarkOptions& opts,
                            const WatermarkPatch& patch, const DeficiencyMask& mask,
                            std::vector<double>& gain_grad) {
  const Grid grid = make_grid(patch);
  CarrierBank bank{patch, {}};
  ObjectiveEval ev = evaluate_patch(patch, bank, grid, playback, est_ir, tmpl, net, fcfg, opts,
                                    mask, /*want_grad=*/true);
  gain_grad = std::move(ev.gain_grad);
  return ev.objective;
}

Signal apply_patch(const Signal& playback, const WatermarkPatch& patch,
                   std::size_t* clipped_samples) {
  if (patch.signal_len != playback.size() || patch.sample_rate != playback.sample_rate)
    fail(Errc::dim_mismatch, "apply_patch: patch geometry does not match this playback");
  const Signal w = build_patch_signal(patch);
  Signal out = playback;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = out.samples[i] + w.samples[i];
    if (v > 1.0) {
      v = 1.0;
      ++clipped;
    } else if (v < -1.0) {
      v = -1.0;
      ++clipped;
    }
    out.samples[i] = v;
  }
  if (clipped_samples) *clipped_samples = clipped;
  if (static_cast<double>(clipped) > 0.01 * static_cast<double>(out.size()))
    fail(Errc::patch_too_hot, "apply_patch: clipped " + std::to_string(clipped) + " of " +
                                  std::to_string(out.size()) + " samples");
  return out;
}

PatchAudit audit_patch(const Signal& playback, const WatermarkPatch& patch,
                       const FeatureConfig& cfg, double masking_offset_db) {
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, masking_offset_db);
  const Grid grid = make_grid(patch);
  const Signal w = build_patch_signal(patch);
  std::size_t frames = 0;
  const auto realized = grid_band_powers(grid, patch, w, &frames);

  PatchAudit audit;
  audit.cells_total = std::min<std::size_t>(frames, ceiling.n_frames) * ceiling.n_bands;
  for (std::size_t i = 0; i < audit.cells_total; ++i) {
    const double c = std::pow(10.0, ceiling.dbfs[i] / 10.0);
    if (realized[i] > c) {
      ++audit.cells_over;
      const double excess =
          10.0 * std::log10((realized[i] + 1e-300) / (c + 1e-300));
      audit.max_excess_db = std::max(audit.max_excess_db, excess);
    }
    if (patch.gains[i] != 0.0 && !mask.deficient[i]) ++audit.gains_off_mask;
  }
  return audit;
}

std::string patch_to_json(const WatermarkPatch& patch) {
  nlohmann::ordered_json j;
  j["format"] = "earcan-watermark-patch";
  j["version"] = 1;
  j["seed"] = patch.seed;
  j["frame_len"] = patch.frame_len;
  j["hop"] = patch.hop;
  j["nfft"] = patch.nfft;
  j["n_frames"] = patch.n_frames;
  j["n_bands"] = patch.n_bands;
  j["signal_len"] = patch.signal_len;
  j["sample_rate"] = patch.sample_rate;
  j["band_edges_hz"] = patch.band_edges_hz;
  auto cells = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < patch.n_frames; ++t)
    for (std::size_t b = 0; b < patch.n_bands; ++b)
      if (patch.gain_at(t, b) != 0.0) cells.push_back({t, b, patch.gain_at(t, b)});
  j["cells"] = std::move(cells);
  return j.dump();
}

WatermarkPatch patch_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("patch json: ") + e.what());
  }
  WatermarkPatch p;
  try {
    if (j.at("format").get<std::string>() != "earcan-watermark-patch")
      fail(Errc::format, "patch json: bad format tag");
    p.seed = j.at("seed").get<std::uint64_t>();
    p.frame_len = j.at("frame_len").get<std::size_t>();
    p.hop = j.at("hop").get<std::size_t>();
    p.nfft = j.at("nfft").get<std::size_t>();
    p.n_frames = j.at("n_frames").get<std::size_t>();
    p.n_bands = j.at("n_bands").get<std::size_t>();
    p.signal_len = j.at("signal_len").get<std::size_t>();
    p.sample_rate = j.at("sample_rate").get<int>();
    p.band_edges_hz = j.at("band_edges_hz").get<std::vector<double>>();
    p.gains.assign(p.n_frames * p.n_bands, 0.0);
    for (const auto& cell : j.at("cells")) {
      const std::size_t t = cell.at(0).get<std::size_t>();
      const std::size_t b = cell.at(1).get<std::size_t>();
      if (t >= p.n_frames || b >= p.n_bands) fail(Errc::format, "patch json: cell out of range");
      p.gains[t * p.n_bands + b] = cell.at(2).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("patch json: ") + e.what());
  }
  return p;
}

}  // namespace earcan
