#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "earcan/error.hpp"
#include "earcan/rng.hpp"
#include "earcan/watermark.hpp"

using namespace earcan;

namespace {

constexpr int kFs = 16000;
constexpr double kPi = 3.14159265358979323846;

Signal silence(std::size_t len) {
  Signal s;
  s.sample_rate = kFs;
  s.samples.assign(len, 0.0);
  return s;
}

Signal tone(double freq, double amp, std::size_t len) {
  Signal s;
  s.sample_rate = kFs;
  s.samples.resize(len);
  for (std::size_t n = 0; n < len; ++n)
    s.samples[n] = amp * std::sin(2.0 * kPi * freq * static_cast<double>(n) / kFs);
  return s;
}

ImpulseResponse estimated_channel(std::uint64_t seed) {
  // decaying noise channel with a unit direct path, marked estimated
  ImpulseResponse ir;
  ir.origin = ImpulseResponse::Origin::estimated;
  ir.taps.sample_rate = kFs;
  ir.taps.samples.assign(128, 0.0);
  ir.taps.samples[0] = 0.8;
  Rng rng(seed);
  for (std::size_t i = 1; i < 128; ++i)
    ir.taps.samples[i] = 0.2 * rng.uniform(-1.0, 1.0) * std::exp(-static_cast<double>(i) / 24.0);
  return ir;
}

// small feature geometry so the finite-difference loop stays cheap
FeatureConfig small_cfg() {
  FeatureConfig cfg;
  cfg.n_bands = 12;
  return cfg;
}

NetParams small_net(std::size_t bands, std::uint64_t seed) {
  NetConfig arch;
  arch.in_bands = bands;
  arch.conv1_ch = 8;
  arch.conv2_ch = 8;
  arch.emb_dim = 8;
  return init_net(seed, arch, 3);
}

Template random_template(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Template t;
  double n2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    t.v.push_back(rng.uniform(-1.0, 1.0));
    n2 += t.v.back() * t.v.back();
  }
  for (auto& v : t.v) v /= std::sqrt(n2);
  t.n_enrolled = 1;
  return t;
}

}  // namespace

TEST_CASE("compute_ceiling: silence floor is the threshold in quiet; loud bands follow masking") {
  const FeatureConfig cfg;
  const Signal quiet = silence(2000);
  const DeficiencyMask mask = deficiency_mask(quiet, cfg);
  const AudibilityCeiling ceiling = compute_ceiling(quiet, mask, cfg, 13.0);
  const auto centers = band_centers(cfg);
  for (std::size_t t = 0; t < ceiling.n_frames; ++t)
    for (std::size_t b = 0; b < ceiling.n_bands; ++b)
      CHECK(ceiling.at(t, b) == doctest::Approx(threshold_in_quiet_dbfs(centers[b])));

  // -10 dBFS band with offset 13 sits at -23 dBFS
  const auto edges = band_edges(cfg);
  std::size_t b_tone = 0;
  for (std::size_t b = 0; b < cfg.n_bands; ++b)
    if (1000.0 >= edges[b] && 1000.0 < edges[b + 1]) b_tone = b;
  const double amp = std::pow(10.0, (-10.0 + 3.01) / 20.0) * std::sqrt(2.0) / std::sqrt(2.0);
  const Signal loud = tone(std::sqrt(edges[b_tone] * edges[b_tone + 1]), amp, 4000);
  const DeficiencyMask m2 = deficiency_mask(loud, cfg);
  const AudibilityCeiling c2 = compute_ceiling(loud, m2, cfg, 13.0);
  const std::size_t t_mid = c2.n_frames / 2;
  CHECK(c2.at(t_mid, b_tone) == doctest::Approx(-23.0).epsilon(0.03));
}

TEST_CASE("ceiling is monotone non-decreasing in playback band power (randomized pairs)") {
  const FeatureConfig cfg;
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Signal a = white_noise(3000, 0.05 + 0.2 * rng.uniform(), rng.next_u64(), kFs);
    Signal b = a;
    const double boost = 1.0 + rng.uniform();  // scale up => per-cell power up
    for (auto& v : b.samples) v = std::clamp(v * boost, -1.0, 1.0);
    const AudibilityCeiling ca = compute_ceiling(a, deficiency_mask(a, cfg), cfg, 13.0);
    const AudibilityCeiling cb = compute_ceiling(b, deficiency_mask(b, cfg), cfg, 13.0);
    for (std::size_t i = 0; i < ca.dbfs.size(); ++i) CHECK(cb.dbfs[i] >= ca.dbfs[i] - 1e-9);
  }
}

TEST_CASE("carriers: deterministic per (seed, cell); different seeds separate") {
  const FeatureConfig cfg;
  const Signal quiet = silence(3200);
  const DeficiencyMask mask = deficiency_mask(quiet, cfg);
  WatermarkOptions opts;
  opts.seed = 11;
  const AudibilityCeiling ceiling = compute_ceiling(quiet, mask, cfg, 13.0);
  const ImpulseResponse ir = estimated_channel(3);
  const NetParams net = small_net(cfg.n_bands, 5);
  const Template tmpl = random_template(net.cfg.emb_dim, 6);
  opts.iters = 1;
  const OptimizeResult r1 =
      optimize_patch(quiet, ir, tmpl, net, ceiling, mask, cfg, opts);
  const Signal w1 = build_patch_signal(r1.patch);
  const Signal w1_again = build_patch_signal(r1.patch);
  CHECK(w1.samples == w1_again.samples);  // exact regeneration from (seed, gains)

  WatermarkPatch other = r1.patch;
  other.seed = 999;
  const Signal w2 = build_patch_signal(other);
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < w1.size(); ++i) {
    diff += (w1.samples[i] - w2.samples[i]) * (w1.samples[i] - w2.samples[i]);
    ref += w1.samples[i] * w1.samples[i];
  }
  REQUIRE(ref > 0.0);
  CHECK(diff / ref > 0.5);

  // challenge binding: a matched-carrier detector separates the seeds
  auto match = [](const Signal& resp, const Signal& w) {
    double acc = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < std::min(resp.size(), w.size()); ++i) {
      acc += resp.samples[i] * w.samples[i];
      na += resp.samples[i] * resp.samples[i];
      nb += w.samples[i] * w.samples[i];
    }
    return acc / std::sqrt(na * nb + 1e-30);
  };
  const Signal resp1 = convolve(w1, ir.taps);
  CHECK(match(resp1, w1) > 5.0 * std::abs(match(resp1, w2)));
}

TEST_CASE("gain gradient matches finite differences through the full chain") {
  FeatureConfig cfg = small_cfg();
  const Signal playback = silence(4800);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  const ImpulseResponse ir = estimated_channel(17);
  const NetParams net = small_net(cfg.n_bands, 19);
  const Template tmpl = random_template(net.cfg.emb_dim, 23);

  WatermarkOptions opts;
  opts.seed = 29;
  opts.iters = 0;
  OptimizeResult init = optimize_patch(playback, ir, tmpl, net, ceiling, mask, cfg, opts);
  WatermarkPatch patch = init.patch;
  REQUIRE(!patch.empty());

  std::vector<double> grad;
  const double j0 = patch_objective_grad(playback, ir, tmpl, net, cfg, opts, patch, mask, grad);
  CHECK(std::isfinite(j0));

  Rng pick(31);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < patch.gains.size(); ++i)
    if (patch.gains[i] > 0.0) active.push_back(i);
  REQUIRE(active.size() > 20);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i =
        active[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(active.size()) - 1))];
    const double keep = patch.gains[i];
    const double h = std::max(1e-9, 1e-4 * keep);
    patch.gains[i] = keep + h;
    const double up = patch_objective(playback, ir, tmpl, net, cfg, opts, patch);
    patch.gains[i] = keep - h;
    const double down = patch_objective(playback, ir, tmpl, net, cfg, opts, patch);
    patch.gains[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / (std::abs(grad[i]) + 1e-10));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("optimize: degenerate all-zero allowance yields the zero patch and flat objective") {
  FeatureConfig cfg = small_cfg();
  const Signal playback = silence(3200);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  for (auto& v : ceiling.dbfs) v = -std::numeric_limits<double>::infinity();
  const ImpulseResponse ir = estimated_channel(17);
  const NetParams net = small_net(cfg.n_bands, 19);
  const Template tmpl = random_template(net.cfg.emb_dim, 23);
  WatermarkOptions opts;
  opts.iters = 4;
  const OptimizeResult r = optimize_patch(playback, ir, tmpl, net, ceiling, mask, cfg, opts);
  CHECK(r.patch.empty());
  CHECK(r.final_objective == doctest::Approx(r.initial_objective));
}

TEST_CASE("optimize: empty mask means nothing to watermark (not an error)") {
  FeatureConfig cfg = small_cfg();
  const double amp = std::pow(10.0, -10.0 / 20.0) * std::sqrt(3.0);
  const Signal playback = white_noise(3200, amp, 3, kFs);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  REQUIRE(!mask.any());
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  const OptimizeResult r =
      optimize_patch(playback, estimated_channel(1), random_template(8, 2),
                     small_net(cfg.n_bands, 3), ceiling, mask, cfg, WatermarkOptions{});
  CHECK(r.nothing_to_watermark);
  CHECK(r.patch.empty());
}

TEST_CASE("optimize: silent clip with a generous ceiling improves the objective") {
  FeatureConfig cfg = small_cfg();
  const Signal playback = silence(4800);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  for (auto& v : ceiling.dbfs) v += 20.0;  // generous allowance
  const ImpulseResponse ir = estimated_channel(41);
  const NetParams net = small_net(cfg.n_bands, 43);
  const Template tmpl = random_template(net.cfg.emb_dim, 47);
  WatermarkOptions opts;
  opts.iters = 10;
  opts.seed = 53;
  const OptimizeResult r = optimize_patch(playback, ir, tmpl, net, ceiling, mask, cfg, opts);
  CHECK(r.objective_trace.size() == opts.iters + 1);
  CHECK(r.final_objective > r.initial_objective);
  CHECK(r.final_objective >= *std::max_element(r.objective_trace.begin(), r.objective_trace.end()) - 1e-12);
}

TEST_CASE("projection audit: every cell at or below the ceiling, zero gains off mask") {
  FeatureConfig cfg;  // full 40-band geometry
  const Signal playback = [&] {
    Signal s = silence(8000);
    const Signal t = tone(1000.0, 0.3, 8000);
    for (std::size_t i = 2000; i < 4000; ++i) s.samples[i] = t.samples[i];
    return s;
  }();
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  REQUIRE(mask.any());
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  const ImpulseResponse ir = estimated_channel(61);
  NetConfig arch;
  const NetParams net = init_net(67, arch, 3);
  const Template tmpl = random_template(arch.emb_dim, 71);
  WatermarkOptions opts;
  opts.iters = 6;
  opts.seed = 73;
  const OptimizeResult r = optimize_patch(playback, ir, tmpl, net, ceiling, mask, cfg, opts);
  const PatchAudit audit = audit_patch(playback, r.patch, cfg, 13.0);
  CHECK(audit.cells_total > 0);
  CHECK(audit.cells_over == 0);
  CHECK(audit.gains_off_mask == 0);
}

TEST_CASE("apply_patch: zero patch is the identity; oversized gains trip the clip guard") {
  FeatureConfig cfg;
  const Signal playback = tone(500.0, 0.4, 4000);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  WatermarkPatch zero;
  zero.seed = 1;
  zero.frame_len = cfg.frame_len;
  zero.hop = cfg.hop;
  zero.nfft = cfg.nfft;
  zero.n_frames = mask.n_frames;
  zero.n_bands = mask.n_bands;
  zero.signal_len = playback.size();
  zero.sample_rate = kFs;
  zero.band_edges_hz = band_edges(cfg);
  zero.gains.assign(zero.n_frames * zero.n_bands, 0.0);
  std::size_t clipped = 9;
  const Signal out = apply_patch(playback, zero, &clipped);
  CHECK(clipped == 0);
  CHECK(out.samples == playback.samples);

  WatermarkPatch hot = zero;
  for (auto& g : hot.gains) g = 3.0;
  try {
    apply_patch(playback, hot, nullptr);
    FAIL("expected patch_too_hot");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::patch_too_hot);
  }
}

TEST_CASE("apply_patch: non-deficient cells stay unmodified (band-power differencing)") {
  FeatureConfig cfg;
  const Signal playback = tone(1000.0, 0.3, 8000);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  const ImpulseResponse ir = estimated_channel(81);
  NetConfig arch;
  const NetParams net = init_net(83, arch, 3);
  WatermarkOptions opts;
  opts.iters = 3;
  opts.seed = 89;
  const OptimizeResult r = optimize_patch(playback, ir, random_template(arch.emb_dim, 87), net,
                                          ceiling, mask, cfg, opts);
  const Signal with = apply_patch(playback, r.patch);

  std::size_t frames = 0;
  const auto before = band_power_matrix(playback, cfg, &frames);
  const auto after = band_power_matrix(with, cfg, nullptr);
  std::size_t checked = 0;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      const std::size_t i = t * cfg.n_bands + b;
      if (mask.deficient[i]) continue;
      // content cells: carriers live far enough away that leakage plus the
      // cross term stays 60 dB down
      if (band_power_to_dbfs(before[i]) < -45.0) continue;
      const double rel = std::abs(after[i] - before[i]) / (before[i] + 1e-30);
      CHECK(rel < 1e-6);
      ++checked;
    }
  CHECK(checked > 50);
}

TEST_CASE("patch energy accounting: sum of cell powers x hop matches signal energy within 5%") {
  FeatureConfig cfg;
  const Signal playback = silence(2 * kFs);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  WatermarkPatch patch;
  patch.seed = 5;
  patch.frame_len = cfg.frame_len;
  patch.hop = cfg.hop;
  patch.nfft = cfg.nfft;
  patch.n_frames = mask.n_frames;
  patch.n_bands = mask.n_bands;
  patch.signal_len = playback.size();
  patch.sample_rate = kFs;
  patch.band_edges_hz = band_edges(cfg);
  patch.gains.assign(patch.n_frames * patch.n_bands, 0.0);
  for (std::size_t i = 0; i < patch.gains.size(); ++i)
    patch.gains[i] = std::sqrt(std::pow(10.0, ceiling.dbfs[i] / 10.0));

  const Signal w = build_patch_signal(patch);
  const double e_signal = energy(w);
  // direct summation oracle: cell energy = gain^2 x carrier energy, with
  // overlap-add cross terms between independent carriers averaging out
  double e_cells = 0.0;
  for (std::size_t t = 0; t < patch.n_frames; ++t)
    for (std::size_t b = 0; b < patch.n_bands; ++b) {
      const double g = patch.gain_at(t, b);
      if (g == 0.0) continue;
      const auto c = watermark_carrier(patch, t, b);
      double ce = 0.0;
      const std::size_t off = t * patch.hop;
      for (std::size_t i = 0; i < c.size() && off + i < patch.signal_len; ++i) ce += c[i] * c[i];
      e_cells += g * g * ce;
    }
  CHECK(std::abs(e_cells - e_signal) / e_signal < 0.05);
}

TEST_CASE("patch json: exact round trip through serialization") {
  FeatureConfig cfg = small_cfg();
  const Signal playback = silence(3200);
  const DeficiencyMask mask = deficiency_mask(playback, cfg);
  const AudibilityCeiling ceiling = compute_ceiling(playback, mask, cfg, 13.0);
  WatermarkOptions opts;
  opts.iters = 2;
  opts.seed = 97;
  const OptimizeResult r =
      optimize_patch(playback, estimated_channel(91), random_template(8, 93),
                     small_net(cfg.n_bands, 95), ceiling, mask, cfg, opts);
  const WatermarkPatch back = patch_from_json(patch_to_json(r.patch));
  CHECK(back.seed == r.patch.seed);
  CHECK(back.gains == r.patch.gains);
  CHECK(back.band_edges_hz == r.patch.band_edges_hz);
  const Signal w1 = build_patch_signal(r.patch);
  const Signal w2 = build_patch_signal(back);
  CHECK(w1.samples == w2.samples);
}
