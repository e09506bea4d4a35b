#include "earcan/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "earcan/error.hpp"
#include "earcan/rng.hpp"

namespace earcan {

namespace {

void fill_uniform(std::vector<double>& w, double bound, Rng& rng) {
  for (auto& x : w) x = bound * (2.0 * rng.uniform() - 1.0);
}

struct Trace {
  std::size_t t0 = 0, t1 = 0, t2 = 0;
  std::vector<double> x;            // per-band mean-normalized input
  std::vector<double> h1, h2;       // post-ReLU activations
  std::vector<double> mu, sd;       // pooling stats
  std::vector<double> pooled, z;
  std::vector<double> e;
  double znorm = 1.0;
};

void run_forward(const NetParams& p, const FeatureMatrix& feats, Trace& tr) {
  const NetConfig& c = p.cfg;
  if (feats.n_bands != c.in_bands)
    fail(Errc::dim_mismatch, "forward: feature bands " + std::to_string(feats.n_bands) +
                                 " != net input " + std::to_string(c.in_bands));
  if (feats.n_frames < c.receptive_span())
    fail(Errc::short_input, "forward: need at least " + std::to_string(c.receptive_span()) +
                                " frames, got " + std::to_string(feats.n_frames));
  tr.t0 = feats.n_frames;
  tr.t1 = tr.t0 - c.conv1_k + 1;
  tr.t2 = tr.t1 - c.conv2_k + 1;

  // Per-band temporal mean subtraction. The clamp floor on deficient cells
  // otherwise dominates every input with one shared component and the
  // normalized embeddings start out collapsed.
  tr.x.assign(feats.values.begin(), feats.values.end());
  for (std::size_t b = 0; b < c.in_bands; ++b) {
    double m = 0.0;
    for (std::size_t t = 0; t < tr.t0; ++t) m += tr.x[t * c.in_bands + b];
    m /= static_cast<double>(tr.t0);
    for (std::size_t t = 0; t < tr.t0; ++t) tr.x[t * c.in_bands + b] -= m;
  }

  tr.h1.assign(tr.t1 * c.conv1_ch, 0.0);
  for (std::size_t t = 0; t < tr.t1; ++t) {
    for (std::size_t ch = 0; ch < c.conv1_ch; ++ch) {
      double acc = p.conv1_b[ch];
      const double* w = p.conv1_w.data() + ch * c.in_bands * c.conv1_k;
      for (std::size_t i = 0; i < c.in_bands; ++i) {
        const double* x = tr.x.data() + t * c.in_bands + i;
        for (std::size_t k = 0; k < c.conv1_k; ++k) acc += w[i * c.conv1_k + k] * x[k * c.in_bands];
      }
      tr.h1[t * c.conv1_ch + ch] = acc > 0.0 ? acc : 0.0;
    }
  }

  tr.h2.assign(tr.t2 * c.conv2_ch, 0.0);
  for (std::size_t t = 0; t < tr.t2; ++t) {
    for (std::size_t ch = 0; ch < c.conv2_ch; ++ch) {
      double acc = p.conv2_b[ch];
      const double* w = p.conv2_w.data() + ch * c.conv1_ch * c.conv2_k;
      for (std::size_t i = 0; i < c.conv1_ch; ++i) {
        const double* x = tr.h1.data() + t * c.conv1_ch + i;
        for (std::size_t k = 0; k < c.conv2_k; ++k) acc += w[i * c.conv2_k + k] * x[k * c.conv1_ch];
      }
      tr.h2[t * c.conv2_ch + ch] = acc > 0.0 ? acc : 0.0;
    }
  }

  tr.pooled = stats_pool(tr.h2, tr.t2, c.conv2_ch, c.var_eps);
  tr.mu.assign(tr.pooled.begin(), tr.pooled.begin() + static_cast<std::ptrdiff_t>(c.conv2_ch));
  tr.sd.assign(tr.pooled.begin() + static_cast<std::ptrdiff_t>(c.conv2_ch), tr.pooled.end());

  tr.z.assign(c.emb_dim, 0.0);
  for (std::size_t e = 0; e < c.emb_dim; ++e) {
    double acc = p.proj_b[e];
    const double* w = p.proj_w.data() + e * 2 * c.conv2_ch;
    for (std::size_t j = 0; j < 2 * c.conv2_ch; ++j) acc += w[j] * tr.pooled[j];
    tr.z[e] = acc;
  }
  double n2 = 0.0;
  for (double v : tr.z) n2 += v * v;
  tr.znorm = std::max(std::sqrt(n2), 1e-12);
  tr.e.resize(c.emb_dim);
  for (std::size_t e = 0; e < c.emb_dim; ++e) tr.e[e] = tr.z[e] / tr.znorm;
}

// Backward from d(loss)/d(embedding), filling parameter grads and
// optionally input grads.
void run_backward(const NetParams& p, const Trace& tr, const std::vector<double>& de,
                  NetGrads* grads, std::vector<double>* input_grad) {
  const NetConfig& c = p.cfg;
  // through L2 normalization: dz = (de - e (e . de)) / |z|
  double edot = 0.0;
  for (std::size_t e = 0; e < c.emb_dim; ++e) edot += tr.e[e] * de[e];
  std::vector<double> dz(c.emb_dim);
  for (std::size_t e = 0; e < c.emb_dim; ++e) dz[e] = (de[e] - tr.e[e] * edot) / tr.znorm;

  std::vector<double> dpooled(2 * c.conv2_ch, 0.0);
  for (std::size_t e = 0; e < c.emb_dim; ++e) {
    const double* w = p.proj_w.data() + e * 2 * c.conv2_ch;
    for (std::size_t j = 0; j < 2 * c.conv2_ch; ++j) dpooled[j] += w[j] * dz[e];
    if (grads) {
      double* gw = grads->proj_w.data() + e * 2 * c.conv2_ch;
      for (std::size_t j = 0; j < 2 * c.conv2_ch; ++j) gw[j] += dz[e] * tr.pooled[j];
      grads->proj_b[e] += dz[e];
    }
  }

  const double inv_t2 = 1.0 / static_cast<double>(tr.t2);
  std::vector<double> dpre2(tr.t2 * c.conv2_ch);
  for (std::size_t t = 0; t < tr.t2; ++t) {
    for (std::size_t ch = 0; ch < c.conv2_ch; ++ch) {
      const double h = tr.h2[t * c.conv2_ch + ch];
      double g = dpooled[ch] * inv_t2 +
                 dpooled[c.conv2_ch + ch] * (h - tr.mu[ch]) * inv_t2 / tr.sd[ch];
      dpre2[t * c.conv2_ch + ch] = h > 0.0 ? g : 0.0;
    }
  }

  std::vector<double> dh1(tr.t1 * c.conv1_ch, 0.0);
  for (std::size_t t = 0; t < tr.t2; ++t) {
    for (std::size_t ch = 0; ch < c.conv2_ch; ++ch) {
      const double g = dpre2[t * c.conv2_ch + ch];
      if (g == 0.0) continue;
      const double* w = p.conv2_w.data() + ch * c.conv1_ch * c.conv2_k;
      double* gw = grads ? grads->conv2_w.data() + ch * c.conv1_ch * c.conv2_k : nullptr;
      for (std::size_t i = 0; i < c.conv1_ch; ++i) {
        const double* h1 = tr.h1.data() + t * c.conv1_ch + i;
        double* dh = dh1.data() + t * c.conv1_ch + i;
        for (std::size_t k = 0; k < c.conv2_k; ++k) {
          if (gw) gw[i * c.conv2_k + k] += g * h1[k * c.conv1_ch];
          dh[k * c.conv1_ch] += g * w[i * c.conv2_k + k];
        }
      }
      if (grads) grads->conv2_b[ch] += g;
    }
  }

  if (input_grad) input_grad->assign(tr.t0 * c.in_bands, 0.0);
  for (std::size_t t = 0; t < tr.t1; ++t) {
    for (std::size_t ch = 0; ch < c.conv1_ch; ++ch) {
      if (tr.h1[t * c.conv1_ch + ch] <= 0.0) continue;  // ReLU gate
      const double g = dh1[t * c.conv1_ch + ch];
      if (g == 0.0) continue;
      const double* w = p.conv1_w.data() + ch * c.in_bands * c.conv1_k;
      double* gw = grads ? grads->conv1_w.data() + ch * c.in_bands * c.conv1_k : nullptr;
      for (std::size_t i = 0; i < c.in_bands; ++i) {
        const double* x = tr.x.data() + t * c.in_bands + i;
        double* dx = input_grad ? input_grad->data() + t * c.in_bands + i : nullptr;
        for (std::size_t k = 0; k < c.conv1_k; ++k) {
          if (gw) gw[i * c.conv1_k + k] += g * x[k * c.in_bands];
          if (dx) dx[k * c.in_bands] += g * w[i * c.conv1_k + k];
        }
      }
      if (grads) grads->conv1_b[ch] += g;
    }
  }
  if (input_grad) {
    // adjoint of the per-band mean subtraction
    for (std::size_t b = 0; b < c.in_bands; ++b) {
      double m = 0.0;
      for (std::size_t t = 0; t < tr.t0; ++t) m += (*input_grad)[t * c.in_bands + b];
      m /= static_cast<double>(tr.t0);
      for (std::size_t t = 0; t < tr.t0; ++t) (*input_grad)[t * c.in_bands + b] -= m;
    }
  }
}

struct AamBack {
  double loss;
  std::vector<double> de;      // d loss / d embedding
  std::vector<double> dclass;  // d loss / d class_w
};

AamBack aam_backward(const Embedding& emb, std::size_t label, const std::vector<double>& class_w,
                     std::size_t n_classes, const AamHyper& hyper) {
  const std::size_t dim = emb.v.size();
  const double cm = std::cos(hyper.margin), sm = std::sin(hyper.margin);
  std::vector<double> cosines(n_classes);
  for (std::size_t j = 0; j < n_classes; ++j) {
    double d = 0.0;
    for (std::size_t e = 0; e < dim; ++e) d += emb.v[e] * class_w[j * dim + e];
    cosines[j] = d;
  }
  const double cos_y = cosines[label];
  const double sin_y = std::sqrt(std::max(0.0, 1.0 - cos_y * cos_y));
  std::vector<double> logits(n_classes);
  for (std::size_t j = 0; j < n_classes; ++j) logits[j] = hyper.scale * cosines[j];
  logits[label] = hyper.scale * (cos_y * cm - sin_y * sm);

  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - mx);
  const double log_denom = std::log(denom);

  AamBack out;
  out.loss = -(logits[label] - mx - log_denom);
  out.de.assign(dim, 0.0);
  out.dclass.assign(n_classes * dim, 0.0);
  for (std::size_t j = 0; j < n_classes; ++j) {
    const double pj = std::exp(logits[j] - mx) / denom;
    const double dl = pj - (j == label ? 1.0 : 0.0);
    double factor = hyper.scale;
    if (j == label) factor = hyper.scale * (cm + sm * cos_y / std::max(sin_y, 1e-6));
    const double g = dl * factor;
    for (std::size_t e = 0; e < dim; ++e) {
      out.de[e] += g * class_w[j * dim + e];
      out.dclass[j * dim + e] = g * emb.v[e];
    }
  }
  return out;
}

}  // namespace

void NetGrads::resize_like(const NetParams& p) {
  conv1_w.assign(p.conv1_w.size(), 0.0);
  conv1_b.assign(p.conv1_b.size(), 0.0);
  conv2_w.assign(p.conv2_w.size(), 0.0);
  conv2_b.assign(p.conv2_b.size(), 0.0);
  proj_w.assign(p.proj_w.size(), 0.0);
  proj_b.assign(p.proj_b.size(), 0.0);
  class_w.assign(p.class_w.size(), 0.0);
}

void NetGrads::zero() {
  for (auto* v : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj_w, &proj_b, &class_w})
    std::fill(v->begin(), v->end(), 0.0);
}

void NetGrads::axpy(double a, const NetGrads& o) {
  auto acc = [a](std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
  };
  acc(conv1_w, o.conv1_w);
  acc(conv1_b, o.conv1_b);
  acc(conv2_w, o.conv2_w);
  acc(conv2_b, o.conv2_b);
  acc(proj_w, o.proj_w);
  acc(proj_b, o.proj_b);
  acc(class_w, o.class_w);
}

void NetGrads::scale(double a) {
  for (auto* v : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj_w, &proj_b, &class_w})
    for (auto& x : *v) x *= a;
}

NetParams init_net(std::uint64_t seed, const NetConfig& cfg, std::size_t n_classes) {
  if (cfg.in_bands == 0 || cfg.conv1_ch == 0 || cfg.conv2_ch == 0 || cfg.emb_dim == 0 ||
      cfg.conv1_k == 0 || cfg.conv2_k == 0)
    fail(Errc::config, "init_net: architecture dimensions must be positive");
  NetParams p;
  p.cfg = cfg;
  p.n_classes = n_classes;
  Rng rng(seed);
  p.conv1_w.resize(cfg.conv1_ch * cfg.in_bands * cfg.conv1_k);
  p.conv1_b.assign(cfg.conv1_ch, 0.0);
  p.conv2_w.resize(cfg.conv2_ch * cfg.conv1_ch * cfg.conv2_k);
  p.conv2_b.assign(cfg.conv2_ch, 0.0);
  p.proj_w.resize(cfg.emb_dim * 2 * cfg.conv2_ch);
  p.proj_b.assign(cfg.emb_dim, 0.0);
  p.class_w.resize(n_classes * cfg.emb_dim);
  fill_uniform(p.conv1_w, 1.0 / std::sqrt(static_cast<double>(cfg.in_bands * cfg.conv1_k)), rng);
  fill_uniform(p.conv2_w, 1.0 / std::sqrt(static_cast<double>(cfg.conv1_ch * cfg.conv2_k)), rng);
  fill_uniform(p.proj_w, 1.0 / std::sqrt(static_cast<double>(2 * cfg.conv2_ch)), rng);
  fill_uniform(p.class_w, 1.0 / std::sqrt(static_cast<double>(cfg.emb_dim)), rng);
  return p;
}

std::vector<double> stats_pool(const std::vector<double>& h, std::size_t n_frames,
                               std::size_t n_ch, double var_eps) {
  if (n_frames == 0 || h.size() != n_frames * n_ch)
    fail(Errc::dim_mismatch, "stats_pool: bad activation shape");
  std::vector<double> out(2 * n_ch, 0.0);
  for (std::size_t t = 0; t < n_frames; ++t)
    for (std::size_t c = 0; c < n_ch; ++c) out[c] += h[t * n_ch + c];
  for (std::size_t c = 0; c < n_ch; ++c) out[c] /= static_cast<double>(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t)
    for (std::size_t c = 0; c < n_ch; ++c) {
      const double d = h[t * n_ch + c] - out[c];
      out[n_ch + c] += d * d;
    }
  for (std::size_t c = 0; c < n_ch; ++c)
    out[n_ch + c] = std::sqrt(out[n_ch + c] / static_cast<double>(n_frames) + var_eps);
  return out;
}

Embedding forward(const NetParams& params, const FeatureMatrix& feats) {
  Trace tr;
  run_forward(params, feats, tr);
  return Embedding{std::move(tr.e)};
}

AamResult aam_loss(const Embedding& emb, std::size_t label, const std::vector<double>& class_w,
                   std::size_t n_classes, const AamHyper& hyper) {
  if (hyper.scale <= 0.0) fail(Errc::config, "aam_loss: scale must be positive");
  if (hyper.margin < 0.0 || hyper.margin >= 1.5707963267948966)
    fail(Errc::config, "aam_loss: margin must lie in [0, pi/2)");
  if (label >= n_classes)
    fail(Errc::label_range, "aam_loss: label " + std::to_string(label) + " >= " +
                                std::to_string(n_classes));
  if (class_w.size() != n_classes * emb.v.size())
    fail(Errc::dim_mismatch, "aam_loss: class weight shape mismatch");
  const auto back = aam_backward(emb, label, class_w, n_classes, hyper);
  AamResult res;
  res.loss = back.loss;
  // recompute logits for the caller
  const double cm = std::cos(hyper.margin), sm = std::sin(hyper.margin);
  res.logits.resize(n_classes);
  const std::size_t dim = emb.v.size();
  for (std::size_t j = 0; j < n_classes; ++j) {
    double d = 0.0;
    for (std::size_t e = 0; e < dim; ++e) d += emb.v[e] * class_w[j * dim + e];
    res.logits[j] = hyper.scale * d;
    if (j == label) {
      const double sin_y = std::sqrt(std::max(0.0, 1.0 - d * d));
      res.logits[j] = hyper.scale * (d * cm - sin_y * sm);
    }
  }
  return res;
}

double backward(const NetParams& params, const FeatureMatrix& feats, std::size_t label,
                const AamHyper& hyper, NetGrads& grads, std::vector<double>* input_grad) {
  if (label >= params.n_classes) fail(Errc::label_range, "backward: label out of range");
  Trace tr;
  run_forward(params, feats, tr);
  const auto back =
      aam_backward(Embedding{tr.e}, label, params.class_w, params.n_classes, hyper);
  for (std::size_t i = 0; i < back.dclass.size(); ++i) grads.class_w[i] += back.dclass[i];
  run_backward(params, tr, back.de, &grads, input_grad);
  return back.loss;
}

double cosine_score_backward(const NetParams& params, const FeatureMatrix& feats,
                             const std::vector<double>& target, std::vector<double>* input_grad) {
  if (target.size() != params.cfg.emb_dim)
    fail(Errc::dim_mismatch, "cosine_score_backward: target dimension mismatch");
  Trace tr;
  run_forward(params, feats, tr);
  double score = 0.0;
  for (std::size_t e = 0; e < target.size(); ++e) score += tr.e[e] * target[e];
  if (input_grad) run_backward(params, tr, target, nullptr, input_grad);
  return score;
}

TrainResult train(const std::vector<TrainSample>& dataset, const NetConfig& arch,
                  const TrainHyper& hyper, std::uint64_t seed) {
  std::size_t n_classes = 0;
  for (const auto& s : dataset) n_classes = std::max(n_classes, s.label + 1);
  if (n_classes < 2) fail(Errc::config, "train: need at least 2 users");
  if (hyper.batch == 0) fail(Errc::config, "train: batch must be positive");

  Rng base(seed);
  TrainResult result;
  result.params = init_net(base.fork("init").next_u64(), arch, n_classes);
  NetParams& p = result.params;

  NetGrads vel, batch_grads, sample_grads;
  vel.resize_like(p);
  batch_grads.resize_like(p);
  sample_grads.resize_like(p);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng shuffle = base.fork("shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      batch_grads.zero();
      for (std::size_t i = start; i < end; ++i) {
        sample_grads.zero();
        const TrainSample& s = dataset[order[i]];
        epoch_loss += backward(p, s.feats, s.label, hyper.aam, sample_grads, nullptr);
        batch_grads.axpy(1.0 / static_cast<double>(end - start), sample_grads);
      }
      auto update = [&](std::vector<double>& w, std::vector<double>& v,
                        const std::vector<double>& g) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = hyper.momentum * v[i] - hyper.lr * g[i];
          w[i] += v[i];
        }
      };
      update(p.conv1_w, vel.conv1_w, batch_grads.conv1_w);
      update(p.conv1_b, vel.conv1_b, batch_grads.conv1_b);
      update(p.conv2_w, vel.conv2_w, batch_grads.conv2_w);
      update(p.conv2_b, vel.conv2_b, batch_grads.conv2_b);
      update(p.proj_w, vel.proj_w, batch_grads.proj_w);
      update(p.proj_b, vel.proj_b, batch_grads.proj_b);
      update(p.class_w, vel.class_w, batch_grads.class_w);
      // class rows live on the unit sphere
      for (std::size_t cls = 0; cls < p.n_classes; ++cls) {
        double n2 = 0.0;
        double* row = p.class_w.data() + cls * p.cfg.emb_dim;
        for (std::size_t e = 0; e < p.cfg.emb_dim; ++e) n2 += row[e] * row[e];
        const double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
        for (std::size_t e = 0; e < p.cfg.emb_dim; ++e) row[e] *= inv;
      }
    }
    epoch_loss /= static_cast<double>(dataset.size());
    if (!std::isfinite(epoch_loss))
      fail(Errc::diverged, "train: loss became non-finite at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_loss);
  }
  return result;
}

std::string checkpoint_to_json(const NetParams& p) {
  nlohmann::ordered_json j;
  j["format"] = "earcan-checkpoint";
  j["version"] = 1;
  j["arch"] = {{"in_bands", p.cfg.in_bands},   {"conv1_ch", p.cfg.conv1_ch},
               {"conv1_k", p.cfg.conv1_k},     {"conv2_ch", p.cfg.conv2_ch},
               {"conv2_k", p.cfg.conv2_k},     {"emb_dim", p.cfg.emb_dim},
               {"var_eps", p.cfg.var_eps},     {"n_classes", p.n_classes}};
  j["tensors"] = {{"conv1_w", p.conv1_w}, {"conv1_b", p.conv1_b}, {"conv2_w", p.conv2_w},
                  {"conv2_b", p.conv2_b}, {"proj_w", p.proj_w},   {"proj_b", p.proj_b},
                  {"class_w", p.class_w}};
  return j.dump();
}

NetParams checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("checkpoint: ") + e.what());
  }
  NetParams p;
  try {
    if (j.at("format").get<std::string>() != "earcan-checkpoint")
      fail(Errc::format, "checkpoint: bad format tag");
    if (j.at("version").get<int>() != 1) fail(Errc::format, "checkpoint: unsupported version");
    const auto& a = j.at("arch");
    p.cfg.in_bands = a.at("in_bands").get<std::size_t>();
    p.cfg.conv1_ch = a.at("conv1_ch").get<std::size_t>();
    p.cfg.conv1_k = a.at("conv1_k").get<std::size_t>();
    p.cfg.conv2_ch = a.at("conv2_ch").get<std::size_t>();
    p.cfg.conv2_k = a.at("conv2_k").get<std::size_t>();
    p.cfg.emb_dim = a.at("emb_dim").get<std::size_t>();
    p.cfg.var_eps = a.at("var_eps").get<double>();
    p.n_classes = a.at("n_classes").get<std::size_t>();
    const auto& t = j.at("tensors");
    p.conv1_w = t.at("conv1_w").get<std::vector<double>>();
    p.conv1_b = t.at("conv1_b").get<std::vector<double>>();
    p.conv2_w = t.at("conv2_w").get<std::vector<double>>();
    p.conv2_b = t.at("conv2_b").get<std::vector<double>>();
    p.proj_w = t.at("proj_w").get<std::vector<double>>();
    p.proj_b = t.at("proj_b").get<std::vector<double>>();
    p.class_w = t.at("class_w").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("checkpoint: ") + e.what());
  }
  if (p.conv1_w.size() != p.cfg.conv1_ch * p.cfg.in_bands * p.cfg.conv1_k ||
      p.class_w.size() != p.n_classes * p.cfg.emb_dim)
    fail(Errc::format, "checkpoint: tensor sizes disagree with arch");
  return p;
}

}  // namespace earcan
