#include "earcan/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "earcan/error.hpp"

namespace earcan {

namespace {

// FAR/FRR of the "accept iff score >= threshold" rule.
double far_at(const std::vector<double>& imposter, double threshold) {
  std::size_t n = 0;
  for (double s : imposter) n += s >= threshold;
  return static_cast<double>(n) / static_cast<double>(imposter.size());
}

double frr_at(const std::vector<double>& genuine, double threshold) {
  std::size_t n = 0;
  for (double s : genuine) n += s < threshold;
  return static_cast<double>(n) / static_cast<double>(genuine.size());
}

std::vector<double> candidate_thresholds(const std::vector<double>& genuine,
                                         const std::vector<double>& imposter) {
  std::vector<double> c;
  c.reserve(genuine.size() + imposter.size() + 1);
  c.insert(c.end(), genuine.begin(), genuine.end());
  c.insert(c.end(), imposter.begin(), imposter.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  // virtual endpoint above every score: FAR 0, FRR 1
  c.push_back(std::nextafter(c.back(), std::numeric_limits<double>::infinity()));
  return c;
}

}  // namespace

Template make_template(const std::vector<Embedding>& embeddings, Template::CreatedFrom origin) {
  if (embeddings.empty()) fail(Errc::empty_input, "make_template: no embeddings");
  const std::size_t dim = embeddings.front().v.size();
  Template t;
  t.created_from = origin;
  t.n_enrolled = embeddings.size();
  t.v.assign(dim, 0.0);
  for (const auto& e : embeddings) {
    if (e.v.size() != dim) fail(Errc::dim_mismatch, "make_template: embedding dims differ");
    for (std::size_t i = 0; i < dim; ++i) t.v[i] += e.v[i];
  }
  double n2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    t.v[i] /= static_cast<double>(embeddings.size());
    n2 += t.v[i] * t.v[i];
  }
  const double norm = std::sqrt(n2);
  if (norm < 1e-6)
    fail(Errc::degenerate_template, "make_template: mean embedding has near-zero norm");
  for (auto& x : t.v) x /= norm;
  return t;
}

double score(const Template& tmpl, const Embedding& probe) {
  if (tmpl.v.size() != probe.v.size())
    fail(Errc::dim_mismatch, "score: template and probe dimensions differ");
  double d = 0.0;
  for (std::size_t i = 0; i < tmpl.v.size(); ++i) d += tmpl.v[i] * probe.v[i];
  return d;
}

EerResult eer(const std::vector<double>& genuine, const std::vector<double>& imposter) {
  if (genuine.empty() || imposter.empty()) fail(Errc::empty_input, "eer: empty score list");
  const auto cands = candidate_thresholds(genuine, imposter);

  double prev_far = 0.0, prev_frr = 0.0, prev_thr = 0.0;
  bool have_prev = false;
  for (double thr : cands) {
    const double far = far_at(imposter, thr);
    const double frr = frr_at(genuine, thr);
    if (far <= frr) {
      if (far == frr || !have_prev) return {far == frr ? far : std::max(far, frr), thr};
      // linear crossing between the previous candidate and this one
      const double a = prev_far - prev_frr;           // > 0
      const double b = frr - far;                     // > 0
      const double alpha = a / (a + b);
      const double eer_val = prev_far + alpha * (far - prev_far);
      const double thr_val = prev_thr + alpha * (thr - prev_thr);
      return {eer_val, thr_val};
    }
    prev_far = far;
    prev_frr = frr;
    prev_thr = thr;
    have_prev = true;
  }
  // unreachable: the virtual endpoint always has FAR 0 <= FRR 1
  return {0.5, cands.back()};
}

std::vector<RocPoint> roc_points(const std::vector<double>& genuine,
                                 const std::vector<double>& imposter) {
  if (genuine.empty() || imposter.empty()) fail(Errc::empty_input, "roc_points: empty score list");
  std::vector<double> c;
  c.insert(c.end(), genuine.begin(), genuine.end());
  c.insert(c.end(), imposter.begin(), imposter.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());

  std::vector<RocPoint> points;
  points.reserve(c.size() + 2);
  points.push_back({std::nextafter(c.front(), -std::numeric_limits<double>::infinity()), 1.0, 0.0});
  for (double thr : c) points.push_back({thr, far_at(imposter, thr), frr_at(genuine, thr)});
  points.push_back({std::nextafter(c.back(), std::numeric_limits<double>::infinity()), 0.0, 1.0});
  return points;
}

std::string roc_to_csv(const std::vector<RocPoint>& points) {
  std::string out = "threshold,far,frr\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, p.far, p.frr);
    out += buf;
  }
  return out;
}

}  // namespace earcan
