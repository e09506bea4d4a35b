#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "earcan/error.hpp"
#include "earcan/matcher.hpp"
#include "earcan/rng.hpp"

using namespace earcan;

namespace {

Embedding unit(std::vector<double> v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  for (double& x : v) x /= std::sqrt(n2);
  return Embedding{std::move(v)};
}

// Exhaustive sweep oracle: every candidate threshold (all scores plus
// midpoints), linear interpolation of the FAR/FRR crossing.
struct SweepOracle {
  double eer, threshold;
};

SweepOracle brute_force_eer(const std::vector<double>& genuine,
                            const std::vector<double>& imposter) {
  auto far_at = [&](double t) {
    std::size_t n = 0;
    for (double s : imposter) n += s >= t;
    return static_cast<double>(n) / static_cast<double>(imposter.size());
  };
  auto frr_at = [&](double t) {
    std::size_t n = 0;
    for (double s : genuine) n += s < t;
    return static_cast<double>(n) / static_cast<double>(genuine.size());
  };
  std::vector<double> cands;
  cands.insert(cands.end(), genuine.begin(), genuine.end());
  cands.insert(cands.end(), imposter.begin(), imposter.end());
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  cands.push_back(std::nextafter(cands.back(), 1e300));

  double prev_f = 0, prev_r = 0, prev_t = 0;
  bool have = false;
  for (double t : cands) {
    const double f = far_at(t), r = frr_at(t);
    if (f <= r) {
      if (f == r || !have) return {std::max(f, r), t};
      const double a = prev_f - prev_r, b = r - f;
      const double alpha = a / (a + b);
      return {prev_f + alpha * (f - prev_f), prev_t + alpha * (t - prev_t)};
    }
    prev_f = f;
    prev_r = r;
    prev_t = t;
    have = true;
  }
  return {0.5, cands.back()};
}

}  // namespace

TEST_CASE("make_template: identity, averaging, antipodal degeneracy, empty") {
  const Embedding e1 = unit({1, 0, 0});
  Template t = make_template({e1});
  CHECK(t.v == e1.v);
  CHECK(t.n_enrolled == 1);

  t = make_template({e1, e1});
  for (std::size_t i = 0; i < 3; ++i) CHECK(t.v[i] == doctest::Approx(e1.v[i]));

  Embedding minus = e1;
  for (auto& v : minus.v) v = -v;
  try {
    make_template({e1, minus});
    FAIL("expected degenerate_template");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::degenerate_template);
  }
  try {
    make_template({});
    FAIL("expected empty_input");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_input);
  }
}

TEST_CASE("score: identity 1, orthogonal 0, antipodal -1; dim mismatch refused") {
  const Embedding e = unit({0.3, -0.2, 0.9});
  Template t;
  t.v = e.v;
  CHECK(score(t, e) == doctest::Approx(1.0));
  const Embedding q = unit({e.v[1], -e.v[0], 0.0});
  CHECK(score(t, q) == doctest::Approx(0.0).epsilon(1e-12));
  Embedding m = e;
  for (auto& v : m.v) v = -v;
  CHECK(score(t, m) == doctest::Approx(-1.0));
  Embedding wrong;
  wrong.v = {1.0, 0.0};
  try {
    score(t, wrong);
    FAIL("expected dim_mismatch");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::dim_mismatch);
  }
}

TEST_CASE("score is invariant under a common rotation (Givens rotations)") {
  Rng rng(5);
  std::vector<double> tv(8), pv(8);
  for (auto& v : tv) v = rng.uniform(-1, 1);
  for (auto& v : pv) v = rng.uniform(-1, 1);
  Template t;
  t.v = unit(tv).v;
  Embedding p = unit(pv);
  const double before = score(t, p);
  for (int rot = 0; rot < 20; ++rot) {
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, 7));
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, 6));
    if (j >= i) ++j;
    const double ang = rng.uniform(0.0, 6.28);
    const double c = std::cos(ang), s = std::sin(ang);
    const double ti = t.v[i], tj = t.v[j], pi = p.v[i], pj = p.v[j];
    t.v[i] = c * ti - s * tj;
    t.v[j] = s * ti + c * tj;
    p.v[i] = c * pi - s * pj;
    p.v[j] = s * pi + c * pj;
  }
  CHECK(score(t, p) == doctest::Approx(before).epsilon(1e-10));
}

TEST_CASE("eer: perfect separation, chance, and the worked example") {
  CHECK(eer({0.8, 0.9}, {0.1, 0.2}).eer == doctest::Approx(0.0));
  CHECK(eer({0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}).eer == doctest::Approx(0.5));

  const EerResult r = eer({0.9, 0.8, 0.7}, {0.75, 0.6});
  const SweepOracle oracle = brute_force_eer({0.9, 0.8, 0.7}, {0.75, 0.6});
  CHECK(r.eer == doctest::Approx(oracle.eer).epsilon(1e-12));
  CHECK(r.threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
  CHECK(r.eer == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("eer matches the brute-force sweep oracle on random score sets") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ng = 2 + static_cast<std::size_t>(rng.uniform_int(0, 20));
    const std::size_t ni = 2 + static_cast<std::size_t>(rng.uniform_int(0, 20));
    std::vector<double> g(ng), im(ni);
    for (auto& v : g) v = std::round(rng.uniform(-1.0, 1.0) * 8.0) / 8.0;  // force ties
    for (auto& v : im) v = std::round(rng.uniform(-1.0, 1.0) * 8.0) / 8.0;
    const EerResult got = eer(g, im);
    const SweepOracle oracle = brute_force_eer(g, im);
    CHECK(got.eer == doctest::Approx(oracle.eer).epsilon(1e-12));
    CHECK(got.threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
  }
}

TEST_CASE("eer lies in [0, 0.5] when the genuine median dominates") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(11), im(11);
    for (auto& v : g) v = rng.uniform(0.0, 1.0);
    for (auto& v : im) v = rng.uniform(-1.0, 0.9);
    std::vector<double> gs = g, is = im;
    std::sort(gs.begin(), gs.end());
    std::sort(is.begin(), is.end());
    if (gs[5] < is[5]) continue;
    const EerResult r = eer(g, im);
    CHECK(r.eer >= 0.0);
    CHECK(r.eer <= 0.5 + 1e-12);
  }
}

TEST_CASE("roc_points: saturated endpoints and monotonicity along the sweep") {
  Rng rng(51);
  std::vector<double> g(15), im(15);
  for (auto& v : g) v = rng.uniform(-0.2, 1.0);
  for (auto& v : im) v = rng.uniform(-1.0, 0.4);
  const auto points = roc_points(g, im);
  CHECK(points.front().far == doctest::Approx(1.0));
  CHECK(points.front().frr == doctest::Approx(0.0));
  CHECK(points.back().far == doctest::Approx(0.0));
  CHECK(points.back().frr == doctest::Approx(1.0));
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].threshold > points[i - 1].threshold);
    CHECK(points[i].far <= points[i - 1].far + 1e-15);
    CHECK(points[i].frr >= points[i - 1].frr - 1e-15);
  }
  const std::string csv = roc_to_csv(points);
  CHECK(csv.rfind("threshold,far,frr\n", 0) == 0);
}
