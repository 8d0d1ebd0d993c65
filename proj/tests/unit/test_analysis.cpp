#include "doctest.h"

#include <cmath>

#include "gridparse/analysis.hpp"
#include "gridparse/error.hpp"
#include "oracles.hpp"

using namespace gridparse;

namespace {

// Two-pass textbook correlation.
double reference_r(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("pearson basics") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y, z;
  for (double v : x) {
    y.push_back(3 * v - 2);
    z.push_back(-0.5 * v + 7);
  }
  CHECK(*pearson(x, y) == doctest::Approx(1.0));
  CHECK(*pearson(x, z) == doctest::Approx(-1.0));
  const std::vector<double> flat = {2, 2, 2, 2, 2};
  CHECK_FALSE(pearson(x, flat).has_value());
  CHECK_FALSE(pearson(std::vector<double>{1.0}, std::vector<double>{2.0}).has_value());
}

TEST_CASE("pearson properties on random data") {
  RngStream rng(1, 1);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x(20), y(20), ya(20);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      y[i] = 0.3 * x[i] + rng.normal();
      ya[i] = 4.0 * y[i] + 11.0;
    }
    const double r = *pearson(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(r == doctest::Approx(reference_r(x, y)).epsilon(1e-12));
    CHECK(*pearson(y, x) == doctest::Approx(r).epsilon(1e-12));
    CHECK(*pearson(x, ya) == doctest::Approx(r).epsilon(1e-12));
  }
}

TEST_CASE("upper triangles") {
  IndicatorMatrix m = IndicatorMatrix::Zero(4, 4);
  m(0, 3) = 1;
  m(2, 1) = 5;  // below the diagonal, ignored
  const auto v = upper_triangle(m);
  CHECK(v.size() == 10);
  CHECK(v[3] == 1.0);
  double total = 0;
  for (double x : v) total += x;
  CHECK(total == 1.0);
  const GridShape g = square_grid(4);
  Mat<float> s = zero_grid<float>(g, 2);
  s(g.index(0, 3), 1) = 0.25f;
  CHECK(upper_triangle(s, g, 1)[3] == doctest::Approx(0.25));
}

TEST_CASE("curve scoring") {
  std::vector<Sample> samples(4);
  samples[0].legal = samples[1].legal = true;
  const std::vector<Prediction> preds = {{true, 10, true}, {false, 20, false}, {false, 30, true}, {false, 40, false}};
  const CurvePoint p = score_points(7, samples, preds);
  CHECK(p.x == 7);
  CHECK(p.balanced_accuracy == doctest::Approx(0.75));  // (1/2 + 2/2) / 2
  CHECK(p.mean_steps == doctest::Approx(25.0));
  CHECK(p.nonconvergence_rate == doctest::Approx(0.5));
  CHECK(p.samples == 4);
}

TEST_CASE("evaluation sets are balanced, exact and reproducible") {
  const LanguageSpec lang = builtin_language("arithmetic");
  const auto a = length_set(lang, 31, 3, 10);
  const auto b = length_set(lang, 31, 3, 10);
  REQUIRE(a.size() == 20);
  int legal = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].legal == testing::ArithmeticRd::accepts(a[i].tokens));
    legal += a[i].legal;
  }
  CHECK(legal == 10);
  for (DepthMode m : {DepthMode::Pure, DepthMode::Mixed}) {
    for (const auto& s : depth_set(lang, m, 3, 1, 10, 30)) CHECK(s.legal == testing::ArithmeticRd::accepts(s.tokens));
  }
  RngStream rng(2, 2);
  for (const auto& s : legal_samples(lang, 30, 3, 12, rng)) {
    CHECK(s.tokens.size() >= 3);
    CHECK(s.tokens.size() <= 12);
    CHECK(s.legal);
  }
}

TEST_CASE("analysis on an untrained model") {
  NcaConfig cfg;
  cfg.d = 4;
  const NcaParams p = init_params(cfg, 1);
  const LanguageSpec lang = builtin_language("arithmetic");
  RngStream rng(1, 2);
  const VarianceResult v = grid_variance(cfg, p, lang, rng, 10);
  CHECK(v.samples == 10);
  CHECK(v.channel0 >= 0.0);
  RngStream rng2(1, 3);
  const PearsonResult r = aggregate_pearson(cfg, p, lang, rng2, 10);
  CHECK(r.samples == 10);
  if (r.pooled) CHECK(std::abs(*r.pooled) <= 1.0);
  const auto nts = per_nt_pearson(cfg, p, lang, lang.tokenize("id + id * id"));
  CHECK(nts.size() == 11);
  const BaselineResult b = random_init_baseline(cfg, lang, 2, 3, 10);
  CHECK(b.inits == 3);
  CHECK(b.values.size() == 3);
  double m = 0;
  for (double x : b.values) m += x / 3.0;
  CHECK(b.mean == doctest::Approx(m));
}
