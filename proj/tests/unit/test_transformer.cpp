#include "doctest.h"

#include <cmath>

#include "gridparse/error.hpp"
#include "gridparse/transformer.hpp"
#include "oracles.hpp"

using namespace gridparse;

namespace {

TfConfig tiny(PositionalScheme pos = PositionalScheme::Sinusoidal) {
  TfConfig c;
  c.layers = 1;
  c.d = 8;
  c.positional = pos;
  c.max_positions = 32;
  return c;
}

long long expected_params(int layers, int d) { return 10LL * d + 1 + layers * (12LL * d * d + 13LL * d); }

}  // namespace

TEST_CASE("parameter count formula") {
  CHECK(init_tf(tiny(), 1).scalar_count() == 953);
  TfConfig big;
  CHECK(init_tf(big, 1).scalar_count() == 100609);
  for (int layers : {1, 2, 3})
    for (int d : {8, 16, 32}) {
      TfConfig c;
      c.layers = layers;
      c.d = d;
      CHECK(init_tf(c, 0).scalar_count() == expected_params(layers, d));
      c.positional = PositionalScheme::Learned;
      c.max_positions = 100;
      CHECK(init_tf(c, 0).scalar_count() == expected_params(layers, d) + 100LL * d);
    }
}

TEST_CASE("attention shapes and normalization") {
  const TfConfig c = tiny();
  const TfParams p = init_tf(c, 2);
  const TokenSeq t = {0, 1, 0, 2, 0};
  const TfForward f = tf_forward(c, p, t, true);
  REQUIRE(f.attention.size() == 1);
  REQUIRE(f.attention[0].size() == 1);
  const auto& a = f.attention[0][0];
  CHECK(a.rows() == 6);
  CHECK(a.cols() == 6);
  for (Eigen::Index r = 0; r < a.rows(); ++r) CHECK(a.row(r).sum() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK((a.array() >= 0).all());
  CHECK(std::isfinite(f.logit));

  const TfForward one = tf_forward(c, p, TokenSeq{0}, true);
  CHECK(one.attention[0][0].rows() == 2);
  TfConfig mean = c;
  mean.readout = Readout::MeanPool;
  const TfForward m = tf_forward(mean, p, TokenSeq{0}, true);
  CHECK(m.attention[0][0].rows() == 1);
}

TEST_CASE("locality score references") {
  for (int n : {1, 2, 5, 9}) {
    CHECK(locality_score(Mat<float>::Identity(n, n)) == doctest::Approx(0.0));
    const Mat<float> u = Mat<float>::Constant(n, n, 1.0f / static_cast<float>(n));
    CHECK(locality_score(u) == doctest::Approx((n * n - 1.0) / (3.0 * n * n)).epsilon(1e-5));
  }
}

TEST_CASE("rotary positions preserve norms and depend on offsets only") {
  const int d = 8, heads = 2, n = 12;
  const RotaryTables rt = rotary_tables(n, d, heads);
  RngStream rng(4, 4);
  Mat<float> x(1, d), y(1, d);
  for (int k = 0; k < d; ++k) {
    x(0, k) = static_cast<float>(rng.normal());
    y(0, k) = static_cast<float>(rng.normal());
  }
  auto rot = [&](const Mat<float>& v, int pos) -> Mat<float> {
    Mat<float> rv = v * rt.r;
    return v.cwiseProduct(rt.cos.row(pos)) + rv.cwiseProduct(rt.sin.row(pos));
  };
  CHECK(rot(x, 7).norm() == doctest::Approx(x.norm()).epsilon(1e-5));
  const int hd = d / heads;
  for (int h = 0; h < heads; ++h) {
    auto dot = [&](int m, int k) {
      return (rot(x, m).middleCols(h * hd, hd) * rot(y, k).middleCols(h * hd, hd).transpose())(0, 0);
    };
    CHECK(dot(2, 5) == doctest::Approx(dot(6, 9)).epsilon(1e-4));
    CHECK(dot(0, 0) == doctest::Approx((x.middleCols(h * hd, hd) * y.middleCols(h * hd, hd).transpose())(0, 0)).epsilon(1e-5));
  }
}

TEST_CASE("loss gradients match finite differences") {
  const LanguageSpec lang = builtin_language("arithmetic");
  for (PositionalScheme pos : {PositionalScheme::Sinusoidal, PositionalScheme::Learned, PositionalScheme::Rotary}) {
    CAPTURE(to_string(pos));
    const TfConfig c = tiny(pos);
    TfParams p = init_tf(c, 5);
    std::vector<Sample> batch;
    for (const char* s : {"id + id", "( id * id )", "id +", ") id"}) {
      const TokenSeq t = lang.tokenize(s);
      batch.push_back({t, testing::ArithmeticRd::accepts(t)});
    }
    std::vector<Mat<float>> grads;
    tf_loss_and_grads(c, p, batch, &grads);
    auto tensors = p.tensors();
    RngStream rng(6, 6);
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      CAPTURE(p.names()[k]);
      Mat<float>& w = *tensors[k];
      for (int probe = 0; probe < 3; ++probe) {
        const auto r = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(w.rows())));
        const auto col = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(w.cols())));
        const float orig = w(r, col);
        const float h = 1e-2f;
        w(r, col) = orig + h;
        const double up = tf_loss_and_grads(c, p, batch, nullptr);
        w(r, col) = orig - h;
        const double down = tf_loss_and_grads(c, p, batch, nullptr);
        w(r, col) = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grads[k](r, col);
        CHECK(std::abs(numeric - analytic) <= 2e-3 + 5e-2 * std::abs(numeric));
      }
    }
  }
}

TEST_CASE("checkpoints round-trip") {
  for (PositionalScheme pos : {PositionalScheme::Sinusoidal, PositionalScheme::Learned, PositionalScheme::Rotary}) {
    const TfConfig c = tiny(pos);
    const TfParams p = init_tf(c, 7);
    const Archive a = decode_archive(encode_archive(tf_to_archive(c, p)));
    TfConfig c2;
    TfParams p2;
    tf_from_archive(a, c2, p2);
    CHECK(c2.d == c.d);
    CHECK(c2.layers == c.layers);
    CHECK(c2.positional == c.positional);
    const auto x = p.tensors();
    const auto y = p2.tensors();
    REQUIRE(x.size() == y.size());
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(*x[k] == *y[k]);
    const TokenSeq t = {3, 0, 4};
    CHECK(tf_forward(c, p, t).logit == tf_forward(c2, p2, t).logit);
  }
}

TEST_CASE("training is deterministic") {
  const TfConfig c = tiny();
  TfTrainOptions o;
  o.total_steps = 4;
  o.eval_every = 0;
  o.gen.batch_size = 8;
  const TfTrainResult a = train_tf(c, o, 11);
  const TfTrainResult b = train_tf(c, o, 11);
  const auto x = a.params.tensors();
  const auto y = b.params.tensors();
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(*x[k] == *y[k]);
}

TEST_CASE("config validation") {
  TfConfig c = tiny();
  c.d = 7;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny(PositionalScheme::Learned);
  const TfParams p = init_tf(c, 1);
  CHECK_THROWS_AS(tf_forward(c, p, TokenSeq(40, 0)), Error);
  CHECK(parse_positional_scheme("rotary") == PositionalScheme::Rotary);
  CHECK_THROWS_AS(parse_positional_scheme("alibi"), Error);
}
