#include "doctest.h"

#include <cmath>
#include <functional>
#include <set>

#include "gridparse/adam.hpp"
#include "gridparse/rng.hpp"
#include "gridparse/tape.hpp"
#include "gridparse/tensor.hpp"
#include "oracles.hpp"

using namespace gridparse;
using Tape = ad::Tape<double>;
using M = Mat<double>;

namespace {

M random_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng, double scale = 1.0) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

M random_grid(const GridShape& g, int c, RngStream& rng) {
  M m = random_matrix(g.padded_rows(), c, rng);
  zero_border(m, g);
  return m;
}

// Builds a scalar from the inputs on a fresh tape; compares reverse-mode
// gradients with central differences for every input.
double gradcheck(std::vector<M> inputs, const std::function<ad::Var(Tape&, const std::vector<ad::Var>&)>& f) {
  auto eval = [&](std::vector<M>* grads) {
    Tape t;
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(t.parameter(m));
    const ad::Var out = f(t, vars);
    if (grads != nullptr) {
      t.backward(out);
      for (const auto& v : vars) grads->push_back(t.grad(v));
    }
    return t.scalar(out);
  };
  std::vector<M> analytic;
  eval(&analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const M numeric = testing::numeric_grad(inputs[i], [&] { return eval(nullptr); });
    worst = std::max(worst, testing::rel_error(analytic[i], numeric));
  }
  return worst;
}

// A parameter viewed as a grid tensor; border entries are masked out.
ad::Var as_grid(Tape& t, ad::Var x, const GridShape& g) {
  M mask = M::Ones(g.padded_rows(), t.value(x).cols());
  zero_border(mask, g);
  return t.add(t.constant(M::Zero(mask.rows(), mask.cols()), g), t.scale_by(x, mask));
}

// Weighted sum to turn any output into a scalar with non-trivial gradients.
ad::Var weigh(Tape& t, ad::Var x, std::uint64_t seed = 5) {
  RngStream rng(seed, 77);
  const Eigen::Index rows = t.value(x).rows(), cols = t.value(x).cols();
  const ad::Var col = t.matmul(x, t.constant(random_matrix(cols, 1, rng)));
  const M ones = M::Ones(1, rows);
  return t.matmul(t.constant(ones), col);
}

}  // namespace

TEST_CASE("conv3x3 forward matches a direct loop") {
  RngStream rng(1, 1);
  const GridShape g{5, 4};
  const int cin = 3, cout = 2;
  const M in = random_grid(g, cin, rng);
  const M k = random_matrix(9 * cin, cout, rng);
  const M b = random_matrix(1, cout, rng);
  M out;
  conv3x3_forward<double>(in, g, k, b.data(), out);
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j)
      for (int o = 0; o < cout; ++o) {
        double ref = b(0, o);
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int ii = i + di, jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= g.h || jj >= g.w) continue;
            for (int c = 0; c < cin; ++c) ref += in(g.index(ii, jj), c) * k(((di + 1) * 3 + dj + 1) * cin + c, o);
          }
        CHECK(out(g.index(i, j), o) == doctest::Approx(ref).epsilon(1e-12));
      }
  // The border stays zero.
  CHECK(out.row(0).isZero());
  CHECK(out.row(g.padded_rows() - 1).isZero());
}

TEST_CASE("conv3x3 gradients") {
  RngStream rng(2, 1);
  const GridShape g{4, 4};
  const M x = random_grid(g, 2, rng);
  const M k = random_matrix(18, 3, rng);
  const M b = random_matrix(1, 3, rng);
  const double err = gradcheck({x, k, b}, [&](Tape& t, const std::vector<ad::Var>& v) {
    return weigh(t, t.conv3x3(as_grid(t, v[0], g), v[1], v[2]));
  });
  CHECK(err < 1e-7);
}

TEST_CASE("elementwise and linear primitives") {
  RngStream rng(3, 1);
  const M a = random_matrix(4, 3, rng), b = random_matrix(4, 3, rng), w = random_matrix(3, 5, rng);
  const M r = random_matrix(1, 5, rng), c = random_matrix(4, 3, rng);
  CHECK(gradcheck({a, b}, [](Tape& t, const auto& v) { return weigh(t, t.add(v[0], v[1])); }) < 1e-7);
  CHECK(gradcheck({a}, [](Tape& t, const auto& v) { return weigh(t, t.relu(v[0])); }) < 1e-7);
  CHECK(gradcheck({a}, [](Tape& t, const auto& v) { return weigh(t, t.sigmoid(v[0])); }) < 1e-7);
  CHECK(gradcheck({a, w}, [](Tape& t, const auto& v) { return weigh(t, t.matmul(v[0], v[1])); }) < 1e-7);
  CHECK(gradcheck({a, w, r}, [](Tape& t, const auto& v) { return weigh(t, t.affine(v[0], v[1], v[2])); }) < 1e-7);
  CHECK(gradcheck({a, w, r}, [](Tape& t, const auto& v) {
          return weigh(t, t.add_row(t.matmul(v[0], v[1]), v[2]));
        }) < 1e-7);
  CHECK(gradcheck({a}, [&](Tape& t, const auto& v) { return weigh(t, t.scale_by(v[0], c)); }) < 1e-7);
  CHECK(gradcheck({a, b}, [](Tape& t, const auto& v) {
          const ad::Var parts[] = {v[0], v[1]};
          return weigh(t, t.concat_cols(parts));
        }) < 1e-7);
  CHECK(gradcheck({a, r}, [](Tape& t, const auto& v) {
          return weigh(t, t.concat_rows(t.row(t.matmul(v[0], t.constant(M::Identity(3, 5))), 1), v[1]));
        }) < 1e-7);
}

TEST_CASE("table and grid primitives") {
  RngStream rng(4, 1);
  const M table = random_matrix(6, 3, rng);
  const std::vector<TokenId> toks = {0, 3, 3, 5};
  const std::vector<int> idx = {2, 0, 2};
  CHECK(gradcheck({table}, [&](Tape& t, const auto& v) { return weigh(t, t.pair_field(v[0], toks)); }) < 1e-7);
  CHECK(gradcheck({table}, [&](Tape& t, const auto& v) { return weigh(t, t.gather_rows(v[0], idx)); }) < 1e-7);
  const M row = random_matrix(1, 4, rng);
  CHECK(gradcheck({row}, [](Tape& t, const auto& v) { return weigh(t, t.broadcast_cells(v[0], GridShape{3, 3})); }) <
        1e-7);
  const GridShape g{3, 3};
  const M field = random_grid(g, 2, rng);
  CHECK(gradcheck({field}, [&](Tape& t, const auto& v) {
          return weigh(t, t.affine(as_grid(t, v[0], g), t.constant(M::Identity(2, 2)), t.constant(M::Zero(1, 2))));
        }) < 1e-7);
  const M proj = random_matrix(2, 3, rng), kernel = random_matrix(9 * 7, 4, rng);
  CHECK(gradcheck({proj, kernel}, [](Tape& t, const auto& v) { return weigh(t, t.compose_taps(v[0], v[1], 2)); }) <
        1e-7);
}

TEST_CASE("composed taps equal convolving the projected field") {
  RngStream rng(5, 1);
  const GridShape g{4, 4};
  const M h = random_grid(g, 2, rng);
  const M proj = random_matrix(2, 3, rng), kernel = random_matrix(9 * 3, 4, rng);
  Tape t;
  const M folded = t.value(t.compose_taps(t.constant(proj), t.constant(kernel), 0));
  M direct, composed;
  M projected = h * proj;
  zero_border(projected, g);
  conv3x3_forward<double>(projected, g, kernel, nullptr, direct);
  conv3x3_forward<double>(h, g, folded, nullptr, composed);
  CHECK((direct - composed).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalization, attention and losses") {
  RngStream rng(6, 1);
  const M x = random_matrix(5, 8, rng), gain = random_matrix(1, 8, rng), shift = random_matrix(1, 8, rng);
  CHECK(gradcheck({x, gain, shift}, [](Tape& t, const auto& v) { return weigh(t, t.layer_norm(v[0], v[1], v[2])); }) <
        1e-6);
  const M q = random_matrix(5, 8, rng), k = random_matrix(5, 8, rng), val = random_matrix(5, 8, rng);
  CHECK(gradcheck({q, k, val}, [](Tape& t, const auto& v) { return weigh(t, t.attention(v[0], v[1], v[2], 2)); }) <
        1e-6);
  const M logit = random_matrix(1, 1, rng);
  CHECK(gradcheck({logit}, [](Tape& t, const auto& v) { return t.bce_with_logits(v[0], 1.0); }) < 1e-7);
  CHECK(gradcheck({logit}, [](Tape& t, const auto& v) { return t.bce(t.sigmoid(v[0]), 0.0); }) < 1e-7);
  CHECK(gradcheck({x}, [](Tape& t, const auto& v) {
          const ad::Var s[] = {t.pick(v[0], 1, 2), t.pick(v[0], 3, 3)};
          return t.mean(s);
        }) < 1e-7);
}

TEST_CASE("attention rows are distributions") {
  RngStream rng(7, 1);
  Tape t;
  std::vector<M> maps;
  const ad::Var q = t.constant(random_matrix(6, 4, rng, 3.0));
  t.attention(q, q, q, 2, &maps);
  REQUIRE(maps.size() == 2);
  for (const auto& m : maps) {
    CHECK(m.rows() == 6);
    CHECK(m.minCoeff() >= 0.0);
    for (Eigen::Index r = 0; r < m.rows(); ++r) CHECK(m.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer norm output is standardized") {
  RngStream rng(8, 1);
  Tape t;
  const ad::Var y = t.layer_norm(t.constant(random_matrix(3, 16, rng, 4.0)), t.constant(M::Ones(1, 16)),
                                 t.constant(M::Zero(1, 16)));
  for (Eigen::Index r = 0; r < 3; ++r) {
    CHECK(std::abs(t.value(y).row(r).mean()) < 1e-9);
    CHECK(t.value(y).row(r).squaredNorm() / 16 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("a value used twice receives both gradient contributions") {
  Tape t;
  const ad::Var x = t.parameter(M::Constant(1, 1, 3.0));
  const ad::Var y = t.matmul(x, x);  // x^2
  t.backward(y);
  CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("BCE clamps probabilities") {
  Tape t;
  const ad::Var p = t.constant(M::Zero(1, 1));
  CHECK(t.scalar(t.bce(p, 1.0)) == doctest::Approx(-std::log(1e-7)));
}

TEST_CASE("first Adam step moves each weight by lr against the gradient sign") {
  M w = M::Constant(2, 2, 1.0);
  const std::vector<M> g = {(M(2, 2) << 0.5, -2.0, 1e-3, -7.0).finished()};
  AdamState<double> st;
  st.lr = 0.1;
  adam_step<double>({&w}, g, st);
  CHECK(w(0, 0) == doctest::Approx(0.9));
  CHECK(w(0, 1) == doctest::Approx(1.1));
  CHECK(w(1, 0) == doctest::Approx(0.9).epsilon(1e-4));
  CHECK(w(1, 1) == doctest::Approx(1.1));
  M bad(1, 1);
  CHECK_THROWS_AS(adam_step<double>({&bad}, g, st), Error);
}

TEST_CASE("Adam minimizes a quadratic") {
  M w = M::Constant(1, 3, 5.0);
  AdamState<double> st;
  st.lr = 0.05;
  for (int k = 0; k < 2000; ++k) adam_step<double>({&w}, {2.0 * (w.array() - 1.0).matrix()}, st);
  CHECK((w.array() - 1.0).abs().maxCoeff() < 1e-2);
}

TEST_CASE("splitmix64 reference values") {
  // First two outputs of the reference SplitMix64 generator seeded with 0.
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFull);
  CHECK(splitmix64(0x9E3779B97F4A7C15ull) == 0x6E789E6AA1B965F4ull);
}

TEST_CASE("rng streams") {
  RngStream a(1, 2), b(1, 2), c(1, 3), d(2, 2);
  std::set<std::uint64_t> seen;
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    seen.insert(x);
    seen.insert(c.next_u64());
    seen.insert(d.next_u64());
  }
  CHECK(seen.size() == 300);
  RngStream u(3, 0);
  double sum = 0, sq = 0;
  for (int k = 0; k < 20000; ++k) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const auto i = u.uniform_int(-2, 4);
    CHECK(i >= -2);
    CHECK(i <= 4);
    const double n = u.normal();
    sum += n;
    sq += n * n;
  }
  CHECK(std::abs(sum / 20000) < 0.05);
  CHECK(std::abs(sq / 20000 - 1.0) < 0.05);
  RngStream s1 = a.split(9), s2 = b.split(9);
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(std::string(RngStream::kAlgorithm) == "splitmix64-ctr/1");
}
