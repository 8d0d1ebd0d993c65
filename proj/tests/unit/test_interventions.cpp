#include "doctest.h"

#include <numeric>
#include <set>

#include "gridparse/error.hpp"
#include "gridparse/interventions.hpp"

using namespace gridparse;

TEST_CASE("cell permutations and their inverse") {
  const int L = 5;
  const GridShape g = square_grid(L);
  RngStream rng(1, 1);
  Mat<float> s = zero_grid<float>(g, 2);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) s.row(g.index(i, j)) << static_cast<float>(rng.uniform()), static_cast<float>(i * L + j);
  std::vector<int> perm(L * L);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));
  Mat<float> moved = s;
  permute_cells(moved, g, perm);
  // Cell k moves to perm[k], both channels together.
  for (int k = 0; k < L * L; ++k) {
    CHECK(moved.row(g.index(perm[k] / L, perm[k] % L)) == s.row(g.index(k / L, k % L)));
  }
  CHECK(moved.row(0).isZero());
  permute_cells(moved, g, inverse_permutation(perm));
  CHECK(moved == s);
}

TEST_CASE("freeze masks") {
  const int L = 6;
  RngStream a(2, 2), b(2, 2);
  InterventionSpec lo, hi;
  lo.kind = hi.kind = InterventionKind::Freeze;
  lo.fraction = 0.3;
  hi.fraction = 0.7;
  const auto m_lo = freeze_mask(lo, L, a);
  const auto m_hi = freeze_mask(hi, L, b);
  for (int k = 0; k < L * L; ++k)
    if (m_lo[static_cast<std::size_t>(k)]) CHECK(m_hi[static_cast<std::size_t>(k)]);
  for (FreezeMask m : {FreezeMask::RandomFraction, FreezeMask::UpperTriangle, FreezeMask::LowerTriangle,
                       FreezeMask::Diagonal}) {
    InterventionSpec s;
    s.kind = InterventionKind::Freeze;
    s.mask = m;
    s.fraction = 1.0;
    RngStream rng(3, 3);
    const auto mask = freeze_mask(s, L, rng);
    CHECK_FALSE(mask[L - 1]);  // readout
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j) {
        if (i == 0 && j == L - 1) continue;
        const bool f = mask[static_cast<std::size_t>(i * L + j)];
        if (m == FreezeMask::UpperTriangle) CHECK(f == (i <= j));
        if (m == FreezeMask::LowerTriangle) CHECK(f == (i > j));
        if (m == FreezeMask::Diagonal) CHECK(f == (i == j));
        if (m == FreezeMask::RandomFraction) CHECK(f);
      }
  }
}

TEST_CASE("no intervention reproduces plain inference") {
  NcaConfig cfg;
  cfg.d = 4;
  const NcaParams p = init_params(cfg, 3);
  const TokenSeq t = {0, 1, 0, 2, 0};
  RngStream rng(1, 1);
  const InferenceResult a = run_with_intervention(cfg, p, t, InterventionSpec{}, rng);
  const InferenceResult b = infer(cfg, p, t);
  CHECK(a.probability == b.probability);
  CHECK(a.steps == b.steps);
}

TEST_CASE("frozen cells hold their values") {
  NcaConfig cfg;
  cfg.d = 4;
  const NcaParams p = init_params(cfg, 4);
  const TokenSeq t = {0, 1, 0, 2, 0};
  InterventionSpec s;
  s.kind = InterventionKind::Freeze;
  s.mask = FreezeMask::Diagonal;
  RngStream rng(1, 1);
  const InferenceResult r = run_with_intervention(cfg, p, t, s, rng, true);
  const GridShape g = square_grid(5);
  for (const auto& st : r.trace)
    for (int i = 0; i < 5; ++i) CHECK(st.row(g.index(i, i)).isZero());
}

TEST_CASE("reset at step k restarts from zero") {
  NcaConfig cfg;
  cfg.d = 4;
  const NcaParams p = init_params(cfg, 5);
  const TokenSeq t = {0, 1, 0};
  InterventionSpec s;
  s.kind = InterventionKind::Reset;
  s.at_step = 2;
  RngStream rng(1, 1);
  const InferenceResult r = run_with_intervention(cfg, p, t, s, rng, true);
  const InferenceResult plain = infer(cfg, p, t);
  // After the reset the rollout replays the unperturbed one.
  CHECK(r.probability == doctest::Approx(plain.probability).epsilon(1e-6));
  CHECK(r.steps == plain.steps + 2);
}

TEST_CASE("standard grid and validation") {
  const auto grid = standard_intervention_grid();
  CHECK(grid.size() == 33);
  CHECK(grid.front().kind == InterventionKind::None);
  std::set<std::string> labels;
  for (const auto& s : grid) labels.insert(s.label());
  CHECK(labels.size() == grid.size());
  InterventionSpec bad;
  bad.kind = InterventionKind::Noise;
  bad.sigma = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.kind = InterventionKind::Freeze;
  bad.fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("suite report") {
  NcaConfig cfg;
  cfg.d = 4;
  const NcaParams p = init_params(cfg, 6);
  const LanguageSpec lang = builtin_language("arithmetic");
  const auto set = intervention_eval_set(lang, 1, 4, 15);
  CHECK(set.size() == 16);
  const std::vector<InterventionSpec> specs = {InterventionSpec{}, standard_intervention_grid()[1]};
  const InterventionReport r = intervention_suite(cfg, p, set, specs, 1);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].samples == 16);
  CHECK(r.rows[0].mean_extra_steps == 0.0);
  const InterventionReport again = intervention_suite(cfg, p, set, specs, 1);
  CHECK(intervention_csv(r) == intervention_csv(again));
}
