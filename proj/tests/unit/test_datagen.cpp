#include "doctest.h"

#include <algorithm>

#include "gridparse/cky.hpp"
#include "gridparse/datagen.hpp"
#include "gridparse/error.hpp"
#include "oracles.hpp"

using namespace gridparse;

namespace {

// Membership checked against the original grammar, not the CNF used by datagen.
bool oracle(const LanguageSpec& lang, const TokenSeq& t) {
  if (lang.cfg) return brute_force_member(*lang.cfg, t);
  return lang.regular_checker(t);
}

}  // namespace

TEST_CASE("training batches are balanced and correctly labelled") {
  for (const auto& name : builtin_language_names()) {
    const LanguageSpec lang = builtin_language(name);
    GenConfig cfg;
    cfg.language = name;
    RngStream rng(1, 1);
    for (int b = 0; b < 5; ++b) {
      const auto batch = train_batch(lang, cfg, rng);
      REQUIRE(batch.size() == 64);
      int legal = 0;
      for (const auto& s : batch) {
        CHECK(!s.tokens.empty());
        CHECK(static_cast<int>(s.tokens.size()) <= cfg.max_train_len);
        CHECK_MESSAGE(s.legal == oracle(lang, s.tokens), name);
        CHECK(s.meta.length == static_cast<int>(s.tokens.size()));
        legal += s.legal;
      }
      CHECK(legal == 32);
    }
  }
}

TEST_CASE("deep augmentation adds nested legal items") {
  const LanguageSpec lang = builtin_language("arithmetic");
  GenConfig cfg;
  cfg.deep_augment = true;
  RngStream rng(2, 1);
  int deep = 0, total = 0;
  for (int b = 0; b < 10; ++b) {
    for (const auto& s : train_batch(lang, cfg, rng)) {
      CHECK(s.legal == testing::ArithmeticRd::accepts(s.tokens));
      CHECK(static_cast<int>(s.tokens.size()) <= cfg.max_train_len);
      if (s.legal) {
        ++total;
        deep += nesting_depth(lang, s.tokens) >= 2;
      }
    }
  }
  CHECK(deep > total / 5);
  for (int depth = 2; depth <= 4; ++depth) {
    const Sample s = sample_deep(lang, depth, 12, rng);
    CHECK(nesting_depth(lang, s.tokens) == depth);
    CHECK(testing::ArithmeticRd::accepts(s.tokens));
  }
}

TEST_CASE("out-of-distribution sets carry exact labels") {
  for (const auto& name : builtin_language_names()) {
    const LanguageSpec lang = builtin_language(name);
    for (int L : {20, 25, 40}) {
      RngStream rng(4, static_cast<std::uint64_t>(L));
      const auto set = ood_set(lang, L, rng, 20);
      REQUIRE(set.size() == 40);
      for (const auto& s : set) {
        CHECK_MESSAGE(s.legal == oracle(lang, s.tokens), name << " L=" << L);
        if (s.legal) CHECK(static_cast<int>(s.tokens.size()) == ood_legal_length(lang, L));
        CHECK(std::abs(static_cast<int>(s.tokens.size()) - L) <= 2);
      }
    }
  }
}

TEST_CASE("legal arithmetic strings have odd length") {
  const LanguageSpec lang = builtin_language("arithmetic");
  for (const auto& s : testing::all_strings(5, 6))
    if (testing::ArithmeticRd::accepts(s)) CHECK(s.size() % 2 == 1);
  CHECK(ood_legal_length(lang, 50) == 49);
  CHECK(ood_legal_length(lang, 51) == 51);
  CHECK(ood_legal_length(builtin_language("dyck1"), 51) == 50);
}

TEST_CASE("depth sets") {
  const LanguageSpec lang = builtin_language("arithmetic");
  for (int k = 0; k <= 8; ++k) {
    const Sample s = pure_nested(lang, k);
    CHECK(s.tokens.size() == static_cast<std::size_t>(2 * k + 1));
    CHECK(nesting_depth(lang, s.tokens) == k);
    CHECK(s.legal);
    CHECK(testing::ArithmeticRd::accepts(s.tokens));
  }
  CHECK(lang.detokenize(pure_nested(lang, 2).tokens) == "( ( id ) )");
  RngStream rng(9, 9);
  for (int k = 1; k <= 6; ++k) {
    const Sample m = mixed_depth_length(lang, k, 40, rng);
    CHECK(nesting_depth(lang, m.tokens) == k);
    CHECK(m.tokens.size() == 39);
    CHECK(testing::ArithmeticRd::accepts(m.tokens));
    for (const auto& s : pure_nested_set(lang, k, rng, 10)) CHECK(s.legal == testing::ArithmeticRd::accepts(s.tokens));
    for (const auto& s : mixed_depth_set(lang, k, 30, rng, 10))
      CHECK(s.legal == testing::ArithmeticRd::accepts(s.tokens));
  }
  CHECK_THROWS_AS(mixed_depth_length(lang, 10, 9, rng), Error);
}

TEST_CASE("negative strategies") {
  const LanguageSpec lang = builtin_language("arithmetic");
  RngStream rng(7, 7);
  for (NegativeStrategy s : applicable_strategies(lang)) {
    for (int k = 0; k < 50; ++k) {
      const Sample n = sample_negative(lang, 12, s, rng);
      CHECK_FALSE(n.legal);
      CHECK_FALSE(testing::ArithmeticRd::accepts(n.tokens));
      CHECK(n.meta.strategy == s);
    }
    CHECK(parse_negative_strategy(to_string(s)) == s);
  }
  CHECK(applicable_strategies(builtin_language("a-star")) == std::vector{NegativeStrategy::RandomTokens});
  CHECK_THROWS_AS(sample_negative(builtin_language("a-star"), 12, NegativeStrategy::DoubleOperator, rng), Error);
}

TEST_CASE("a-star negatives use the reserved token") {
  const LanguageSpec lang = builtin_language("a-star");
  RngStream rng(3, 0);
  const auto n = sample_negative(lang, 12, NegativeStrategy::RandomTokens, rng);
  CHECK(std::count(n.tokens.begin(), n.tokens.end(), lang.reserved_token()) >= 1);
}

TEST_CASE("generation is a pure function of the stream") {
  const LanguageSpec lang = builtin_language("arithmetic");
  GenConfig cfg;
  RngStream a(42, 1), b(42, 1), c(43, 1);
  const auto x = train_batch(lang, cfg, a);
  const auto y = train_batch(lang, cfg, b);
  const auto z = train_batch(lang, cfg, c);
  CHECK(samples_to_text(lang, x) == samples_to_text(lang, y));
  CHECK(samples_to_text(lang, x) != samples_to_text(lang, z));
}

TEST_CASE("nest weight 1 reproduces the uniform draw sequence") {
  const LanguageSpec lang = builtin_language("arithmetic");
  RngStream a(8, 2), b(8, 2);
  for (int k = 0; k < 50; ++k) CHECK(sample_legal(lang, 12, a).tokens == sample_legal(lang, 12, b, 1.0).tokens);
  RngStream c(8, 3);
  for (int k = 0; k < 50; ++k) CHECK(nesting_depth(lang, sample_legal(lang, 12, c, 0.0).tokens) == 0);
}

TEST_CASE("sample text round-trips") {
  const LanguageSpec lang = builtin_language("dyck2");
  GenConfig cfg;
  cfg.language = "dyck2";
  RngStream rng(1, 5);
  const auto batch = train_batch(lang, cfg, rng);
  const auto back = samples_from_text(lang, samples_to_text(lang, batch));
  REQUIRE(back.size() == batch.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].tokens == batch[i].tokens);
    CHECK(back[i].legal == batch[i].legal);
  }
}

TEST_CASE("generator config validation") {
  GenConfig cfg;
  cfg.batch_size = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.nest_weight = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
