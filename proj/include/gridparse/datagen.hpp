#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridparse/grammar.hpp"
#include "gridparse/rng.hpp"

namespace gridparse {

enum class NegativeStrategy { RandomTokens, MismatchedParens, DoubleOperator, MissingOperator };

const char* to_string(NegativeStrategy s);
NegativeStrategy parse_negative_strategy(std::string_view s);

struct SampleMeta {
  int length = 0;
  int nesting_depth = 0;
  std::optional<NegativeStrategy> strategy;
};

struct Sample {
  TokenSeq tokens;
  bool legal = false;
  SampleMeta meta;
};

struct GenConfig {
  std::string language = "arithmetic";
  int max_train_len = 12;
  int batch_size = 64;
  bool deep_augment = false;
  double deep_augment_fraction = 0.30;
  int deep_min_depth = 2;
  int deep_max_depth = 4;
  // Relative weight of expansions that open a bracket during legal
  // derivations (1 = uniform choice). Also applies to corruption bases.
  double nest_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Random derivation with uniform expansion choices, rejected when longer
// than max_len. Regular languages draw a length uniformly instead.
// nest_weight scales the probability of expansions containing an opening
// bracket relative to the others.
Sample sample_legal(const LanguageSpec& lang, int max_len, RngStream& rng, double nest_weight = 1.0);

// A depth-`depth` legal arithmetic expression of at most max_len tokens:
// nested groups with random flat context around each level.
Sample sample_deep(const LanguageSpec& lang, int depth, int max_len, RngStream& rng);

// Strategies meaningful for the language's vocabulary. For Dyck languages the
// paren/operator strategies become bracket flips, insertions and deletions;
// for nl-agreement they become number flips, duplications and deletions;
// regular languages only support RandomTokens.
std::vector<NegativeStrategy> applicable_strategies(const LanguageSpec& lang);

// Throws Error(InvalidArgument) when the strategy does not apply to lang.
Sample sample_negative(const LanguageSpec& lang, int max_len, NegativeStrategy strategy, RngStream& rng,
                       double nest_weight = 1.0);

// batch_size / 2 legal and batch_size / 2 illegal samples (legal first).
std::vector<Sample> train_batch(const LanguageSpec& lang, const GenConfig& cfg, RngStream& rng);

// Length actually used for legal out-of-distribution items at nominal length
// L: legal arithmetic/nl strings have odd length, Dyck strings even length,
// so the nearest admissible length not above L is used.
int ood_legal_length(const LanguageSpec& lang, int nominal_length);

// per_class constructively legal flat items plus per_class items made illegal
// by one provably breaking corruption each. No membership oracle is called.
std::vector<Sample> ood_set(const LanguageSpec& lang, int length, RngStream& rng, int per_class = 100);

// "(" * depth + "id" + ")" * depth.
Sample pure_nested(const LanguageSpec& lang, int depth);

// A flat expression of total length L (nearest odd length not above L)
// with one depth-`depth` group at a random operand slot. Throws
// Error(InvalidArgument) if L cannot hold the group.
Sample mixed_depth_length(const LanguageSpec& lang, int depth, int length, RngStream& rng);

// Balanced sets for depth curves. Legal half repeats the legal construction
// (pure) or draws fresh mixed items; illegal half applies random corruptions
// checked against the CKY oracle.
std::vector<Sample> pure_nested_set(const LanguageSpec& lang, int depth, RngStream& rng, int per_class = 100);
std::vector<Sample> mixed_depth_set(const LanguageSpec& lang, int depth, int length, RngStream& rng,
                                    int per_class = 100);

// "tok tok tok<TAB>legal|illegal" per line.
std::string samples_to_text(const LanguageSpec& lang, const std::vector<Sample>& samples);
std::vector<Sample> samples_from_text(const LanguageSpec& lang, std::string_view text);

}  // namespace gridparse
