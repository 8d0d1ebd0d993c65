#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

#include "gridparse/grammar.hpp"

namespace gridparse {

// Upper-triangular CKY chart. Cell (i, j), i <= j, holds the set of
// nonterminals deriving tokens[i..j] as a bit mask.
class CkyChart {
 public:
  CkyChart() = default;
  explicit CkyChart(int length) : length_(length), cells_(static_cast<std::size_t>(length) * length, 0) {}

  int length() const { return length_; }
  std::uint64_t cell(int i, int j) const { return cells_[static_cast<std::size_t>(i) * length_ + j]; }
  std::uint64_t& cell(int i, int j) { return cells_[static_cast<std::size_t>(i) * length_ + j]; }
  bool contains(int i, int j, int nt) const { return (cell(i, j) >> nt) & 1u; }

 private:
  int length_ = 0;
  std::vector<std::uint64_t> cells_;
};

// Row i = start token, column j = end token.
using IndicatorMatrix = Eigen::MatrixXd;

// Entries for spans longer than the reveal horizon.
inline constexpr double kMaskedValue = -1.0;

CkyChart cky_chart(const CnfGrammar& g, std::span<const TokenId> tokens);
bool recognize(const CnfGrammar& g, std::span<const TokenId> tokens);
IndicatorMatrix indicator(const CkyChart& chart, int nt);
IndicatorMatrix reveal_by_span_length(const CkyChart& chart, int nt, int k);

// Exact membership on the original grammar, independent of CNF conversion:
// span-by-span least fixpoint over "symbol X derives tokens[i..j)". Throws
// Error(BudgetExceeded) when more than `work_budget` elementary checks are needed.
bool brute_force_member(const Cfg& cfg, std::span<const TokenId> tokens, long long work_budget = 50'000'000);

std::string indicator_to_csv(const IndicatorMatrix& m);

}  // namespace gridparse
