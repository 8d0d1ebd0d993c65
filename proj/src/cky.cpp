#include "gridparse/cky.hpp"

#include <functional>
#include <sstream>

#include "gridparse/error.hpp"

namespace gridparse {

CkyChart cky_chart(const CnfGrammar& g, std::span<const TokenId> tokens) {
  const int n = static_cast<int>(tokens.size());
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "CKY needs at least one token");
  std::vector<std::uint64_t> lex(g.terminals.size(), 0);
  for (const auto& r : g.lex_rules) lex[r.terminal] |= std::uint64_t{1} << r.lhs;

  CkyChart chart(n);
  for (int i = 0; i < n; ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || t >= g.num_terminals()) {
      throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(t) + " not in grammar vocab");
    }
    chart.cell(i, i) = lex[t];
  }
  for (int span = 2; span <= n; ++span) {
    for (int i = 0; i + span <= n; ++i) {
      const int j = i + span - 1;
      std::uint64_t acc = 0;
      for (int k = i; k < j; ++k) {
        const std::uint64_t left = chart.cell(i, k);
        const std::uint64_t right = chart.cell(k + 1, j);
        if (!left || !right) continue;
        for (const auto& r : g.bin_rules) {
          if (((left >> r.left) & 1u) && ((right >> r.right) & 1u)) acc |= std::uint64_t{1} << r.lhs;
        }
      }
      chart.cell(i, j) = acc;
    }
  }
  return chart;
}

bool recognize(const CnfGrammar& g, std::span<const TokenId> tokens) {
  const auto chart = cky_chart(g, tokens);
  return chart.contains(0, chart.length() - 1, g.start);
}

IndicatorMatrix indicator(const CkyChart& chart, int nt) {
  if (nt < 0 || nt >= kMaxNonterminals) throw Error(ErrorKind::UnknownSymbol, "nonterminal index out of range");
  const int n = chart.length();
  IndicatorMatrix m = IndicatorMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) m(i, j) = chart.contains(i, j, nt) ? 1.0 : 0.0;
  }
  return m;
}

IndicatorMatrix reveal_by_span_length(const CkyChart& chart, int nt, int k) {
  IndicatorMatrix m = indicator(chart, nt);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = i; j < m.cols(); ++j) {
      if (j - i > k) m(i, j) = kMaskedValue;
    }
  }
  return m;
}

bool brute_force_member(const Cfg& cfg, std::span<const TokenId> tokens, long long work_budget) {
  const int n = static_cast<int>(tokens.size());
  if (n == 0) return false;
  const int nt_count = static_cast<int>(cfg.nonterminals.size());
  const int t_count = static_cast<int>(cfg.terminals.size());
  for (TokenId t : tokens) {
    if (t < 0 || t >= t_count) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(t) + " not in grammar vocab");
  }
  // Symbol ids: terminals first, then nonterminals.
  auto sym_id = [&](const std::string& s) {
    const int t = cfg.terminal_index(s);
    if (t >= 0) return t;
    for (int k = 0; k < nt_count; ++k) {
      if (cfg.nonterminals[k] == s) return t_count + k;
    }
    throw Error(ErrorKind::UnknownSymbol, "unknown symbol " + s);
  };
  struct Rule {
    int lhs;
    std::vector<int> rhs;
  };
  std::vector<Rule> rules;
  for (const auto& p : cfg.productions) {
    Rule r{sym_id(p.lhs), {}};
    for (const auto& s : p.rhs) r.rhs.push_back(sym_id(s));
    rules.push_back(std::move(r));
  }
  const int sym_count = t_count + nt_count;
  // derives[(i * (n + 1) + j) * sym_count + s] for half-open spans [i, j).
  std::vector<char> derives(static_cast<std::size_t>((n + 1) * (n + 1)) * sym_count, 0);
  auto at = [&](int i, int j, int s) -> char& {
    return derives[(static_cast<std::size_t>(i) * (n + 1) + j) * sym_count + s];
  };
  long long work = 0;
  auto charge = [&] {
    if (++work > work_budget) throw Error(ErrorKind::BudgetExceeded, "brute-force membership budget exceeded");
  };

  // Can rhs[pos..] derive tokens[i..j) exactly? Every part is nonempty.
  std::function<bool(const std::vector<int>&, std::size_t, int, int)> seq;
  seq = [&](const std::vector<int>& rhs, std::size_t pos, int i, int j) -> bool {
    charge();
    const int remaining = static_cast<int>(rhs.size() - pos);
    if (remaining == 1) return at(i, j, rhs[pos]) != 0;
    for (int k = i + 1; j - k >= remaining - 1; ++k) {
      if (at(i, k, rhs[pos]) && seq(rhs, pos + 1, k, j)) return true;
    }
    return false;
  };

  for (int len = 1; len <= n; ++len) {
    for (int i = 0; i + len <= n; ++i) {
      const int j = i + len;
      if (len == 1) at(i, j, tokens[i]) = 1;
      bool changed = true;
      while (changed) {
        changed = false;
        for (const auto& r : rules) {
          if (at(i, j, r.lhs)) continue;
          if (static_cast<int>(r.rhs.size()) > len) continue;
          if (seq(r.rhs, 0, i, j)) {
            at(i, j, r.lhs) = 1;
            changed = true;
          }
        }
      }
    }
  }
  return at(0, n, sym_id(cfg.start)) != 0;
}

std::string indicator_to_csv(const IndicatorMatrix& m) {
  std::ostringstream os;
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << m(i, j);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace gridparse
