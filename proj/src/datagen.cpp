#include "gridparse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gridparse/error.hpp"

namespace gridparse {

namespace {

constexpr int kRetryCap = 20000;

std::vector<TokenId> tokens_with_role(const LanguageSpec& lang, TokenRole role) {
  std::vector<TokenId> out;
  for (int i = 0; i < lang.vocab_size(); ++i) {
    if (lang.roles[i] == role) out.push_back(i);
  }
  return out;
}

bool is_arithmetic_like(const LanguageSpec& lang) {
  return !tokens_with_role(lang, TokenRole::Operator).empty() && !tokens_with_role(lang, TokenRole::Open).empty();
}

bool is_dyck_like(const LanguageSpec& lang) {
  return lang.kind == LanguageKind::Cfg && tokens_with_role(lang, TokenRole::Operator).empty() &&
         !tokens_with_role(lang, TokenRole::Open).empty();
}

bool is_agreement_like(const LanguageSpec& lang) {
  return !tokens_with_role(lang, TokenRole::NounSg).empty() && !tokens_with_role(lang, TokenRole::VerbSg).empty();
}

template <typename C>
auto pick(const C& c, RngStream& rng) {
  return c[rng.index(c.size())];
}

std::vector<std::size_t> positions_with_role(const LanguageSpec& lang, const TokenSeq& t, TokenRole role) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < lang.vocab_size() && lang.roles[t[i]] == role) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> bracket_positions(const LanguageSpec& lang, const TokenSeq& t) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < lang.vocab_size() && lang.bracket_kind[t[i]] >= 0) out.push_back(i);
  }
  return out;
}

// Same bracket kind, opposite direction.
TokenId flip_bracket(const LanguageSpec& lang, TokenId t) {
  const bool open = lang.roles[t] == TokenRole::Open;
  for (int i = 0; i < lang.vocab_size(); ++i) {
    if (lang.bracket_kind[i] == lang.bracket_kind[t] && lang.roles[i] == (open ? TokenRole::Close : TokenRole::Open)) {
      return i;
    }
  }
  return t;
}

TokenId flip_number(const LanguageSpec& lang, TokenId t) {
  auto other = [&](TokenRole from, TokenRole to) -> std::optional<TokenId> {
    if (lang.roles[t] != from) return std::nullopt;
    const auto from_list = tokens_with_role(lang, from);
    const auto to_list = tokens_with_role(lang, to);
    const auto idx = std::find(from_list.begin(), from_list.end(), t) - from_list.begin();
    return to_list[static_cast<std::size_t>(idx) % to_list.size()];
  };
  for (auto [a, b] : {std::pair{TokenRole::NounSg, TokenRole::NounPl}, std::pair{TokenRole::NounPl, TokenRole::NounSg},
                      std::pair{TokenRole::VerbSg, TokenRole::VerbPl}, std::pair{TokenRole::VerbPl, TokenRole::VerbSg}}) {
    if (auto r = other(a, b)) return *r;
  }
  return t;
}

Sample make_sample(const LanguageSpec& lang, TokenSeq tokens, bool legal, std::optional<NegativeStrategy> s = {}) {
  Sample out;
  out.meta.length = static_cast<int>(tokens.size());
  out.meta.nesting_depth = nesting_depth(lang, tokens);
  out.meta.strategy = s;
  out.tokens = std::move(tokens);
  out.legal = legal;
  return out;
}

TokenSeq random_tokens(const LanguageSpec& lang, int max_len, RngStream& rng) {
  const auto alphabet = lang.sample_alphabet();
  const auto n = rng.uniform_int(1, max_len);
  TokenSeq t(static_cast<std::size_t>(n));
  for (auto& x : t) x = pick(alphabet, rng);
  return t;
}

// One corruption attempt; may return a legal or empty sequence, callers check.
TokenSeq corrupt(const LanguageSpec& lang, TokenSeq t, NegativeStrategy s, RngStream& rng) {
  using S = NegativeStrategy;
  if (is_arithmetic_like(lang)) {
    const auto ops = tokens_with_role(lang, TokenRole::Operator);
    const auto opens = tokens_with_role(lang, TokenRole::Open);
    const auto closes = tokens_with_role(lang, TokenRole::Close);
    if (s == S::MismatchedParens) {
      const auto brackets = bracket_positions(lang, t);
      const int mode = brackets.empty() ? 0 : static_cast<int>(rng.uniform_int(0, 2));
      if (mode == 0) {
        const TokenId p = rng.bernoulli(0.5) ? pick(opens, rng) : pick(closes, rng);
        t.insert(t.begin() + static_cast<long>(rng.index(t.size() + 1)), p);
      } else if (mode == 1) {
        t.erase(t.begin() + static_cast<long>(pick(brackets, rng)));
      } else {
        const auto pos = pick(brackets, rng);
        t[pos] = flip_bracket(lang, t[pos]);
      }
    } else if (s == S::DoubleOperator) {
      const auto op_pos = positions_with_role(lang, t, TokenRole::Operator);
      const TokenId op = pick(ops, rng);
      if (op_pos.empty()) {
        t.insert(t.begin() + static_cast<long>(rng.index(t.size() + 1)), op);
      } else {
        const auto p = pick(op_pos, rng) + (rng.bernoulli(0.5) ? 1 : 0);
        t.insert(t.begin() + static_cast<long>(p), op);
      }
    } else if (s == S::MissingOperator) {
      const auto op_pos = positions_with_role(lang, t, TokenRole::Operator);
      if (op_pos.empty()) {
        const auto operands = positions_with_role(lang, t, TokenRole::Operand);
        const auto p = pick(operands, rng) + (rng.bernoulli(0.5) ? 1 : 0);
        t.insert(t.begin() + static_cast<long>(p), pick(tokens_with_role(lang, TokenRole::Operand), rng));
      } else {
        t.erase(t.begin() + static_cast<long>(pick(op_pos, rng)));
      }
    }
    return t;
  }
  if (is_dyck_like(lang)) {
    if (s == S::MismatchedParens) {
      const auto pos = rng.index(t.size());
      const auto kinds = *std::max_element(lang.bracket_kind.begin(), lang.bracket_kind.end()) + 1;
      if (kinds > 1 && rng.bernoulli(0.5)) {
        // Same direction, different kind.
        std::vector<TokenId> alts;
        for (int i = 0; i < lang.vocab_size(); ++i) {
          if (lang.roles[i] == lang.roles[t[pos]] && lang.bracket_kind[i] != lang.bracket_kind[t[pos]]) alts.push_back(i);
        }
        t[pos] = pick(alts, rng);
      } else {
        t[pos] = flip_bracket(lang, t[pos]);
      }
    } else if (s == S::DoubleOperator) {
      t.insert(t.begin() + static_cast<long>(rng.index(t.size() + 1)), static_cast<TokenId>(rng.index(lang.vocab.size())));
    } else if (s == S::MissingOperator) {
      t.erase(t.begin() + static_cast<long>(rng.index(t.size())));
    }
    return t;
  }
  if (is_agreement_like(lang)) {
    if (s == S::MismatchedParens) {
      std::vector<std::size_t> pos;
      for (auto r : {TokenRole::NounSg, TokenRole::NounPl, TokenRole::VerbSg, TokenRole::VerbPl}) {
        const auto p = positions_with_role(lang, t, r);
        pos.insert(pos.end(), p.begin(), p.end());
      }
      const auto p = pick(pos, rng);
      t[p] = flip_number(lang, t[p]);
    } else if (s == S::DoubleOperator) {
      const auto p = rng.index(t.size());
      t.insert(t.begin() + static_cast<long>(p), t[p]);
    } else if (s == S::MissingOperator) {
      t.erase(t.begin() + static_cast<long>(rng.index(t.size())));
    }
    return t;
  }
  return t;
}

// Expansion table for random derivations.
struct DerivationTable {
  std::vector<std::vector<std::vector<int>>> rules;  // per nonterminal: rhs as symbol ids
  int terminals = 0;
  int start = 0;
};

DerivationTable derivation_table(const Cfg& cfg) {
  DerivationTable tab;
  tab.terminals = static_cast<int>(cfg.terminals.size());
  auto sym = [&](const std::string& s) {
    const int t = cfg.terminal_index(s);
    if (t >= 0) return t;
    const auto it = std::find(cfg.nonterminals.begin(), cfg.nonterminals.end(), s);
    return tab.terminals + static_cast<int>(it - cfg.nonterminals.begin());
  };
  tab.rules.resize(cfg.nonterminals.size());
  for (const auto& p : cfg.productions) {
    std::vector<int> rhs;
    for (const auto& s : p.rhs) rhs.push_back(sym(s));
    tab.rules[sym(p.lhs) - tab.terminals].push_back(std::move(rhs));
  }
  tab.start = sym(cfg.start);
  return tab;
}

void check_strategy(const LanguageSpec& lang, NegativeStrategy s) {
  const auto ok = applicable_strategies(lang);
  if (std::find(ok.begin(), ok.end(), s) == ok.end()) {
    throw Error(ErrorKind::InvalidArgument,
                std::string("negative strategy ") + to_string(s) + " does not apply to language " + lang.name);
  }
}

}  // namespace

const char* to_string(NegativeStrategy s) {
  switch (s) {
    case NegativeStrategy::RandomTokens: return "random_tokens";
    case NegativeStrategy::MismatchedParens: return "mismatched_parens";
    case NegativeStrategy::DoubleOperator: return "double_operator";
    case NegativeStrategy::MissingOperator: return "missing_operator";
  }
  return "?";
}

NegativeStrategy parse_negative_strategy(std::string_view s) {
  for (auto x : {NegativeStrategy::RandomTokens, NegativeStrategy::MismatchedParens, NegativeStrategy::DoubleOperator,
                 NegativeStrategy::MissingOperator}) {
    if (s == to_string(x)) return x;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown negative strategy: " + std::string(s));
}

void GenConfig::validate() const {
  if (max_train_len < 1) throw Error(ErrorKind::InvalidConfig, "max_train_len must be >= 1");
  if (batch_size < 2 || batch_size % 2 != 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be even and >= 2");
  if (deep_augment_fraction < 0.0 || deep_augment_fraction > 1.0) {
    throw Error(ErrorKind::InvalidConfig, "deep_augment_fraction must lie in [0, 1]");
  }
  if (deep_min_depth < 0 || deep_max_depth < deep_min_depth) throw Error(ErrorKind::InvalidConfig, "bad deep depth range");
  if (!(nest_weight >= 0.0)) throw Error(ErrorKind::InvalidConfig, "nest_weight must be >= 0");
}

Sample sample_legal(const LanguageSpec& lang, int max_len, RngStream& rng, double nest_weight) {
  if (!(nest_weight >= 0.0)) throw Error(ErrorKind::InvalidArgument, "nest_weight must be >= 0");
  if (max_len < 1) throw Error(ErrorKind::InvalidArgument, "max_len must be >= 1");
  if (lang.kind == LanguageKind::Regular) {
    const auto n = rng.uniform_int(1, max_len);
    TokenSeq t(static_cast<std::size_t>(n), 0);
    if (lang.vocab_size() == 2) {
      const auto k = rng.uniform_int(0, n);
      for (auto i = k; i < n; ++i) t[static_cast<std::size_t>(i)] = 1;
    }
    return make_sample(lang, std::move(t), true);
  }
  const auto tab = derivation_table(*lang.cfg);
  for (int attempt = 0; attempt < kRetryCap; ++attempt) {
    TokenSeq out;
    std::vector<int> stack{tab.start};
    bool ok = true;
    while (!stack.empty()) {
      const int s = stack.back();
      stack.pop_back();
      if (s < tab.terminals) {
        out.push_back(s);
      } else {
        const auto& choices = tab.rules[s - tab.terminals];
        std::size_t pick_at;
        if (nest_weight == 1.0) {
          pick_at = rng.index(choices.size());
        } else {
          auto weight = [&](const std::vector<int>& rhs) {
            for (int sym : rhs) {
              if (sym < tab.terminals && lang.roles[static_cast<std::size_t>(sym)] == TokenRole::Open) return nest_weight;
            }
            return 1.0;
          };
          double total = 0;
          for (const auto& c : choices) total += weight(c);
          double u = rng.uniform() * total;
          pick_at = choices.size() - 1;
          for (std::size_t k = 0; k < choices.size(); ++k) {
            u -= weight(choices[k]);
            if (u < 0) {
              pick_at = k;
              break;
            }
          }
        }
        const auto& rhs = choices[pick_at];
        stack.insert(stack.end(), rhs.rbegin(), rhs.rend());
      }
      // Every pending symbol yields at least one token.
      if (static_cast<int>(out.size() + stack.size()) > max_len) {
        ok = false;
        break;
      }
    }
    if (ok) return make_sample(lang, std::move(out), true);
  }
  throw Error(ErrorKind::BudgetExceeded, "sample_legal: rejection budget exhausted for max_len " + std::to_string(max_len));
}

Sample sample_deep(const LanguageSpec& lang, int depth, int max_len, RngStream& rng) {
  if (!is_arithmetic_like(lang)) throw Error(ErrorKind::InvalidArgument, "deep samples need an arithmetic-like language");
  if (2 * depth + 1 > max_len) throw Error(ErrorKind::InvalidArgument, "max_len too small for the requested depth");
  const auto operands = tokens_with_role(lang, TokenRole::Operand);
  const auto ops = tokens_with_role(lang, TokenRole::Operator);
  const TokenId open = tokens_with_role(lang, TokenRole::Open)[0];
  const TokenId close = tokens_with_role(lang, TokenRole::Close)[0];
  TokenSeq seq{pick(operands, rng)};
  for (int level = 0; level <= depth; ++level) {
    if (level > 0) {
      seq.insert(seq.begin(), open);
      seq.push_back(close);
    }
    const int reserve = 2 * (depth - level);
    while (static_cast<int>(seq.size()) + 2 + reserve <= max_len && rng.bernoulli(0.5)) {
      if (rng.bernoulli(0.5)) {
        seq.insert(seq.begin(), {pick(operands, rng), pick(ops, rng)});
      } else {
        seq.push_back(pick(ops, rng));
        seq.push_back(pick(operands, rng));
      }
    }
  }
  return make_sample(lang, std::move(seq), true);
}

std::vector<NegativeStrategy> applicable_strategies(const LanguageSpec& lang) {
  if (lang.kind == LanguageKind::Regular) return {NegativeStrategy::RandomTokens};
  return {NegativeStrategy::RandomTokens, NegativeStrategy::MismatchedParens, NegativeStrategy::DoubleOperator,
          NegativeStrategy::MissingOperator};
}

Sample sample_negative(const LanguageSpec& lang, int max_len, NegativeStrategy strategy, RngStream& rng,
                       double nest_weight) {
  check_strategy(lang, strategy);
  if (max_len < 2) strategy = NegativeStrategy::RandomTokens;
  for (int attempt = 0; attempt < kRetryCap; ++attempt) {
    TokenSeq t;
    if (strategy == NegativeStrategy::RandomTokens) {
      t = random_tokens(lang, max_len, rng);
    } else {
      t = corrupt(lang, sample_legal(lang, max_len - 1, rng, nest_weight).tokens, strategy, rng);
    }
    if (t.empty() || static_cast<int>(t.size()) > max_len) continue;
    if (!lang.member(t)) return make_sample(lang, std::move(t), false, strategy);
  }
  throw Error(ErrorKind::BudgetExceeded, "sample_negative: could not produce an illegal sample");
}

std::vector<Sample> train_batch(const LanguageSpec& lang, const GenConfig& cfg, RngStream& rng) {
  cfg.validate();
  const int half = cfg.batch_size / 2;
  const int n_deep = cfg.deep_augment ? static_cast<int>(std::lround(cfg.deep_augment_fraction * half)) : 0;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < half; ++i) {
    if (i < n_deep) {
      const int d = static_cast<int>(rng.uniform_int(cfg.deep_min_depth, cfg.deep_max_depth));
      out.push_back(sample_deep(lang, d, cfg.max_train_len, rng));
    } else {
      out.push_back(sample_legal(lang, cfg.max_train_len, rng, cfg.nest_weight));
    }
  }
  const auto strategies = applicable_strategies(lang);
  for (int i = 0; i < half; ++i) {
    out.push_back(sample_negative(lang, cfg.max_train_len, pick(strategies, rng), rng, cfg.nest_weight));
  }
  return out;
}

int ood_legal_length(const LanguageSpec& lang, int nominal_length) {
  if (is_arithmetic_like(lang)) return nominal_length % 2 == 1 ? nominal_length : nominal_length - 1;
  if (is_dyck_like(lang)) return nominal_length % 2 == 0 ? nominal_length : nominal_length - 1;
  return nominal_length;
}

std::vector<Sample> ood_set(const LanguageSpec& lang, int length, RngStream& rng, int per_class) {
  const int n = ood_legal_length(lang, length);
  std::vector<Sample> out;
  using S = NegativeStrategy;
  if (is_arithmetic_like(lang)) {
    if (n < 3) throw Error(ErrorKind::InvalidArgument, "arithmetic OOD sets need L >= 3");
    const auto operands = tokens_with_role(lang, TokenRole::Operand);
    const auto ops = tokens_with_role(lang, TokenRole::Operator);
    const auto opens = tokens_with_role(lang, TokenRole::Open);
    const auto closes = tokens_with_role(lang, TokenRole::Close);
    auto flat = [&] {
      TokenSeq t(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = i % 2 == 0 ? pick(operands, rng) : pick(ops, rng);
      return t;
    };
    for (int k = 0; k < per_class; ++k) out.push_back(make_sample(lang, flat(), true));
    for (int k = 0; k < per_class; ++k) {
      TokenSeq t = flat();
      const auto op_slot = static_cast<std::size_t>(2 * rng.uniform_int(0, (n - 3) / 2) + 1);
      S s;
      switch (k % 3) {
        case 0:  // one unmatched bracket: bracket counts can never balance
          s = S::MismatchedParens;
          t.insert(t.begin() + static_cast<long>(rng.index(t.size() + 1)),
                   rng.bernoulli(0.5) ? pick(opens, rng) : pick(closes, rng));
          break;
        case 1:  // operator directly after an operator
          s = S::DoubleOperator;
          t.insert(t.begin() + static_cast<long>(op_slot) + 1, pick(ops, rng));
          break;
        default:  // two adjacent operands
          s = S::MissingOperator;
          t.erase(t.begin() + static_cast<long>(op_slot));
          break;
      }
      out.push_back(make_sample(lang, std::move(t), false, s));
    }
    return out;
  }
  if (is_dyck_like(lang)) {
    if (n < 2) throw Error(ErrorKind::InvalidArgument, "Dyck OOD sets need L >= 2");
    std::vector<TokenId> opens = tokens_with_role(lang, TokenRole::Open);
    auto balanced = [&] {
      TokenSeq t;
      std::vector<TokenId> stack;
      for (int i = 0; i < n; ++i) {
        const int remaining = n - i;
        const bool must_close = static_cast<int>(stack.size()) == remaining;
        const bool must_open = stack.empty();
        if (must_open || (!must_close && rng.bernoulli(0.5))) {
          const TokenId o = pick(opens, rng);
          t.push_back(o);
          stack.push_back(o);
        } else {
          t.push_back(flip_bracket(lang, stack.back()));
          stack.pop_back();
        }
      }
      return t;
    };
    for (int k = 0; k < per_class; ++k) out.push_back(make_sample(lang, balanced(), true));
    for (int k = 0; k < per_class; ++k) {
      TokenSeq t = balanced();
      S s;
      switch (k % 3) {
        case 0: {  // open/close counts differ by two
          s = S::MismatchedParens;
          const auto p = rng.index(t.size());
          t[p] = flip_bracket(lang, t[p]);
          break;
        }
        case 1:  // odd length
          s = S::DoubleOperator;
          t.insert(t.begin() + static_cast<long>(rng.index(t.size() + 1)), static_cast<TokenId>(rng.index(lang.vocab.size())));
          break;
        default:
          s = S::MissingOperator;
          t.erase(t.begin() + static_cast<long>(rng.index(t.size())));
          break;
      }
      out.push_back(make_sample(lang, std::move(t), false, s));
    }
    return out;
  }
  if (is_agreement_like(lang)) {
    if (n < 3) throw Error(ErrorKind::InvalidArgument, "agreement OOD sets need L >= 3");
    const TokenId det = 0, adj = 1;
    const auto nsg = tokens_with_role(lang, TokenRole::NounSg)[0];
    const auto npl = tokens_with_role(lang, TokenRole::NounPl)[0];
    const auto vsg = tokens_with_role(lang, TokenRole::VerbSg)[0];
    const auto vpl = tokens_with_role(lang, TokenRole::VerbPl)[0];
    auto sentence = [&] {
      const bool sg = rng.bernoulli(0.5);
      TokenSeq t{det};
      for (int i = 0; i < n - 3; ++i) t.push_back(adj);
      t.push_back(sg ? nsg : npl);
      t.push_back(sg ? vsg : vpl);
      return t;
    };
    for (int k = 0; k < per_class; ++k) out.push_back(make_sample(lang, sentence(), true));
    for (int k = 0; k < per_class; ++k) {
      TokenSeq t = sentence();
      t.back() = flip_number(lang, t.back());  // main verb disagrees with the head noun
      out.push_back(make_sample(lang, std::move(t), false, S::MismatchedParens));
    }
    return out;
  }
  // Regular languages.
  if (lang.vocab_size() == 1) {
    for (int k = 0; k < per_class; ++k) out.push_back(make_sample(lang, TokenSeq(static_cast<std::size_t>(n), 0), true));
    for (int k = 0; k < per_class; ++k) {
      TokenSeq t(static_cast<std::size_t>(n), 0);
      t[rng.index(t.size())] = lang.reserved_token();
      out.push_back(make_sample(lang, std::move(t), false, S::RandomTokens));
    }
    return out;
  }
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "a-star-b-star OOD sets need L >= 2");
  auto ab = [&](std::int64_t k) {
    TokenSeq t(static_cast<std::size_t>(n), 0);
    for (auto i = k; i < n; ++i) t[static_cast<std::size_t>(i)] = 1;
    return t;
  };
  for (int k = 0; k < per_class; ++k) out.push_back(make_sample(lang, ab(rng.uniform_int(0, n)), true));
  for (int k = 0; k < per_class; ++k) {
    const auto split = rng.uniform_int(1, n - 1);
    TokenSeq t = ab(split);
    std::swap(t[static_cast<std::size_t>(split - 1)], t[static_cast<std::size_t>(split)]);  // a b -> b a
    out.push_back(make_sample(lang, std::move(t), false, S::RandomTokens));
  }
  return out;
}

Sample pure_nested(const LanguageSpec& lang, int depth) {
  if (!is_arithmetic_like(lang)) throw Error(ErrorKind::InvalidArgument, "nested constructions need an arithmetic-like language");
  if (depth < 0) throw Error(ErrorKind::InvalidArgument, "depth must be >= 0");
  const TokenId open = tokens_with_role(lang, TokenRole::Open)[0];
  const TokenId close = tokens_with_role(lang, TokenRole::Close)[0];
  TokenSeq t(static_cast<std::size_t>(depth), open);
  t.push_back(tokens_with_role(lang, TokenRole::Operand)[0]);
  t.insert(t.end(), static_cast<std::size_t>(depth), close);
  return make_sample(lang, std::move(t), true);
}

Sample mixed_depth_length(const LanguageSpec& lang, int depth, int length, RngStream& rng) {
  const Sample group = pure_nested(lang, depth);
  const int n = ood_legal_length(lang, length);
  const int items = (n + 1 - 2 * depth) / 2;
  if (items < 1 || n < 2 * depth + 1) {
    throw Error(ErrorKind::InvalidArgument, "length " + std::to_string(length) + " cannot hold a depth-" +
                                                std::to_string(depth) + " group");
  }
  const auto operands = tokens_with_role(lang, TokenRole::Operand);
  const auto ops = tokens_with_role(lang, TokenRole::Operator);
  const auto slot = static_cast<int>(rng.index(static_cast<std::size_t>(items)));
  TokenSeq t;
  for (int k = 0; k < items; ++k) {
    if (k > 0) t.push_back(pick(ops, rng));
    if (k == slot) {
      t.insert(t.end(), group.tokens.begin(), group.tokens.end());
    } else {
      t.push_back(pick(operands, rng));
    }
  }
  return make_sample(lang, std::move(t), true);
}

namespace {

TokenSeq nested_corruption(const LanguageSpec& lang, TokenSeq t, RngStream& rng) {
  switch (rng.uniform_int(0, 3)) {
    case 0: return corrupt(lang, std::move(t), NegativeStrategy::MismatchedParens, rng);
    case 1: return corrupt(lang, std::move(t), NegativeStrategy::DoubleOperator, rng);
    case 2: return corrupt(lang, std::move(t), NegativeStrategy::MissingOperator, rng);
    default: {
      // Operand replaced by a bracket or operator.
      const auto pos = positions_with_role(lang, t, TokenRole::Operand);
      std::vector<TokenId> repl;
      for (int i = 0; i < lang.vocab_size(); ++i) {
        if (lang.roles[i] != TokenRole::Operand) repl.push_back(i);
      }
      t[pick(pos, rng)] = pick(repl, rng);
      return t;
    }
  }
}

template <typename MakeLegal>
std::vector<Sample> balanced_with_corruptions(const LanguageSpec& lang, MakeLegal make_legal, RngStream& rng,
                                              int per_class) {
  std::vector<Sample> out;
  for (int k = 0; k < per_class; ++k) out.push_back(make_legal());
  for (int k = 0; k < per_class; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= kRetryCap) throw Error(ErrorKind::BudgetExceeded, "could not corrupt nested sample");
      TokenSeq t = nested_corruption(lang, make_legal().tokens, rng);
      if (t.empty() || lang.member(t)) continue;
      out.push_back(make_sample(lang, std::move(t), false));
      break;
    }
  }
  return out;
}

}  // namespace

std::vector<Sample> pure_nested_set(const LanguageSpec& lang, int depth, RngStream& rng, int per_class) {
  return balanced_with_corruptions(lang, [&] { return pure_nested(lang, depth); }, rng, per_class);
}

std::vector<Sample> mixed_depth_set(const LanguageSpec& lang, int depth, int length, RngStream& rng, int per_class) {
  return balanced_with_corruptions(lang, [&] { return mixed_depth_length(lang, depth, length, rng); }, rng, per_class);
}

std::string samples_to_text(const LanguageSpec& lang, const std::vector<Sample>& samples) {
  std::ostringstream os;
  for (const auto& s : samples) os << lang.detokenize(s.tokens) << '\t' << (s.legal ? "legal" : "illegal") << '\n';
  return os.str();
}

std::vector<Sample> samples_from_text(const LanguageSpec& lang, std::string_view text) {
  std::vector<Sample> out;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorKind::InvalidArgument, "sample line without a tab: " + line);
    const std::string label = line.substr(tab + 1);
    if (label != "legal" && label != "illegal") throw Error(ErrorKind::InvalidArgument, "bad label: " + label);
    out.push_back(make_sample(lang, lang.tokenize(line.substr(0, tab)), label == "legal"));
  }
  return out;
}

}  // namespace gridparse
