#include "gridparse/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "gridparse/cky.hpp"
#include "gridparse/error.hpp"

namespace gridparse {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::UnknownToken: return "unknown_token";
    case ErrorKind::UnknownSymbol: return "unknown_symbol";
    case ErrorKind::UnknownLanguage: return "unknown_language";
    case ErrorKind::GrammarInvalid: return "grammar_invalid";
    case ErrorKind::BudgetExceeded: return "budget_exceeded";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::CorruptCheckpoint: return "corrupt_checkpoint";
    case ErrorKind::InvalidConfig: return "invalid_config";
    case ErrorKind::Io: return "io";
    case ErrorKind::OracleMismatch: return "oracle_mismatch";
  }
  return "unknown";
}

namespace {

template <typename C>
int index_of(const C& names, std::string_view s) {
  const auto it = std::find(names.begin(), names.end(), s);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

std::string preterminal_name(const std::string& t) {
  static const std::map<std::string, std::string> known = {
      {"+", "PLUS"}, {"*", "TIMES"}, {"(", "LPAREN"}, {")", "RPAREN"},
      {"[", "LBRACK"}, {"]", "RBRACK"}};
  if (auto it = known.find(t); it != known.end()) return it->second;
  std::string up;
  for (char c : t) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return up;
}

}  // namespace

bool Cfg::is_terminal(std::string_view s) const { return index_of(terminals, s) >= 0; }
bool Cfg::is_nonterminal(std::string_view s) const { return index_of(nonterminals, s) >= 0; }
int Cfg::terminal_index(std::string_view s) const { return index_of(terminals, s); }

void Cfg::validate() const {
  std::set<std::string> seen;
  for (const auto& s : terminals) {
    if (!seen.insert(s).second) throw Error(ErrorKind::GrammarInvalid, "duplicate symbol: " + s);
  }
  for (const auto& s : nonterminals) {
    if (!seen.insert(s).second) throw Error(ErrorKind::GrammarInvalid, "duplicate symbol: " + s);
  }
  if (!is_nonterminal(start)) throw Error(ErrorKind::GrammarInvalid, "start is not a nonterminal: " + start);
  for (const auto& p : productions) {
    if (!is_nonterminal(p.lhs)) throw Error(ErrorKind::GrammarInvalid, "rule lhs is not a nonterminal: " + p.lhs);
    if (p.rhs.empty()) throw Error(ErrorKind::GrammarInvalid, "empty production for " + p.lhs);
    for (const auto& s : p.rhs) {
      if (!seen.contains(s)) throw Error(ErrorKind::GrammarInvalid, "undeclared symbol: " + s);
    }
  }
}

int CnfGrammar::nonterminal_index(std::string_view name) const {
  const int i = index_of(nonterminals, name);
  if (i < 0) throw Error(ErrorKind::UnknownSymbol, "unknown nonterminal: " + std::string(name));
  return i;
}

int CnfGrammar::terminal_index(std::string_view name) const {
  const int i = index_of(terminals, name);
  if (i < 0) throw Error(ErrorKind::UnknownToken, "unknown token: " + std::string(name));
  return i;
}

CnfGrammar to_cnf(const Cfg& cfg) {
  cfg.validate();

  // Productivity: every nonterminal must derive some terminal string.
  {
    std::set<std::string> productive;
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& p : cfg.productions) {
        if (productive.contains(p.lhs)) continue;
        const bool ok = std::all_of(p.rhs.begin(), p.rhs.end(), [&](const std::string& s) {
          return cfg.is_terminal(s) || productive.contains(s);
        });
        if (ok) {
          productive.insert(p.lhs);
          changed = true;
        }
      }
    }
    for (const auto& nt : cfg.nonterminals) {
      if (!productive.contains(nt)) throw Error(ErrorKind::GrammarInvalid, "unproductive nonterminal: " + nt);
    }
  }

  std::vector<std::string> nts = cfg.nonterminals;
  auto add_nt = [&](std::string name) {
    while (index_of(nts, name) >= 0 || cfg.is_terminal(name)) name += "'";
    nts.push_back(name);
    if (static_cast<int>(nts.size()) > kMaxNonterminals) {
      throw Error(ErrorKind::BudgetExceeded, "CNF conversion exceeds the nonterminal budget");
    }
    return static_cast<int>(nts.size()) - 1;
  };

  // TERM: one preterminal per terminal, every terminal occurrence replaced.
  std::vector<LexRule> lex;
  std::vector<int> pre(cfg.terminals.size());
  for (std::size_t t = 0; t < cfg.terminals.size(); ++t) {
    pre[t] = add_nt(preterminal_name(cfg.terminals[t]));
    lex.push_back({pre[t], static_cast<int>(t)});
  }
  std::vector<std::pair<int, std::vector<int>>> rules;
  for (const auto& p : cfg.productions) {
    std::vector<int> rhs;
    for (const auto& s : p.rhs) {
      const int t = cfg.terminal_index(s);
      rhs.push_back(t >= 0 ? pre[t] : index_of(nts, s));
    }
    rules.emplace_back(index_of(nts, p.lhs), std::move(rhs));
  }

  // BIN: A -> X1 X2 ... Xn becomes A -> X1 A#1, A#1 -> X2 A#2, ...
  std::vector<BinRule> bin;
  std::vector<std::pair<int, int>> unit;
  std::map<std::string, int> bin_counter;
  for (const auto& [lhs, rhs] : rules) {
    if (rhs.size() == 1) {
      unit.emplace_back(lhs, rhs[0]);
      continue;
    }
    int cur = lhs;
    for (std::size_t k = 0; k + 2 < rhs.size(); ++k) {
      const std::string base = nts[lhs];
      const int next = add_nt(base + "#" + std::to_string(++bin_counter[base]));
      bin.push_back({cur, rhs[k], next});
      cur = next;
    }
    bin.push_back({cur, rhs[rhs.size() - 2], rhs.back()});
  }

  // UNIT: A =>* B through unit rules gives A all non-unit rules of B.
  const int n = static_cast<int>(nts.size());
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (int a = 0; a < n; ++a) reach[a][a] = true;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [a, b] : unit) {
      for (int x = 0; x < n; ++x) {
        if (reach[x][a] && !reach[x][b]) {
          reach[x][b] = true;
          changed = true;
        }
      }
    }
  }

  CnfGrammar g;
  g.terminals = cfg.terminals;
  g.nonterminals = nts;
  g.start = index_of(nts, cfg.start);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (!reach[a][b]) continue;
      for (const auto& r : lex) {
        if (r.lhs != b) continue;
        LexRule nr{a, r.terminal};
        if (std::find(g.lex_rules.begin(), g.lex_rules.end(), nr) == g.lex_rules.end()) g.lex_rules.push_back(nr);
      }
      for (const auto& r : bin) {
        if (r.lhs != b) continue;
        BinRule nr{a, r.left, r.right};
        if (std::find(g.bin_rules.begin(), g.bin_rules.end(), nr) == g.bin_rules.end()) g.bin_rules.push_back(nr);
      }
    }
  }
  return g;
}

std::string to_text(const Cfg& cfg) {
  std::ostringstream os;
  os << "start " << cfg.start << "\nterminals";
  for (const auto& t : cfg.terminals) os << ' ' << t;
  os << "\nnonterminals";
  for (const auto& t : cfg.nonterminals) os << ' ' << t;
  os << '\n';
  for (const auto& p : cfg.productions) {
    os << p.lhs << " ->";
    for (const auto& s : p.rhs) os << ' ' << s;
    os << '\n';
  }
  return os.str();
}

std::string to_text(const CnfGrammar& g) {
  std::ostringstream os;
  os << "start " << g.nonterminals[g.start] << "\nterminals";
  for (const auto& t : g.terminals) os << ' ' << t;
  os << "\nnonterminals";
  for (const auto& t : g.nonterminals) os << ' ' << t;
  os << '\n';
  for (const auto& r : g.lex_rules) os << g.nonterminals[r.lhs] << " -> " << g.terminals[r.terminal] << '\n';
  for (const auto& r : g.bin_rules) {
    os << g.nonterminals[r.lhs] << " -> " << g.nonterminals[r.left] << ' ' << g.nonterminals[r.right] << '\n';
  }
  return os.str();
}

Cfg parse_cfg_text(std::string_view text) {
  Cfg cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::vector<std::string> words;
    for (std::string w; ls >> w;) words.push_back(w);
    if (words.empty()) continue;
    if (words[0] == "start") {
      if (words.size() != 2) throw Error(ErrorKind::GrammarInvalid, "line " + std::to_string(lineno) + ": start takes one symbol");
      cfg.start = words[1];
    } else if (words[0] == "terminals") {
      cfg.terminals.insert(cfg.terminals.end(), words.begin() + 1, words.end());
    } else if (words[0] == "nonterminals") {
      cfg.nonterminals.insert(cfg.nonterminals.end(), words.begin() + 1, words.end());
    } else if (words.size() >= 3 && words[1] == "->") {
      cfg.productions.push_back({words[0], {words.begin() + 2, words.end()}});
    } else {
      throw Error(ErrorKind::GrammarInvalid, "line " + std::to_string(lineno) + ": cannot parse '" + line + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<TokenId> LanguageSpec::sample_alphabet() const {
  std::vector<TokenId> out(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) out[i] = static_cast<TokenId>(i);
  if (name == "a-star") out.push_back(reserved_token());
  return out;
}

std::string LanguageSpec::token_name(TokenId id) const {
  if (id >= 0 && id < vocab_size()) return vocab[id];
  if (id == reserved_token()) return kReservedTokenName;
  throw Error(ErrorKind::UnknownToken, "token id out of range: " + std::to_string(id));
}

TokenId LanguageSpec::token_id(std::string_view tok) const {
  const int i = index_of(vocab, tok);
  if (i >= 0) return i;
  if (tok == kReservedTokenName) return reserved_token();
  throw Error(ErrorKind::UnknownToken, "unknown token '" + std::string(tok) + "' for language " + name);
}

TokenSeq LanguageSpec::tokenize(std::string_view text) const {
  std::istringstream is{std::string(text)};
  TokenSeq out;
  for (std::string w; is >> w;) out.push_back(token_id(w));
  return out;
}

std::string LanguageSpec::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += token_name(tokens[i]);
  }
  return out;
}

bool LanguageSpec::member(std::span<const TokenId> tokens) const {
  if (kind == LanguageKind::Regular) return regular_checker(tokens);
  if (tokens.empty()) return false;
  for (TokenId t : tokens) {
    if (t < 0 || t >= vocab_size()) return false;
  }
  return recognize(*grammar, tokens);
}

int nesting_depth(const LanguageSpec& lang, std::span<const TokenId> tokens) {
  int depth = 0;
  int best = 0;
  for (TokenId t : tokens) {
    if (t < 0 || t >= lang.vocab_size()) continue;
    if (lang.roles[t] == TokenRole::Open) best = std::max(best, ++depth);
    if (lang.roles[t] == TokenRole::Close) --depth;
  }
  return best;
}

Cfg arithmetic_cfg() {
  Cfg g;
  g.terminals = {"id", "+", "*", "(", ")"};
  g.nonterminals = {"E", "T", "F"};
  g.start = "E";
  g.productions = {
      {"E", {"E", "+", "T"}}, {"E", {"T"}},
      {"T", {"T", "*", "F"}}, {"T", {"F"}},
      {"F", {"(", "E", ")"}}, {"F", {"id"}},
  };
  return g;
}

namespace {

Cfg dyck1_cfg() {
  Cfg g;
  g.terminals = {"(", ")"};
  g.nonterminals = {"S"};
  g.start = "S";
  g.productions = {{"S", {"(", "S", ")"}}, {"S", {"S", "S"}}, {"S", {"(", ")"}}};
  return g;
}

Cfg dyck2_cfg() {
  Cfg g;
  g.terminals = {"(", ")", "[", "]"};
  g.nonterminals = {"S"};
  g.start = "S";
  g.productions = {{"S", {"(", "S", ")"}}, {"S", {"[", "S", "]"}}, {"S", {"S", "S"}},
                   {"S", {"(", ")"}},      {"S", {"[", "]"}}};
  return g;
}

// Subject-verb number agreement with optional relative clauses. The main verb
// agrees with the head noun across any embedded clause; subject relatives
// ("that Vs") agree with the head, object relatives carry their own subject.
Cfg nl_agreement_cfg() {
  Cfg g;
  g.terminals = {"the", "big", "dog", "dogs", "runs", "run", "that"};
  g.nonterminals = {"S", "NPs", "NPp", "NBs", "NBp", "RCs", "RCp", "ORC"};
  g.start = "S";
  g.productions = {
      {"S", {"NPs", "runs"}},
      {"S", {"NPp", "run"}},
      {"NPs", {"the", "NBs"}},
      {"NPs", {"the", "NBs", "RCs"}},
      {"NPp", {"the", "NBp"}},
      {"NPp", {"the", "NBp", "RCp"}},
      {"NBs", {"dog"}},
      {"NBs", {"big", "NBs"}},
      {"NBp", {"dogs"}},
      {"NBp", {"big", "NBp"}},
      {"RCs", {"that", "runs"}},
      {"RCs", {"ORC"}},
      {"RCp", {"that", "run"}},
      {"RCp", {"ORC"}},
      {"ORC", {"that", "NPs", "runs"}},
      {"ORC", {"that", "NPp", "run"}},
  };
  return g;
}

LanguageSpec make_cfg_language(std::string name, Cfg cfg, std::vector<TokenRole> roles, std::vector<int> bracket_kind) {
  LanguageSpec spec;
  spec.name = std::move(name);
  spec.kind = LanguageKind::Cfg;
  spec.vocab = cfg.terminals;
  spec.roles = std::move(roles);
  spec.bracket_kind = std::move(bracket_kind);
  spec.grammar = to_cnf(cfg);
  spec.cfg = std::move(cfg);
  return spec;
}

}  // namespace

const std::vector<std::string>& builtin_language_names() {
  static const std::vector<std::string> names = {"arithmetic", "dyck1", "dyck2", "nl-agreement", "a-star", "a-star-b-star"};
  return names;
}

LanguageSpec builtin_language(std::string_view name) {
  using R = TokenRole;
  if (name == "arithmetic") {
    return make_cfg_language("arithmetic", arithmetic_cfg(), {R::Operand, R::Operator, R::Operator, R::Open, R::Close},
                             {-1, -1, -1, 0, 0});
  }
  if (name == "dyck1") return make_cfg_language("dyck1", dyck1_cfg(), {R::Open, R::Close}, {0, 0});
  if (name == "dyck2") {
    return make_cfg_language("dyck2", dyck2_cfg(), {R::Open, R::Close, R::Open, R::Close}, {0, 0, 1, 1});
  }
  if (name == "nl-agreement") {
    return make_cfg_language("nl-agreement", nl_agreement_cfg(),
                             {R::Filler, R::Filler, R::NounSg, R::NounPl, R::VerbSg, R::VerbPl, R::Filler},
                             {-1, -1, -1, -1, -1, -1, -1});
  }
  if (name == "a-star") {
    LanguageSpec spec;
    spec.name = "a-star";
    spec.kind = LanguageKind::Regular;
    spec.vocab = {"a"};
    spec.roles = {R::Operand};
    spec.bracket_kind = {-1};
    spec.regular_checker = [](std::span<const TokenId> t) {
      return !t.empty() && std::all_of(t.begin(), t.end(), [](TokenId x) { return x == 0; });
    };
    return spec;
  }
  if (name == "a-star-b-star") {
    LanguageSpec spec;
    spec.name = "a-star-b-star";
    spec.kind = LanguageKind::Regular;
    spec.vocab = {"a", "b"};
    spec.roles = {R::Operand, R::Operand};
    spec.bracket_kind = {-1, -1};
    spec.regular_checker = [](std::span<const TokenId> t) {
      if (t.empty()) return false;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] != 0 && t[i] != 1) return false;
        if (i > 0 && t[i - 1] == 1 && t[i] == 0) return false;
      }
      return true;
    };
    return spec;
  }
  throw Error(ErrorKind::UnknownLanguage, "unknown language: " + std::string(name));
}

}  // namespace gridparse
