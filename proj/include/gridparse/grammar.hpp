#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gridparse {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

struct Production {
  std::string lhs;
  std::vector<std::string> rhs;
};

// A context-free grammar over named symbols. Terminals double as the token
// vocabulary: token id k is terminals[k].
struct Cfg {
  std::vector<std::string> terminals;
  std::vector<std::string> nonterminals;
  std::vector<Production> productions;
  std::string start;

  // Throws Error(GrammarInvalid) when a symbol is undeclared, a name is
  // declared twice, the start is not a nonterminal or a rule is empty.
  void validate() const;
  bool is_terminal(std::string_view s) const;
  bool is_nonterminal(std::string_view s) const;
  int terminal_index(std::string_view s) const;
};

struct LexRule {
  int lhs;
  int terminal;
  bool operator==(const LexRule&) const = default;
};

struct BinRule {
  int lhs;
  int left;
  int right;
  bool operator==(const BinRule&) const = default;
};

// Nonterminal sets are 64-bit masks, so a grammar holds at most 64 of them.
inline constexpr int kMaxNonterminals = 64;

struct CnfGrammar {
  std::vector<std::string> terminals;
  std::vector<std::string> nonterminals;
  std::vector<LexRule> lex_rules;
  std::vector<BinRule> bin_rules;
  int start = 0;

  int num_terminals() const { return static_cast<int>(terminals.size()); }
  int num_nonterminals() const { return static_cast<int>(nonterminals.size()); }
  int num_binary_rules() const { return static_cast<int>(bin_rules.size()); }
  int num_lexical_rules() const { return static_cast<int>(lex_rules.size()); }

  int nonterminal_index(std::string_view name) const;  // throws UnknownSymbol
  int terminal_index(std::string_view name) const;     // throws UnknownToken
  bool operator==(const CnfGrammar&) const = default;
};

// TERM (every terminal gets its own preterminal), BIN, UNIT. No fresh start
// symbol: inputs never derive the empty string.
CnfGrammar to_cnf(const Cfg& cfg);

// Plain-text form, one rule per line:
//   start E
//   terminals id + * ( )
//   nonterminals E T F
//   E -> E + T
// '#' starts a comment. Terminal names must be declared before use.
std::string to_text(const Cfg& cfg);
std::string to_text(const CnfGrammar& g);
Cfg parse_cfg_text(std::string_view text);

enum class LanguageKind { Cfg, Regular };

// What a token does syntactically; drives negative-sample corruptions.
enum class TokenRole { Operand, Operator, Open, Close, NounSg, NounPl, VerbSg, VerbPl, Filler };

struct LanguageSpec {
  std::string name;
  LanguageKind kind = LanguageKind::Cfg;
  std::vector<std::string> vocab;
  std::vector<TokenRole> roles;        // parallel to vocab
  std::vector<int> bracket_kind;       // parallel to vocab; -1 if not a bracket
  std::optional<Cfg> cfg;              // cfg languages only
  std::optional<CnfGrammar> grammar;   // cfg languages only
  std::function<bool(std::span<const TokenId>)> regular_checker;  // regular only

  int vocab_size() const { return static_cast<int>(vocab.size()); }
  // Embedding rows: vocab plus one reserved row.
  int vocab_rows() const { return vocab_size() + 1; }
  // Token id of the reserved row. Only the a-star negatives ever use it.
  TokenId reserved_token() const { return vocab_size(); }
  // Tokens that may appear in generated samples.
  std::vector<TokenId> sample_alphabet() const;
  std::string token_name(TokenId id) const;
  TokenId token_id(std::string_view name) const;  // throws UnknownToken
  TokenSeq tokenize(std::string_view text) const;  // whitespace separated
  std::string detokenize(std::span<const TokenId> tokens) const;
  // Exact membership: CKY for cfg kinds, the checker for regular ones.
  bool member(std::span<const TokenId> tokens) const;
};

inline constexpr const char* kReservedTokenName = "x";

LanguageSpec builtin_language(std::string_view name);
const std::vector<std::string>& builtin_language_names();
Cfg arithmetic_cfg();

// Maximum bracket nesting depth of a token sequence.
int nesting_depth(const LanguageSpec& lang, std::span<const TokenId> tokens);

}  // namespace gridparse
