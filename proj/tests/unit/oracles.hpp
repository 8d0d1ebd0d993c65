#pragma once

// Small independent references shared by the unit tests.

#include <functional>
#include <vector>

#include "gridparse/grammar.hpp"
#include "gridparse/tensor.hpp"

namespace testing {

using gridparse::Mat;
using gridparse::TokenSeq;

// Every string over `vocab` tokens with 1 <= length <= max_len.
inline std::vector<TokenSeq> all_strings(int vocab, int max_len) {
  std::vector<TokenSeq> out;
  for (int len = 1; len <= max_len; ++len) {
    TokenSeq cur(static_cast<std::size_t>(len), 0);
    while (true) {
      out.push_back(cur);
      int k = len - 1;
      while (k >= 0 && ++cur[static_cast<std::size_t>(k)] == vocab) cur[static_cast<std::size_t>(k--)] = 0;
      if (k < 0) break;
    }
  }
  return out;
}

// Balanced brackets with a stack; kind[t] = bracket type, open[t] says opening.
inline bool balanced(const TokenSeq& t, const std::vector<int>& kind, const std::vector<bool>& open) {
  std::vector<int> stack;
  for (auto tok : t) {
    if (open[static_cast<std::size_t>(tok)]) {
      stack.push_back(kind[static_cast<std::size_t>(tok)]);
    } else {
      if (stack.empty() || stack.back() != kind[static_cast<std::size_t>(tok)]) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

// Recursive-descent recognizer for E -> E+T | T, T -> T*F | F, F -> (E) | id
// with ids id=0 + =1 *=2 (=3 )=4. Written without any grammar machinery.
class ArithmeticRd {
 public:
  static bool accepts(const TokenSeq& t) {
    ArithmeticRd p{t};
    return p.expr() && p.at_ == t.size();
  }

 private:
  explicit ArithmeticRd(const TokenSeq& t) : t_(t) {}
  bool eat(int tok) {
    if (at_ < t_.size() && t_[at_] == tok) {
      ++at_;
      return true;
    }
    return false;
  }
  bool expr() {
    if (!term()) return false;
    while (eat(1))
      if (!term()) return false;
    return true;
  }
  bool term() {
    if (!factor()) return false;
    while (eat(2))
      if (!factor()) return false;
    return true;
  }
  bool factor() {
    if (eat(0)) return true;
    return eat(3) && expr() && eat(4);
  }
  const TokenSeq& t_;
  std::size_t at_ = 0;
};

// Central differences of f with respect to every entry of x.
inline Mat<double> numeric_grad(Mat<double>& x, const std::function<double()>& f, double h = 1e-6) {
  Mat<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double up = f();
    x.data()[i] = orig - h;
    const double down = f();
    x.data()[i] = orig;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_error(const Mat<double>& a, const Mat<double>& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

}  // namespace testing
