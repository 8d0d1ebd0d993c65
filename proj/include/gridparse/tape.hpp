#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gridparse/grammar.hpp"
#include "gridparse/tensor.hpp"

namespace gridparse::ad {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over matrix-valued nodes. Nodes are appended in
// evaluation order; backward() walks them once in reverse and accumulates
// gradients additively, so a value used twice receives both contributions.
template <typename T>
class Tape {
 public:
  using Matrix = Mat<T>;

  Var constant(Matrix value, GridShape grid = {}) { return push(std::move(value), grid, false, nullptr); }
  Var parameter(Matrix value) { return push(std::move(value), {}, true, nullptr); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  GridShape grid(Var v) const { return nodes_[v.id].grid; }
  // Gradient of the last backward() target; zero if v did not influence it.
  Matrix grad(Var v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  std::size_t size() const { return nodes_.size(); }
  T scalar(Var v) const { return nodes_[v.id].value(0, 0); }

  // ---- elementwise -------------------------------------------------------
  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return push(value(a) + value(b), grid(a), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  // Elementwise product with a constant of the same shape.
  Var scale_by(Var a, const Matrix& c) {
    if (c.rows() != value(a).rows() || c.cols() != value(a).cols()) {
      throw Error(ErrorKind::ShapeMismatch, "scale_by: shape mismatch");
    }
    return push(value(a).cwiseProduct(c), grid(a), needs(a), [a, c](Tape& t, const Matrix& g) {
      t.accumulate(a, g.cwiseProduct(c));
    });
  }

  Var relu(Var a) {
    Matrix out = value(a).cwiseMax(T(0));
    return push(std::move(out), grid(a), needs(a), [a](Tape& t, const Matrix& g) {
      t.accumulate(a, (t.value(a).array() > T(0)).select(g, T(0)).matrix());
    });
  }

  Var sigmoid(Var a) {
    Matrix out = value(a).unaryExpr([](T x) { return gridparse::sigmoid(x); });
    const GridShape gs = grid(a);
    if (gs.is_grid()) zero_border(out, gs);
    const Var self{static_cast<int>(nodes_.size())};
    return push(std::move(out), gs, needs(a), [a, self](Tape& t, const Matrix& g) {
      const Matrix& y = t.value(self);
      t.accumulate(a, (g.array() * y.array() * (T(1) - y.array())).matrix());
    });
  }

  // ---- dense -------------------------------------------------------------
  // x * w + b, applied row by row (per cell for grids). b is 1 x out.
  Var affine(Var x, Var w, Var b) {
    if (value(x).cols() != value(w).rows() || value(b).rows() != 1 || value(b).cols() != value(w).cols()) {
      throw Error(ErrorKind::ShapeMismatch, "affine: shape mismatch");
    }
    Matrix out = value(x) * value(w);
    out.rowwise() += value(b).row(0);
    const GridShape gs = grid(x);
    if (gs.is_grid()) zero_border(out, gs);
    return push(std::move(out), gs, needs(x) || needs(w) || needs(b), [x, w, b, gs](Tape& t, const Matrix& g) {
      if (t.needs(x)) t.accumulate(x, g * t.value(w).transpose());
      if (t.needs(w)) t.accumulate(w, t.value(x).transpose() * g);
      if (t.needs(b)) {
        // Border rows of g are zero for grids, so a plain column sum is exact.
        t.accumulate(b, g.colwise().sum());
      }
      (void)gs;
    });
  }

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw Error(ErrorKind::ShapeMismatch, "matmul: inner dimension mismatch");
    return push(value(a) * value(b), {}, needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
      if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
      if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  // Adds the 1 x n row vector b to every row of x.
  Var add_row(Var x, Var b) {
    if (value(b).rows() != 1 || value(b).cols() != value(x).cols()) throw Error(ErrorKind::ShapeMismatch, "add_row");
    Matrix out = value(x);
    out.rowwise() += value(b).row(0);
    return push(std::move(out), {}, needs(x) || needs(b), [x, b](Tape& t, const Matrix& g) {
      if (t.needs(x)) t.accumulate(x, g);
      if (t.needs(b)) t.accumulate(b, g.colwise().sum());
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    Eigen::Index cols = 0;
    const Eigen::Index rows = value(parts[0]).rows();
    bool ng = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw Error(ErrorKind::ShapeMismatch, "concat_cols: row mismatch");
      cols += value(p).cols();
      ng = ng || needs(p);
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    return push(std::move(out), grid(parts[0]), ng, [ps](Tape& t, const Matrix& g) {
      Eigen::Index at2 = 0;
      for (Var p : ps) {
        const auto c = t.value(p).cols();
        if (t.needs(p)) t.accumulate(p, g.middleCols(at2, c));
        at2 += c;
      }
    });
  }

  // Stacks a over b (same column count).
  Var concat_rows(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) throw Error(ErrorKind::ShapeMismatch, "concat_rows: column mismatch");
    Matrix out(value(a).rows() + value(b).rows(), value(a).cols());
    out.topRows(value(a).rows()) = value(a);
    out.bottomRows(value(b).rows()) = value(b);
    const auto ra = value(a).rows();
    const auto rb = value(b).rows();
    return push(std::move(out), {}, needs(a) || needs(b), [a, b, ra, rb](Tape& t, const Matrix& g) {
      if (t.needs(a)) t.accumulate(a, g.topRows(ra));
      if (t.needs(b)) t.accumulate(b, g.bottomRows(rb));
    });
  }

  // ---- grid --------------------------------------------------------------
  Var conv3x3(Var x, Var kernel, std::optional<Var> bias) {
    const GridShape gs = grid(x);
    if (!gs.is_grid()) throw Error(ErrorKind::ShapeMismatch, "conv3x3 expects a grid tensor");
    if (bias && (value(*bias).rows() != 1 || value(*bias).cols() != value(kernel).cols())) {
      throw Error(ErrorKind::ShapeMismatch, "conv3x3: bias shape mismatch");
    }
    Matrix out;
    conv3x3_forward<T>(value(x), gs, value(kernel), bias ? value(*bias).data() : nullptr, out);
    const bool ng = needs(x) || needs(kernel) || (bias && needs(*bias));
    return push(std::move(out), gs, ng, [x, kernel, bias, gs](Tape& t, const Matrix& g) {
      Matrix dx, dk, db;
      if (t.needs(x)) dx = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
      if (t.needs(kernel)) dk = Matrix::Zero(t.value(kernel).rows(), t.value(kernel).cols());
      if (bias && t.needs(*bias)) db = Matrix::Zero(1, t.value(kernel).cols());
      conv3x3_backward<T>(t.value(x), gs, t.value(kernel), g, dx.size() ? &dx : nullptr, dk.size() ? &dk : nullptr,
                          db.size() ? &db : nullptr);
      if (dx.size()) t.accumulate(x, dx);
      if (dk.size()) t.accumulate(kernel, dk);
      if (db.size()) t.accumulate(*bias, db);
    });
  }

  // L x L grid whose cell (i, j) is [table[tokens[i]]; table[tokens[j]]].
  Var pair_field(Var table, std::span<const TokenId> tokens) {
    const int n = static_cast<int>(tokens.size());
    const GridShape gs = square_grid(n);
    const Matrix& e = value(table);
    const auto d = e.cols();
    std::vector<TokenId> toks(tokens.begin(), tokens.end());
    for (TokenId tk : toks) {
      if (tk < 0 || tk >= e.rows()) throw Error(ErrorKind::UnknownToken, "pair_field: token id out of range");
    }
    Matrix out = Matrix::Zero(gs.padded_rows(), 2 * d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const auto r = gs.index(i, j);
        out.row(r).head(d) = e.row(toks[i]);
        out.row(r).tail(d) = e.row(toks[j]);
      }
    }
    return push(std::move(out), gs, needs(table), [table, toks, gs, d](Tape& t, const Matrix& g) {
      Matrix de = Matrix::Zero(t.value(table).rows(), d);
      const int n2 = gs.h;
      for (int i = 0; i < n2; ++i) {
        for (int j = 0; j < n2; ++j) {
          const auto r = gs.index(i, j);
          de.row(toks[i]) += g.row(r).head(d);
          de.row(toks[j]) += g.row(r).tail(d);
        }
      }
      t.accumulate(table, de);
    });
  }

  // Grid with the 1 x k row b at every real cell.
  Var broadcast_cells(Var b, GridShape gs) {
    Matrix out = Matrix::Zero(gs.padded_rows(), value(b).cols());
    for (int i = 0; i < gs.h; ++i) {
      for (int j = 0; j < gs.w; ++j) out.row(gs.index(i, j)) = value(b).row(0);
    }
    return push(std::move(out), gs, needs(b), [b](Tape& t, const Matrix& g) { t.accumulate(b, g.colwise().sum()); });
  }

  // Composes a per-cell projection with one channel block of a 3x3 kernel:
  // result tap t = proj * kernel[t rows offset .. offset + proj.cols()).
  // Convolving the unprojected field with the result equals convolving the
  // projected field with that kernel block.
  Var compose_taps(Var proj, Var kernel, Eigen::Index offset) {
    const Matrix& p = value(proj);
    const Matrix& k = value(kernel);
    const auto cin_total = k.rows() / 9;
    const auto c = p.rows();
    const auto d = p.cols();
    if (k.rows() % 9 != 0 || offset + d > cin_total) throw Error(ErrorKind::ShapeMismatch, "compose_taps");
    Matrix out(9 * c, k.cols());
    for (int tap = 0; tap < 9; ++tap) {
      out.middleRows(tap * c, c).noalias() = p * k.middleRows(tap * cin_total + offset, d);
    }
    return push(std::move(out), {}, needs(proj) || needs(kernel),
                [proj, kernel, offset, c, d, cin_total](Tape& t, const Matrix& g) {
                  Matrix dp = Matrix::Zero(c, d);
                  Matrix dk = Matrix::Zero(t.value(kernel).rows(), t.value(kernel).cols());
                  for (int tap = 0; tap < 9; ++tap) {
                    const auto gk = g.middleRows(tap * c, c);
                    const auto kb = t.value(kernel).middleRows(tap * cin_total + offset, d);
                    dp.noalias() += gk * kb.transpose();
                    dk.middleRows(tap * cin_total + offset, d).noalias() += t.value(proj).transpose() * gk;
                  }
                  if (t.needs(proj)) t.accumulate(proj, dp);
                  if (t.needs(kernel)) t.accumulate(kernel, dk);
                });
  }

  // ---- selection / loss -------------------------------------------------
  Var pick(Var x, Eigen::Index row, Eigen::Index col) {
    Matrix out(1, 1);
    out(0, 0) = value(x)(row, col);
    return push(std::move(out), {}, needs(x), [x, row, col](Tape& t, const Matrix& g) {
      Matrix d = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
      d(row, col) = g(0, 0);
      t.accumulate(x, d);
    });
  }

  Var row(Var x, Eigen::Index r) {
    Matrix out = value(x).row(r);
    return push(std::move(out), {}, needs(x), [x, r](Tape& t, const Matrix& g) {
      Matrix d = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
      d.row(r) = g.row(0);
      t.accumulate(x, d);
    });
  }

  // Binary cross-entropy of a probability against a 0/1 target. p is clamped
  // to [floor, 1 - floor]; the gradient is zero where the clamp is active.
  Var bce(Var p, T target, T floor = T(1e-7)) {
    const T raw = value(p)(0, 0);
    const T pc = std::clamp(raw, floor, T(1) - floor);
    Matrix out(1, 1);
    out(0, 0) = -(target * std::log(pc) + (T(1) - target) * std::log(T(1) - pc));
    const bool clamped = raw != pc;
    return push(std::move(out), {}, needs(p), [p, target, pc, clamped](Tape& t, const Matrix& g) {
      Matrix d(1, 1);
      d(0, 0) = clamped ? T(0) : g(0, 0) * (pc - target) / (pc * (T(1) - pc));
      t.accumulate(p, d);
    });
  }

  // Numerically stable BCE on a logit.
  Var bce_with_logits(Var logit, T target) {
    const T z = value(logit)(0, 0);
    Matrix out(1, 1);
    out(0, 0) = std::max(z, T(0)) - z * target + std::log1p(std::exp(-std::abs(z)));
    return push(std::move(out), {}, needs(logit), [logit, target, z](Tape& t, const Matrix& g) {
      Matrix d(1, 1);
      d(0, 0) = g(0, 0) * (gridparse::sigmoid(z) - target);
      t.accumulate(logit, d);
    });
  }

  Var mean(std::span<const Var> scalars) {
    Matrix out = Matrix::Zero(1, 1);
    bool ng = false;
    for (Var s : scalars) {
      out(0, 0) += value(s)(0, 0);
      ng = ng || needs(s);
    }
    const T inv = T(1) / static_cast<T>(scalars.size());
    out(0, 0) *= inv;
    std::vector<Var> ss(scalars.begin(), scalars.end());
    return push(std::move(out), {}, ng, [ss, inv](Tape& t, const Matrix& g) {
      Matrix d(1, 1);
      d(0, 0) = g(0, 0) * inv;
      for (Var s : ss) {
        if (t.needs(s)) t.accumulate(s, d);
      }
    });
  }

  // ---- sequence ops (transformer) ---------------------------------------
  Var gather_rows(Var table, std::span<const int> idx) {
    const Matrix& e = value(table);
    Matrix out(static_cast<Eigen::Index>(idx.size()), e.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= e.rows()) throw Error(ErrorKind::UnknownToken, "gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(r)) = e.row(idx[r]);
    }
    std::vector<int> ix(idx.begin(), idx.end());
    return push(std::move(out), {}, needs(table), [table, ix](Tape& t, const Matrix& g) {
      Matrix d = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
      for (std::size_t r = 0; r < ix.size(); ++r) d.row(ix[r]) += g.row(static_cast<Eigen::Index>(r));
      t.accumulate(table, d);
    });
  }

  // Row-wise layer normalization with learned gain and shift (1 x n each).
  Var layer_norm(Var x, Var gain, Var shift, T eps = T(1e-5)) {
    const Matrix& xv = value(x);
    const auto n = xv.cols();
    Matrix xhat(xv.rows(), n);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const T mu = xv.row(r).mean();
      const T var = (xv.row(r).array() - mu).square().mean();
      inv_std(r) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = xhat.array().rowwise() * value(gain).row(0).array();
    out.rowwise() += value(shift).row(0);
    return push(std::move(out), {}, needs(x) || needs(gain) || needs(shift),
                [x, gain, shift, xhat, inv_std, n](Tape& t, const Matrix& g) {
                  if (t.needs(gain)) t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
                  if (t.needs(shift)) t.accumulate(shift, g.colwise().sum());
                  if (t.needs(x)) {
                    Matrix gx = g.array().rowwise() * t.value(gain).row(0).array();
                    Matrix dx(gx.rows(), n);
                    for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                      const T m1 = gx.row(r).mean();
                      const T m2 = (gx.row(r).array() * xhat.row(r).array()).mean();
                      dx.row(r) = (gx.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                    }
                    t.accumulate(x, dx);
                  }
                });
  }

  // Multi-head scaled dot-product self-attention over rows. q, k, v are
  // n x d with heads splitting columns evenly. Per-head n x n weights are
  // written to *weights_out when given.
  Var attention(Var q, Var k, Var v, int heads, std::vector<Matrix>* weights_out = nullptr) {
    const Matrix& qv = value(q);
    const auto n = qv.rows();
    const auto d = qv.cols();
    if (d % heads != 0) throw Error(ErrorKind::ShapeMismatch, "attention: width not divisible by heads");
    const auto hd = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<Matrix> probs(heads);
    Matrix out(n, d);
    for (int h = 0; h < heads; ++h) {
      Matrix s = (qv.middleCols(h * hd, hd) * value(k).middleCols(h * hd, hd).transpose()) * scale;
      for (Eigen::Index r = 0; r < n; ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.middleCols(h * hd, hd).noalias() = s * value(v).middleCols(h * hd, hd);
      probs[h] = std::move(s);
    }
    if (weights_out != nullptr) *weights_out = probs;
    return push(std::move(out), {}, needs(q) || needs(k) || needs(v),
                [q, k, v, heads, hd, scale, probs](Tape& t, const Matrix& g) {
                  const auto n2 = t.value(q).rows();
                  const auto d2 = t.value(q).cols();
                  Matrix dq = Matrix::Zero(n2, d2), dk = Matrix::Zero(n2, d2), dv = Matrix::Zero(n2, d2);
                  for (int h = 0; h < heads; ++h) {
                    const Matrix& p = probs[h];
                    const auto gh = g.middleCols(h * hd, hd);
                    dv.middleCols(h * hd, hd).noalias() = p.transpose() * gh;
                    Matrix dp = gh * t.value(v).middleCols(h * hd, hd).transpose();
                    Matrix ds(n2, n2);
                    for (Eigen::Index r = 0; r < n2; ++r) {
                      const T dot = (dp.row(r).array() * p.row(r).array()).sum();
                      ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
                    }
                    ds *= scale;
                    dq.middleCols(h * hd, hd).noalias() = ds * t.value(k).middleCols(h * hd, hd);
                    dk.middleCols(h * hd, hd).noalias() = ds.transpose() * t.value(q).middleCols(h * hd, hd);
                  }
                  if (t.needs(q)) t.accumulate(q, dq);
                  if (t.needs(k)) t.accumulate(k, dk);
                  if (t.needs(v)) t.accumulate(v, dv);
                });
  }

  // ---- reverse pass -----------------------------------------------------
  void backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw Error(ErrorKind::ShapeMismatch, "backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.back || n.grad.size() == 0) continue;
      if (n.grid.is_grid()) zero_border(n.grad, n.grid);
      n.back(*this, n.grad);
    }
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

 private:
  using Backward = std::function<void(Tape&, const Matrix&)>;
  struct Node {
    Matrix value;
    Matrix grad;
    GridShape grid;
    bool needs_grad = false;
    Backward back;
  };

  Var push(Matrix value, GridShape grid, bool needs_grad, Backward back) {
    Node n;
    n.value = std::move(value);
    n.grid = grid;
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    auto& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": shape mismatch");
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace gridparse::ad
