#include "gridparse/transformer.hpp"

#include <charconv>
#include <cmath>

#include "gridparse/error.hpp"
#include "gridparse/nca.hpp"

namespace gridparse {

const char* to_string(PositionalScheme s) {
  switch (s) {
    case PositionalScheme::Sinusoidal:
      return "sinusoidal";
    case PositionalScheme::Learned:
      return "learned";
    case PositionalScheme::Rotary:
      return "rotary";
    case PositionalScheme::None:
      break;
  }
  return "none";
}
const char* to_string(Readout r) { return r == Readout::ClsToken ? "cls" : "mean"; }

PositionalScheme parse_positional_scheme(std::string_view s) {
  if (s == "sinusoidal") return PositionalScheme::Sinusoidal;
  if (s == "learned") return PositionalScheme::Learned;
  if (s == "rotary") return PositionalScheme::Rotary;
  if (s == "none") return PositionalScheme::None;
  throw Error(ErrorKind::InvalidConfig, "unknown positional scheme " + std::string(s));
}

Readout parse_readout(std::string_view s) {
  if (s == "cls") return Readout::ClsToken;
  if (s == "mean") return Readout::MeanPool;
  throw Error(ErrorKind::InvalidConfig, "unknown readout " + std::string(s));
}

void TfConfig::validate() const {
  if (layers < 1) throw Error(ErrorKind::InvalidConfig, "transformer: layers must be >= 1");
  if (d < 1) throw Error(ErrorKind::InvalidConfig, "transformer: d must be >= 1");
  if (heads < 0 || d % num_heads() != 0) throw Error(ErrorKind::InvalidConfig, "transformer: d must divide into heads");
  if (vocab_rows < 2) throw Error(ErrorKind::InvalidConfig, "transformer: vocab_rows must be >= 2");
  if (positional == PositionalScheme::Learned && max_positions < 2) {
    throw Error(ErrorKind::InvalidConfig, "transformer: max_positions must be >= 2");
  }
}

const std::vector<std::string>& TfLayer::names() {
  static const std::vector<std::string> kNames = {"ln1.gain", "ln1.shift", "wq", "bq", "wk",       "bk",
                                                  "wv",       "bv",        "wo", "bo", "ln2.gain", "ln2.shift",
                                                  "ffn1.w",   "ffn1.b",    "ffn2.w", "ffn2.b"};
  return kNames;
}

std::vector<Mat<float>*> TfParams::tensors() {
  std::vector<Mat<float>*> out{&embed, &cls};
  if (pos.size() > 0) out.push_back(&pos);
  for (auto& l : layers) {
    for (auto* m : l.tensors()) out.push_back(m);
  }
  out.insert(out.end(), {&lnf_g, &lnf_b, &head_w, &head_b});
  return out;
}

std::vector<const Mat<float>*> TfParams::tensors() const {
  auto* self = const_cast<TfParams*>(this);
  const auto t = self->tensors();
  return {t.begin(), t.end()};
}

std::vector<std::string> TfParams::names() const {
  std::vector<std::string> out{"embed", "cls"};
  if (pos.size() > 0) out.push_back("pos");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& n : TfLayer::names()) out.push_back("layer" + std::to_string(i) + "." + n);
  }
  out.insert(out.end(), {"final_ln.gain", "final_ln.shift", "head.weight", "head.bias"});
  return out;
}

long long TfParams::scalar_count() const {
  long long n = 0;
  for (const auto* m : tensors()) n += m->size();
  return n;
}

namespace {

Mat<float> uniform_fan_in(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(rows));
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-a, a));
  return m;
}

}  // namespace

TfParams init_tf(const TfConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RngStream rng(seed, 0x7f0);
  const int d = cfg.d;
  TfParams p;
  p.embed.resize(cfg.vocab_rows, d);
  for (Eigen::Index i = 0; i < p.embed.size(); ++i) p.embed.data()[i] = static_cast<float>(rng.normal());
  p.cls.resize(1, d);
  for (Eigen::Index i = 0; i < p.cls.size(); ++i) p.cls.data()[i] = static_cast<float>(rng.normal());
  if (cfg.positional == PositionalScheme::Learned) {
    RngStream pos_rng(seed, 0x7f1);
    p.pos.resize(cfg.max_positions, d);
    for (Eigen::Index i = 0; i < p.pos.size(); ++i) p.pos.data()[i] = static_cast<float>(pos_rng.normal());
  }
  for (int l = 0; l < cfg.layers; ++l) {
    TfLayer L;
    L.ln1_g = Mat<float>::Ones(1, d);
    L.ln1_b = Mat<float>::Zero(1, d);
    L.wq = uniform_fan_in(d, d, rng);
    L.bq = Mat<float>::Zero(1, d);
    L.wk = uniform_fan_in(d, d, rng);
    L.bk = Mat<float>::Zero(1, d);
    L.wv = uniform_fan_in(d, d, rng);
    L.bv = Mat<float>::Zero(1, d);
    L.wo = uniform_fan_in(d, d, rng);
    L.bo = Mat<float>::Zero(1, d);
    L.ln2_g = Mat<float>::Ones(1, d);
    L.ln2_b = Mat<float>::Zero(1, d);
    L.w1 = uniform_fan_in(d, cfg.ffn(), rng);
    L.b1 = Mat<float>::Zero(1, cfg.ffn());
    L.w2 = uniform_fan_in(cfg.ffn(), d, rng);
    L.b2 = Mat<float>::Zero(1, d);
    p.layers.push_back(std::move(L));
  }
  p.lnf_g = Mat<float>::Ones(1, d);
  p.lnf_b = Mat<float>::Zero(1, d);
  p.head_w = uniform_fan_in(d, 1, rng);
  p.head_b = Mat<float>::Zero(1, 1);
  return p;
}

Mat<float> sinusoidal_positions(int n, int d) {
  Mat<float> pe(n, d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      pe(pos, i) = static_cast<float>(i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
    }
  }
  return pe;
}

RotaryTables rotary_tables(int n, int d, int heads) {
  const int hd = d / heads;
  if (hd % 2 != 0) throw Error(ErrorKind::InvalidConfig, "rotary positions need an even head width");
  RotaryTables t{Mat<float>(n, d), Mat<float>(n, d), Mat<float>::Zero(d, d)};
  for (int c = 0; c < d; c += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(c % hd) / hd);
    for (int pos = 0; pos < n; ++pos) {
      const double a = pos * freq;
      t.cos(pos, c) = t.cos(pos, c + 1) = static_cast<float>(std::cos(a));
      t.sin(pos, c) = t.sin(pos, c + 1) = static_cast<float>(std::sin(a));
    }
    // (x0, x1) -> (-x1, x0)
    t.r(c + 1, c) = -1.0f;
    t.r(c, c + 1) = 1.0f;
  }
  return t;
}

namespace {

void check_shapes(const TfConfig& cfg, const TfParams& p) {
  cfg.validate();
  if (p.embed.rows() != cfg.vocab_rows || p.embed.cols() != cfg.d || static_cast<int>(p.layers.size()) != cfg.layers ||
      p.cls.cols() != cfg.d || p.head_w.rows() != cfg.d ||
      (cfg.positional == PositionalScheme::Learned) != (p.pos.size() > 0) ||
      (p.pos.size() > 0 && (p.pos.rows() != cfg.max_positions || p.pos.cols() != cfg.d))) {
    throw Error(ErrorKind::ShapeMismatch, "transformer parameters do not match the config");
  }
}

// Records the forward pass; returns the 1 x 1 logit.
ad::Var record_forward(ad::Tape<float>& tape, const TfConfig& cfg, const std::vector<ad::Var>& v,
                       std::span<const TokenId> tokens, std::vector<std::vector<Mat<float>>>* attention) {
  if (tokens.empty()) throw Error(ErrorKind::InvalidArgument, "transformer: empty input");
  std::vector<int> idx(tokens.begin(), tokens.end());
  ad::Var x = tape.gather_rows(v[0], idx);
  if (cfg.readout == Readout::ClsToken) x = tape.concat_rows(v[1], x);
  const auto n = tape.value(x).rows();
  std::size_t at = 2;
  if (cfg.positional == PositionalScheme::Sinusoidal) {
    x = tape.add(x, tape.constant(sinusoidal_positions(static_cast<int>(n), cfg.d)));
  } else if (cfg.positional == PositionalScheme::Learned) {
    if (n > cfg.max_positions) {
      throw Error(ErrorKind::InvalidArgument, "transformer: input longer than the learned position table");
    }
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = static_cast<int>(r);
    x = tape.add(x, tape.gather_rows(v[2], rows));
    at = 3;
  }
  std::optional<RotaryTables> rot;
  if (cfg.positional == PositionalScheme::Rotary) rot = rotary_tables(static_cast<int>(n), cfg.d, cfg.num_heads());
  auto rotate = [&](ad::Var m) {
    if (!rot) return m;
    return tape.add(tape.scale_by(m, rot->cos), tape.scale_by(tape.matmul(m, tape.constant(rot->r)), rot->sin));
  };
  const std::size_t per_layer = TfLayer::names().size();
  for (int l = 0; l < cfg.layers; ++l, at += per_layer) {
    auto w = [&](std::size_t k) { return v[at + k]; };
    const ad::Var h = tape.layer_norm(x, w(0), w(1));
    const ad::Var q = rotate(tape.add_row(tape.matmul(h, w(2)), w(3)));
    const ad::Var k = rotate(tape.add_row(tape.matmul(h, w(4)), w(5)));
    const ad::Var val = tape.add_row(tape.matmul(h, w(6)), w(7));
    std::vector<Mat<float>> maps;
    const ad::Var a = tape.attention(q, k, val, cfg.num_heads(), attention ? &maps : nullptr);
    if (attention) attention->push_back(std::move(maps));
    x = tape.add(x, tape.add_row(tape.matmul(a, w(8)), w(9)));
    const ad::Var h2 = tape.layer_norm(x, w(10), w(11));
    const ad::Var f = tape.relu(tape.add_row(tape.matmul(h2, w(12)), w(13)));
    x = tape.add(x, tape.add_row(tape.matmul(f, w(14)), w(15)));
  }
  x = tape.layer_norm(x, v[at], v[at + 1]);
  ad::Var r;
  if (cfg.readout == Readout::ClsToken) {
    r = tape.row(x, 0);
  } else {
    r = tape.matmul(tape.constant(Mat<float>::Constant(1, n, 1.0f / static_cast<float>(n))), x);
  }
  return tape.add_row(tape.matmul(r, v[at + 2]), v[at + 3]);
}

std::vector<ad::Var> record_params(ad::Tape<float>& tape, const TfParams& p) {
  std::vector<ad::Var> v;
  for (const auto* m : p.tensors()) v.push_back(tape.parameter(*m));
  return v;
}

}  // namespace

TfForward tf_forward(const TfConfig& cfg, const TfParams& p, std::span<const TokenId> tokens, bool keep_attention) {
  check_shapes(cfg, p);
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_rows) throw Error(ErrorKind::UnknownToken, "token id outside the embedding table");
  }
  ad::Tape<float> tape;
  const auto v = record_params(tape, p);
  TfForward out;
  const ad::Var logit = record_forward(tape, cfg, v, tokens, keep_attention ? &out.attention : nullptr);
  out.logit = tape.scalar(logit);
  return out;
}

bool tf_predict(const TfConfig& cfg, const TfParams& p, std::span<const TokenId> tokens) {
  return tf_forward(cfg, p, tokens).logit > 0.0;
}

double tf_loss_and_grads(const TfConfig& cfg, const TfParams& p, std::span<const Sample> batch,
                         std::vector<Mat<float>>* grads) {
  check_shapes(cfg, p);
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "transformer: empty batch");
  ad::Tape<float> tape;
  const auto v = record_params(tape, p);
  std::vector<ad::Var> losses;
  for (const auto& s : batch) {
    const ad::Var logit = record_forward(tape, cfg, v, s.tokens, nullptr);
    losses.push_back(tape.bce_with_logits(logit, s.legal ? 1.0f : 0.0f));
  }
  const ad::Var loss = tape.mean(losses);
  if (grads != nullptr) {
    tape.backward(loss);
    grads->clear();
    for (const auto& var : v) grads->push_back(tape.grad(var));
  }
  return tape.scalar(loss);
}

double evaluate_tf(const TfConfig& cfg, const TfParams& p, std::span<const Sample> samples) {
  std::vector<bool> pred;
  for (const auto& s : samples) pred.push_back(tf_predict(cfg, p, s.tokens));
  return balanced_accuracy(samples, pred);
}

CurvePoint evaluate_tf_point(const TfConfig& cfg, const TfParams& p, int x, std::span<const Sample> samples) {
  std::vector<Prediction> preds;
  for (const auto& s : samples) preds.push_back({tf_predict(cfg, p, s.tokens), 0, true});
  return score_points(x, samples, preds);
}

TfTrainResult train_tf(const TfConfig& cfg, const TfTrainOptions& opts, std::uint64_t seed) {
  cfg.validate();
  GenConfig gen = opts.gen;
  gen.seed = seed;
  gen.validate();
  const LanguageSpec lang = builtin_language(gen.language);
  if (lang.vocab_rows() != cfg.vocab_rows) {
    throw Error(ErrorKind::InvalidConfig, "transformer vocab_rows does not match language " + lang.name);
  }
  TfTrainResult out{init_tf(cfg, seed), {}};
  AdamState<float> adam;
  adam.lr = opts.lr;
  RngStream data_rng(seed, 11);
  RngStream eval_rng(seed, 13);
  const auto eval_set = opts.eval_every > 0 || opts.stop_at_accuracy
                            ? in_distribution_set(lang, gen.max_train_len, opts.eval_per_class, eval_rng)
                            : std::vector<Sample>{};
  auto run_eval = [&](int step) {
    const double acc = evaluate_tf(cfg, out.params, eval_set);
    out.log.evals.push_back({step, acc});
    out.log.final_accuracy = acc;
    return acc;
  };
  std::vector<Mat<float>> grads;
  for (int step = 1; step <= opts.total_steps; ++step) {
    const auto batch = train_batch(lang, gen, data_rng);
    const double loss = tf_loss_and_grads(cfg, out.params, batch, &grads);
    bool finite = std::isfinite(loss);
    for (const auto& g : grads) finite = finite && g.allFinite();
    if (!finite) {
      throw Error(ErrorKind::NonFinite, "non-finite transformer loss at step " + std::to_string(step));
    }
    adam_step(out.params.tensors(), grads, adam);
    out.log.losses.push_back(loss);
    out.log.steps_run = step;
    if (opts.eval_every > 0 && step % opts.eval_every == 0) {
      const double acc = run_eval(step);
      if (opts.stop_at_accuracy && acc >= *opts.stop_at_accuracy) break;
    }
  }
  if (!eval_set.empty() && (out.log.evals.empty() || out.log.evals.back().step != out.log.steps_run)) {
    run_eval(out.log.steps_run);
  }
  return out;
}

double locality_score(const Mat<float>& w) {
  const auto n = w.rows();
  if (n == 0 || w.cols() != n) throw Error(ErrorKind::ShapeMismatch, "locality_score: need a square matrix");
  double total = 0;
  for (Eigen::Index q = 0; q < n; ++q) {
    double s = 0;
    for (Eigen::Index k = 0; k < n; ++k) s += w(q, k) * std::abs(static_cast<double>(q - k));
    total += s / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

LocalityReport locality(const TfForward& f) {
  LocalityReport r;
  int count = 0;
  for (const auto& layer : f.attention) {
    std::vector<double> heads;
    for (const auto& m : layer) {
      heads.push_back(locality_score(m));
      r.aggregate += heads.back();
      ++count;
    }
    r.per_head.push_back(std::move(heads));
  }
  if (count > 0) r.aggregate /= count;
  return r;
}

namespace {

int parse_int(const std::string& s, const char* key) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::CorruptCheckpoint, std::string("bad integer for ") + key);
  }
  return v;
}

}  // namespace

Archive tf_to_archive(const TfConfig& cfg, const TfParams& p,
                      const std::vector<std::pair<std::string, std::string>>& meta) {
  check_shapes(cfg, p);
  Archive a;
  a.kind = "transformer";
  a.meta = {{"layers", std::to_string(cfg.layers)},       {"d", std::to_string(cfg.d)},
            {"heads", std::to_string(cfg.num_heads())},    {"vocab_rows", std::to_string(cfg.vocab_rows)},
            {"positional", to_string(cfg.positional)},     {"readout", to_string(cfg.readout)},
            {"max_positions", std::to_string(cfg.max_positions)}};
  a.meta.insert(a.meta.end(), meta.begin(), meta.end());
  const auto names = p.names();
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) a.arrays.emplace_back(names[i], *ts[i]);
  return a;
}

void tf_from_archive(const Archive& a, TfConfig& cfg, TfParams& p) {
  if (a.kind != "transformer") {
    throw Error(ErrorKind::CorruptCheckpoint, "checkpoint kind is " + a.kind + ", expected transformer");
  }
  TfConfig c;
  TfParams q;
  try {
    c.layers = parse_int(a.meta_value("layers"), "layers");
    c.d = parse_int(a.meta_value("d"), "d");
    c.heads = parse_int(a.meta_value("heads"), "heads");
    c.vocab_rows = parse_int(a.meta_value("vocab_rows"), "vocab_rows");
    c.positional = parse_positional_scheme(a.meta_value("positional"));
    c.readout = parse_readout(a.meta_value("readout"));
    for (const auto& [key, value] : a.meta)
      if (key == "max_positions") c.max_positions = parse_int(value, "max_positions");
    c.validate();
    q = init_tf(c, 0);
    const auto names = q.names();
    auto ts = q.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto& src = a.array(names[i]);
      if (src.rows() != ts[i]->rows() || src.cols() != ts[i]->cols()) {
        throw Error(ErrorKind::CorruptCheckpoint, "array " + names[i] + " has the wrong shape");
      }
      *ts[i] = src;
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptCheckpoint) throw;
    throw Error(ErrorKind::CorruptCheckpoint, e.what());
  }
  cfg = c;
  p = std::move(q);
}

void save_tf(const std::string& path, const TfConfig& cfg, const TfParams& p,
             const std::vector<std::pair<std::string, std::string>>& meta) {
  write_archive(path, tf_to_archive(cfg, p, meta));
}

void load_tf(const std::string& path, TfConfig& cfg, TfParams& p) { tf_from_archive(read_archive(path), cfg, p); }

}  // namespace gridparse
