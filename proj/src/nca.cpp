#include "gridparse/nca.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gridparse/error.hpp"

namespace gridparse {

void NcaConfig::validate() const {
  if (d < 1) throw Error(ErrorKind::InvalidConfig, "nca: d must be >= 1");
  if (channels < 1) throw Error(ErrorKind::InvalidConfig, "nca: channels must be >= 1");
  if (vocab_rows < 2) throw Error(ErrorKind::InvalidConfig, "nca: vocab_rows must be >= 2");
  if (train_len_cap < 1) throw Error(ErrorKind::InvalidConfig, "nca: train_len_cap must be >= 1");
  if (!(epsilon > 0.0)) throw Error(ErrorKind::InvalidConfig, "nca: epsilon must be > 0");
}

long long param_count(const NcaConfig& cfg) {
  const long long d = cfg.d;
  const long long c = cfg.channels;
  const long long h1 = cfg.hidden1();
  const long long h2 = cfg.hidden2();
  return cfg.vocab_rows * d + (d * c + d) + (9 * 3 * d * h1 + h1) + (9 * h1 * h2 + h2) + (h2 * c + c);
}

namespace {

Mat<float> uniform_fan_in(Eigen::Index rows, Eigen::Index cols, double fan_in, RngStream& rng) {
  const double a = 1.0 / std::sqrt(fan_in);
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-a, a));
  return m;
}

}  // namespace

NcaParams init_params(const NcaConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.d;
  const int c = cfg.channels;
  const int h1 = cfg.hidden1();
  const int h2 = cfg.hidden2();
  NcaParams p;
  RngStream rng(seed, 0x1a17);
  p.embed.resize(cfg.vocab_rows, d);
  for (Eigen::Index i = 0; i < p.embed.size(); ++i) p.embed.data()[i] = static_cast<float>(kEmbedScale * rng.normal());
  p.state_w = uniform_fan_in(c, d, c, rng);
  p.state_b = Mat<float>::Zero(1, d);
  p.conv1_w = uniform_fan_in(9 * 3 * d, h1, 9.0 * 3 * d, rng);
  p.conv1_b = Mat<float>::Zero(1, h1);
  p.conv2_w = uniform_fan_in(9 * h1, h2, 9.0 * h1, rng);
  p.conv2_b = Mat<float>::Zero(1, h2);
  p.head_w = uniform_fan_in(h2, c, h2, rng);
  p.head_b = Mat<float>::Zero(1, c);
  return p;
}

template <typename T>
void check_params(const NcaConfig& cfg, const NcaParamsT<T>& p) {
  const int d = cfg.d;
  const int c = cfg.channels;
  const int h1 = cfg.hidden1();
  const int h2 = cfg.hidden2();
  const std::pair<Eigen::Index, Eigen::Index> want[] = {
      {cfg.vocab_rows, d}, {c, d}, {1, d}, {9 * 3 * d, h1}, {1, h1}, {9 * h1, h2}, {1, h2}, {h2, c}, {1, c}};
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i]->rows() != want[i].first || ts[i]->cols() != want[i].second) {
      throw Error(ErrorKind::ShapeMismatch, std::string("nca parameter ") + NcaParamsT<T>::names()[i] +
                                                " has the wrong shape for this config");
    }
    if (!ts[i]->allFinite()) {
      throw Error(ErrorKind::NonFinite, std::string("nca parameter ") + NcaParamsT<T>::names()[i] + " is not finite");
    }
  }
}

template <typename T>
Mat<T> build_input_field(const NcaParamsT<T>& p, std::span<const TokenId> tokens, const Mat<T>& h) {
  const int n = static_cast<int>(tokens.size());
  const GridShape g = square_grid(n);
  const auto d = p.embed.cols();
  if (h.rows() != g.padded_rows() || h.cols() != p.state_w.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "build_input_field: state grid does not match the token count");
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= p.embed.rows()) throw Error(ErrorKind::UnknownToken, "token id outside the embedding table");
  }
  Mat<T> x = Mat<T>::Zero(g.padded_rows(), 3 * d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto r = g.index(i, j);
      x.row(r).segment(0, d) = p.embed.row(tokens[i]);
      x.row(r).segment(d, d) = p.embed.row(tokens[j]);
      x.row(r).segment(2 * d, d) = h.row(r) * p.state_w + p.state_b;
    }
  }
  return x;
}

template <typename T>
Mat<T> reference_step(const NcaParamsT<T>& p, std::span<const TokenId> tokens, const Mat<T>& h) {
  const GridShape g = square_grid(static_cast<int>(tokens.size()));
  const Mat<T> x = build_input_field(p, tokens, h);
  Mat<T> a, b;
  conv3x3_forward<T>(x, g, p.conv1_w, p.conv1_b.data(), a);
  a = a.cwiseMax(T(0));
  conv3x3_forward<T>(a, g, p.conv2_w, p.conv2_b.data(), b);
  b = b.cwiseMax(T(0));
  Mat<T> out = b * p.head_w;
  out.rowwise() += p.head_b.row(0);
  out = out.unaryExpr([](T v) { return sigmoid(v); });
  zero_border(out, g);
  return out;
}

// ---- fast runner ----------------------------------------------------------

NcaRunner::NcaRunner(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens)
    : cfg_(cfg), p_(p), length_(static_cast<int>(tokens.size())), grid_(square_grid(length_)) {
  if (length_ < 1) throw Error(ErrorKind::InvalidArgument, "nca: empty input");
  check_params(cfg, p);
  const int d = cfg.d;
  const int c = cfg.channels;
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_rows) throw Error(ErrorKind::UnknownToken, "token id outside the embedding table");
  }
  Mat<float> x = Mat<float>::Zero(grid_.padded_rows(), 3 * d);
  for (int i = 0; i < length_; ++i) {
    for (int j = 0; j < length_; ++j) {
      const auto r = grid_.index(i, j);
      x.row(r).segment(0, d) = p.embed.row(tokens[i]);
      x.row(r).segment(d, d) = p.embed.row(tokens[j]);
      x.row(r).segment(2 * d, d) = p.state_b.row(0);
    }
  }
  conv3x3_forward<float>(x, grid_, p.conv1_w, p.conv1_b.data(), static_);
  fold_.resize(9 * c, cfg.hidden1());
  for (int tap = 0; tap < 9; ++tap) {
    fold_.middleRows(tap * c, c).noalias() = p.state_w * p.conv1_w.middleRows(tap * 3 * d + 2 * d, d);
  }
  h_ = zero_grid<float>(grid_, c);
  next_ = h_;
  a_ = Mat<float>::Zero(grid_.padded_rows(), cfg.hidden1());
}

void NcaRunner::set_freeze(std::vector<char> mask, Mat<float> held_values) {
  if (mask.size() != static_cast<std::size_t>(length_) * length_ || held_values.rows() != h_.rows() ||
      held_values.cols() != h_.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "freeze mask or held values do not match the grid");
  }
  frozen_ = std::move(mask);
  held_ = std::move(held_values);
}

double NcaRunner::step() {
  const int c = cfg_.channels;
  const int h1 = cfg_.hidden1();
  const Eigen::Index first = grid_.first_cell();
  const Eigen::Index last = grid_.last_cell();
  const Eigen::Index s = grid_.stride();
  // Row chunks small enough that a chunk's patches stay in cache.
  constexpr Eigen::Index kChunk = 512;

  // a = relu(static + conv(h, fold)).
  for (Eigen::Index r0 = first; r0 <= last; r0 += kChunk) {
    const Eigen::Index n = std::min(kChunk, last - r0 + 1);
    patches_.resize(n, 9 * c);
    for (int tap = 0; tap < 9; ++tap) {
      const Eigen::Index off = (tap / 3 - 1) * s + (tap % 3 - 1);
      patches_.middleCols(tap * c, c) = h_.middleRows(r0 + off, n);
    }
    auto a = a_.middleRows(r0, n);
    a.noalias() = patches_ * fold_;
    a += static_.middleRows(r0, n);
    a = a.cwiseMax(0.0f);
  }
  zero_border(a_, grid_);

  // next = sigmoid(relu(conv(a, W2) + b2) * Wh + bh).
  for (Eigen::Index r0 = first; r0 <= last; r0 += kChunk) {
    const Eigen::Index n = std::min(kChunk, last - r0 + 1);
    b_.resize(n, 9 * h1);
    for (int tap = 0; tap < 9; ++tap) {
      const Eigen::Index off = (tap / 3 - 1) * s + (tap % 3 - 1);
      b_.middleCols(tap * h1, h1) = a_.middleRows(r0 + off, n);
    }
    hidden_.noalias() = b_ * p_.conv2_w;
    hidden_.rowwise() += p_.conv2_b.row(0);
    hidden_ = hidden_.cwiseMax(0.0f);
    auto out = next_.middleRows(r0, n);
    out.noalias() = hidden_ * p_.head_w;
    out.rowwise() += p_.head_b.row(0);
    out = out.unaryExpr([](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  }
  zero_border(next_, grid_);
  if (!frozen_.empty()) {
    for (int i = 0; i < length_; ++i) {
      for (int j = 0; j < length_; ++j) {
        if (frozen_[static_cast<std::size_t>(i) * length_ + j]) {
          const auto r = grid_.index(i, j);
          next_.row(r) = held_.row(r);
        }
      }
    }
  }
  double delta;
  if (cfg_.converge_channel0_only) {
    delta = (next_.col(0) - h_.col(0)).cwiseAbs().maxCoeff();
  } else {
    delta = (next_ - h_).cwiseAbs().maxCoeff();
  }
  std::swap(h_, next_);
  return delta;
}

InferenceResult infer(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens,
                      const InferOptions& opts) {
  NcaRunner run(cfg, p, tokens);
  const int cap = opts.step_cap.value_or(cfg.step_cap(run.length()));
  InferenceResult res;
  if (opts.trace) res.trace.push_back(run.state());
  for (int t = 1; t <= cap; ++t) {
    const double delta = run.step();
    res.steps = t;
    if (opts.trace) res.trace.push_back(run.state());
    if (delta < cfg.epsilon) {
      res.converged = true;
      break;
    }
  }
  res.probability = run.readout();
  res.predicted_legal = res.probability > 0.5;
  return res;
}

// ---- training graph -------------------------------------------------------

template <typename T>
NcaVars<T> record_params(ad::Tape<T>& tape, const NcaParamsT<T>& p) {
  NcaVars<T> vars;
  for (const auto* m : p.tensors()) vars.v.push_back(tape.parameter(*m));
  return vars;
}

namespace {

enum ParamSlot { kEmbed, kStateW, kStateB, kConv1W, kConv1B, kConv2W, kConv2B, kHeadW, kHeadB };

template <typename T>
ad::Var readout_loss(ad::Tape<T>& tape, ad::Var h, const Sample& s) {
  const GridShape g = tape.grid(h);
  const ad::Var p = tape.pick(h, g.index(0, g.w - 1), 0);
  return tape.bce(p, s.legal ? T(1) : T(0));
}

template <typename T>
ad::Var head(ad::Tape<T>& tape, const NcaVars<T>& v, ad::Var a) {
  const ad::Var b = tape.relu(tape.conv3x3(a, v.v[kConv2W], v.v[kConv2B]));
  return tape.sigmoid(tape.affine(b, v.v[kHeadW], v.v[kHeadB]));
}

void check_iters(std::span<const Sample> samples, std::span<const int> iters) {
  if (samples.size() != iters.size() || samples.empty()) {
    throw Error(ErrorKind::InvalidArgument, "rollout: need one iteration count per sample");
  }
  for (int t : iters) {
    if (t < 1) throw Error(ErrorKind::InvalidArgument, "rollout: iteration counts must be >= 1");
  }
}

}  // namespace

template <typename T>
ad::Var rollout_loss(ad::Tape<T>& tape, const NcaVars<T>& v, std::span<const Sample> samples,
                     std::span<const int> iters) {
  check_iters(samples, iters);
  const auto d = tape.value(v.v[kEmbed]).cols();
  const ad::Var fold = tape.compose_taps(v.v[kStateW], v.v[kConv1W], 2 * d);
  std::vector<ad::Var> losses;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& toks = samples[k].tokens;
    const GridShape g = square_grid(static_cast<int>(toks.size()));
    const ad::Var pairs = tape.pair_field(v.v[kEmbed], toks);
    const ad::Var bias = tape.broadcast_cells(v.v[kStateB], g);
    const ad::Var parts[] = {pairs, bias};
    const ad::Var z = tape.conv3x3(tape.concat_cols(parts), v.v[kConv1W], v.v[kConv1B]);
    // h_0 = 0, so the state term of the first step vanishes.
    ad::Var h = head(tape, v, tape.relu(z));
    for (int t = 1; t < iters[k]; ++t) {
      const ad::Var a = tape.relu(tape.add(z, tape.conv3x3(h, fold, std::nullopt)));
      h = head(tape, v, a);
    }
    losses.push_back(readout_loss(tape, h, samples[k]));
  }
  return tape.mean(losses);
}

template <typename T>
ad::Var literal_rollout_loss(ad::Tape<T>& tape, const NcaVars<T>& v, std::span<const Sample> samples,
                             std::span<const int> iters) {
  check_iters(samples, iters);
  const auto c = tape.value(v.v[kStateW]).rows();
  std::vector<ad::Var> losses;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& toks = samples[k].tokens;
    const GridShape g = square_grid(static_cast<int>(toks.size()));
    ad::Var h = tape.constant(zero_grid<T>(g, static_cast<int>(c)), g);
    for (int t = 0; t < iters[k]; ++t) {
      const ad::Var pairs = tape.pair_field(v.v[kEmbed], toks);
      const ad::Var proj = tape.affine(h, v.v[kStateW], v.v[kStateB]);
      const ad::Var parts[] = {pairs, proj};
      const ad::Var a = tape.relu(tape.conv3x3(tape.concat_cols(parts), v.v[kConv1W], v.v[kConv1B]));
      h = head(tape, v, a);
    }
    losses.push_back(readout_loss(tape, h, samples[k]));
  }
  return tape.mean(losses);
}

template <typename T>
T loss_and_grads(const NcaParamsT<T>& p, std::span<const Sample> samples, std::span<const int> iters,
                 std::vector<Mat<T>>* grads) {
  ad::Tape<T> tape;
  const auto vars = record_params(tape, p);
  const ad::Var loss = rollout_loss(tape, vars, samples, iters);
  const T value = tape.scalar(loss);
  if (grads != nullptr) {
    tape.backward(loss);
    grads->clear();
    for (const auto& var : vars.v) grads->push_back(tape.grad(var));
  }
  return value;
}

double train_step(const NcaConfig& cfg, NcaParams& p, AdamState<float>& adam, std::span<const Sample> batch,
                  RngStream& rng) {
  std::vector<int> iters;
  iters.reserve(batch.size());
  for (const auto& s : batch) {
    const int len = static_cast<int>(s.tokens.size());
    if (len > cfg.train_len_cap) {
      throw Error(ErrorKind::InvalidArgument, "training sample longer than train_len_cap");
    }
    iters.push_back(static_cast<int>(rng.uniform_int(NcaConfig::kMinIters, cfg.max_iters(len))));
  }
  std::vector<Mat<float>> grads;
  const float loss = loss_and_grads(p, batch, iters, &grads);
  bool finite = std::isfinite(loss);
  for (const auto& g : grads) finite = finite && g.allFinite();
  if (!finite) {
    std::ostringstream os;
    os << "non-finite training loss at Adam step " << adam.step + 1 << " (loss " << loss << ", batch of "
       << batch.size() << ", lengths";
    for (const auto& s : batch) os << ' ' << s.tokens.size();
    os << ')';
    throw Error(ErrorKind::NonFinite, os.str());
  }
  adam_step(p.tensors(), grads, adam);
  return loss;
}

double balanced_accuracy(std::span<const Sample> samples, const std::vector<bool>& predicted) {
  if (samples.size() != predicted.size()) throw Error(ErrorKind::InvalidArgument, "balanced_accuracy: size mismatch");
  long pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].legal) {
      ++pos;
      tp += predicted[i] ? 1 : 0;
    } else {
      ++neg;
      tn += predicted[i] ? 0 : 1;
    }
  }
  if (pos == 0 && neg == 0) return 0.0;
  if (pos == 0) return static_cast<double>(tn) / neg;
  if (neg == 0) return static_cast<double>(tp) / pos;
  return 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
}

std::vector<Sample> in_distribution_set(const LanguageSpec& lang, int max_len, int per_class, RngStream& rng) {
  GenConfig g;
  g.language = lang.name;
  g.max_train_len = max_len;
  g.batch_size = 2 * per_class;
  return train_batch(lang, g, rng);
}

double evaluate_nca(const NcaConfig& cfg, const NcaParams& p, std::span<const Sample> samples) {
  std::vector<bool> pred;
  pred.reserve(samples.size());
  for (const auto& s : samples) pred.push_back(infer(cfg, p, s.tokens).predicted_legal);
  return balanced_accuracy(samples, pred);
}

TrainResult train_run(const NcaConfig& cfg, const TrainOptions& opts, std::uint64_t seed) {
  cfg.validate();
  GenConfig gen = opts.gen;
  gen.seed = seed;
  gen.max_train_len = std::min(gen.max_train_len, cfg.train_len_cap);
  gen.validate();
  const LanguageSpec lang = builtin_language(gen.language);
  if (lang.vocab_rows() != cfg.vocab_rows) {
    throw Error(ErrorKind::InvalidConfig, "nca vocab_rows does not match language " + lang.name);
  }
  if (opts.total_steps < 0) throw Error(ErrorKind::InvalidConfig, "total_steps must be >= 0");

  TrainResult out{init_params(cfg, seed), {}};
  AdamState<float> adam;
  adam.lr = opts.lr;
  RngStream data_rng(seed, 1);
  RngStream iter_rng(seed, 2);
  RngStream eval_rng(seed, 3);
  const auto eval_set = opts.eval_every > 0 || opts.stop_at_accuracy
                            ? in_distribution_set(lang, gen.max_train_len, opts.eval_per_class, eval_rng)
                            : std::vector<Sample>{};
  auto run_eval = [&](int step) {
    const double acc = evaluate_nca(cfg, out.params, eval_set);
    out.log.evals.push_back({step, acc});
    out.log.final_accuracy = acc;
    return acc;
  };
  for (int step = 1; step <= opts.total_steps; ++step) {
    const auto batch = train_batch(lang, gen, data_rng);
    out.log.losses.push_back(train_step(cfg, out.params, adam, batch, iter_rng));
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

// ---- checkpoints ------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& s, const char* key) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::CorruptCheckpoint, std::string("bad integer for ") + key);
  }
  return v;
}

}  // namespace

Archive nca_to_archive(const NcaConfig& cfg, const NcaParams& p,
                       const std::vector<std::pair<std::string, std::string>>& meta) {
  check_params(cfg, p);
  Archive a;
  a.kind = "nca";
  a.meta = {{"d", std::to_string(cfg.d)},
            {"channels", std::to_string(cfg.channels)},
            {"vocab_rows", std::to_string(cfg.vocab_rows)},
            {"train_len_cap", std::to_string(cfg.train_len_cap)},
            {"epsilon", fmt_double(cfg.epsilon)},
            {"converge_channel0_only", cfg.converge_channel0_only ? "1" : "0"}};
  a.meta.insert(a.meta.end(), meta.begin(), meta.end());
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) a.arrays.emplace_back(NcaParams::names()[i], *ts[i]);
  return a;
}

void nca_from_archive(const Archive& a, NcaConfig& cfg, NcaParams& p) {
  if (a.kind != "nca") throw Error(ErrorKind::CorruptCheckpoint, "checkpoint kind is " + a.kind + ", expected nca");
  NcaConfig c;
  c.d = parse_int(a.meta_value("d"), "d");
  c.channels = parse_int(a.meta_value("channels"), "channels");
  c.vocab_rows = parse_int(a.meta_value("vocab_rows"), "vocab_rows");
  c.train_len_cap = parse_int(a.meta_value("train_len_cap"), "train_len_cap");
  c.epsilon = std::stod(a.meta_value("epsilon"));
  c.converge_channel0_only = a.meta_value("converge_channel0_only") == "1";
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::CorruptCheckpoint, e.what());
  }
  NcaParams q;
  auto ts = q.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) *ts[i] = a.array(NcaParams::names()[i]);
  try {
    check_params(c, q);
  } catch (const Error& e) {
    throw Error(ErrorKind::CorruptCheckpoint, e.what());
  }
  cfg = c;
  p = std::move(q);
}

void save_nca(const std::string& path, const NcaConfig& cfg, const NcaParams& p,
              const std::vector<std::pair<std::string, std::string>>& meta) {
  write_archive(path, nca_to_archive(cfg, p, meta));
}

void load_nca(const std::string& path, NcaConfig& cfg, NcaParams& p) { nca_from_archive(read_archive(path), cfg, p); }

// ---- explicit instantiations ------------------------------------------------

#define GRIDPARSE_NCA_INSTANTIATE(T)                                                                              \
  template void check_params<T>(const NcaConfig&, const NcaParamsT<T>&);                                         \
  template Mat<T> build_input_field<T>(const NcaParamsT<T>&, std::span<const TokenId>, const Mat<T>&);            \
  template Mat<T> reference_step<T>(const NcaParamsT<T>&, std::span<const TokenId>, const Mat<T>&);               \
  template NcaVars<T> record_params<T>(ad::Tape<T>&, const NcaParamsT<T>&);                                      \
  template ad::Var rollout_loss<T>(ad::Tape<T>&, const NcaVars<T>&, std::span<const Sample>, std::span<const int>); \
  template ad::Var literal_rollout_loss<T>(ad::Tape<T>&, const NcaVars<T>&, std::span<const Sample>,             \
                                           std::span<const int>);                                                 \
  template T loss_and_grads<T>(const NcaParamsT<T>&, std::span<const Sample>, std::span<const int>,              \
                               std::vector<Mat<T>>*);

GRIDPARSE_NCA_INSTANTIATE(float)
GRIDPARSE_NCA_INSTANTIATE(double)

#undef GRIDPARSE_NCA_INSTANTIATE

}  // namespace gridparse
