#include "gridparse/analysis.hpp"

#include <cmath>
#include <numeric>

#include "gridparse/error.hpp"

namespace gridparse {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::InvalidArgument, "pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> upper_triangle(const Mat<float>& state, const GridShape& g, int channel) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(g.h) * (g.h + 1) / 2);
  for (int i = 0; i < g.h; ++i) {
    for (int j = i; j < g.w; ++j) out.push_back(state(g.index(i, j), channel));
  }
  return out;
}

std::vector<double> upper_triangle(const IndicatorMatrix& m) {
  std::vector<double> out;
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = i; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

std::vector<Sample> legal_samples(const LanguageSpec& lang, int n, int min_len, int max_len, RngStream& rng) {
  if (min_len > max_len || n < 0) throw Error(ErrorKind::InvalidArgument, "legal_samples: bad length range");
  std::vector<Sample> out;
  long attempts = 0;
  while (static_cast<int>(out.size()) < n) {
    if (++attempts > 1000L * (n + 1)) {
      throw Error(ErrorKind::BudgetExceeded, "legal_samples: too few samples in the length range");
    }
    auto s = sample_legal(lang, max_len, rng);
    if (static_cast<int>(s.tokens.size()) >= min_len) out.push_back(std::move(s));
  }
  return out;
}

namespace {

double variance(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

struct Rolled {
  Mat<float> state;
  GridShape grid;
  bool converged;
};

Rolled roll(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens) {
  NcaRunner run(cfg, p, tokens);
  const int cap = cfg.step_cap(run.length());
  bool converged = false;
  for (int t = 0; t < cap && !converged; ++t) converged = run.step() < cfg.epsilon;
  return {run.state(), run.grid(), converged};
}

}  // namespace

VarianceResult grid_variance(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang, RngStream& rng, int n,
                             AnalysisSampling sampling) {
  const auto samples = legal_samples(lang, n, sampling.min_len, sampling.max_len, rng);
  VarianceResult r;
  for (const auto& s : samples) {
    const auto rolled = roll(cfg, p, s.tokens);
    r.channel0 += variance(upper_triangle(rolled.state, rolled.grid, 0));
    if (cfg.channels > 1) r.channel1 += variance(upper_triangle(rolled.state, rolled.grid, 1));
    r.nonconverged += rolled.converged ? 0 : 1;
  }
  r.samples = static_cast<int>(samples.size());
  if (r.samples > 0) {
    r.channel0 /= r.samples;
    r.channel1 /= r.samples;
  }
  return r;
}

PearsonResult aggregate_pearson(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang, RngStream& rng,
                                int n, std::optional<int> nt, AnalysisSampling sampling) {
  if (!lang.grammar) throw Error(ErrorKind::InvalidArgument, "aggregate_pearson needs a context-free language");
  const int target = nt.value_or(lang.grammar->start);
  const auto samples = legal_samples(lang, n, sampling.min_len, sampling.max_len, rng);
  std::vector<double> acts, inds;
  double r_sum = 0;
  int r_count = 0;
  PearsonResult out;
  for (const auto& s : samples) {
    const auto rolled = roll(cfg, p, s.tokens);
    const auto a = upper_triangle(rolled.state, rolled.grid, 0);
    const auto ind = upper_triangle(indicator(cky_chart(*lang.grammar, s.tokens), target));
    if (auto r = pearson(a, ind)) {
      r_sum += *r;
      ++r_count;
    }
    acts.insert(acts.end(), a.begin(), a.end());
    inds.insert(inds.end(), ind.begin(), ind.end());
    out.nonconverged += rolled.converged ? 0 : 1;
  }
  out.pooled = pearson(acts, inds);
  if (r_count > 0) out.per_sample_mean = r_sum / r_count;
  out.samples = static_cast<int>(samples.size());
  out.cells = static_cast<int>(acts.size());
  return out;
}

std::vector<NtCorrelation> per_nt_pearson(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang,
                                          std::span<const TokenId> tokens) {
  if (!lang.grammar) throw Error(ErrorKind::InvalidArgument, "per_nt_pearson needs a context-free language");
  const auto rolled = roll(cfg, p, tokens);
  const auto chart = cky_chart(*lang.grammar, tokens);
  const auto a0 = upper_triangle(rolled.state, rolled.grid, 0);
  const auto a1 = cfg.channels > 1 ? upper_triangle(rolled.state, rolled.grid, 1) : std::vector<double>{};
  std::vector<NtCorrelation> out;
  for (int k = 0; k < lang.grammar->num_nonterminals(); ++k) {
    const auto ind = upper_triangle(indicator(chart, k));
    NtCorrelation c{lang.grammar->nonterminals[static_cast<std::size_t>(k)], pearson(a0, ind), std::nullopt};
    if (!a1.empty()) c.channel1 = pearson(a1, ind);
    out.push_back(std::move(c));
  }
  return out;
}

BaselineResult random_init_baseline(const NcaConfig& cfg, const LanguageSpec& lang, std::uint64_t seed, int inits,
                                    int n, AnalysisSampling sampling) {
  BaselineResult b;
  for (int k = 0; k < inits; ++k) {
    const auto params = init_params(cfg, splitmix64(seed + static_cast<std::uint64_t>(k)));
    RngStream rng(seed, 0xba5e + static_cast<std::uint64_t>(k));
    const auto r = aggregate_pearson(cfg, params, lang, rng, n, std::nullopt, sampling);
    if (r.pooled) b.values.push_back(*r.pooled);
  }
  b.inits = static_cast<int>(b.values.size());
  if (b.inits > 0) {
    b.mean = std::accumulate(b.values.begin(), b.values.end(), 0.0) / b.inits;
  }
  if (b.inits > 1) {
    double acc = 0;
    for (double v : b.values) acc += (v - b.mean) * (v - b.mean);
    b.stddev = std::sqrt(acc / (b.inits - 1));
  }
  return b;
}

CurvePoint score_points(int x, std::span<const Sample> samples, std::span<const Prediction> preds) {
  if (samples.size() != preds.size()) throw Error(ErrorKind::InvalidArgument, "score_points: size mismatch");
  std::vector<bool> labels;
  CurvePoint pt;
  pt.x = x;
  long steps = 0, nonconv = 0;
  for (const auto& pr : preds) {
    labels.push_back(pr.legal);
    steps += pr.steps;
    nonconv += pr.converged ? 0 : 1;
  }
  pt.samples = static_cast<int>(samples.size());
  pt.balanced_accuracy = balanced_accuracy(samples, labels);
  if (pt.samples > 0) {
    pt.mean_steps = static_cast<double>(steps) / pt.samples;
    pt.nonconvergence_rate = static_cast<double>(nonconv) / pt.samples;
  }
  return pt;
}

CurvePoint evaluate_point(const NcaConfig& cfg, const NcaParams& p, int x, std::span<const Sample> samples) {
  std::vector<Prediction> preds;
  for (const auto& s : samples) {
    const auto r = infer(cfg, p, s.tokens);
    preds.push_back({r.predicted_legal, r.steps, r.converged});
  }
  return score_points(x, samples, preds);
}

std::vector<Sample> length_set(const LanguageSpec& lang, int length, std::uint64_t seed, int per_class) {
  RngStream rng(seed, 0x1e46'0000ull + static_cast<std::uint64_t>(length));
  return ood_set(lang, length, rng, per_class);
}

std::vector<Sample> depth_set(const LanguageSpec& lang, DepthMode mode, int depth, std::uint64_t seed, int per_class,
                              int mixed_length) {
  RngStream rng(seed, (mode == DepthMode::Pure ? 0xde9'0000ull : 0xde9'1000ull) + static_cast<std::uint64_t>(depth));
  return mode == DepthMode::Pure ? pure_nested_set(lang, depth, rng, per_class)
                                 : mixed_depth_set(lang, depth, mixed_length, rng, per_class);
}

GeneralizationCurve length_curve(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang,
                                 std::span<const int> lengths, std::uint64_t seed, int per_class) {
  if (lengths.empty()) throw Error(ErrorKind::InvalidArgument, "length_curve: no lengths");
  GeneralizationCurve c{"length", {}};
  for (int len : lengths) c.points.push_back(evaluate_point(cfg, p, len, length_set(lang, len, seed, per_class)));
  return c;
}

const char* to_string(DepthMode m) { return m == DepthMode::Pure ? "pure" : "mixed"; }

GeneralizationCurve depth_curve(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang, DepthMode mode,
                                std::span<const int> depths, std::uint64_t seed, int per_class, int mixed_length) {
  if (depths.empty()) throw Error(ErrorKind::InvalidArgument, "depth_curve: no depths");
  GeneralizationCurve c{std::string("depth-") + to_string(mode), {}};
  for (int d : depths) {
    c.points.push_back(evaluate_point(cfg, p, d, depth_set(lang, mode, d, seed, per_class, mixed_length)));
  }
  return c;
}

}  // namespace gridparse
