#include "gridparse/interventions.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "gridparse/error.hpp"

namespace gridparse {

void InterventionSpec::validate() const {
  if (kind == InterventionKind::Noise && !(sigma > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "noise intervention needs sigma > 0");
  }
  if ((kind == InterventionKind::Noise || kind == InterventionKind::Reset || kind == InterventionKind::ShuffleOnce ||
       (kind == InterventionKind::Freeze && hold_at_onset)) &&
      at_step < 1) {
    throw Error(ErrorKind::InvalidConfig, "intervention step must be >= 1");
  }
  if (kind == InterventionKind::Freeze && mask == FreezeMask::RandomFraction && !(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "freeze fraction must lie in [0, 1]");
  }
}

std::string InterventionSpec::label() const {
  char buf[96];
  switch (kind) {
    case InterventionKind::None:
      return "none";
    case InterventionKind::Noise:
      std::snprintf(buf, sizeof buf, "noise sigma=%g step=%d", sigma, at_step);
      return buf;
    case InterventionKind::Reset:
      return "reset step=" + std::to_string(at_step);
    case InterventionKind::ShuffleOnce:
      return "shuffle-once step=" + std::to_string(at_step);
    case InterventionKind::ShuffleEveryStep:
      return fixed_permutation ? "shuffle-sustained fixed" : "shuffle-sustained";
    case InterventionKind::Freeze:
      switch (mask) {
        case FreezeMask::RandomFraction:
          std::snprintf(buf, sizeof buf, "freeze random=%g", fraction);
          return buf;
        case FreezeMask::UpperTriangle:
          return "freeze upper-triangle";
        case FreezeMask::LowerTriangle:
          return "freeze lower-triangle";
        case FreezeMask::Diagonal:
          return "freeze diagonal";
      }
  }
  return "?";
}

void permute_cells(Mat<float>& state, const GridShape& g, std::span<const int> perm) {
  const int n = g.h * g.w;
  if (static_cast<int>(perm.size()) != n) throw Error(ErrorKind::ShapeMismatch, "permutation size != cell count");
  const Mat<float> src = state;
  for (int k = 0; k < n; ++k) {
    const int to = perm[static_cast<std::size_t>(k)];
    state.row(g.index(to / g.w, to % g.w)) = src.row(g.index(k / g.w, k % g.w));
  }
}

std::vector<int> inverse_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
  return inv;
}

std::vector<char> freeze_mask(const InterventionSpec& spec, int length, RngStream& rng) {
  std::vector<char> m(static_cast<std::size_t>(length) * length, 0);
  for (int i = 0; i < length; ++i) {
    for (int j = 0; j < length; ++j) {
      char f = 0;
      switch (spec.mask) {
        case FreezeMask::RandomFraction:
          f = rng.uniform() < spec.fraction;
          break;
        case FreezeMask::UpperTriangle:
          f = i <= j;
          break;
        case FreezeMask::LowerTriangle:
          f = i > j;
          break;
        case FreezeMask::Diagonal:
          f = i == j;
          break;
      }
      m[static_cast<std::size_t>(i) * length + j] = f;
    }
  }
  m[static_cast<std::size_t>(length) - 1] = 0;  // readout (0, L-1)
  return m;
}

namespace {

std::vector<int> random_permutation(int n, RngStream& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));
  return perm;
}

double max_change(const Mat<float>& a, const Mat<float>& b, bool channel0_only) {
  if (channel0_only) return (a.col(0) - b.col(0)).cwiseAbs().maxCoeff();
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

InferenceResult run_with_intervention(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens,
                                      const InterventionSpec& spec, RngStream& rng, bool trace) {
  spec.validate();
  NcaRunner run(cfg, p, tokens);
  const GridShape g = run.grid();
  const int cells = g.h * g.w;
  const int cap = cfg.step_cap(run.length());
  InferenceResult res;
  auto record = [&] {
    if (trace) res.trace.push_back(run.state());
  };
  record();

  auto converge = [&](int budget) {
    for (int t = 0; t < budget; ++t) {
      const double delta = run.step();
      ++res.steps;
      record();
      if (delta < cfg.epsilon) {
        res.converged = true;
        return;
      }
    }
  };

  switch (spec.kind) {
    case InterventionKind::None:
      converge(cap);
      break;
    case InterventionKind::Noise:
    case InterventionKind::Reset:
    case InterventionKind::ShuffleOnce: {
      for (int t = 0; t < spec.at_step; ++t) {
        run.step();
        ++res.steps;
        record();
      }
      Mat<float>& h = run.mutable_state();
      if (spec.kind == InterventionKind::Noise) {
        const int channels = spec.noise_channel0_only ? 1 : static_cast<int>(h.cols());
        for (int i = 0; i < g.h; ++i) {
          for (int j = 0; j < g.w; ++j) {
            for (int c = 0; c < channels; ++c) h(g.index(i, j), c) += static_cast<float>(spec.sigma * rng.normal());
          }
        }
      } else if (spec.kind == InterventionKind::Reset) {
        h.setZero();
      } else {
        const auto perm = random_permutation(cells, rng);
        permute_cells(h, g, perm);
      }
      record();
      converge(cap);
      break;
    }
    case InterventionKind::ShuffleEveryStep: {
      const auto fixed = random_permutation(cells, rng);
      for (int t = 0; t < cap; ++t) {
        const Mat<float> prev = run.state();
        run.step();
        permute_cells(run.mutable_state(), g, spec.fixed_permutation ? fixed : random_permutation(cells, rng));
        ++res.steps;
        record();
        if (max_change(run.state(), prev, cfg.converge_channel0_only) < cfg.epsilon) {
          res.converged = true;
          break;
        }
      }
      break;
    }
    case InterventionKind::Freeze: {
      auto mask = freeze_mask(spec, run.length(), rng);
      if (spec.hold_at_onset) {
        for (int t = 0; t < spec.at_step; ++t) {
          run.step();
          ++res.steps;
          record();
        }
        run.set_freeze(std::move(mask), run.state());
      } else {
        run.set_freeze(std::move(mask), zero_grid<float>(g, cfg.channels));
      }
      converge(cap);
      break;
    }
  }
  res.probability = run.readout();
  res.predicted_legal = res.probability > 0.5;
  return res;
}

std::vector<InterventionSpec> standard_intervention_grid() {
  std::vector<InterventionSpec> out;
  InterventionSpec s;
  out.push_back(s);
  for (double sigma : {0.1, 0.5, 1.0}) {
    for (int step = 1; step <= 5; ++step) {
      s = {};
      s.kind = InterventionKind::Noise;
      s.sigma = sigma;
      s.at_step = step;
      out.push_back(s);
    }
  }
  for (int step : {1, 2, 3, 5, 10}) {
    s = {};
    s.kind = InterventionKind::Reset;
    s.at_step = step;
    out.push_back(s);
  }
  for (int step : {1, 2, 3, 5}) {
    s = {};
    s.kind = InterventionKind::ShuffleOnce;
    s.at_step = step;
    out.push_back(s);
  }
  s = {};
  s.kind = InterventionKind::ShuffleEveryStep;
  out.push_back(s);
  for (double f : {0.3, 0.5, 0.7, 0.9}) {
    s = {};
    s.kind = InterventionKind::Freeze;
    s.mask = FreezeMask::RandomFraction;
    s.fraction = f;
    out.push_back(s);
  }
  for (FreezeMask m : {FreezeMask::UpperTriangle, FreezeMask::LowerTriangle, FreezeMask::Diagonal}) {
    s = {};
    s.kind = InterventionKind::Freeze;
    s.mask = m;
    out.push_back(s);
  }
  return out;
}

std::vector<Sample> intervention_eval_set(const LanguageSpec& lang, std::uint64_t seed, int per_class,
                                          int ood_length) {
  RngStream rng(seed, 0x17e7);
  auto out = in_distribution_set(lang, 12, per_class, rng);
  auto ood = ood_set(lang, ood_length, rng, per_class);
  out.insert(out.end(), ood.begin(), ood.end());
  return out;
}

InterventionReport intervention_suite(const NcaConfig& cfg, const NcaParams& p, std::span<const Sample> eval_set,
                                      std::span<const InterventionSpec> specs, std::uint64_t seed) {
  std::vector<int> base_steps;
  for (const auto& s : eval_set) base_steps.push_back(infer(cfg, p, s.tokens).steps);
  InterventionReport rep;
  for (const auto& spec : specs) {
    std::vector<bool> labels;
    long nonconv = 0;
    double extra = 0;
    for (std::size_t k = 0; k < eval_set.size(); ++k) {
      // Same stream per sample for every spec, so random masks are nested
      // across fractions.
      RngStream rng(seed, 0x5a3b'0000ull + k);
      const auto r = run_with_intervention(cfg, p, eval_set[k].tokens, spec, rng);
      labels.push_back(r.predicted_legal);
      nonconv += r.converged ? 0 : 1;
      extra += r.steps - base_steps[k];
    }
    InterventionRow row;
    row.spec = spec;
    row.samples = static_cast<int>(eval_set.size());
    row.balanced_accuracy = balanced_accuracy(eval_set, labels);
    if (row.samples > 0) {
      row.nonconvergence_rate = static_cast<double>(nonconv) / row.samples;
      row.mean_extra_steps = extra / row.samples;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

std::string intervention_csv(const InterventionReport& r) {
  std::ostringstream os;
  os << "intervention,balanced_accuracy,nonconvergence_rate,mean_extra_steps,samples\n";
  for (const auto& row : r.rows) {
    os << '"' << row.spec.label() << "\"," << row.balanced_accuracy << ',' << row.nonconvergence_rate << ','
       << row.mean_extra_steps << ',' << row.samples << '\n';
  }
  return os.str();
}

}  // namespace gridparse
