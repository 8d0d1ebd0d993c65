#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gridparse/analysis.hpp"
#include "gridparse/nca.hpp"

namespace gridparse {

enum class InterventionKind { None, Noise, Reset, ShuffleOnce, ShuffleEveryStep, Freeze };
enum class FreezeMask { RandomFraction, UpperTriangle, LowerTriangle, Diagonal };

struct InterventionSpec {
  InterventionKind kind = InterventionKind::None;
  double sigma = 1.0;         // noise
  int at_step = 1;            // one-shot kinds; freeze onset when hold_at_onset
  FreezeMask mask = FreezeMask::RandomFraction;
  double fraction = 0.5;      // random freeze
  bool noise_channel0_only = false;
  bool fixed_permutation = false;  // sustained shuffle reuses one permutation
  bool hold_at_onset = false;      // freeze holds values at at_step instead of zero

  void validate() const;
  std::string label() const;  // e.g. "noise sigma=0.5 step=3"
};

// Permutation of the L*L cells applied to a grid tensor (both channels move
// together, border untouched): out cell perm[k] takes in cell k.
void permute_cells(Mat<float>& state, const GridShape& g, std::span<const int> perm);
std::vector<int> inverse_permutation(std::span<const int> perm);

// Row-major L*L freeze mask. The readout cell (0, L-1) is never frozen.
// Random masks freeze cell k when u_k < fraction with u drawn from rng, so
// masks drawn from equal streams are nested across fractions.
std::vector<char> freeze_mask(const InterventionSpec& spec, int length, RngStream& rng);

// One rollout under the intervention. One-shot kinds run at_step steps,
// perturb, then iterate to convergence with the step cap re-armed; steps
// counts every update performed. rng supplies noise, permutations and masks.
InferenceResult run_with_intervention(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens,
                                      const InterventionSpec& spec, RngStream& rng, bool trace = false);

struct InterventionRow {
  InterventionSpec spec;
  double balanced_accuracy = 0.0;
  double nonconvergence_rate = 0.0;
  double mean_extra_steps = 0.0;  // vs the unperturbed rollout of the same sample
  int samples = 0;
};

struct InterventionReport {
  std::vector<InterventionRow> rows;  // first row is the unperturbed baseline
};

// Table-style grid of configurations.
std::vector<InterventionSpec> standard_intervention_grid();

// Default set: per_class in-distribution items of each label plus per_class
// of each label at ood_length.
std::vector<Sample> intervention_eval_set(const LanguageSpec& lang, std::uint64_t seed, int per_class = 75,
                                          int ood_length = 24);

InterventionReport intervention_suite(const NcaConfig& cfg, const NcaParams& p, std::span<const Sample> eval_set,
                                      std::span<const InterventionSpec> specs, std::uint64_t seed);

std::string intervention_csv(const InterventionReport& r);

}  // namespace gridparse
