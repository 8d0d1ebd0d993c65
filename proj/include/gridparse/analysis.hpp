#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridparse/cky.hpp"
#include "gridparse/datagen.hpp"
#include "gridparse/nca.hpp"

namespace gridparse {

// Pearson correlation; nullopt when either vector has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

// Channel c of a state grid on the upper triangle (i <= j), row-major.
std::vector<double> upper_triangle(const Mat<float>& state, const GridShape& g, int channel);
std::vector<double> upper_triangle(const IndicatorMatrix& m);

// Legal samples with min_len <= length <= max_len (rejection on sample_legal).
std::vector<Sample> legal_samples(const LanguageSpec& lang, int n, int min_len, int max_len, RngStream& rng);

struct AnalysisSampling {
  int min_len = 3;
  int max_len = 12;
};

struct VarianceResult {
  double channel0 = 0.0;  // mean over samples of the upper-triangle variance
  double channel1 = 0.0;
  int samples = 0;
  int nonconverged = 0;
};

VarianceResult grid_variance(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang, RngStream& rng,
                             int n = 100, AnalysisSampling sampling = {});

struct PearsonResult {
  std::optional<double> pooled;          // over all pooled upper-triangle cells
  std::optional<double> per_sample_mean; // mean of the defined per-sample r
  int samples = 0;
  int cells = 0;
  int nonconverged = 0;
};

// Channel 0 against the indicator of nonterminal `nt` (default: start).
PearsonResult aggregate_pearson(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang, RngStream& rng,
                                int n = 200, std::optional<int> nt = std::nullopt, AnalysisSampling sampling = {});

struct NtCorrelation {
  std::string nonterminal;
  std::optional<double> channel0;
  std::optional<double> channel1;
};

std::vector<NtCorrelation> per_nt_pearson(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang,
                                          std::span<const TokenId> tokens);

struct BaselineResult {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  int inits = 0;
  std::vector<double> values;
};

// aggregate_pearson over `inits` fresh random initializations.
BaselineResult random_init_baseline(const NcaConfig& cfg, const LanguageSpec& lang, std::uint64_t seed,
                                    int inits = 10, int n = 200, AnalysisSampling sampling = {});

struct CurvePoint {
  int x = 0;  // length or depth
  double balanced_accuracy = 0.0;
  double mean_steps = 0.0;
  double nonconvergence_rate = 0.0;
  int samples = 0;
};

struct GeneralizationCurve {
  std::string kind;  // "length", "depth-pure", "depth-mixed"
  std::vector<CurvePoint> points;
};

// Evaluates any per-sample classifier over a sample set.
struct Prediction {
  bool legal = false;
  int steps = 0;
  bool converged = true;
};
CurvePoint score_points(int x, std::span<const Sample> samples, std::span<const Prediction> preds);

CurvePoint evaluate_point(const NcaConfig& cfg, const NcaParams& p, int x, std::span<const Sample> samples);

// Balanced OOD sets from datagen; `per_class` items per label per point.
GeneralizationCurve length_curve(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang,
                                 std::span<const int> lengths, std::uint64_t seed, int per_class = 100);

enum class DepthMode { Pure, Mixed };
const char* to_string(DepthMode m);

GeneralizationCurve depth_curve(const NcaConfig& cfg, const NcaParams& p, const LanguageSpec& lang, DepthMode mode,
                                std::span<const int> depths, std::uint64_t seed, int per_class = 100,
                                int mixed_length = 40);

std::vector<Sample> length_set(const LanguageSpec& lang, int length, std::uint64_t seed, int per_class);
std::vector<Sample> depth_set(const LanguageSpec& lang, DepthMode mode, int depth, std::uint64_t seed, int per_class,
                              int mixed_length);

}  // namespace gridparse
