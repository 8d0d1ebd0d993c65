#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridparse/adam.hpp"
#include "gridparse/checkpoint.hpp"
#include "gridparse/datagen.hpp"
#include "gridparse/grammar.hpp"
#include "gridparse/rng.hpp"
#include "gridparse/tape.hpp"
#include "gridparse/tensor.hpp"

namespace gridparse {

struct NcaConfig {
  int d = 16;
  int channels = 2;
  int vocab_rows = 6;
  int train_len_cap = 12;
  double epsilon = 0.01;
  bool converge_channel0_only = false;

  int hidden1() const { return 2 * d; }
  int hidden2() const { return d; }
  int step_cap(int length) const { return std::max(50, length); }
  int max_iters(int length) const { return std::max(6, 2 * length); }
  static constexpr int kMinIters = 3;

  void validate() const;
};

long long param_count(const NcaConfig& cfg);

// Weight layout follows the row-vector convention y = x * W + b.
template <typename T>
struct NcaParamsT {
  Mat<T> embed;    // vocab_rows x d
  Mat<T> state_w;  // C x d
  Mat<T> state_b;  // 1 x d
  Mat<T> conv1_w;  // 9*3d x 2d, input channels [e_i | e_j | W_s h + b_s]
  Mat<T> conv1_b;  // 1 x 2d
  Mat<T> conv2_w;  // 9*2d x d
  Mat<T> conv2_b;  // 1 x d
  Mat<T> head_w;   // d x C
  Mat<T> head_b;   // 1 x C

  static constexpr int kTensorCount = 9;
  static const char* const* names();

  std::vector<Mat<T>*> tensors() {
    return {&embed, &state_w, &state_b, &conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b};
  }
  std::vector<const Mat<T>*> tensors() const {
    return {&embed, &state_w, &state_b, &conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b};
  }
  long long scalar_count() const {
    long long n = 0;
    for (const auto* m : tensors()) n += m->size();
    return n;
  }

  template <typename U>
  NcaParamsT<U> cast() const {
    NcaParamsT<U> out;
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }
};

template <typename T>
const char* const* NcaParamsT<T>::names() {
  static const char* const kNames[] = {"embed",        "state_proj.weight", "state_proj.bias",
                                       "conv1.weight", "conv1.bias",        "conv2.weight",
                                       "conv2.bias",   "head.weight",       "head.bias"};
  return kNames;
}

using NcaParams = NcaParamsT<float>;

// Weights and kernels uniform in +-1/sqrt(fan_in), biases zero, embeddings
// N(0, kEmbedScale^2).
inline constexpr double kEmbedScale = 0.5;
NcaParams init_params(const NcaConfig& cfg, std::uint64_t seed);

// Shape check against cfg; throws ShapeMismatch / NonFinite.
template <typename T>
void check_params(const NcaConfig& cfg, const NcaParamsT<T>& p);

// Literal L x L x 3d input field: [e_i | e_j | W_s h(i,j) + b_s] on every
// cell, zero border. h is a grid tensor with C channels.
template <typename T>
Mat<T> build_input_field(const NcaParamsT<T>& p, std::span<const TokenId> tokens, const Mat<T>& h);

// One synchronous update computed literally from the input field. Slow;
// the reference the fast runner is tested against.
template <typename T>
Mat<T> reference_step(const NcaParamsT<T>& p, std::span<const TokenId> tokens, const Mat<T>& h);

// Fast float rollout. The token part of the first convolution does not
// change between steps, so it is computed once; the state part uses taps
// composed with W_s. Frozen cells are rewritten with held values after
// every update.
class NcaRunner {
 public:
  NcaRunner(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens);

  int length() const { return length_; }
  const GridShape& grid() const { return grid_; }
  const Mat<float>& state() const { return h_; }
  // Direct write access for interventions. Border rows must stay zero.
  Mat<float>& mutable_state() { return h_; }

  // Advances one step; returns the max-abs change used for convergence.
  double step();
  // Channel 0 at cell (0, L-1).
  double readout() const { return h_(grid_.index(0, length_ - 1), 0); }

  // mask is L*L (row-major cells); nonzero entries hold held_values.
  void set_freeze(std::vector<char> mask, Mat<float> held_values);
  void clear_freeze() { frozen_.clear(); }

 private:
  const NcaConfig& cfg_;
  const NcaParams& p_;
  int length_;
  GridShape grid_;
  Mat<float> static_;  // conv1 of the token blocks and b_s, plus conv1 bias
  Mat<float> fold_;    // 9C x 2d
  Mat<float> h_, next_, patches_, a_, b_, hidden_;
  std::vector<char> frozen_;
  Mat<float> held_;
};

struct InferOptions {
  bool trace = false;
  std::optional<int> step_cap;  // default cfg.step_cap(L)
};

struct InferenceResult {
  double probability = 0.0;
  bool predicted_legal = false;
  int steps = 0;
  bool converged = false;
  std::vector<Mat<float>> trace;  // state after steps 0..steps when requested
};

InferenceResult infer(const NcaConfig& cfg, const NcaParams& p, std::span<const TokenId> tokens,
                      const InferOptions& opts = {});

// Mean BCE of a set of rollouts recorded on `tape`; `iters[k]` is the
// unroll length for samples[k]. The graph is the folded form of the update
// and is exactly the literal one (tests compare both).
template <typename T>
struct NcaVars {
  std::vector<ad::Var> v;  // parallel to NcaParamsT::tensors()
};

template <typename T>
NcaVars<T> record_params(ad::Tape<T>& tape, const NcaParamsT<T>& p);

template <typename T>
ad::Var rollout_loss(ad::Tape<T>& tape, const NcaVars<T>& vars, std::span<const Sample> samples,
                     std::span<const int> iters);

// Same graph built from the literal input field each step; for tests.
template <typename T>
ad::Var literal_rollout_loss(ad::Tape<T>& tape, const NcaVars<T>& vars, std::span<const Sample> samples,
                             std::span<const int> iters);

// Mean batch loss and gradients for every tensor (parallel to tensors()).
template <typename T>
T loss_and_grads(const NcaParamsT<T>& p, std::span<const Sample> samples, std::span<const int> iters,
                 std::vector<Mat<T>>* grads);

// Draws T per sample from [3, max(6, 2L)], does one Adam update, returns the
// mean loss. Throws Error(NonFinite) with diagnostics on a non-finite loss.
double train_step(const NcaConfig& cfg, NcaParams& p, AdamState<float>& adam, std::span<const Sample> batch,
                  RngStream& rng);

struct TrainOptions {
  int total_steps = 2000;
  double lr = 1e-3;
  GenConfig gen;                 // language, batch size, deep augmentation, seed
  int eval_every = 250;          // 0 disables periodic evaluation
  int eval_per_class = 100;      // in-distribution validation set size per class
  std::optional<double> stop_at_accuracy;  // stop after an eval reaching this
};

struct TrainEval {
  int step = 0;
  double balanced_accuracy = 0.0;
};

struct TrainLog {
  std::vector<double> losses;
  std::vector<TrainEval> evals;
  int steps_run = 0;
  double final_accuracy = 0.0;  // last evaluation, or evaluated at the end
};

struct TrainResult {
  NcaParams params;
  TrainLog log;
};

TrainResult train_run(const NcaConfig& cfg, const TrainOptions& opts, std::uint64_t seed);

// Balanced accuracy of predicted labels against sample labels.
double balanced_accuracy(std::span<const Sample> samples, const std::vector<bool>& predicted);

// Balanced in-distribution set drawn like training batches but from an
// independent stream.
std::vector<Sample> in_distribution_set(const LanguageSpec& lang, int max_len, int per_class, RngStream& rng);

double evaluate_nca(const NcaConfig& cfg, const NcaParams& p, std::span<const Sample> samples);

// Checkpoints. `meta` entries are stored alongside the config fields.
Archive nca_to_archive(const NcaConfig& cfg, const NcaParams& p,
                       const std::vector<std::pair<std::string, std::string>>& meta = {});
void nca_from_archive(const Archive& a, NcaConfig& cfg, NcaParams& p);
void save_nca(const std::string& path, const NcaConfig& cfg, const NcaParams& p,
              const std::vector<std::pair<std::string, std::string>>& meta = {});
void load_nca(const std::string& path, NcaConfig& cfg, NcaParams& p);

}  // namespace gridparse
