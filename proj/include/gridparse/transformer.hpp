#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridparse/adam.hpp"
#include "gridparse/analysis.hpp"
#include "gridparse/checkpoint.hpp"
#include "gridparse/datagen.hpp"
#include "gridparse/tape.hpp"

namespace gridparse {

enum class PositionalScheme { Sinusoidal, Learned, Rotary, None };
enum class Readout { ClsToken, MeanPool };

const char* to_string(PositionalScheme s);
const char* to_string(Readout r);
PositionalScheme parse_positional_scheme(std::string_view s);
Readout parse_readout(std::string_view s);

struct TfConfig {
  int layers = 2;
  int d = 64;
  int heads = 0;  // 0: 2 heads, or 1 when d == 8
  int vocab_rows = 6;
  // Rows of the learned position table (classification token included);
  // longer inputs are rejected. Unused by the other schemes.
  int max_positions = 1024;
  PositionalScheme positional = PositionalScheme::Sinusoidal;
  Readout readout = Readout::ClsToken;

  int num_heads() const { return heads > 0 ? heads : (d == 8 ? 1 : 2); }
  int ffn() const { return 4 * d; }
  void validate() const;
};

// Pre-LN encoder block parameters.
struct TfLayer {
  Mat<float> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  std::vector<Mat<float>*> tensors() {
    return {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2};
  }
  static const std::vector<std::string>& names();
};

struct TfParams {
  Mat<float> embed;  // vocab_rows x d
  Mat<float> cls;    // 1 x d, classification token
  Mat<float> pos;    // max_positions x d for learned positions, else empty
  std::vector<TfLayer> layers;
  Mat<float> lnf_g, lnf_b;
  Mat<float> head_w, head_b;  // d x 1, 1 x 1

  // Flat list in a fixed order, with names like "layer1.wq". The position
  // table is listed only when present.
  std::vector<Mat<float>*> tensors();
  std::vector<const Mat<float>*> tensors() const;
  std::vector<std::string> names() const;
  long long scalar_count() const;
};

TfParams init_tf(const TfConfig& cfg, std::uint64_t seed);

// n x d sinusoidal table for positions 0..n-1.
Mat<float> sinusoidal_positions(int n, int d);

// Rotary positions: within each head, column pairs (2i, 2i+1) of queries and
// keys are rotated by pos * 10000^(-2i/head_dim). x' = x .* cos + (x R) .* sin.
struct RotaryTables {
  Mat<float> cos, sin;  // n x d
  Mat<float> r;         // d x d pair swap with sign
};
RotaryTables rotary_tables(int n, int d, int heads);

struct TfForward {
  double logit = 0.0;
  // attention[layer][head], (L+1) x (L+1) with the classification token
  // first when that readout is used.
  std::vector<std::vector<Mat<float>>> attention;
};

TfForward tf_forward(const TfConfig& cfg, const TfParams& p, std::span<const TokenId> tokens,
                     bool keep_attention = false);
bool tf_predict(const TfConfig& cfg, const TfParams& p, std::span<const TokenId> tokens);

// Mean BCE-with-logits over the batch and its gradients (parallel to tensors()).
double tf_loss_and_grads(const TfConfig& cfg, const TfParams& p, std::span<const Sample> batch,
                         std::vector<Mat<float>>* grads);

struct TfTrainOptions {
  int total_steps = 3000;
  double lr = 1e-3;
  GenConfig gen;
  int eval_every = 250;
  int eval_per_class = 100;
  std::optional<double> stop_at_accuracy;
};

struct TfTrainResult {
  TfParams params;
  TrainLog log;
};

TfTrainResult train_tf(const TfConfig& cfg, const TfTrainOptions& opts, std::uint64_t seed);

double evaluate_tf(const TfConfig& cfg, const TfParams& p, std::span<const Sample> samples);
CurvePoint evaluate_tf_point(const TfConfig& cfg, const TfParams& p, int x, std::span<const Sample> samples);

// Attention-weighted mean |q - k| / n over queries, n = matrix size.
double locality_score(const Mat<float>& weights);

struct LocalityReport {
  std::vector<std::vector<double>> per_head;  // [layer][head]
  double aggregate = 0.0;                     // mean over layers and heads
};
LocalityReport locality(const TfForward& f);

Archive tf_to_archive(const TfConfig& cfg, const TfParams& p,
                      const std::vector<std::pair<std::string, std::string>>& meta = {});
void tf_from_archive(const Archive& a, TfConfig& cfg, TfParams& p);
void save_tf(const std::string& path, const TfConfig& cfg, const TfParams& p,
             const std::vector<std::pair<std::string, std::string>>& meta = {});
void load_tf(const std::string& path, TfConfig& cfg, TfParams& p);

}  // namespace gridparse
