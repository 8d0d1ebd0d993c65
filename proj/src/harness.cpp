#include "gridparse/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "gridparse/analysis.hpp"
#include "gridparse/cky.hpp"
#include "gridparse/error.hpp"
#include "gridparse/interventions.hpp"
#include "gridparse/transformer.hpp"

namespace gridparse {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("nan"); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------- schemas

const std::vector<CommandSchema>& command_schemas() {
  static const std::vector<CommandSchema> schemas = [] {
    const KeySpec lang{"language", "arithmetic", "language name"};
    const KeySpec d{"d", "16", "hidden width"};
    const KeySpec seed{"seed", "0", "seed"};
    const KeySpec ckpt{"checkpoint", "out/train/model.ckpt", "checkpoint path"};
    const KeySpec per_class{"per_class", "100", "samples per label per point"};
    auto out = [](const char* name) { return KeySpec{"out", std::string("out/") + name, "output directory"}; };
    std::vector<CommandSchema> v;
    v.push_back({"train",
                 "train an NCA recognizer",
                 {lang, d, seed,
                  {"steps", "2000", "gradient steps"},
                  {"lr", "0.001", "Adam learning rate"},
                  {"batch", "64", "batch size"},
                  {"deep_augment", "false", "mix deep nested examples into training"},
                  {"nest_weight", "1", "weight of bracket-opening expansions"},
                  {"eval_every", "250", "validation interval (0 = off)"},
                  {"eval_per_class", "100", "validation items per label"},
                  {"stop_at_accuracy", "", "stop once validation accuracy reaches this"},
                  {"converge_channel0_only", "false", "convergence test on channel 0 only"},
                  out("train")}});
    v.push_back({"eval-length",
                 "balanced accuracy against input length",
                 {ckpt, {"lengths", "20,50,100", "lengths"}, per_class, seed, out("eval-length")}});
    v.push_back({"eval-depth",
                 "balanced accuracy against nesting depth",
                 {ckpt,
                  {"mode", "pure", "pure or mixed"},
                  {"depths", "0..6", "depths"},
                  per_class,
                  {"mixed_length", "40", "length of mixed items"},
                  seed,
                  out("eval-depth")}});
    v.push_back({"analyze",
                 "grid variance and chart alignment per language",
                 {{"languages", "all", "comma separated names or all"},
                  d,
                  seed,
                  {"steps", "2000", "training steps per language"},
                  {"stop_at_accuracy", "", "early stop threshold"},
                  {"samples", "200", "samples for variance and correlation"},
                  {"baseline_inits", "10", "random initializations for the baseline (0 = off)"},
                  {"baseline_language", "arithmetic", "language of the random-init baseline"},
                  {"min_len", "3", "shortest analysis sample"},
                  {"max_len", "12", "longest analysis sample"},
                  {"probe", "id + id * id", "input for the per-nonterminal table"},
                  {"checkpoint_dir", "", "reuse or store <language>.ckpt here"},
                  out("analyze")}});
    v.push_back({"intervene",
                 "perturbation suite on a trained NCA",
                 {ckpt,
                  {"per_class", "75", "items per label for each half of the set"},
                  {"ood_length", "24", "length of the out-of-distribution half"},
                  {"specs", "standard", "standard or ';' separated intervention specs"},
                  seed,
                  out("intervene")}});
    v.push_back({"sweep-seeds",
                 "train over several seeds",
                 {lang, d,
                  {"seeds", "0..9", "seed list"},
                  {"steps", "5000", "step budget"},
                  {"target_accuracy", "0.99", "stop once validation reaches this"},
                  {"eval_every", "250", "validation interval"},
                  {"test_per_class", "200", "held-out items per label"},
                  {"deep_augment", "false", "deep augmentation"},
                  {"save_checkpoints", "true", "write seed_<k>.ckpt"},
                  out("sweep-seeds")}});
    v.push_back({"sweep-capacity",
                 "train over several widths",
                 {lang,
                  {"ds", "4,8,16,32", "widths"},
                  {"seeds", "0..2", "seed list"},
                  {"steps", "5000", "step budget"},
                  {"target_accuracy", "0.99", "stop once validation reaches this"},
                  {"eval_every", "250", "validation interval"},
                  {"test_per_class", "200", "held-out items per label"},
                  out("sweep-capacity")}});
    v.push_back({"baseline-tf",
                 "train and evaluate a Transformer encoder",
                 {lang,
                  {"layers", "2", "encoder layers"},
                  {"d", "64", "model width"},
                  {"heads", "0", "heads (0 = automatic)"},
                  seed,
                  {"steps", "3000", "gradient steps"},
                  {"lr", "0.001", "Adam learning rate"},
                  {"deep_augment", "false", "deep augmentation"},
                  {"positional", "sinusoidal", "sinusoidal, learned, rotary or none"},
                  {"max_positions", "1024", "rows of a learned position table"},
                  {"readout", "cls", "cls or mean"},
                  {"eval_every", "250", "validation interval"},
                  {"stop_at_accuracy", "", "early stop threshold"},
                  {"lengths", "20,50,100", "evaluation lengths"},
                  {"depths", "0..6", "pure nesting depths"},
                  per_class,
                  out("baseline-tf")}});
    v.push_back({"export-figure-data",
                 "state traces, chart reveals and attention maps",
                 {ckpt,
                  {"kind", "trace", "trace, reveal, attention or intervention"},
                  {"tokens", "id + id * id", "input tokens"},
                  {"intervention", "none", "intervention spec for kind=intervention"},
                  seed,
                  out("export")}});
    v.push_back({"self-test",
                 "oracle, gradient, parameter-count and determinism checks",
                 {{"random_per_cfg", "1000", "random strings per grammar"},
                  {"gradcheck_d", "4", "width for the gradient check"},
                  out("self-test")}});
    return v;
  }();
  return schemas;
}

const CommandSchema& command_schema(std::string_view name) {
  for (const auto& s : command_schemas()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown command '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- RunConfig

RunConfig::RunConfig(const CommandSchema& schema) : command_(schema.name) {
  for (const auto& k : schema.keys) values_[k.key] = k.default_value;
}

RunConfig RunConfig::parse(const CommandSchema& schema, std::string_view text) {
  RunConfig cfg(schema);
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const CommandSchema& schema, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(schema, ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw Error(ErrorKind::InvalidConfig, "unknown key '" + key + "' for command " + command_);
  }
  it->second = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::InvalidConfig, "missing key '" + key + "'");
  return it->second;
}

long long RunConfig::integer(const std::string& key) const {
  const auto& s = str(key);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::InvalidConfig, "key '" + key + "': not an integer: '" + s + "'");
  }
}

double RunConfig::real(const std::string& key) const {
  const auto& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::InvalidConfig, "key '" + key + "': not a number: '" + s + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const auto& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off" || s.empty()) return false;
  throw Error(ErrorKind::InvalidConfig, "key '" + key + "': not a boolean: '" + s + "'");
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  try {
    return parse_int_list(str(key));
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidConfig, "key '" + key + "': " + e.what());
  }
}

std::string RunConfig::canonical() const {
  std::string out = "command=" + command_ + "\n";
  for (const auto& [k, v] : values_)
    if (k != "out") out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(canonical()));
  return buf;
}

std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  std::string item;
  std::istringstream in{std::string(text)};
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::InvalidConfig, "bad integer '" + s + "' in list");
    }
  };
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (auto dots = item.find(".."); dots != std::string::npos) {
      const int lo = to_int(trim(item.substr(0, dots)));
      const int hi = to_int(trim(item.substr(dots + 2)));
      if (hi < lo) throw Error(ErrorKind::InvalidConfig, "empty range '" + item + "'");
      for (int k = lo; k <= hi; ++k) out.push_back(k);
    } else {
      out.push_back(to_int(item));
    }
  }
  if (out.empty()) throw Error(ErrorKind::InvalidConfig, "empty list");
  return out;
}

// ---------------------------------------------------------------- reports

json report_envelope(const RunConfig& cfg, json result) {
  json c = json::object();
  for (const auto& [k, v] : cfg.values()) c[k] = v;
  return json{{"format_version", kReportFormatVersion},
              {"command", cfg.command()},
              {"config", c},
              {"config_hash", cfg.hash()},
              {"result", std::move(result)}};
}

std::string csv_with_header(const RunConfig& cfg, const std::string& body) {
  return "# format_version=" + std::to_string(kReportFormatVersion) + " command=" + cfg.command() +
         " config_hash=" + cfg.hash() + "\n" + body;
}

void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path);
}

void write_report(const std::string& dir, const std::string& stem, const RunConfig& cfg, const json& result,
                  const std::string& csv_body) {
  write_text(dir + "/" + stem + ".json", report_envelope(cfg, result).dump(2) + "\n");
  if (!csv_body.empty()) write_text(dir + "/" + stem + ".csv", csv_with_header(cfg, csv_body));
}

std::string encode_pgm(const Eigen::MatrixXd& m, const std::string& comment) {
  std::string out = "P5\n";
  if (!comment.empty()) out += "# " + comment + "\n";
  out += std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      unsigned char px = 128;
      if (v >= 0.0 || std::isnan(v)) px = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      out.push_back(static_cast<char>(px));
    }
  }
  return out;
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += fmt(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd grid_channel(const Mat<float>& state, const GridShape& g, int channel) {
  Eigen::MatrixXd m(g.h, g.w);
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) m(i, j) = state(g.index(i, j), channel);
  return m;
}

// ---------------------------------------------------------------- self-test

namespace {

std::vector<TokenSeq> all_strings(int vocab, int max_len) {
  std::vector<TokenSeq> out;
  TokenSeq cur;
  for (int len = 1; len <= max_len; ++len) {
    cur.assign(len, 0);
    while (true) {
      out.push_back(cur);
      int k = len - 1;
      while (k >= 0 && ++cur[k] == vocab) cur[k--] = 0;
      if (k < 0) break;
    }
  }
  return out;
}

}  // namespace

SuiteResult selftest_oracle(int random_per_cfg) {
  SuiteResult r{"oracle", true, {}};
  const LanguageSpec arith = builtin_language("arithmetic");
  const auto strings = all_strings(arith.vocab_size(), 5);
  int bad = 0;
  for (const auto& s : strings) bad += recognize(*arith.grammar, s) != brute_force_member(*arith.cfg, s);
  r.detail = std::to_string(strings.size()) + " exhaustive arithmetic strings, " + std::to_string(bad) + " mismatches";
  int total_bad = bad;
  for (const auto& name : builtin_language_names()) {
    const LanguageSpec lang = builtin_language(name);
    if (lang.kind != LanguageKind::Cfg) continue;
    RngStream rng(0, fnv1a64(name));
    int mism = 0;
    for (int k = 0; k < random_per_cfg; ++k) {
      TokenSeq t(static_cast<std::size_t>(rng.uniform_int(1, 8)));
      for (auto& tok : t) tok = static_cast<TokenId>(rng.index(lang.vocab_size()));
      mism += recognize(*lang.grammar, t) != brute_force_member(*lang.cfg, t);
    }
    r.detail += "; " + name + " " + std::to_string(random_per_cfg) + " random, " + std::to_string(mism) + " mismatches";
    total_bad += mism;
  }
  const CnfGrammar& g = *arith.grammar;
  const bool counts = g.num_terminals() == 5 && g.num_nonterminals() == 11 && g.num_binary_rules() == 9;
  r.detail += "; arithmetic CNF " + std::to_string(g.num_terminals()) + "/" + std::to_string(g.num_nonterminals()) +
              "/" + std::to_string(g.num_binary_rules());
  r.passed = total_bad == 0 && counts;
  return r;
}

double rollout_gradcheck(int d, int length, int iters, std::uint64_t seed, double step) {
  NcaConfig cfg;
  cfg.d = d;
  NcaParamsT<double> p = init_params(cfg, seed).cast<double>();
  RngStream rng(seed, 0x9c);
  std::vector<Sample> batch(2);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    batch[k].tokens.resize(length);
    for (auto& t : batch[k].tokens) t = static_cast<TokenId>(rng.index(5));
    batch[k].legal = k == 0;
  }
  const std::vector<int> it(batch.size(), iters);
  std::vector<Mat<double>> grads;
  loss_and_grads(p, batch, it, &grads);
  double worst = 0.0;
  auto tensors = p.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Mat<double>& w = *tensors[t];
    Mat<double> numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + step;
      const double up = loss_and_grads<double>(p, batch, it, nullptr);
      w.data()[i] = orig - step;
      const double down = loss_and_grads<double>(p, batch, it, nullptr);
      w.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2 * step);
    }
    const double scale = std::max(grads[t].norm(), numeric.norm());
    if (scale > 1e-12) worst = std::max(worst, (grads[t] - numeric).norm() / scale);
  }
  return worst;
}

SuiteResult selftest_gradcheck(int d) {
  const double err = rollout_gradcheck(d, 4, 3, 7);
  return {"gradcheck", err < 1e-4, "d=" + std::to_string(d) + " L=4 T=3 worst relative error " + fmt(err)};
}

SuiteResult selftest_param_count() {
  const std::pair<int, long long> table[] = {{4, 1210}, {8, 4722}, {16, 18658}, {32, 74178}};
  SuiteResult r{"param-count", true, {}};
  for (auto [d, expected] : table) {
    NcaConfig cfg;
    cfg.d = d;
    const long long formula = param_count(cfg);
    const long long allocated = init_params(cfg, 0).scalar_count();
    if (formula != expected || allocated != expected) r.passed = false;
    r.detail += (r.detail.empty() ? "" : "; ") + std::string("d=") + std::to_string(d) + " " +
                std::to_string(formula) + "/" + std::to_string(allocated) + " (want " + std::to_string(expected) + ")";
  }
  return r;
}

SuiteResult selftest_determinism() {
  NcaConfig cfg;
  cfg.d = 4;
  TrainOptions opts;
  opts.total_steps = 5;
  opts.eval_every = 0;
  opts.gen.batch_size = 8;
  const auto a = encode_archive(nca_to_archive(cfg, train_run(cfg, opts, 3).params));
  const auto b = encode_archive(nca_to_archive(cfg, train_run(cfg, opts, 3).params));
  TfConfig tcfg;
  tcfg.layers = 1;
  tcfg.d = 8;
  TfTrainOptions topts;
  topts.total_steps = 5;
  topts.eval_every = 0;
  topts.gen.batch_size = 8;
  const auto c = encode_archive(tf_to_archive(tcfg, train_tf(tcfg, topts, 3).params));
  const auto e = encode_archive(tf_to_archive(tcfg, train_tf(tcfg, topts, 3).params));
  RngStream r1(42, 7), r2(42, 7);
  bool same_stream = true;
  for (int k = 0; k < 1000; ++k) same_stream &= r1.next_u64() == r2.next_u64();
  const bool ok = a == b && c == e && same_stream;
  return {"determinism", ok,
          std::string("nca checkpoints ") + (a == b ? "identical" : "differ") + ", transformer checkpoints " +
              (c == e ? "identical" : "differ") + ", rng " + (same_stream ? "identical" : "differs")};
}

std::vector<SuiteResult> run_self_test() {
  return {selftest_oracle(), selftest_gradcheck(), selftest_param_count(), selftest_determinism()};
}

// ---------------------------------------------------------------- commands

namespace {

using Meta = std::vector<std::pair<std::string, std::string>>;

std::optional<double> optional_real(const RunConfig& cfg, const std::string& key) {
  if (cfg.str(key).empty()) return std::nullopt;
  return cfg.real(key);
}

std::uint64_t seed_of(const RunConfig& cfg, const std::string& key = "seed") {
  return static_cast<std::uint64_t>(cfg.integer(key));
}

NcaConfig nca_config_for(const LanguageSpec& lang, int d) {
  NcaConfig c;
  c.d = d;
  c.vocab_rows = lang.vocab_rows();
  return c;
}

std::string meta_or(const Archive& a, const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : a.meta)
    if (k == key) return v;
  return fallback;
}

struct LoadedModel {
  Archive archive;
  std::string language;
  bool is_nca = true;
  NcaConfig nca;
  NcaParams nca_params;
  TfConfig tf;
  TfParams tf_params;
};

LoadedModel load_model(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::Io, "missing checkpoint " + path);
  LoadedModel m;
  m.archive = read_archive(path);
  m.language = meta_or(m.archive, "language", "arithmetic");
  if (m.archive.kind == "nca") {
    nca_from_archive(m.archive, m.nca, m.nca_params);
  } else if (m.archive.kind == "transformer") {
    m.is_nca = false;
    tf_from_archive(m.archive, m.tf, m.tf_params);
  } else {
    throw Error(ErrorKind::CorruptCheckpoint, "unknown checkpoint kind '" + m.archive.kind + "'");
  }
  return m;
}

CurvePoint eval_point(const LoadedModel& m, int x, std::span<const Sample> set) {
  return m.is_nca ? evaluate_point(m.nca, m.nca_params, x, set) : evaluate_tf_point(m.tf, m.tf_params, x, set);
}

std::string curve_csv(const GeneralizationCurve& c) {
  std::string out = "kind,x,balanced_accuracy,mean_steps,nonconvergence_rate,samples\n";
  for (const auto& p : c.points) {
    out += c.kind + "," + std::to_string(p.x) + "," + fmt(p.balanced_accuracy) + "," + fmt(p.mean_steps) + "," +
           fmt(p.nonconvergence_rate) + "," + std::to_string(p.samples) + "\n";
  }
  return out;
}

json curve_json(const GeneralizationCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) {
    pts.push_back({{"x", p.x},
                   {"balanced_accuracy", p.balanced_accuracy},
                   {"mean_steps", p.mean_steps},
                   {"nonconvergence_rate", p.nonconvergence_rate},
                   {"samples", p.samples}});
  }
  return {{"kind", c.kind}, {"points", pts}};
}

GeneralizationCurve model_length_curve(const LoadedModel& m, const LanguageSpec& lang, std::span<const int> lengths,
                                       std::uint64_t seed, int per_class) {
  GeneralizationCurve c{"length", {}};
  for (int L : lengths) c.points.push_back(eval_point(m, L, length_set(lang, L, seed, per_class)));
  return c;
}

GeneralizationCurve model_depth_curve(const LoadedModel& m, const LanguageSpec& lang, DepthMode mode,
                                      std::span<const int> depths, std::uint64_t seed, int per_class,
                                      int mixed_length) {
  GeneralizationCurve c{std::string("depth-") + to_string(mode), {}};
  for (int k : depths) c.points.push_back(eval_point(m, k, depth_set(lang, mode, k, seed, per_class, mixed_length)));
  return c;
}

json train_log_json(const TrainLog& log) {
  json evals = json::array();
  for (const auto& e : log.evals) evals.push_back({{"step", e.step}, {"balanced_accuracy", e.balanced_accuracy}});
  return {{"steps_run", log.steps_run},
          {"final_accuracy", log.final_accuracy},
          {"final_loss", log.losses.empty() ? 0.0 : log.losses.back()},
          {"evals", evals}};
}

std::string train_log_csv(const TrainLog& log) {
  std::string out = "step,loss,validation_accuracy\n";
  std::size_t e = 0;
  for (std::size_t s = 0; s < log.losses.size(); ++s) {
    const int step = static_cast<int>(s) + 1;
    std::string acc;
    while (e < log.evals.size() && log.evals[e].step < step) ++e;
    if (e < log.evals.size() && log.evals[e].step == step) acc = fmt(log.evals[e].balanced_accuracy);
    out += std::to_string(step) + "," + fmt(log.losses[s]) + "," + acc + "\n";
  }
  return out;
}

GenConfig gen_for(const std::string& language, int batch, bool deep, std::uint64_t seed) {
  GenConfig g;
  g.language = language;
  g.batch_size = batch;
  g.deep_augment = deep;
  g.seed = seed;
  return g;
}

json cmd_train(const RunConfig& cfg) {
  const std::string out = cfg.str("out");
  const LanguageSpec lang = builtin_language(cfg.str("language"));
  NcaConfig nc = nca_config_for(lang, static_cast<int>(cfg.integer("d")));
  nc.converge_channel0_only = cfg.flag("converge_channel0_only");
  nc.validate();
  const std::uint64_t seed = seed_of(cfg);
  TrainOptions opts;
  opts.total_steps = static_cast<int>(cfg.integer("steps"));
  opts.lr = cfg.real("lr");
  opts.gen = gen_for(lang.name, static_cast<int>(cfg.integer("batch")), cfg.flag("deep_augment"), seed);
  opts.gen.nest_weight = cfg.real("nest_weight");
  opts.eval_every = static_cast<int>(cfg.integer("eval_every"));
  opts.eval_per_class = static_cast<int>(cfg.integer("eval_per_class"));
  opts.stop_at_accuracy = optional_real(cfg, "stop_at_accuracy");
  const TrainResult r = train_run(nc, opts, seed);
  save_nca(out + "/model.ckpt", nc, r.params,
           {{"language", lang.name}, {"seed", std::to_string(seed)}, {"config_hash", cfg.hash()}});
  json res = train_log_json(r.log);
  res["param_count"] = param_count(nc);
  res["checkpoint"] = out + "/model.ckpt";
  write_report(out, "train", cfg, res, train_log_csv(r.log));
  return res;
}

json cmd_eval_length(const RunConfig& cfg) {
  const LoadedModel m = load_model(cfg.str("checkpoint"));
  const LanguageSpec lang = builtin_language(m.language);
  const auto lengths = cfg.int_list("lengths");
  const auto c = model_length_curve(m, lang, lengths, seed_of(cfg), static_cast<int>(cfg.integer("per_class")));
  json res = curve_json(c);
  write_report(cfg.str("out"), "length", cfg, res, curve_csv(c));
  return res;
}

DepthMode parse_depth_mode(const std::string& s) {
  if (s == "pure") return DepthMode::Pure;
  if (s == "mixed") return DepthMode::Mixed;
  throw Error(ErrorKind::InvalidConfig, "mode must be pure or mixed, got '" + s + "'");
}

json cmd_eval_depth(const RunConfig& cfg) {
  const LoadedModel m = load_model(cfg.str("checkpoint"));
  const LanguageSpec lang = builtin_language(m.language);
  const auto depths = cfg.int_list("depths");
  const auto c = model_depth_curve(m, lang, parse_depth_mode(cfg.str("mode")), depths, seed_of(cfg),
                                   static_cast<int>(cfg.integer("per_class")),
                                   static_cast<int>(cfg.integer("mixed_length")));
  json res = curve_json(c);
  write_report(cfg.str("out"), "depth", cfg, res, curve_csv(c));
  return res;
}

std::vector<std::string> language_list(const std::string& s) {
  if (s == "all") return builtin_language_names();
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    builtin_language(item);  // validates the name
    out.push_back(item);
  }
  if (out.empty()) throw Error(ErrorKind::InvalidConfig, "no languages given");
  return out;
}

// Loads <dir>/<language>.ckpt when present, otherwise trains and stores it.
NcaParams trained_for(const RunConfig& cfg, const LanguageSpec& lang, const NcaConfig& nc, json& info) {
  const std::string dir = cfg.str("checkpoint_dir");
  const std::string path = dir.empty() ? std::string() : dir + "/" + lang.name + ".ckpt";
  if (!path.empty() && std::filesystem::exists(path)) {
    NcaConfig loaded;
    NcaParams p;
    load_nca(path, loaded, p);
    if (loaded.d != nc.d || loaded.vocab_rows != nc.vocab_rows) {
      throw Error(ErrorKind::InvalidConfig, "checkpoint " + path + " does not match d/vocab");
    }
    info["checkpoint"] = path;
    return p;
  }
  TrainOptions opts;
  opts.total_steps = static_cast<int>(cfg.integer("steps"));
  opts.gen = gen_for(lang.name, 64, false, seed_of(cfg));
  opts.stop_at_accuracy = optional_real(cfg, "stop_at_accuracy");
  TrainResult r = train_run(nc, opts, seed_of(cfg));
  info["train"] = train_log_json(r.log);
  if (!path.empty()) save_nca(path, nc, r.params, {{"language", lang.name}, {"seed", cfg.str("seed")}});
  return std::move(r.params);
}

json cmd_analyze(const RunConfig& cfg) {
  const auto languages = language_list(cfg.str("languages"));
  const int d = static_cast<int>(cfg.integer("d"));
  const int n = static_cast<int>(cfg.integer("samples"));
  const AnalysisSampling sampling{static_cast<int>(cfg.integer("min_len")), static_cast<int>(cfg.integer("max_len"))};
  const std::uint64_t seed = seed_of(cfg);
  json rows = json::array();
  std::string csv = "language,kind,variance_ch0,variance_ch1,pearson_pooled,pearson_per_sample,nonconverged,samples\n";
  std::string nt_csv;
  json nt_rows = json::array();
  for (const auto& name : languages) {
    const LanguageSpec lang = builtin_language(name);
    const NcaConfig nc = nca_config_for(lang, d);
    json row{{"language", name}, {"kind", lang.kind == LanguageKind::Cfg ? "cfg" : "regular"}};
    const NcaParams p = trained_for(cfg, lang, nc, row);
    RngStream vr(seed, 0xa0a1);
    const VarianceResult v = grid_variance(nc, p, lang, vr, n, sampling);
    row["variance_ch0"] = v.channel0;
    row["variance_ch1"] = v.channel1;
    PearsonResult pr;
    if (lang.kind == LanguageKind::Cfg) {
      RngStream cr(seed, 0xa0a2);
      pr = aggregate_pearson(nc, p, lang, cr, n, std::nullopt, sampling);
      row["pearson_pooled"] = opt_json(pr.pooled);
      row["pearson_per_sample"] = opt_json(pr.per_sample_mean);
    }
    row["nonconverged"] = v.nonconverged + pr.nonconverged;
    row["samples"] = v.samples;
    csv += name + "," + row["kind"].get<std::string>() + "," + fmt(v.channel0) + "," + fmt(v.channel1) + "," +
           (lang.kind == LanguageKind::Cfg ? fmt_opt(pr.pooled) + "," + fmt_opt(pr.per_sample_mean) : ",") + "," +
           std::to_string(v.nonconverged + pr.nonconverged) + "," + std::to_string(v.samples) + "\n";
    if (name == "arithmetic") {
      const TokenSeq probe = lang.tokenize(cfg.str("probe"));
      nt_csv = "nonterminal,pearson_ch0,pearson_ch1\n";
      for (const auto& c : per_nt_pearson(nc, p, lang, probe)) {
        nt_csv += c.nonterminal + "," + fmt_opt(c.channel0) + "," + fmt_opt(c.channel1) + "\n";
        nt_rows.push_back(
            {{"nonterminal", c.nonterminal}, {"channel0", opt_json(c.channel0)}, {"channel1", opt_json(c.channel1)}});
      }
    }
    rows.push_back(row);
  }
  json res{{"languages", rows}};
  const int inits = static_cast<int>(cfg.integer("baseline_inits"));
  if (inits > 0) {
    const LanguageSpec lang = builtin_language(cfg.str("baseline_language"));
    const BaselineResult b = random_init_baseline(nca_config_for(lang, d), lang, seed, inits, n, sampling);
    res["random_init_baseline"] = {
        {"language", lang.name}, {"mean", b.mean}, {"stddev", b.stddev}, {"inits", b.inits}, {"values", b.values}};
    csv += "# random-init baseline (" + lang.name + "): mean=" + fmt(b.mean) + " std=" + fmt(b.stddev) +
           " inits=" + std::to_string(b.inits) + "\n";
  }
  const std::string out = cfg.str("out");
  if (!nt_csv.empty()) {
    res["per_nonterminal"] = nt_rows;
    write_text(out + "/per_nonterminal.csv", csv_with_header(cfg, nt_csv));
  }
  write_report(out, "analysis", cfg, res, csv);
  return res;
}

InterventionSpec parse_intervention(const std::string& text) {
  std::vector<std::string> parts;
  std::istringstream in(trim(text));
  std::string item;
  while (std::getline(in, item, ':')) parts.push_back(trim(item));
  if (parts.empty()) throw Error(ErrorKind::InvalidConfig, "empty intervention spec");
  auto num = [&](std::size_t k, double fallback) {
    if (k >= parts.size()) return fallback;
    try {
      return std::stod(parts[k]);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::InvalidConfig, "bad number in intervention '" + text + "'");
    }
  };
  InterventionSpec s;
  const std::string& k = parts[0];
  if (k == "none") {
  } else if (k == "noise") {
    s.kind = InterventionKind::Noise;
    s.sigma = num(1, 1.0);
    s.at_step = static_cast<int>(num(2, 1));
  } else if (k == "reset") {
    s.kind = InterventionKind::Reset;
    s.at_step = static_cast<int>(num(1, 1));
  } else if (k == "shuffle") {
    s.kind = InterventionKind::ShuffleOnce;
    s.at_step = static_cast<int>(num(1, 1));
  } else if (k == "shuffle-sustained") {
    s.kind = InterventionKind::ShuffleEveryStep;
  } else if (k == "freeze") {
    s.kind = InterventionKind::Freeze;
    const std::string m = parts.size() > 1 ? parts[1] : "random";
    if (m == "random") {
      s.mask = FreezeMask::RandomFraction;
      s.fraction = num(2, 0.5);
    } else if (m == "upper") {
      s.mask = FreezeMask::UpperTriangle;
    } else if (m == "lower") {
      s.mask = FreezeMask::LowerTriangle;
    } else if (m == "diagonal") {
      s.mask = FreezeMask::Diagonal;
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown freeze mask '" + m + "'");
    }
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown intervention '" + k + "'");
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  return s;
}

json cmd_intervene(const RunConfig& cfg) {
  const LoadedModel m = load_model(cfg.str("checkpoint"));
  if (!m.is_nca) throw Error(ErrorKind::InvalidConfig, "intervene needs an NCA checkpoint");
  const LanguageSpec lang = builtin_language(m.language);
  const std::uint64_t seed = seed_of(cfg);
  const auto set = intervention_eval_set(lang, seed, static_cast<int>(cfg.integer("per_class")),
                                         static_cast<int>(cfg.integer("ood_length")));
  std::vector<InterventionSpec> specs;
  if (cfg.str("specs") == "standard") {
    specs = standard_intervention_grid();
  } else {
    specs.push_back(InterventionSpec{});
    std::istringstream in(cfg.str("specs"));
    std::string item;
    while (std::getline(in, item, ';'))
      if (!trim(item).empty()) specs.push_back(parse_intervention(item));
  }
  const InterventionReport r = intervention_suite(m.nca, m.nca_params, set, specs, seed);
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"intervention", row.spec.label()},
                    {"balanced_accuracy", row.balanced_accuracy},
                    {"nonconvergence_rate", row.nonconvergence_rate},
                    {"mean_extra_steps", row.mean_extra_steps},
                    {"samples", row.samples}});
  }
  json res{{"rows", rows}};
  write_report(cfg.str("out"), "interventions", cfg, res, intervention_csv(r));
  return res;
}

struct SweepRun {
  int d = 0;
  std::uint64_t seed = 0;
  long long params = 0;
  int steps = 0;
  double validation = 0.0;
  double test = 0.0;
};

SweepRun sweep_one(const LanguageSpec& lang, int d, std::uint64_t seed, const RunConfig& cfg, bool deep,
                   const std::string& ckpt_path) {
  const NcaConfig nc = nca_config_for(lang, d);
  TrainOptions opts;
  opts.total_steps = static_cast<int>(cfg.integer("steps"));
  opts.gen = gen_for(lang.name, 64, deep, seed);
  opts.eval_every = static_cast<int>(cfg.integer("eval_every"));
  opts.stop_at_accuracy = cfg.real("target_accuracy");
  const TrainResult r = train_run(nc, opts, seed);
  RngStream tr(seed, 0x7e57);
  const auto test = in_distribution_set(lang, nc.train_len_cap, static_cast<int>(cfg.integer("test_per_class")), tr);
  if (!ckpt_path.empty()) save_nca(ckpt_path, nc, r.params, {{"language", lang.name}, {"seed", std::to_string(seed)}});
  return {d, seed, param_count(nc), r.log.steps_run, r.log.final_accuracy, evaluate_nca(nc, r.params, test)};
}

std::string sweep_row(const SweepRun& s) {
  return std::to_string(s.d) + "," + std::to_string(s.params) + "," + std::to_string(s.seed) + "," +
         std::to_string(s.steps) + "," + fmt(s.validation) + "," + fmt(s.test) + "\n";
}

json sweep_json(const SweepRun& s) {
  return {{"d", s.d},
          {"params", s.params},
          {"seed", s.seed},
          {"steps", s.steps},
          {"validation_accuracy", s.validation},
          {"test_accuracy", s.test}};
}

// Appends "mean" and "std" rows over the runs.
void summary_rows(const std::vector<SweepRun>& runs, std::string& csv, json& summary) {
  std::vector<double> acc, steps;
  for (const auto& r : runs) {
    acc.push_back(r.test);
    steps.push_back(r.steps);
  }
  const std::string prefix = std::to_string(runs.front().d) + "," + std::to_string(runs.front().params) + ",";
  csv += prefix + "mean," + fmt(mean_of(steps)) + ",," + fmt(mean_of(acc)) + "\n";
  csv += prefix + "std," + fmt(stddev_of(steps)) + ",," + fmt(stddev_of(acc)) + "\n";
  summary.push_back({{"d", runs.front().d},
                     {"params", runs.front().params},
                     {"accuracy_mean", mean_of(acc)},
                     {"accuracy_std", stddev_of(acc)},
                     {"steps_mean", mean_of(steps)},
                     {"steps_std", stddev_of(steps)},
                     {"runs", runs.size()}});
}

const char* kSweepHeader = "d,params,seed,steps,validation_accuracy,test_accuracy\n";

json cmd_sweep_seeds(const RunConfig& cfg) {
  const LanguageSpec lang = builtin_language(cfg.str("language"));
  const int d = static_cast<int>(cfg.integer("d"));
  const std::string out = cfg.str("out");
  std::vector<SweepRun> runs;
  std::string csv = kSweepHeader;
  json rows = json::array(), summary = json::array();
  for (int seed : cfg.int_list("seeds")) {
    const std::string path = cfg.flag("save_checkpoints") ? out + "/seed_" + std::to_string(seed) + ".ckpt" : "";
    runs.push_back(sweep_one(lang, d, static_cast<std::uint64_t>(seed), cfg, cfg.flag("deep_augment"), path));
    csv += sweep_row(runs.back());
    rows.push_back(sweep_json(runs.back()));
  }
  summary_rows(runs, csv, summary);
  json res{{"runs", rows}, {"summary", summary}};
  write_report(out, "seeds", cfg, res, csv);
  return res;
}

json cmd_sweep_capacity(const RunConfig& cfg) {
  const LanguageSpec lang = builtin_language(cfg.str("language"));
  std::string csv = kSweepHeader;
  json rows = json::array(), summary = json::array();
  for (int d : cfg.int_list("ds")) {
    std::vector<SweepRun> runs;
    for (int seed : cfg.int_list("seeds")) {
      runs.push_back(sweep_one(lang, d, static_cast<std::uint64_t>(seed), cfg, false, ""));
      csv += sweep_row(runs.back());
      rows.push_back(sweep_json(runs.back()));
    }
    summary_rows(runs, csv, summary);
  }
  json res{{"runs", rows}, {"summary", summary}};
  write_report(cfg.str("out"), "capacity", cfg, res, csv);
  return res;
}

// Inputs the attention locality is measured on.
std::vector<Sample> locality_probes(const LanguageSpec& lang, std::uint64_t seed) {
  std::vector<Sample> probes;
  if (lang.name == "arithmetic") {
    Sample s;
    s.tokens = lang.tokenize("id + id * id");
    s.legal = true;
    probes.push_back(s);
    probes.push_back(pure_nested(lang, 3));
    RngStream rng(seed, 0x10ca);
    for (const auto& x : ood_set(lang, 50, rng, 1)) probes.push_back(x);
  } else {
    RngStream rng(seed, 0x10ca);
    for (const auto& x : legal_samples(lang, 3, 3, 12, rng)) probes.push_back(x);
  }
  return probes;
}

json cmd_baseline_tf(const RunConfig& cfg) {
  const LanguageSpec lang = builtin_language(cfg.str("language"));
  const std::uint64_t seed = seed_of(cfg);
  const std::string out = cfg.str("out");
  TfConfig tc;
  tc.layers = static_cast<int>(cfg.integer("layers"));
  tc.d = static_cast<int>(cfg.integer("d"));
  tc.heads = static_cast<int>(cfg.integer("heads"));
  tc.vocab_rows = lang.vocab_rows();
  tc.positional = parse_positional_scheme(cfg.str("positional"));
  tc.max_positions = static_cast<int>(cfg.integer("max_positions"));
  tc.readout = parse_readout(cfg.str("readout"));
  tc.validate();
  TfTrainOptions opts;
  opts.total_steps = static_cast<int>(cfg.integer("steps"));
  opts.lr = cfg.real("lr");
  opts.gen = gen_for(lang.name, 64, cfg.flag("deep_augment"), seed);
  opts.eval_every = static_cast<int>(cfg.integer("eval_every"));
  opts.stop_at_accuracy = optional_real(cfg, "stop_at_accuracy");
  TfTrainResult r = train_tf(tc, opts, seed);
  save_tf(out + "/model.ckpt", tc, r.params, {{"language", lang.name}, {"seed", std::to_string(seed)}});

  LoadedModel m;
  m.is_nca = false;
  m.tf = tc;
  m.tf_params = std::move(r.params);
  const int per_class = static_cast<int>(cfg.integer("per_class"));
  const auto lengths = cfg.int_list("lengths");
  const auto depths = cfg.int_list("depths");
  const auto lc = model_length_curve(m, lang, lengths, seed, per_class);
  GeneralizationCurve dc{"depth-pure", {}};
  if (lang.name == "arithmetic") dc = model_depth_curve(m, lang, DepthMode::Pure, depths, seed, per_class, 40);

  json probes = json::array();
  std::vector<double> scores;
  for (const auto& s : locality_probes(lang, seed)) {
    const LocalityReport loc = locality(tf_forward(tc, m.tf_params, s.tokens, true));
    scores.push_back(loc.aggregate);
    probes.push_back({{"input", lang.detokenize(s.tokens)}, {"locality", loc.aggregate}, {"per_head", loc.per_head}});
  }
  json res{{"param_count", m.tf_params.scalar_count()},
           {"train", train_log_json(r.log)},
           {"length", curve_json(lc)},
           {"depth", curve_json(dc)},
           {"locality_mean", mean_of(scores)},
           {"locality_probes", probes}};
  if (lang.name == "arithmetic") {
    const Sample dd = pure_nested(lang, 2);
    res["predicts_double_nested_legal"] = tf_predict(tc, m.tf_params, dd.tokens);
  }
  std::string csv = curve_csv(lc);
  if (!dc.points.empty()) {
    const std::string depth_csv = curve_csv(dc);
    csv += depth_csv.substr(depth_csv.find('\n') + 1);
  }
  write_report(out, "baseline", cfg, res, csv);
  return res;
}

void write_grid(const std::string& stem, const Eigen::MatrixXd& m, const std::string& comment) {
  write_text(stem + ".csv", matrix_csv(m));
  write_text(stem + ".pgm", encode_pgm(m, comment));
}

json cmd_export(const RunConfig& cfg) {
  const LoadedModel m = load_model(cfg.str("checkpoint"));
  const LanguageSpec lang = builtin_language(m.language);
  const TokenSeq tokens = lang.tokenize(cfg.str("tokens"));
  if (tokens.empty()) throw Error(ErrorKind::InvalidConfig, "tokens must not be empty");
  const std::string out = cfg.str("out");
  const std::string kind = cfg.str("kind");
  const int L = static_cast<int>(tokens.size());
  json res{{"kind", kind}, {"input", lang.detokenize(tokens)}, {"files", json::array()}};
  auto add = [&](const std::string& stem) { res["files"].push_back(stem); };

  if (kind == "attention") {
    if (m.is_nca) throw Error(ErrorKind::InvalidConfig, "attention export needs a transformer checkpoint");
    const TfForward f = tf_forward(m.tf, m.tf_params, tokens, true);
    for (std::size_t l = 0; l < f.attention.size(); ++l) {
      for (std::size_t h = 0; h < f.attention[l].size(); ++h) {
        const std::string stem = "attention_l" + std::to_string(l + 1) + "_h" + std::to_string(h + 1);
        Eigen::MatrixXd a = f.attention[l][h].cast<double>();
        write_grid(out + "/" + stem, a / std::max(a.maxCoeff(), 1e-12), "attention weights, max-normalized");
        add(stem);
      }
    }
    res["locality"] = locality(f).aggregate;
    res["logit"] = f.logit;
  } else if (kind == "trace" || kind == "intervention" || kind == "reveal") {
    if (!m.is_nca) throw Error(ErrorKind::InvalidConfig, kind + " export needs an NCA checkpoint");
    InferenceResult r;
    if (kind == "intervention") {
      RngStream rng(seed_of(cfg), 0xe4);
      r = run_with_intervention(m.nca, m.nca_params, tokens, parse_intervention(cfg.str("intervention")), rng, true);
    } else {
      InferOptions o;
      o.trace = true;
      r = infer(m.nca, m.nca_params, tokens, o);
    }
    const GridShape g = square_grid(L);
    std::string long_csv = "step,i,j,channel0,channel1\n";
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) {
          const auto row = g.index(i, j);
          long_csv += std::to_string(t) + "," + std::to_string(i) + "," + std::to_string(j) + "," +
                      fmt(r.trace[t](row, 0)) + "," + fmt(r.trace[t](row, 1)) + "\n";
        }
      const std::string stem = "state_t" + std::to_string(t);
      write_text(out + "/" + stem + ".pgm", encode_pgm(grid_channel(r.trace[t], g, 0), "channel 0"));
      add(stem);
    }
    write_text(out + "/trace.csv", csv_with_header(cfg, long_csv));
    if (kind == "reveal") {
      if (lang.kind != LanguageKind::Cfg) throw Error(ErrorKind::InvalidConfig, "reveal needs a context-free language");
      const CkyChart chart = cky_chart(*lang.grammar, tokens);
      for (int k = 1; k <= L; ++k) {
        const std::string stem = "reveal_k" + std::to_string(k);
        write_grid(out + "/" + stem, reveal_by_span_length(chart, lang.grammar->start, k), "chart revealed to span k");
        add(stem);
      }
    }
    res["probability"] = r.probability;
    res["steps"] = r.steps;
    res["converged"] = r.converged;
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown export kind '" + kind + "'");
  }
  write_report(out, "export", cfg, res, "");
  return res;
}

json cmd_self_test(const RunConfig& cfg, bool& failed) {
  const std::vector<SuiteResult> suites = {selftest_oracle(static_cast<int>(cfg.integer("random_per_cfg"))),
                                           selftest_gradcheck(static_cast<int>(cfg.integer("gradcheck_d"))),
                                           selftest_param_count(), selftest_determinism()};
  json rows = json::array();
  std::string csv = "suite,passed,detail\n";
  failed = false;
  for (const auto& s : suites) {
    rows.push_back({{"suite", s.name}, {"passed", s.passed}, {"detail", s.detail}});
    csv += s.name + "," + (s.passed ? "true" : "false") + ",\"" + s.detail + "\"\n";
    std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << "\n";
    failed |= !s.passed;
  }
  json res{{"suites", rows}, {"passed", !failed}};
  write_report(cfg.str("out"), "self-test", cfg, res, csv);
  return res;
}

void write_error(const RunConfig& cfg, const std::string& kind, const std::string& message) {
  json rec{{"format_version", kReportFormatVersion},
           {"command", cfg.command()},
           {"config_hash", cfg.hash()},
           {"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << rec.dump() << "\n";
  if (cfg.has("out")) {
    try {
      write_text(cfg.str("out") + "/error.json", rec.dump(2) + "\n");
    } catch (const Error&) {
    }
  }
}

}  // namespace

int run_command(const RunConfig& cfg) {
  try {
    const std::string& c = cfg.command();
    json res;
    if (c == "train") res = cmd_train(cfg);
    else if (c == "eval-length") res = cmd_eval_length(cfg);
    else if (c == "eval-depth") res = cmd_eval_depth(cfg);
    else if (c == "analyze") res = cmd_analyze(cfg);
    else if (c == "intervene") res = cmd_intervene(cfg);
    else if (c == "sweep-seeds") res = cmd_sweep_seeds(cfg);
    else if (c == "sweep-capacity") res = cmd_sweep_capacity(cfg);
    else if (c == "baseline-tf") res = cmd_baseline_tf(cfg);
    else if (c == "export-figure-data") res = cmd_export(cfg);
    else if (c == "self-test") {
      bool failed = false;
      res = cmd_self_test(cfg, failed);
      if (failed) {
        write_error(cfg, to_string(ErrorKind::OracleMismatch), "self-test suite failed");
        return 1;
      }
      return 0;
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown command '" + c + "'");
    }
    std::cout << report_envelope(cfg, res).dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    write_error(cfg, to_string(e.kind()), e.what());
    return 2;
  } catch (const std::exception& e) {
    write_error(cfg, "Internal", e.what());
    return 3;
  }
}

}  // namespace gridparse
