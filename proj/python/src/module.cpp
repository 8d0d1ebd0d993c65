#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gridparse/analysis.hpp"
#include "gridparse/cky.hpp"
#include "gridparse/datagen.hpp"
#include "gridparse/error.hpp"
#include "gridparse/harness.hpp"
#include "gridparse/nca.hpp"
#include "gridparse/transformer.hpp"

namespace py = pybind11;
using namespace gridparse;

namespace {

struct NcaModel {
  NcaConfig cfg;
  NcaParams params;
  std::string language = "arithmetic";
};

struct TfModel {
  TfConfig cfg;
  TfParams params;
};

std::string meta_or(const Archive& a, const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : a.meta)
    if (k == key) return v;
  return fallback;
}

py::dict inference_dict(const InferenceResult& r, const GridShape& g) {
  py::dict out;
  out["probability"] = r.probability;
  out["legal"] = r.predicted_legal;
  out["steps"] = r.steps;
  out["converged"] = r.converged;
  py::list trace;
  for (const auto& s : r.trace) trace.append(std::vector<Eigen::MatrixXd>{grid_channel(s, g, 0), grid_channel(s, g, 1)});
  out["trace"] = trace;
  return out;
}

py::list samples_list(const std::vector<Sample>& v) {
  py::list out;
  for (const auto& s : v) out.append(py::make_tuple(s.tokens, s.legal));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Grid automata that recognize formal languages";

  static py::exception<Error> exc(m, "GridparseError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(exc.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def("languages", [] { return builtin_language_names(); });
  m.def("tokenize", [](const std::string& lang, const std::string& text) { return builtin_language(lang).tokenize(text); });
  m.def("detokenize", [](const std::string& lang, const TokenSeq& t) { return builtin_language(lang).detokenize(t); });
  m.def("member", [](const std::string& lang, const TokenSeq& t) { return builtin_language(lang).member(t); },
        "Exact membership (CKY or the regular checker).");
  m.def("cnf_counts", [](const std::string& lang) {
    const LanguageSpec l = builtin_language(lang);
    if (!l.grammar) throw Error(ErrorKind::InvalidArgument, lang + " has no grammar");
    return py::make_tuple(l.grammar->num_terminals(), l.grammar->num_nonterminals(), l.grammar->num_binary_rules());
  });
  m.def(
      "chart_indicator",
      [](const std::string& lang, const TokenSeq& t, std::optional<std::string> nt) {
        const LanguageSpec l = builtin_language(lang);
        if (!l.grammar) throw Error(ErrorKind::InvalidArgument, lang + " has no grammar");
        const int idx = nt ? l.grammar->nonterminal_index(*nt) : l.grammar->start;
        return indicator(cky_chart(*l.grammar, t), idx);
      },
      py::arg("language"), py::arg("tokens"), py::arg("nonterminal") = py::none());
  m.def(
      "ood_set",
      [](const std::string& lang, int length, std::uint64_t seed, int per_class) {
        return samples_list(length_set(builtin_language(lang), length, seed, per_class));
      },
      py::arg("language"), py::arg("length"), py::arg("seed") = 0, py::arg("per_class") = 100);
  m.def(
      "pure_nested", [](int depth) { return pure_nested(builtin_language("arithmetic"), depth).tokens; },
      py::arg("depth"));

  py::class_<NcaModel>(m, "Nca")
      .def(py::init([](const std::string& language, int d, std::uint64_t seed) {
             NcaModel n;
             n.language = language;
             n.cfg.d = d;
             n.cfg.vocab_rows = builtin_language(language).vocab_rows();
             n.params = init_params(n.cfg, seed);
             return n;
           }),
           py::arg("language") = "arithmetic", py::arg("d") = 16, py::arg("seed") = 0)
      .def_static("load",
                  [](const std::string& path) {
                    NcaModel n;
                    const Archive a = read_archive(path);
                    nca_from_archive(a, n.cfg, n.params);
                    n.language = meta_or(a, "language", "arithmetic");
                    return n;
                  })
      .def("save", [](const NcaModel& n, const std::string& path) { save_nca(path, n.cfg, n.params, {{"language", n.language}}); })
      .def_property_readonly("d", [](const NcaModel& n) { return n.cfg.d; })
      .def_property_readonly("language", [](const NcaModel& n) { return n.language; })
      .def_property_readonly("param_count", [](const NcaModel& n) { return param_count(n.cfg); })
      .def(
          "infer",
          [](const NcaModel& n, const TokenSeq& t, bool trace) {
            InferOptions o;
            o.trace = trace;
            const InferenceResult r = [&] {
              py::gil_scoped_release nogil;
              return infer(n.cfg, n.params, t, o);
            }();
            return inference_dict(r, square_grid(static_cast<int>(t.size())));
          },
          py::arg("tokens"), py::arg("trace") = false)
      .def(
          "accuracy",
          [](const NcaModel& n, int length, std::uint64_t seed, int per_class) {
            const auto set = length_set(builtin_language(n.language), length, seed, per_class);
            py::gil_scoped_release nogil;
            return evaluate_nca(n.cfg, n.params, set);
          },
          py::arg("length"), py::arg("seed") = 0, py::arg("per_class") = 100);

  m.def(
      "train",
      [](const std::string& language, int d, int steps, std::uint64_t seed, bool deep_augment, int eval_every) {
        NcaModel n;
        n.language = language;
        n.cfg.d = d;
        n.cfg.vocab_rows = builtin_language(language).vocab_rows();
        TrainOptions o;
        o.total_steps = steps;
        o.eval_every = eval_every;
        o.gen.language = language;
        o.gen.deep_augment = deep_augment;
        o.gen.seed = seed;
        TrainResult r = [&] {
          py::gil_scoped_release nogil;
          return train_run(n.cfg, o, seed);
        }();
        n.params = std::move(r.params);
        return py::make_tuple(n, r.log.losses);
      },
      py::arg("language") = "arithmetic", py::arg("d") = 16, py::arg("steps") = 2000, py::arg("seed") = 0,
      py::arg("deep_augment") = false, py::arg("eval_every") = 0,
      "Trains an NCA; returns (model, per-step losses).");

  py::class_<TfModel>(m, "Transformer")
      .def_static("load",
                  [](const std::string& path) {
                    TfModel t;
                    load_tf(path, t.cfg, t.params);
                    return t;
                  })
      .def_property_readonly("param_count", [](const TfModel& t) { return t.params.scalar_count(); })
      .def("predict", [](const TfModel& t, const TokenSeq& tokens) { return tf_predict(t.cfg, t.params, tokens); })
      .def("attention", [](const TfModel& t, const TokenSeq& tokens) {
        const TfForward f = tf_forward(t.cfg, t.params, tokens, true);
        std::vector<std::vector<Mat<float>>> out = f.attention;
        return py::make_tuple(f.logit, out, locality(f).aggregate);
      });

  m.def(
      "run",
      [](const std::string& command, const std::map<std::string, std::string>& options) {
        RunConfig cfg(command_schema(command));
        for (const auto& [k, v] : options) cfg.set(k, v);
        py::gil_scoped_release nogil;
        return run_command(cfg);
      },
      py::arg("command"), py::arg("options") = std::map<std::string, std::string>{},
      "Runs a CLI command with string options; returns its exit code.");
  m.def("self_test", [] {
    std::vector<std::pair<std::string, bool>> out;
    for (const auto& s : run_self_test()) out.emplace_back(s.name, s.passed);
    return out;
  });
}
