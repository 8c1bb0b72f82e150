#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "resa/bench.hpp"
#include "resa/experiment.hpp"
#include "resa/gradcheck.hpp"

namespace py = pybind11;
using namespace resa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor matrix(Graph& g, const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const std::size_t rows = a.shape(0), cols = a.shape(1);
  std::vector<Scalar> v(a.data(), a.data() + rows * cols);
  return g.constant({rows, cols}, std::move(v));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Selection selection(const std::vector<int>& z) { return Selection(z.begin(), z.end()); }

std::vector<int> to_list(const Selection& z) { return std::vector<int>(z.begin(), z.end()); }

json eval_json(const EvalResult& r, TaskKind task) {
  json j = {{"count", r.count},
            {"loss", r.loss},
            {"mean_selection_fraction_head", r.selection_head},
            {"mean_selection_fraction_dep", r.selection_dep},
            {"planted_recall", r.planted_recall}};
  if (task == TaskKind::kPairRegress) {
    j["mse"] = r.mse;
    j["pearson"] = r.pearson;
  } else {
    j["accuracy"] = r.accuracy;
  }
  return j;
}

// Runs one experiment from a JSON run configuration and returns the result
// as JSON text. Writes a checkpoint when a path is given.
std::string train(const std::string& config, const std::string& checkpoint) {
  RunConfig run;
  merge_json(json::parse(config), run);
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, run.train.seed);
  const RunResult result = run_experiment(model, data, run.train);
  if (!checkpoint.empty()) save_checkpoint(checkpoint, model, data.vocab, to_json(run));
  json epochs = json::array();
  for (const EpochMetrics& m : result.epochs) epochs.push_back(to_json(m, data.task));
  json j = {{"test", eval_json(result.test, data.task)},
            {"epochs", epochs},
            {"final_phase", result.final_phase == Phase::kJoint ? "joint" : "warmup"},
            {"seconds", result.seconds}};
  j["switched_after_epoch"] = result.switched_after ? json(*result.switched_after) : json(nullptr);
  return j.dump();
}

class Model {
 public:
  explicit Model(const std::string& path) : ck_(load_checkpoint(path)) {
    merge_json(ck_.run, run_);
    apply_task(run_);
  }

  std::string predict(const std::string& sentence, const std::string& second,
                      const std::string& mode, std::uint64_t seed) {
    const EncodedExample ex = encode(sentence, second);
    Graph g;
    ForwardOptions fo;
    fo.mode = select_mode(mode);
    fo.stream = RngStream(seed);
    const ModelOutput out = ck_.model->forward(g, ex, fo);
    std::vector<Scalar> prob(out.logits.values().begin(), out.logits.values().end());
    const Scalar mx = *std::max_element(prob.begin(), prob.end());
    Scalar z = 0;
    for (Scalar& v : prob) z += (v = std::exp(v - mx));
    for (Scalar& v : prob) v /= z;
    json j = {{"probabilities", prob}};
    if (ck_.model->config().task == TaskKind::kPairRegress) {
      j["rating"] = expected_rating(prob);
    } else {
      j["label"] = std::max_element(prob.begin(), prob.end()) - prob.begin();
    }
    json sel = json::array();
    for (const SelectionSample& s : out.samples)
      sel.push_back({{"z_head", to_list(s.z_head)}, {"z_dep", to_list(s.z_dep)}});
    j["selections"] = sel;
    return j.dump();
  }

  std::string trace(const std::string& sentence, const std::string& second, const std::string& mode,
                    std::uint64_t seed) {
    const EncodedExample ex = encode(sentence, second);
    json j = json::array();
    for (const TraceRecord& r : trace_example(*ck_.model, ex, ck_.vocab, select_mode(mode), seed))
      j.push_back(to_json(r));
    return j.dump();
  }

  std::string config() const { return ck_.run.dump(); }

 private:
  SelectMode select_mode(const std::string& mode) const {
    return mode.empty() ? ck_.model->config().resa.eval_select : parse_select_mode(mode);
  }

  EncodedExample encode(const std::string& sentence, const std::string& second) const {
    TokenizerOptions tok;
    tok.lowercase = run_.lowercase;
    EncodedExample ex;
    ex.a = encode_tokens(ck_.vocab, tokenize(sentence, tok));
    const bool pair = ck_.model->config().task != TaskKind::kSingle;
    if (pair && second.empty()) throw std::invalid_argument("pair tasks need a second sentence");
    if (pair) ex.b = encode_tokens(ck_.vocab, tokenize(second, tok));
    return ex;
  }

  LoadedCheckpoint ck_;
  RunConfig run_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reinforced self-attention network core";
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& text, bool lowercase) {
    TokenizerOptions o;
    o.lowercase = lowercase;
    return tokenize(text, o);
  }, py::arg("text"), py::arg("lowercase") = true);

  m.def("rss_features", [](const Array& x) {
    Graph g;
    return to_array(rss_features(matrix(g, x)));
  }, py::arg("x"));

  m.def("rss_sample", [](const std::vector<double>& p, std::uint64_t seed, const std::string& mode) {
    std::vector<Scalar> ps(p.begin(), p.end());
    return to_list(rss_sample(ps, RngStream(seed), parse_select_mode(mode)));
  }, py::arg("p"), py::arg("seed") = 0, py::arg("mode") = "sample");

  m.def("rss_log_prob", [](const std::vector<int>& z, const std::vector<double>& p) {
    if (z.size() != p.size()) throw std::invalid_argument("z and p differ in length");
    std::vector<Scalar> ps(p.begin(), p.end());
    return double(rss_log_prob_value(selection(z), ps));
  }, py::arg("z"), py::arg("p"));

  m.def("rss_mask", [](const std::vector<int>& z_head, const std::vector<int>& z_dep) {
    const AttentionMask mask = build_rss_mask(selection(z_head), selection(z_dep));
    py::array_t<bool> out({mask.size(), mask.size()});
    auto o = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < mask.size(); ++i)
      for (std::size_t j = 0; j < mask.size(); ++j) o(i, j) = mask.open(i, j);
    return out;
  }, py::arg("z_head"), py::arg("z_dep"));

  m.def("reward", [](double log_likelihood, const std::vector<int>& z_head,
                     const std::vector<int>& z_dep, double lam, const std::string& penalty) {
    const Selection h = selection(z_head), d = selection(z_dep);
    return double(reward(log_likelihood, h, d, h.size(), lam, parse_penalty_count(penalty)));
  }, py::arg("log_likelihood"), py::arg("z_head"), py::arg("z_dep"), py::arg("lam"),
     py::arg("penalty") = "both");

  m.def("masked_softmax", [](const Array& scores, const py::array_t<bool>& open) {
    Graph g;
    const Tensor s = matrix(g, scores);
    if (open.size() != static_cast<py::ssize_t>(s.size())) throw std::invalid_argument("mask shape differs");
    std::vector<Scalar> mask(s.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = open.data()[i] ? Scalar(0) : kNegInf;
    return to_array(masked_softmax_rows(s, mask));
  }, py::arg("scores"), py::arg("open"));

  m.def("_generate_synthetic", [](const std::string& spec_json) {
    SyntheticSpec spec;
    merge_json(json::parse(spec_json), spec);
    json out = json::array();
    for (const PairExample& ex : generate_synthetic(spec))
      out.push_back({{"tokens", ex.tokens_a}, {"label", ex.label}, {"planted", ex.planted}});
    return out.dump();
  });

  m.def("content_hash", &content_hash, py::arg("path"));

  m.def("gradcheck", [](std::size_t instances, std::uint64_t seed) {
    GradcheckOptions o;
    o.instances = instances;
    o.seed = seed;
    py::list out;
    for (const GradcheckResult& r : run_gradcheck_suite(o)) {
      py::dict d;
      d["name"] = r.name;
      d["coordinates"] = r.coordinates;
      d["max_error"] = r.max_error;
      d["passed"] = r.passed;
      out.append(d);
    }
    return out;
  }, py::arg("instances") = 3, py::arg("seed") = 1);

  m.def("bench_sampling", [](const std::vector<std::size_t>& lengths, std::size_t repeats,
                             std::size_t d, std::uint64_t seed) {
    BenchOptions o;
    o.lengths = lengths;
    o.repeats = repeats;
    o.d = d;
    o.seed = seed;
    py::list out;
    for (const BenchRow& r : bench_sampling(o)) {
      py::dict row;
      row["n"] = r.n;
      row["rss_ms"] = r.rss_ms;
      row["iterative_ms"] = r.iterative_ms;
      row["rss_params"] = r.rss_params;
      row["iterative_params"] = r.iterative_params;
      row["speedup"] = r.speedup();
      out.append(row);
    }
    return out;
  }, py::arg("lengths"), py::arg("repeats") = 3, py::arg("d") = 16, py::arg("seed") = 1);

  m.def("_train", &train, py::arg("config"), py::arg("checkpoint") = "",
        py::call_guard<py::gil_scoped_release>());

  py::class_<Model>(m, "_Model")
      .def(py::init<const std::string&>())
      .def("predict", &Model::predict)
      .def("trace", &Model::trace)
      .def("config", &Model::config);
}
