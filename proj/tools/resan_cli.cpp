#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "resa/bench.hpp"
#include "resa/experiment.hpp"
#include "resa/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace resa;

namespace {

struct TrainArgs {
  std::string task, config, variant, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, keep_prob;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

json eval_to_json(const EvalResult& r, TaskKind task) {
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

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json file_hashes(const RunConfig& run, const std::string& config_path) {
  json h = json::object();
  auto add = [&](const char* key, const std::string& path) {
    if (!path.empty()) h[key] = {{"path", path}, {"git_blob_sha1", content_hash(path)}};
  };
  add("config", config_path);
  add("embeddings", run.embeddings);
  if (run.task != "synthetic") {
    add("train", run.train_path);
    add("dev", run.dev_path);
    add("test", run.test_path);
  }
  return h;
}

int cmd_train(const TrainArgs& a, const std::string& command_line) {
  RunConfig run = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.task.empty()) run.task = a.task;
  if (a.seed) run.train.seed = *a.seed;
  if (!a.variant.empty()) run.model.resa.variant = parse_variant(a.variant);
  if (a.lambda) run.train.lambda = *a.lambda;
  if (a.keep_prob) run.train.keep_prob = *a.keep_prob;
  if (a.epochs) run.train.epochs = *a.epochs;
  run.train.validate();

  PreparedData data = prepare_data(run);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  write_json(out / "config.json", {{"command", command_line},
                                   {"run", to_json(run)},
                                   {"inputs", file_hashes(run, a.config)}});

  ResanModel model(run.model, data.vocab, run.train.seed);
  std::vector<json> records;
  const fs::path metrics_path = out / "metrics.jsonl";
  const RunResult result = run_experiment(model, data, run.train, [&](const EpochMetrics& m) {
    records.push_back(to_json(m, data.task));
    export_metrics(records, metrics_path.string());
    if (!a.quiet) std::printf("%s\n", records.back().dump().c_str());
  });

  save_checkpoint((out / "checkpoint.json").string(), model, data.vocab, to_json(run));
  json summary = {{"test", eval_to_json(result.test, data.task)},
                  {"final_phase", phase_name(result.final_phase)},
                  {"epochs", result.epochs.size()},
                  {"seconds", result.seconds}};
  summary["switched_after_epoch"] =
      result.switched_after ? json(*result.switched_after) : json(nullptr);
  write_json(out / "results.json", summary);
  std::printf("%s\n", summary.dump().c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_arg,
             const std::string& select, std::uint64_t seed) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  RunConfig run;
  merge_json(ck.run, run);
  apply_task(run);
  ResanModel& model = *ck.model;
  const SelectMode mode = select.empty() ? model.config().resa.eval_select : parse_select_mode(select);

  std::vector<EncodedExample> examples;
  if (run.task == "synthetic" && (data_arg == "test" || data_arg == "dev")) {
    SyntheticSpec spec = run.synthetic;
    spec.count = run.synthetic_test;
    spec.seed = run.synthetic.seed + (data_arg == "test" ? 1 : 2);
    examples = encode_fixed(generate_synthetic(spec), ck.vocab);
  } else {
    std::string path = data_arg;
    if (data_arg == "test") path = run.test_path;
    if (data_arg == "dev") path = run.dev_path;
    if (run.task == "synthetic") throw DataError("synthetic runs evaluate on 'test' or 'dev'");
    TokenizerOptions tok;
    tok.lowercase = run.lowercase;
    const PairFormat format = run.task == "snli" ? PairFormat::kSnliJsonl : PairFormat::kSickTsv;
    examples = encode_fixed(load_pair_dataset(path, format, tok).examples, ck.vocab);
  }
  const EvalResult r = evaluate(model, examples, mode, seed);
  json j = eval_to_json(r, model.config().task);
  j["select_mode"] = to_string(mode);
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

int cmd_trace(const std::string& checkpoint, const std::string& sentence,
              const std::string& second, const std::string& out, const std::string& select,
              std::uint64_t seed) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  RunConfig run;
  merge_json(ck.run, run);
  ResanModel& model = *ck.model;
  if (!model.resan()) throw std::invalid_argument("checkpoint has no attention encoder to trace");
  const bool pair = model.config().task != TaskKind::kSingle;
  if (pair && second.empty()) throw std::invalid_argument("pair task: --second is required");
  TokenizerOptions tok;
  tok.lowercase = run.lowercase;
  EncodedExample ex;
  ex.a = encode_tokens(ck.vocab, tokenize(sentence, tok));
  if (pair) ex.b = encode_tokens(ck.vocab, tokenize(second, tok));
  if (ex.a.empty() || (pair && ex.b.empty())) throw std::invalid_argument("empty sentence");
  const SelectMode mode = select.empty() ? model.config().resa.eval_select : parse_select_mode(select);
  const auto traces = trace_example(model, ex, ck.vocab, mode, seed);
  export_traces(traces, out);
  for (const auto& t : traces) {
    std::size_t heads = 0, deps = 0;
    for (auto z : t.trace.z_head) heads += z;
    for (auto z : t.trace.z_dep) deps += z;
    std::printf("sentence %zu: %zu tokens, %zu heads, %zu dependents, %zu pair evaluations\n",
                t.sentence, t.tokens.size(), heads, deps, t.trace.pair_evaluations);
  }
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_bench(const std::vector<std::size_t>& lengths, std::size_t repeats, std::size_t d,
              std::uint64_t seed, const std::string& json_out) {
  BenchOptions o;
  o.lengths = lengths;
  o.repeats = repeats;
  o.d = d;
  o.seed = seed;
  const auto rows = bench_sampling(o);
  std::printf("%s", format_bench_table(rows).c_str());
  if (!json_out.empty()) {
    json j = json::array();
    for (const auto& r : rows)
      j.push_back({{"n", r.n},
                   {"rss_ms", r.rss_ms},
                   {"iterative_ms", r.iterative_ms},
                   {"speedup", r.speedup()},
                   {"gap_ms", r.gap_ms()},
                   {"rss_params", r.rss_params},
                   {"iterative_params", r.iterative_params}});
    write_json(json_out, j);
  }
  return 0;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed) {
  GradcheckOptions o;
  o.instances = instances;
  o.seed = seed;
  const auto results = run_gradcheck_suite(o);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-40s %6zu coords  max rel err %.3e  %s\n", r.name.c_str(), r.coordinates,
                r.max_error, r.passed ? "ok" : "FAIL");
    ok &= r.passed;
  }
  std::printf("%s: %zu checks\n", ok ? "all passed" : "FAILED", results.size());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforced self-attention network: training and inspection"};
  app.require_subcommand(1);

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  double lambda = 0, keep = 0;
  std::size_t epochs = 0;
  auto* train = app.add_subcommand("train", "train a model and write metrics and a checkpoint");
  train->add_option("--task", ta.task, "synthetic, snli or sick")
      ->check(CLI::IsMember({"synthetic", "snli", "sick"}));
  train->add_option("--config", ta.config, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", train_seed, "training seed");
  train->add_option("--variant", ta.variant, "full, no_unselected_heads or single_rss");
  auto* lambda_opt = train->add_option("--lambda", lambda, "selection penalty");
  auto* keep_opt = train->add_option("--keep-prob", keep, "dropout keep probability");
  auto* epochs_opt = train->add_option("--epochs", epochs, "maximum epochs");
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_flag("--quiet", ta.quiet, "do not print per-epoch metrics");

  std::string checkpoint, data = "test", select;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "'test', 'dev' or a dataset file")->capture_default_str();
  eval->add_option("--select-mode", select, "sample, threshold or force-all");
  eval->add_option("--seed", eval_seed, "sampling seed");

  std::string sentence, second, trace_out;
  std::uint64_t trace_seed = 0;
  auto* trace = app.add_subcommand("trace", "export selections and attention for one input");
  trace->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  trace->add_option("--sentence", sentence, "input sentence (premise for pair tasks)")->required();
  trace->add_option("--second", second, "hypothesis for pair tasks");
  trace->add_option("--out", trace_out, "JSONL output path")->required();
  trace->add_option("--select-mode", select, "sample, threshold or force-all");
  trace->add_option("--seed", trace_seed, "sampling seed");

  std::vector<std::size_t> lengths{128, 256, 512, 1024};
  std::size_t repeats = 5, d = 16;
  std::uint64_t bench_seed = 1;
  std::string bench_json;
  auto* bench = app.add_subcommand("bench-sampling", "time parallel vs iterative selection");
  bench->add_option("--n", lengths, "sequence lengths")->capture_default_str()->delimiter(',');
  bench->add_option("--repeats", repeats, "timed repeats per length")->capture_default_str();
  bench->add_option("--d", d, "token width")->capture_default_str();
  bench->add_option("--seed", bench_seed, "parameter seed")->capture_default_str();
  bench->add_option("--json", bench_json, "also write rows as JSON");

  std::size_t instances = 3;
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gc->add_option("--instances", instances, "random instances per case")->capture_default_str();
  gc->add_option("--seed", gc_seed, "seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) {
      if (*seed_opt) ta.seed = train_seed;
      if (*lambda_opt) ta.lambda = lambda;
      if (*keep_opt) ta.keep_prob = keep;
      if (*epochs_opt) ta.epochs = epochs;
      return cmd_train(ta, command_line);
    }
    if (*eval) return cmd_eval(checkpoint, data, select, eval_seed);
    if (*trace) return cmd_trace(checkpoint, sentence, second, trace_out, select, trace_seed);
    if (*bench) return cmd_bench(lengths, repeats, d, bench_seed, bench_json);
    if (*gc) return cmd_gradcheck(instances, gc_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
