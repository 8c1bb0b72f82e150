#include "resa/experiment.hpp"

#include <chrono>

namespace resa {

void apply_task(RunConfig& run) {
  ModelConfig& m = run.model;
  if (run.task == "synthetic") {
    m.task = TaskKind::kSingle;
    m.classes = run.synthetic.classes;
  } else if (run.task == "snli") {
    m.task = TaskKind::kPairClassify;
    m.classes = kSnliClasses;
  } else if (run.task == "sick") {
    m.task = TaskKind::kPairRegress;
    m.classes = kSickClasses;
  } else {
    throw std::invalid_argument("unknown task '" + run.task + "' (synthetic, snli, sick)");
  }
}

namespace {

std::vector<PairExample> load_split(const std::string& path, PairFormat format, bool lowercase,
                                    const char* split) {
  if (path.empty()) throw DataError(std::string("missing ") + split + " path in config");
  TokenizerOptions tok;
  tok.lowercase = lowercase;
  return load_pair_dataset(path, format, tok).examples;
}

}  // namespace

PreparedData prepare_data(RunConfig& run) {
  apply_task(run);
  const std::size_t d = run.model.resa.hidden;
  PreparedData out;
  out.task = run.model.task;
  out.classes = run.model.classes;

  if (run.task == "synthetic") {
    const SyntheticSpec& spec = run.synthetic;
    SyntheticSpec test_spec = spec;
    test_spec.count = run.synthetic_test;
    test_spec.seed = spec.seed + 1;
    SyntheticSpec dev_spec = test_spec;
    dev_spec.seed = spec.seed + 2;
    out.vocab = synthetic_vocabulary(spec, d, run.train.seed);
    out.vocab.add(kUnknownToken, std::vector<Scalar>(d, 0), false);
    out.train = encode_fixed(generate_synthetic(spec), out.vocab);
    out.dev = encode_fixed(generate_synthetic(dev_spec), out.vocab);
    out.test = encode_fixed(generate_synthetic(test_spec), out.vocab);
    return out;
  }

  const PairFormat format = run.task == "snli" ? PairFormat::kSnliJsonl : PairFormat::kSickTsv;
  out.vocab = run.embeddings.empty() ? Vocabulary(d) : load_embeddings(run.embeddings, d);
  std::mt19937_64 oov(stream_id({run.train.seed, 0x00f}));
  out.vocab.lookup_or_add(kUnknownToken, oov);
  auto train = load_split(run.train_path, format, run.lowercase, "train");
  auto dev = load_split(run.dev_path, format, run.lowercase, "dev");
  auto test = load_split(run.test_path, format, run.lowercase, "test");
  out.train = encode_examples(train, out.vocab, oov);
  out.dev = encode_examples(dev, out.vocab, oov);
  out.test = encode_examples(test, out.vocab, oov);
  return out;
}

std::vector<std::size_t> encode_tokens(const Vocabulary& vocab,
                                       const std::vector<std::string>& tokens) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  std::optional<std::size_t> unk;
  for (const auto& t : tokens) {
    if (auto idx = vocab.find(t)) {
      ids.push_back(*idx);
      continue;
    }
    if (!unk) unk = vocab.find(kUnknownToken);
    if (!unk) throw DataError("token '" + t + "' is not in the vocabulary");
    ids.push_back(*unk);
  }
  return ids;
}

std::vector<EncodedExample> encode_fixed(const std::vector<PairExample>& examples,
                                         const Vocabulary& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const PairExample& ex : examples) {
    EncodedExample e;
    e.a = encode_tokens(vocab, ex.tokens_a);
    e.b = encode_tokens(vocab, ex.tokens_b);
    e.label = ex.label;
    e.rating = ex.rating;
    e.planted = ex.planted;
    out.push_back(std::move(e));
  }
  return out;
}

RunResult run_experiment(ResanModel& model, const PreparedData& data, const TrainConfig& train,
                         const std::function<void(const EpochMetrics&)>& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(model, train);
  RunResult r;
  r.epochs = trainer.fit(data.train, data.dev, on_epoch);
  r.final_phase = trainer.phase();
  r.switched_after = trainer.schedule().switched_after();
  const SelectMode mode =
      r.final_phase == Phase::kJoint ? model.config().resa.eval_select : SelectMode::kForceAll;
  r.test = evaluate(model, data.test, mode, train.seed);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<TraceRecord> trace_example(ResanModel& model, const EncodedExample& ex,
                                       const Vocabulary& vocab, SelectMode mode,
                                       std::uint64_t seed, std::size_t index) {
  Graph g;
  ForwardOptions fo;
  fo.mode = mode;
  fo.stream = RngStream(stream_id({seed, index}));
  fo.keep_attention = true;
  const ModelOutput out = model.forward(g, ex, fo);
  std::vector<TraceRecord> records;
  for (std::size_t s = 0; s < out.traces.size(); ++s) {
    TraceRecord r;
    r.example = index;
    r.sentence = s;
    for (std::size_t id : s == 0 ? ex.a : ex.b) r.tokens.push_back(vocab.token(id));
    r.trace = out.traces[s];
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace resa
