#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "resa/experiment.hpp"
#include "resa/io.hpp"

using namespace resa;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "resa_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST(Embeddings, ParseFidelity) {
  std::istringstream in("the 0.125 -1.5 3\ncat 1e-3 2 -0.25\n");
  const Vocabulary v = parse_embeddings(in, 3);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.token(1), "cat");
  const auto cat = v.vector(*v.find("cat"));
  EXPECT_EQ(std::vector<Scalar>(cat.begin(), cat.end()), (std::vector<Scalar>{1e-3, 2, -0.25}));
  EXPECT_FALSE(v.trainable(0));
}

TEST(Embeddings, WrongWidthNamesLine) {
  std::istringstream in("a 1 2 3\nb 1 2\n");
  try {
    parse_embeddings(in, 3);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream bad("a 1 x 3\n");
  EXPECT_THROW(parse_embeddings(bad, 3), DataError);
}

TEST(Embeddings, DuplicatesKeepFirstAndWarn) {
  std::istringstream in("a 1 1\nb 2 2\na 3 3\n");
  std::vector<std::string> warnings;
  const Vocabulary v = parse_embeddings(in, 2, &warnings);
  EXPECT_EQ(v.size(), 2u);
  EXPECT_EQ(v.vector(0)[0], 1);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("line 3"), std::string::npos);
}

TEST(Embeddings, UnseenTokensAreSmallAndTrainable) {
  Vocabulary v(50);
  std::mt19937_64 rng(1);
  const std::size_t id = v.lookup_or_add("zebra", rng);
  EXPECT_TRUE(v.trainable(id));
  for (Scalar x : v.vector(id)) EXPECT_LE(std::abs(x), kOovRange);
  EXPECT_EQ(v.lookup_or_add("zebra", rng), id);
  EXPECT_THROW(load_embeddings("/nonexistent/vectors.txt", 3), DataError);
}

TEST(Tokenizer, WhitespaceAndCase) {
  EXPECT_EQ(tokenize("  A Man\tsleeps.\n"), (std::vector<std::string>{"a", "man", "sleeps."}));
  TokenizerOptions keep;
  keep.lowercase = false;
  EXPECT_EQ(tokenize("A b", keep), (std::vector<std::string>{"A", "b"}));
}

TEST(PairData, SnliJsonl) {
  std::istringstream in(
      R"({"sentence1": "A dog runs.", "sentence2": "An animal moves.", "gold_label": "entailment"})" "\n"
      R"({"sentence1": "A dog runs.", "sentence2": "A cat sleeps.", "gold_label": "contradiction"})" "\n"
      R"({"sentence1": "A dog runs.", "sentence2": "It is fast.", "gold_label": "-"})" "\n"
      R"({"sentence1": "Kids play.", "sentence2": "Kids are outside.", "gold_label": "neutral"})" "\n");
  const PairDataset d = parse_pair_dataset(in, PairFormat::kSnliJsonl);
  ASSERT_EQ(d.examples.size(), 3u);
  EXPECT_EQ(d.skipped, 1u);
  EXPECT_EQ(d.examples[0].label, 0u);
  EXPECT_EQ(d.examples[1].label, 2u);
  EXPECT_EQ(d.examples[2].label, 1u);
  EXPECT_EQ(d.examples[0].tokens_b, (std::vector<std::string>{"an", "animal", "moves."}));

  std::istringstream broken("{\"sentence1\": \"x\"}\n");
  EXPECT_THROW(parse_pair_dataset(broken, PairFormat::kSnliJsonl), DataError);
  std::istringstream label(R"({"sentence1": "a", "sentence2": "b", "gold_label": "maybe"})");
  EXPECT_THROW(parse_pair_dataset(label, PairFormat::kSnliJsonl), DataError);
}

TEST(PairData, SickTsv) {
  std::istringstream in(
      "pair_ID\tsentence_A\tsentence_B\trelatedness_score\tentailment_judgment\n"
      "1\tA man plays\tA person plays\t4.5\tENTAILMENT\n"
      "2\tA cat\tA car\t1.2\tNEUTRAL\n");
  const PairDataset d = parse_pair_dataset(in, PairFormat::kSickTsv);
  ASSERT_EQ(d.examples.size(), 2u);
  EXPECT_DOUBLE_EQ(d.examples[0].rating, 4.5);
  EXPECT_EQ(d.examples[1].tokens_b, (std::vector<std::string>{"a", "car"}));

  std::istringstream range("sentence_A\tsentence_B\trelatedness_score\nx\ty\t7\n");
  EXPECT_THROW(parse_pair_dataset(range, PairFormat::kSickTsv), DataError);
  std::istringstream header("a\tb\nx\ty\n");
  EXPECT_THROW(parse_pair_dataset(header, PairFormat::kSickTsv), DataError);
  EXPECT_EQ(parse_pair_format("snli"), PairFormat::kSnliJsonl);
  EXPECT_THROW(parse_pair_format("csv"), DataError);
}

TEST(Synthetic, DeterministicAndWellFormed) {
  SyntheticSpec spec;
  spec.count = 200;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens_a, b[i].tokens_a);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  for (const PairExample& ex : a) {
    EXPECT_EQ(ex.tokens_a.size(), 40u);
    EXPECT_TRUE(ex.tokens_b.empty());
    std::size_t keys = 0, values = 0;
    std::optional<std::size_t> k, v;
    for (std::size_t i = 0; i < ex.tokens_a.size(); ++i) {
      const std::string& t = ex.tokens_a[i];
      if (t.rfind("key", 0) == 0) ++keys, k = std::stoul(t.substr(3));
      if (t.rfind("val", 0) == 0) ++values, v = std::stoul(t.substr(3));
    }
    EXPECT_EQ(keys, 1u);
    EXPECT_EQ(values, 1u);
    ASSERT_EQ(ex.planted.size(), 2u);
    const std::size_t gap = ex.planted[0] > ex.planted[1] ? ex.planted[0] - ex.planted[1]
                                                          : ex.planted[1] - ex.planted[0];
    EXPECT_GE(gap, spec.min_distance);
    EXPECT_EQ(ex.label, synthetic_label(spec, *k, *v));
  }
}

TEST(Synthetic, ClassesAreBalanced) {
  SyntheticSpec spec;
  spec.count = 10000;
  std::map<std::size_t, std::size_t> counts;
  for (const PairExample& ex : generate_synthetic(spec)) ++counts[ex.label];
  ASSERT_EQ(counts.size(), 2u);
  for (const auto& [label, c] : counts) {
    EXPECT_GE(c / 10000.0, 0.45);
    EXPECT_LE(c / 10000.0, 0.55);
  }
}

TEST(Synthetic, InfeasibleSpecsThrow) {
  SyntheticSpec tight;
  tight.min_length = tight.max_length = 10;
  EXPECT_THROW(generate_synthetic(tight), std::invalid_argument);
  SyntheticSpec classes;
  classes.classes = 1;
  EXPECT_THROW(generate_synthetic(classes), std::invalid_argument);
}

TEST(Synthetic, ModuloRuleDependsOnBothMarkers) {
  SyntheticSpec spec;
  spec.rule = LabelRule::kSumModulo;
  spec.classes = 2;
  for (std::size_t k = 0; k < spec.key_markers; ++k) {
    std::size_t ones = 0;
    for (std::size_t v = 0; v < spec.value_markers; ++v) ones += synthetic_label(spec, k, v);
    EXPECT_EQ(ones, spec.value_markers / 2);
  }
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig run;
  run.task = "sick";
  run.model.resa.variant = Variant::kSingleRss;
  run.model.resa.attention = AttentionMode::kVanilla;
  run.train.lambda = 0.005;
  run.train.baseline = Baseline::kRunningMean;
  run.synthetic.rule = LabelRule::kSumModulo;
  const json j = to_json(run);
  RunConfig back;
  merge_json(j, back);
  EXPECT_EQ(to_json(back), j);

  RunConfig partial;
  merge_json(json::parse(R"({"train": {"lambda": 0.02}})"), partial);
  EXPECT_DOUBLE_EQ(partial.train.lambda, 0.02);
  EXPECT_DOUBLE_EQ(partial.train.keep_prob, TrainConfig{}.keep_prob);

  EXPECT_THROW(merge_json(json::parse(R"({"train": {"lamda": 0.02}})"), partial), std::invalid_argument);
  EXPECT_THROW(merge_json(json::parse(R"({"model": {"variant": "half"}})"), partial), std::invalid_argument);

  const fs::path p = temp_path("run.json");
  write_file(p, R"({"task": "synthetic", "synthetic": {"count": 12}})");
  EXPECT_EQ(load_run_config(p.string()).synthetic.count, 12u);

  write_file(p, R"({"task": "snli", "train_path": "data/train.jsonl", "test_path": "/abs/test.jsonl"})");
  const RunConfig rel = load_run_config(p.string());
  EXPECT_EQ(rel.train_path, (p.parent_path() / "data/train.jsonl").string());
  EXPECT_EQ(rel.test_path, "/abs/test.jsonl");
  EXPECT_TRUE(rel.dev_path.empty());
}

TEST(ContentHash, MatchesGitBlobId) {
  const fs::path p = temp_path("hello.txt");
  write_file(p, "hello\n");
  EXPECT_EQ(content_hash(p.string()), "ce013625030ba8dba906f756967f9e9ca394464a");
  const fs::path e = temp_path("empty.txt");
  write_file(e, "");
  EXPECT_EQ(content_hash(e.string()), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  RunConfig run;
  run.synthetic.count = 8;
  run.synthetic_test = 8;
  run.model.resa.hidden = 6;
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, 5);
  const fs::path p = temp_path("ck.json");
  save_checkpoint(p.string(), model, data.vocab, to_json(run));
  LoadedCheckpoint ck = load_checkpoint(p.string());
  EXPECT_EQ(ck.vocab.size(), data.vocab.size());
  EXPECT_EQ(ck.run.at("task"), "synthetic");
  for (const EncodedExample& ex : data.test) {
    Graph g1, g2;
    ForwardOptions fo;
    fo.stream = RngStream(4);
    const ModelOutput a = model.forward(g1, ex, fo);
    const ModelOutput b = ck.model->forward(g2, ex, fo);
    for (std::size_t c = 0; c < a.logits.size(); ++c) EXPECT_DOUBLE_EQ(a.logits.values()[c], b.logits.values()[c]);
  }
}

TEST(Checkpoint, RejectsWrongFormatAndVersion) {
  const fs::path p = temp_path("bad.json");
  write_file(p, R"({"format": "other", "version": 1})");
  EXPECT_THROW(load_checkpoint(p.string()), DataError);
  write_file(p, R"({"format": "resan-checkpoint", "version": 99})");
  EXPECT_THROW(load_checkpoint(p.string()), DataError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.json").string()), DataError);
}

TEST(Traces, ExportRoundTrip) {
  RunConfig run;
  run.synthetic.count = 2;
  run.synthetic_test = 2;
  run.model.resa.hidden = 6;
  PreparedData data = prepare_data(run);
  ResanModel model(run.model, data.vocab, 5);
  std::vector<TraceRecord> traces = trace_example(model, data.test[0], data.vocab, SelectMode::kSample, 3);
  const auto more = trace_example(model, data.test[1], data.vocab, SelectMode::kThreshold, 3, 1);
  traces.insert(traces.end(), more.begin(), more.end());
  const fs::path p = temp_path("traces.jsonl");
  export_traces(traces, p.string());
  const auto back = read_traces(p.string());
  ASSERT_EQ(back.size(), traces.size());
  for (std::size_t t = 0; t < traces.size(); ++t) {
    EXPECT_EQ(back[t].tokens, traces[t].tokens);
    EXPECT_EQ(back[t].trace.z_head, traces[t].trace.z_head);
    EXPECT_EQ(back[t].trace.z_dep, traces[t].trace.z_dep);
    ASSERT_EQ(back[t].trace.attention.size(), traces[t].trace.attention.size());
    for (std::size_t k = 0; k < traces[t].trace.attention.size(); ++k)
      EXPECT_NEAR(back[t].trace.attention[k], traces[t].trace.attention[k], 1e-15);
  }
}

TEST(Traces, TwoTokenTraceHasTwoByTwoBlock) {
  Vocabulary vocab(4);
  std::mt19937_64 rng(1);
  PairExample ex;
  ex.tokens_a = {"hello", "world"};
  std::vector<EncodedExample> data = encode_examples({ex}, vocab, rng);
  ModelConfig mc;
  mc.resa.hidden = 4;
  ResanModel model(mc, vocab, 1);
  const auto traces = trace_example(model, data[0], vocab, SelectMode::kForceAll, 1);
  ASSERT_EQ(traces.size(), 1u);
  EXPECT_EQ(traces[0].trace.attention.size(), 4u);
  const json j = to_json(traces[0]);
  EXPECT_EQ(j.at("attention").size(), 2u);
  EXPECT_EQ(j.at("attention")[0].size(), 2u);
}

TEST(Metrics, ExportAndRead) {
  EpochMetrics m;
  m.epoch = 3;
  m.phase = Phase::kJoint;
  m.dev.accuracy = 0.75;
  const fs::path p = temp_path("metrics.jsonl");
  export_metrics({to_json(m, TaskKind::kSingle), to_json(m, TaskKind::kPairRegress)}, p.string());
  const auto rows = read_jsonl(p.string());
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].at("phase"), "joint");
  EXPECT_DOUBLE_EQ(rows[0].at("dev_accuracy").get<double>(), 0.75);
  EXPECT_TRUE(rows[1].contains("dev_pearson"));
  for (const char* key : {"epoch", "train_loss", "dev_loss", "mean_selection_fraction_head",
                          "mean_selection_fraction_dep", "mean_reward"})
    EXPECT_TRUE(rows[0].contains(key)) << key;
}

TEST(Experiment, UnknownTokensMapToUnk) {
  RunConfig run;
  run.synthetic.count = 2;
  run.synthetic_test = 2;
  run.model.resa.hidden = 4;
  PreparedData data = prepare_data(run);
  const auto ids = encode_tokens(data.vocab, {"key1", "never-seen"});
  EXPECT_EQ(data.vocab.token(ids[0]), "key1");
  EXPECT_EQ(data.vocab.token(ids[1]), kUnknownToken);
  Vocabulary bare(2);
  EXPECT_THROW(encode_tokens(bare, {"x"}), DataError);
  RunConfig bad;
  bad.task = "mnist";
  EXPECT_THROW(prepare_data(bad), std::invalid_argument);
}
