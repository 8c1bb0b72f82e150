#include "resa/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <utility>

namespace resa {

namespace {

template <typename E>
using NameTable = std::initializer_list<std::pair<E, const char*>>;

template <typename E>
std::string name_of(E v, NameTable<E> table) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  throw std::logic_error("unnamed enum value");
}

template <typename E>
E parse_name(const std::string& s, NameTable<E> table, const char* what) {
  std::string choices;
  for (const auto& [e, name] : table) {
    if (s == name) return e;
    choices += choices.empty() ? name : std::string(", ") + name;
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + s + "' (expected " + choices + ")");
}

constexpr NameTable<AttentionMode> kAttention{{AttentionMode::kMultiDim, "multi_dim"},
                                              {AttentionMode::kVanilla, "vanilla"}};
constexpr NameTable<Variant> kVariant{{Variant::kFull, "full"},
                                      {Variant::kNoUnselectedHeads, "no_unselected_heads"},
                                      {Variant::kSingleRss, "single_rss"}};
constexpr NameTable<SelectMode> kSelect{{SelectMode::kSample, "sample"},
                                        {SelectMode::kForceAll, "force-all"},
                                        {SelectMode::kThreshold, "threshold"}};
constexpr NameTable<BaseMask> kBase{{BaseMask::kDiagonal, "diagonal"},
                                    {BaseMask::kForward, "forward"},
                                    {BaseMask::kBackward, "backward"}};
constexpr NameTable<Activation> kActivation{{Activation::kTanh, "tanh"}, {Activation::kRelu, "relu"}};
constexpr NameTable<EncoderKind> kEncoder{{EncoderKind::kResan, "resan"}, {EncoderKind::kMeanPool, "mean_pool"}};
constexpr NameTable<TaskKind> kTask{{TaskKind::kSingle, "single"},
                                    {TaskKind::kPairClassify, "pair_classify"},
                                    {TaskKind::kPairRegress, "pair_regress"}};
constexpr NameTable<PenaltyCount> kPenalty{{PenaltyCount::kBoth, "both"}, {PenaltyCount::kHeadOnly, "head_only"}};
constexpr NameTable<Baseline> kBaseline{{Baseline::kNone, "none"},
                                         {Baseline::kRunningMean, "running_mean"},
                                         {Baseline::kLeaveOneOut, "leave_one_out"}};
constexpr NameTable<LabelRule> kRule{{LabelRule::kSumThreshold, "sum_threshold"},
                                     {LabelRule::kSumModulo, "sum_modulo"}};

}  // namespace

std::string to_string(AttentionMode v) { return name_of(v, kAttention); }
std::string to_string(Variant v) { return name_of(v, kVariant); }
std::string to_string(SelectMode v) { return name_of(v, kSelect); }
std::string to_string(BaseMask v) { return name_of(v, kBase); }
std::string to_string(Activation v) { return name_of(v, kActivation); }
std::string to_string(EncoderKind v) { return name_of(v, kEncoder); }
std::string to_string(TaskKind v) { return name_of(v, kTask); }
std::string to_string(PenaltyCount v) { return name_of(v, kPenalty); }
std::string to_string(LabelRule v) { return name_of(v, kRule); }
std::string to_string(Baseline v) { return name_of(v, kBaseline); }

AttentionMode parse_attention_mode(const std::string& s) { return parse_name(s, kAttention, "attention mode"); }
Variant parse_variant(const std::string& s) { return parse_name(s, kVariant, "variant"); }
SelectMode parse_select_mode(const std::string& s) { return parse_name(s, kSelect, "select mode"); }
BaseMask parse_base_mask(const std::string& s) { return parse_name(s, kBase, "base mask"); }
Activation parse_activation(const std::string& s) { return parse_name(s, kActivation, "activation"); }
EncoderKind parse_encoder(const std::string& s) { return parse_name(s, kEncoder, "encoder"); }
TaskKind parse_task_kind(const std::string& s) { return parse_name(s, kTask, "task kind"); }
PenaltyCount parse_penalty_count(const std::string& s) { return parse_name(s, kPenalty, "penalty count"); }
LabelRule parse_label_rule(const std::string& s) { return parse_name(s, kRule, "label rule"); }
Baseline parse_baseline(const std::string& s) { return parse_name(s, kBaseline, "baseline"); }

// ---- configuration --------------------------------------------------------

namespace {

/// Reads keys of a JSON object into fields, rejecting keys nobody claimed.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw std::invalid_argument(where_ + ": expected a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw std::invalid_argument(where_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(where_ + "." + key + ": " + e.what());
    }
  }
  template <typename E>
  void get_enum(const char* key, E& field, E (*parse)(const std::string&)) {
    std::string s;
    get(key, s);
    if (!s.empty()) field = parse(s);
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"hidden", c.resa.hidden},
          {"rss_hidden", c.resa.rss_hidden},
          {"attention", to_string(c.resa.attention)},
          {"variant", to_string(c.resa.variant)},
          {"eval_select", to_string(c.resa.eval_select)},
          {"base_mask", to_string(c.resa.base_mask)},
          {"rss_activation", to_string(c.resa.rss_activation)},
          {"c", c.resa.c},
          {"encoder", to_string(c.encoder)},
          {"task", to_string(c.task)},
          {"classes", c.classes},
          {"head_hidden", c.head_hidden}};
}

void merge_json(const json& j, ModelConfig& c) {
  Reader r(j, "model");
  r.get("hidden", c.resa.hidden);
  r.get("rss_hidden", c.resa.rss_hidden);
  r.get_enum("attention", c.resa.attention, parse_attention_mode);
  r.get_enum("variant", c.resa.variant, parse_variant);
  r.get_enum("eval_select", c.resa.eval_select, parse_select_mode);
  r.get_enum("base_mask", c.resa.base_mask, parse_base_mask);
  r.get_enum("rss_activation", c.resa.rss_activation, parse_activation);
  r.get("c", c.resa.c);
  r.get_enum("encoder", c.encoder, parse_encoder);
  r.get_enum("task", c.task, parse_task_kind);
  r.get("classes", c.classes);
  r.get("head_hidden", c.head_hidden);
}

json to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"lambda", c.lambda},
          {"keep_prob", c.keep_prob},
          {"patience", c.patience},
          {"delta", c.delta},
          {"max_warmup_epochs", c.max_warmup_epochs},
          {"rho", c.rho},
          {"eps", c.eps},
          {"learning_rate", c.learning_rate},
          {"sampler_learning_rate", c.sampler_learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"baseline", to_string(c.baseline)},
          {"baseline_decay", c.baseline_decay},
          {"penalty", to_string(c.penalty)},
          {"samples_per_item", c.samples_per_item}};
}

void merge_json(const json& j, TrainConfig& c) {
  Reader r(j, "train");
  r.get("gamma", c.gamma);
  r.get("lambda", c.lambda);
  r.get("keep_prob", c.keep_prob);
  r.get("patience", c.patience);
  r.get("delta", c.delta);
  r.get("max_warmup_epochs", c.max_warmup_epochs);
  r.get("rho", c.rho);
  r.get("eps", c.eps);
  r.get("learning_rate", c.learning_rate);
  r.get("sampler_learning_rate", c.sampler_learning_rate);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("seed", c.seed);
  r.get_enum("baseline", c.baseline, parse_baseline);
  r.get("baseline_decay", c.baseline_decay);
  r.get_enum("penalty", c.penalty, parse_penalty_count);
  r.get("samples_per_item", c.samples_per_item);
}

json to_json(const SyntheticSpec& s) {
  return {{"vocab_size", s.vocab_size},       {"min_length", s.min_length},
          {"max_length", s.max_length},       {"key_markers", s.key_markers},
          {"value_markers", s.value_markers}, {"min_distance", s.min_distance},
          {"distractor_rate", s.distractor_rate}, {"classes", s.classes},
          {"rule", to_string(s.rule)},        {"count", s.count},
          {"seed", s.seed}};
}

void merge_json(const json& j, SyntheticSpec& s) {
  Reader r(j, "synthetic");
  r.get("vocab_size", s.vocab_size);
  r.get("min_length", s.min_length);
  r.get("max_length", s.max_length);
  r.get("key_markers", s.key_markers);
  r.get("value_markers", s.value_markers);
  r.get("min_distance", s.min_distance);
  r.get("distractor_rate", s.distractor_rate);
  r.get("classes", s.classes);
  r.get_enum("rule", s.rule, parse_label_rule);
  r.get("count", s.count);
  r.get("seed", s.seed);
}

json to_json(const RunConfig& c) {
  return {{"task", c.task},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"synthetic", to_json(c.synthetic)},
          {"synthetic_test", c.synthetic_test},
          {"embeddings", c.embeddings},
          {"train_path", c.train_path},
          {"dev_path", c.dev_path},
          {"test_path", c.test_path},
          {"lowercase", c.lowercase}};
}

void merge_json(const json& j, RunConfig& c) {
  Reader r(j, "config");
  r.get("task", c.task);
  if (const json* m = r.child("model")) merge_json(*m, c.model);
  if (const json* t = r.child("train")) merge_json(*t, c.train);
  if (const json* s = r.child("synthetic")) merge_json(*s, c.synthetic);
  r.get("synthetic_test", c.synthetic_test);
  r.get("embeddings", c.embeddings);
  r.get("train_path", c.train_path);
  r.get("dev_path", c.dev_path);
  r.get("test_path", c.test_path);
  r.get("lowercase", c.lowercase);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("config " + path + ": " + e.what());
  }
  RunConfig c;
  merge_json(j, c);
  // Data paths in a config file are relative to the file itself.
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  for (std::string* p : {&c.embeddings, &c.train_path, &c.dev_path, &c.test_path})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  return c;
}

std::string content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path + " for hashing");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(data.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || !EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) ||
      !EVP_DigestUpdate(ctx.get(), header.data(), header.size()) ||
      !EVP_DigestUpdate(ctx.get(), data.data(), data.size()) ||
      !EVP_DigestFinal_ex(ctx.get(), digest.data(), &length))
    throw std::runtime_error("sha1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// ---- checkpoints ----------------------------------------------------------

json vocabulary_to_json(const Vocabulary& v) {
  json tokens = json::array(), trainable = json::array();
  for (std::size_t i = 0; i < v.size(); ++i) {
    tokens.push_back(v.token(i));
    trainable.push_back(v.trainable(i));
  }
  return {{"dim", v.dim()}, {"tokens", tokens}, {"trainable", trainable}, {"vectors", v.table()}};
}

Vocabulary vocabulary_from_json(const json& j) {
  const auto dim = j.at("dim").get<std::size_t>();
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto trainable = j.at("trainable").get<std::vector<bool>>();
  const auto vectors = j.at("vectors").get<std::vector<Scalar>>();
  if (trainable.size() != tokens.size() || vectors.size() != tokens.size() * dim)
    throw DataError("vocabulary record sizes disagree");
  Vocabulary v(dim);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!v.add(tokens[i], std::span<const Scalar>(vectors.data() + i * dim, dim), trainable[i]))
      throw DataError("vocabulary record repeats token '" + tokens[i] + "'");
  return v;
}

void save_checkpoint(const std::string& path, const ResanModel& model, const Vocabulary& vocab,
                     const json& run) {
  json params = json::object();
  for (const Parameter* p : model.params().all())
    params[p->name] = {{"shape", {p->shape.rows, p->shape.cols}}, {"values", p->value}};
  const json doc = {{"format", kCheckpointFormat},
                    {"version", kCheckpointVersion},
                    {"model", to_json(model.config())},
                    {"run", run},
                    {"vocabulary", vocabulary_to_json(vocab)},
                    {"parameters", params}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << doc.dump() << '\n';
  if (!out) throw DataError("failed writing checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) throw DataError(path + " is not a checkpoint");
  const int version = doc.value("version", 0);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path + " has unsupported version " + std::to_string(version));

  ModelConfig mc;
  merge_json(doc.at("model"), mc);
  LoadedCheckpoint ck;
  ck.vocab = vocabulary_from_json(doc.at("vocabulary"));
  ck.run = doc.value("run", json::object());
  ck.model = std::make_unique<ResanModel>(mc, ck.vocab, 0);
  const json& params = doc.at("parameters");
  for (Parameter* p : ck.model->params().all()) {
    if (!params.contains(p->name)) throw DataError("checkpoint lacks parameter " + p->name);
    const json& rec = params.at(p->name);
    const auto shape = rec.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p->shape.rows || shape[1] != p->shape.cols)
      throw DataError("checkpoint parameter " + p->name + " has shape " + rec.at("shape").dump() +
                      ", expected " + p->shape.str());
    p->value = rec.at("values").get<std::vector<Scalar>>();
  }
  if (params.size() != ck.model->params().all().size())
    throw DataError("checkpoint holds parameters the model does not define");
  return ck;
}

// ---- traces and metrics ---------------------------------------------------

json to_json(const TraceRecord& r) {
  const ResaTrace& t = r.trace;
  const std::size_t n = t.z_head.size();
  json rows = json::array();
  for (std::size_t j = 0; j < n && t.attention.size() == n * n; ++j)
    rows.push_back(std::vector<Scalar>(t.attention.begin() + j * n, t.attention.begin() + (j + 1) * n));
  return {{"example", r.example},   {"sentence", r.sentence},
          {"tokens", r.tokens},     {"z_head", t.z_head},
          {"z_dep", t.z_dep},       {"p_head", t.p_head},
          {"p_dep", t.p_dep},       {"attention", rows},
          {"gate_mean", t.gate_mean}, {"pair_evaluations", t.pair_evaluations}};
}

TraceRecord trace_from_json(const json& j) {
  TraceRecord r;
  r.example = j.value("example", std::size_t{0});
  r.sentence = j.value("sentence", std::size_t{0});
  r.tokens = j.value("tokens", std::vector<std::string>{});
  ResaTrace& t = r.trace;
  t.z_head = j.at("z_head").get<Selection>();
  t.z_dep = j.at("z_dep").get<Selection>();
  t.p_head = j.at("p_head").get<std::vector<Scalar>>();
  t.p_dep = j.at("p_dep").get<std::vector<Scalar>>();
  for (const auto& row : j.at("attention")) {
    const auto v = row.get<std::vector<Scalar>>();
    if (v.size() != t.z_head.size()) throw DataError("trace attention row has the wrong width");
    t.attention.insert(t.attention.end(), v.begin(), v.end());
  }
  t.gate_mean = j.at("gate_mean").get<std::vector<Scalar>>();
  t.pair_evaluations = j.value("pair_evaluations", std::size_t{0});
  return r;
}

namespace {

void write_lines(const std::vector<json>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const json& r : records) out << r.dump() << '\n';
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace

void export_traces(const std::vector<TraceRecord>& traces, const std::string& path) {
  std::vector<json> records;
  records.reserve(traces.size());
  for (const auto& t : traces) records.push_back(to_json(t));
  write_lines(records, path);
}

std::vector<TraceRecord> read_traces(const std::string& path) {
  std::vector<TraceRecord> out;
  for (const json& j : read_jsonl(path)) out.push_back(trace_from_json(j));
  return out;
}

json to_json(const EpochMetrics& m, TaskKind task) {
  json j = {{"epoch", m.epoch},
            {"phase", phase_name(m.phase)},
            {"train_loss", m.train_loss},
            {"dev_loss", m.dev.loss},
            {"mean_selection_fraction_head", m.dev.selection_head},
            {"mean_selection_fraction_dep", m.dev.selection_dep},
            {"mean_reward", m.mean_reward},
            {"planted_recall", m.dev.planted_recall},
            {"seconds", m.seconds}};
  if (task == TaskKind::kPairRegress) {
    j["dev_mse"] = m.dev.mse;
    j["dev_pearson"] = m.dev.pearson;
  } else {
    j["dev_accuracy"] = m.dev.accuracy;
  }
  return j;
}

void export_metrics(const std::vector<json>& records, const std::string& path) {
  write_lines(records, path);
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<json> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace resa
