#include "resa/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace resa {

std::optional<std::size_t> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const Scalar> Vocabulary::vector(std::size_t index) const {
  if (index >= tokens_.size()) throw std::out_of_range("vocabulary index " + std::to_string(index));
  return std::span<const Scalar>(vectors_).subspan(index * dim_, dim_);
}

bool Vocabulary::add(const std::string& token, std::span<const Scalar> vec, bool trainable) {
  if (vec.size() != dim_)
    throw DataError("vector for '" + token + "' has " + std::to_string(vec.size()) +
                    " components, expected " + std::to_string(dim_));
  if (index_.count(token) != 0) return false;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  vectors_.insert(vectors_.end(), vec.begin(), vec.end());
  trainable_.push_back(trainable ? 1 : 0);
  return true;
}

std::size_t Vocabulary::lookup_or_add(const std::string& token, std::mt19937_64& rng) {
  if (auto idx = find(token)) return *idx;
  std::uniform_real_distribution<double> dist(-kOovRange, kOovRange);
  std::vector<Scalar> vec(dim_);
  for (Scalar& v : vec) v = static_cast<Scalar>(dist(rng));
  add(token, vec, true);
  return tokens_.size() - 1;
}

Vocabulary parse_embeddings(std::istream& in, std::size_t expected_dim,
                            std::vector<std::string>* warnings) {
  Vocabulary vocab(expected_dim);
  std::string line;
  std::size_t line_no = 0;
  std::vector<Scalar> vec;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    vec.clear();
    std::string num;
    while (fields >> num) {
      try {
        std::size_t used = 0;
        const double v = std::stod(num, &used);
        if (used != num.size()) throw std::invalid_argument(num);
        vec.push_back(static_cast<Scalar>(v));
      } catch (const std::exception&) {
        throw DataError("embeddings line " + std::to_string(line_no) + ": bad number '" + num + "'");
      }
    }
    if (vec.size() != expected_dim)
      throw DataError("embeddings line " + std::to_string(line_no) + ": " + std::to_string(vec.size()) +
                      " values, expected " + std::to_string(expected_dim));
    if (!vocab.add(token, vec, false) && warnings != nullptr)
      warnings->push_back("embeddings line " + std::to_string(line_no) + ": duplicate token '" + token +
                          "' ignored");
  }
  return vocab;
}

Vocabulary load_embeddings(const std::string& path, std::size_t expected_dim,
                           std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file " + path);
  return parse_embeddings(in, expected_dim, warnings);
}

std::vector<std::string> tokenize(const std::string& text, const TokenizerOptions& options) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (options.lowercase)
      std::transform(tok.begin(), tok.end(), tok.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(tok));
  }
  return out;
}

PairFormat parse_pair_format(const std::string& name) {
  if (name == "snli-jsonl" || name == "snli") return PairFormat::kSnliJsonl;
  if (name == "sick-tsv" || name == "sick") return PairFormat::kSickTsv;
  throw DataError("unknown dataset format '" + name + "'");
}

namespace {

std::size_t snli_label(const std::string& s, std::size_t record) {
  if (s == "entailment") return 0;
  if (s == "neutral") return 1;
  if (s == "contradiction") return 2;
  throw DataError("record " + std::to_string(record) + ": unknown label '" + s + "'");
}

PairDataset parse_snli(std::istream& in, const TokenizerOptions& tok) {
  PairDataset out;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++record;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("record " + std::to_string(record) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("sentence1") || !j.contains("sentence2") ||
        !j.contains("gold_label") || !j["sentence1"].is_string() || !j["sentence2"].is_string() ||
        !j["gold_label"].is_string())
      throw DataError("record " + std::to_string(record) +
                      ": expected string fields sentence1, sentence2, gold_label");
    const std::string gold = j["gold_label"].get<std::string>();
    if (gold == "-") {
      ++out.skipped;
      continue;
    }
    PairExample ex;
    ex.label = snli_label(gold, record);
    ex.tokens_a = tokenize(j["sentence1"].get<std::string>(), tok);
    ex.tokens_b = tokenize(j["sentence2"].get<std::string>(), tok);
    if (ex.tokens_a.empty() || ex.tokens_b.empty())
      throw DataError("record " + std::to_string(record) + ": empty sentence");
    out.examples.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    std::string field = line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(std::move(field));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

PairDataset parse_sick(std::istream& in, const TokenizerOptions& tok) {
  PairDataset out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const auto header = split_tabs(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("SICK header lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ca = column("sentence_A"), cb = column("sentence_B"), cr = column("relatedness_score");
  std::size_t record = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++record;
    const auto fields = split_tabs(line);
    if (fields.size() < header.size())
      throw DataError("record " + std::to_string(record) + ": " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(header.size()));
    PairExample ex;
    try {
      std::size_t used = 0;
      ex.rating = std::stod(fields[cr], &used);
      if (used != fields[cr].size()) throw std::invalid_argument(fields[cr]);
    } catch (const std::exception&) {
      throw DataError("record " + std::to_string(record) + ": bad relatedness score '" + fields[cr] + "'");
    }
    if (!(ex.rating >= 1.0 && ex.rating <= 5.0))
      throw DataError("record " + std::to_string(record) + ": relatedness score outside [1, 5]");
    ex.tokens_a = tokenize(fields[ca], tok);
    ex.tokens_b = tokenize(fields[cb], tok);
    if (ex.tokens_a.empty() || ex.tokens_b.empty())
      throw DataError("record " + std::to_string(record) + ": empty sentence");
    out.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

PairDataset parse_pair_dataset(std::istream& in, PairFormat format, const TokenizerOptions& tokenizer) {
  return format == PairFormat::kSnliJsonl ? parse_snli(in, tokenizer) : parse_sick(in, tokenizer);
}

PairDataset load_pair_dataset(const std::string& path, PairFormat format,
                              const TokenizerOptions& tokenizer) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  return parse_pair_dataset(in, format, tokenizer);
}

namespace {

struct SyntheticTokens {
  std::vector<std::string> keys, values, distractors;
  std::string filler;
};

SyntheticTokens synthetic_tokens(const SyntheticSpec& spec) {
  SyntheticTokens t;
  for (std::size_t k = 0; k < spec.key_markers; ++k) t.keys.push_back("key" + std::to_string(k));
  for (std::size_t v = 0; v < spec.value_markers; ++v) t.values.push_back("val" + std::to_string(v));
  const bool filler = spec.distractor_rate < 1.0;
  if (filler) t.filler = "_";
  const std::size_t reserved = spec.key_markers + spec.value_markers + (filler ? 1 : 0);
  for (std::size_t i = reserved; i < spec.vocab_size; ++i)
    t.distractors.push_back("tok" + std::to_string(i - reserved));
  return t;
}

void validate(const SyntheticSpec& spec) {
  auto fail = [](const std::string& why) { throw std::invalid_argument("infeasible synthetic spec: " + why); };
  if (spec.classes < 2) fail("need at least 2 classes");
  if (spec.min_length < 4 || spec.max_length < spec.min_length) fail("lengths must satisfy 4 <= min <= max");
  if (spec.key_markers == 0 || spec.value_markers == 0) fail("need key and value markers");
  for (std::size_t c = 0; c < spec.classes; ++c) {
    bool reachable = false;
    for (std::size_t k = 0; k < spec.key_markers; ++k)
      for (std::size_t v = 0; v < spec.value_markers; ++v) reachable |= synthetic_label(spec, k, v) == c;
    if (!reachable) fail("class " + std::to_string(c) + " cannot be produced by any marker pair");
  }
  if (spec.min_distance + 1 > spec.min_length) fail("sequence too short for the marker distance");
  if (spec.distractor_rate < 0 || spec.distractor_rate > 1) fail("distractor rate outside [0, 1]");
  const std::size_t reserved = spec.key_markers + spec.value_markers + (spec.distractor_rate < 1 ? 1 : 0);
  if (spec.vocab_size <= reserved && spec.distractor_rate > 0) fail("vocabulary leaves no distractor tokens");
}

}  // namespace

std::size_t synthetic_label(const SyntheticSpec& spec, std::size_t key, std::size_t value) {
  if (spec.rule == LabelRule::kSumModulo) return (key + value) % spec.classes;
  const std::size_t span = spec.key_markers + spec.value_markers - 1;
  return std::min(spec.classes - 1, spec.classes * (key + value) / span);
}

std::vector<PairExample> generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const SyntheticTokens t = synthetic_tokens(spec);
  std::mt19937_64 rng(stream_id({spec.seed, 0x5e7}));
  std::vector<PairExample> out;
  out.reserve(spec.count);
  for (std::size_t e = 0; e < spec.count; ++e) {
    const std::size_t label = e % spec.classes;
    const std::size_t len = std::uniform_int_distribution<std::size_t>(spec.min_length, spec.max_length)(rng);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t k = 0; k < spec.key_markers; ++k)
      for (std::size_t v = 0; v < spec.value_markers; ++v)
        if (synthetic_label(spec, k, v) == label) pairs.emplace_back(k, v);
    const auto [key, value] = pairs[std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng)];

    std::uniform_int_distribution<std::size_t> pos(0, len - 1);
    std::size_t kp = 0, vp = 0;
    do {
      kp = pos(rng);
      vp = pos(rng);
    } while ((kp > vp ? kp - vp : vp - kp) < spec.min_distance);

    PairExample ex;
    ex.label = label;
    ex.tokens_a.resize(len);
    std::bernoulli_distribution distract(spec.distractor_rate);
    std::uniform_int_distribution<std::size_t> pick(0, t.distractors.empty() ? 0 : t.distractors.size() - 1);
    for (std::size_t i = 0; i < len; ++i)
      ex.tokens_a[i] = distract(rng) ? t.distractors[pick(rng)] : t.filler;
    ex.tokens_a[kp] = t.keys[key];
    ex.tokens_a[vp] = t.values[value];
    ex.planted = {std::min(kp, vp), std::max(kp, vp)};
    out.push_back(std::move(ex));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

Vocabulary synthetic_vocabulary(const SyntheticSpec& spec, std::size_t dim, std::uint64_t seed) {
  const SyntheticTokens t = synthetic_tokens(spec);
  Vocabulary vocab(dim);
  std::mt19937_64 rng(stream_id({seed, 0xe3b}));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Scalar> vec(dim);
  auto add = [&](const std::string& tok) {
    for (Scalar& v : vec) v = static_cast<Scalar>(dist(rng));
    vocab.add(tok, vec, false);
  };
  for (const auto& k : t.keys) add(k);
  for (const auto& v : t.values) add(v);
  if (!t.filler.empty()) add(t.filler);
  for (const auto& d : t.distractors) add(d);
  return vocab;
}

}  // namespace resa
