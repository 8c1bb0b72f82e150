#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "resa/autodiff.hpp"
#include "resa/rng.hpp"

namespace resa {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token table with one embedding row per entry. Rows loaded from a vectors
/// file are fixed; rows added for unseen tokens are marked trainable.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }

  std::optional<std::size_t> find(const std::string& token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::span<const Scalar> vector(std::size_t index) const;
  bool trainable(std::size_t index) const { return trainable_.at(index) != 0; }

  /// Returns false (and leaves the table untouched) if the token exists.
  bool add(const std::string& token, std::span<const Scalar> vec, bool trainable);
  /// Index of token, adding it with a uniform(-0.05, 0.05) trainable vector if unseen.
  std::size_t lookup_or_add(const std::string& token, std::mt19937_64& rng);

  const std::vector<Scalar>& table() const { return vectors_; }
  const std::vector<unsigned char>& trainable_rows() const { return trainable_; }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> tokens_;
  std::vector<Scalar> vectors_;
  std::vector<unsigned char> trainable_;
};

inline constexpr double kOovRange = 0.05;

/// Text vectors format: a token followed by whitespace-separated floats per
/// line. Duplicate tokens keep their first occurrence and append a warning.
Vocabulary parse_embeddings(std::istream& in, std::size_t expected_dim,
                            std::vector<std::string>* warnings = nullptr);
Vocabulary load_embeddings(const std::string& path, std::size_t expected_dim,
                           std::vector<std::string>* warnings = nullptr);

struct TokenizerOptions {
  bool lowercase = true;
};

std::vector<std::string> tokenize(const std::string& text, const TokenizerOptions& options = {});

struct PairExample {
  std::vector<std::string> tokens_a;
  std::vector<std::string> tokens_b;  // empty for single-sentence tasks
  std::size_t label = 0;
  double rating = 0;
  std::vector<std::size_t> planted;  // ground-truth informative positions in tokens_a
};

enum class PairFormat { kSnliJsonl, kSickTsv };

struct PairDataset {
  std::vector<PairExample> examples;
  std::size_t skipped = 0;  // SNLI records without a gold label
};

inline constexpr std::size_t kSnliClasses = 3;  // entailment, neutral, contradiction
inline constexpr std::size_t kSickClasses = 5;

PairFormat parse_pair_format(const std::string& name);
PairDataset parse_pair_dataset(std::istream& in, PairFormat format,
                               const TokenizerOptions& tokenizer = {});
PairDataset load_pair_dataset(const std::string& path, PairFormat format,
                              const TokenizerOptions& tokenizer = {});

/// How the label depends on the planted (key, value) marker indices.
/// kSumThreshold buckets key + value into `classes` ordered bins, so each
/// marker alone is partially informative; kSumModulo uses (key + value) mod
/// classes, where neither marker alone says anything about the label.
enum class LabelRule { kSumThreshold, kSumModulo };

/// Single-sentence task whose label is a function of one key marker and one
/// value marker planted far apart among distractors.
struct SyntheticSpec {
  std::size_t vocab_size = 50;
  std::size_t min_length = 40;
  std::size_t max_length = 40;
  std::size_t key_markers = 4;
  std::size_t value_markers = 4;
  std::size_t min_distance = 20;
  double distractor_rate = 1.0;  // other positions hold a filler token otherwise
  std::size_t classes = 2;
  LabelRule rule = LabelRule::kSumThreshold;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
};

std::vector<PairExample> generate_synthetic(const SyntheticSpec& spec);
std::size_t synthetic_label(const SyntheticSpec& spec, std::size_t key, std::size_t value);

/// Every token of the synthetic task with a fixed N(0, 1) vector.
Vocabulary synthetic_vocabulary(const SyntheticSpec& spec, std::size_t dim, std::uint64_t seed);

}  // namespace resa
