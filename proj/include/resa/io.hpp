#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "resa/data.hpp"
#include "resa/model.hpp"
#include "resa/training.hpp"

namespace resa {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "resan-checkpoint";

// ---- enum names -----------------------------------------------------------

std::string to_string(AttentionMode v);
std::string to_string(Variant v);
std::string to_string(SelectMode v);
std::string to_string(BaseMask v);
std::string to_string(Activation v);
std::string to_string(EncoderKind v);
std::string to_string(TaskKind v);
std::string to_string(PenaltyCount v);
std::string to_string(LabelRule v);
std::string to_string(Baseline v);

AttentionMode parse_attention_mode(const std::string& s);
Variant parse_variant(const std::string& s);
SelectMode parse_select_mode(const std::string& s);
BaseMask parse_base_mask(const std::string& s);
Activation parse_activation(const std::string& s);
EncoderKind parse_encoder(const std::string& s);
TaskKind parse_task_kind(const std::string& s);
PenaltyCount parse_penalty_count(const std::string& s);
LabelRule parse_label_rule(const std::string& s);
Baseline parse_baseline(const std::string& s);

// ---- configuration --------------------------------------------------------

json to_json(const ModelConfig& c);
json to_json(const TrainConfig& c);
json to_json(const SyntheticSpec& s);
/// Missing keys keep the values already in `into`; unknown keys are errors.
void merge_json(const json& j, ModelConfig& into);
void merge_json(const json& j, TrainConfig& into);
void merge_json(const json& j, SyntheticSpec& into);

/// Everything a `train` run needs.
struct RunConfig {
  std::string task = "synthetic";  // synthetic | snli | sick
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synthetic;        // training split; test split uses seed + 1
  std::size_t synthetic_test = 1000;
  std::string embeddings;         // vectors file; empty means random fixed vectors
  std::string train_path, dev_path, test_path;
  bool lowercase = true;
};

json to_json(const RunConfig& c);
void merge_json(const json& j, RunConfig& into);
RunConfig load_run_config(const std::string& path);

/// Git blob id (sha1 of "blob <size>\0" + contents) of a file.
std::string content_hash(const std::string& path);

// ---- checkpoints ----------------------------------------------------------

json vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(const json& j);

void save_checkpoint(const std::string& path, const ResanModel& model, const Vocabulary& vocab,
                     const json& run = json::object());

struct LoadedCheckpoint {
  Vocabulary vocab;
  std::unique_ptr<ResanModel> model;
  json run;
};

/// Throws DataError on a missing file, wrong format or unsupported version.
LoadedCheckpoint load_checkpoint(const std::string& path);

// ---- traces and metrics ---------------------------------------------------

struct TraceRecord {
  std::size_t example = 0;
  std::size_t sentence = 0;
  std::vector<std::string> tokens;
  ResaTrace trace;
};

json to_json(const TraceRecord& r);
TraceRecord trace_from_json(const json& j);

/// One JSON object per line. Throws DataError if the file cannot be written.
void export_traces(const std::vector<TraceRecord>& traces, const std::string& path);
std::vector<TraceRecord> read_traces(const std::string& path);

json to_json(const EpochMetrics& m, TaskKind task);
void export_metrics(const std::vector<json>& records, const std::string& path);
std::vector<json> read_jsonl(const std::string& path);

}  // namespace resa
