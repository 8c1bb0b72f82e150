#pragma once

#include <functional>
#include <string>
#include <vector>

#include "resa/io.hpp"

namespace resa {

/// Token every vocabulary built here carries; unseen tokens at evaluation
/// time map to it.
inline constexpr const char* kUnknownToken = "<unk>";

struct PreparedData {
  Vocabulary vocab;
  TaskKind task = TaskKind::kSingle;
  std::size_t classes = 2;
  std::vector<EncodedExample> train, dev, test;
};

/// Task kind and class count implied by the task name.
void apply_task(RunConfig& run);

/// Builds the vocabulary and encodes all splits. Synthetic splits use the
/// generator seed for train, seed + 1 for test and seed + 2 for dev.
PreparedData prepare_data(RunConfig& run);

/// Maps tokens to ids without growing the vocabulary; unseen tokens go to
/// kUnknownToken. Throws DataError if the vocabulary has no such entry.
std::vector<std::size_t> encode_tokens(const Vocabulary& vocab,
                                       const std::vector<std::string>& tokens);
std::vector<EncodedExample> encode_fixed(const std::vector<PairExample>& examples,
                                         const Vocabulary& vocab);

struct RunResult {
  std::vector<EpochMetrics> epochs;
  EvalResult test;
  Phase final_phase = Phase::kWarmup;
  std::optional<std::size_t> switched_after;
  double seconds = 0;
};

/// Trains on data.train with data.dev driving the schedule, then evaluates on
/// data.test with the configured evaluation selection mode.
RunResult run_experiment(ResanModel& model, const PreparedData& data, const TrainConfig& train,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// One trace per sentence of the example, with attention rows kept.
std::vector<TraceRecord> trace_example(ResanModel& model, const EncodedExample& ex,
                                       const Vocabulary& vocab, SelectMode mode,
                                       std::uint64_t seed, std::size_t index = 0);

}  // namespace resa
