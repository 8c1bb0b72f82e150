#pragma once

#include <string>
#include <vector>

#include "resa/hard_attention.hpp"

namespace resa {

/// Widths giving the parallel and the iterative sampler exactly the same
/// number of parameters for token width d. The iterative state width is d.
struct SamplerDims {
  std::size_t d = 0;
  std::size_t rss_hidden = 0;
  std::size_t iterative_hidden = 0;
  std::size_t state = 0;
};

/// Throws if no matching pair exists with both hidden widths in [1, 4d].
SamplerDims matched_sampler_dims(std::size_t d);

std::size_t rss_parameter_count(std::size_t d, std::size_t hidden);
std::size_t iterative_parameter_count(std::size_t d, std::size_t state, std::size_t hidden);

struct BenchOptions {
  std::vector<std::size_t> lengths{128, 256, 512, 1024};
  std::size_t repeats = 5;
  std::size_t d = 16;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::size_t n = 0;
  double rss_ms = 0;        // median
  double iterative_ms = 0;  // median
  std::size_t rss_params = 0;
  std::size_t iterative_params = 0;

  double speedup() const { return rss_ms > 0 ? iterative_ms / rss_ms : 0; }
  double gap_ms() const { return iterative_ms - rss_ms; }
};

/// Wall-clock of one full selection (features, probabilities, draws and the
/// differentiable log-probability) on the graph, for both samplers.
std::vector<BenchRow> bench_sampling(const BenchOptions& options);

std::string format_bench_table(const std::vector<BenchRow>& rows);

}  // namespace resa
