#include "resa/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>

namespace resa {

std::size_t rss_parameter_count(std::size_t d, std::size_t hidden) {
  return hidden * 3 * d + hidden + hidden + 1;
}

std::size_t iterative_parameter_count(std::size_t d, std::size_t state, std::size_t hidden) {
  return hidden * (state + d) + hidden + hidden + 1 + state * state + state * (d + 1) + state;
}

SamplerDims matched_sampler_dims(std::size_t d) {
  if (d == 0) throw std::invalid_argument("matched_sampler_dims: d must be >= 1");
  SamplerDims best;
  std::size_t best_score = SIZE_MAX;
  for (std::size_t h = 1; h <= 4 * d; ++h) {
    const std::size_t target = iterative_parameter_count(d, d, h);
    // rss count is (3d + 2) * hidden + 1
    if ((target - 1) % (3 * d + 2) != 0) continue;
    const std::size_t r = (target - 1) / (3 * d + 2);
    if (r == 0 || r > 4 * d) continue;
    const std::size_t score = (h > d ? h - d : d - h) + (r > d ? r - d : d - r);
    if (score < best_score) {
      best_score = score;
      best = {d, r, h, d};
    }
  }
  if (best_score == SIZE_MAX)
    throw std::runtime_error("matched_sampler_dims: no equal-size configuration for d = " + std::to_string(d));
  return best;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <typename F>
double time_ms(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::vector<BenchRow> bench_sampling(const BenchOptions& options) {
  if (options.repeats == 0) throw std::invalid_argument("bench_sampling: repeats must be >= 1");
  const SamplerDims dims = matched_sampler_dims(options.d);
  ParameterSet set;
  RssParams rss = RssParams::create(set, "rss", dims.d, dims.rss_hidden);
  IterativeSamplerParams iter =
      IterativeSamplerParams::create(set, "iter", dims.d, dims.state, dims.iterative_hidden);
  set.initialize(options.seed);

  std::vector<BenchRow> rows;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  for (std::size_t n : options.lengths) {
    if (n == 0) throw std::invalid_argument("bench_sampling: lengths must be >= 1");
    std::vector<Scalar> x(n * dims.d);
    for (Scalar& v : x) v = static_cast<Scalar>(normal(rng));
    std::vector<double> rss_times, iter_times;
    // One untimed round first to warm caches and the allocator.
    for (std::size_t r = 0; r <= options.repeats; ++r) {
      const RngStream stream(stream_id({options.seed, n, r}));
      const double t_rss = time_ms([&] {
        Graph g;
        Tensor xt = g.constant({n, dims.d}, x);
        Tensor p = rss_probabilities(rss_features(xt), rss);
        Selection z = rss_sample(p.values(), stream, SelectMode::kSample);
        Tensor lp = rss_log_prob(z, p);
        (void)lp;
      });
      const double t_iter = time_ms([&] {
        Graph g;
        Tensor xt = g.constant({n, dims.d}, x);
        IterativeSample s = iterative_sample(xt, iter, stream, SelectMode::kSample);
        (void)s;
      });
      if (r == 0) continue;
      rss_times.push_back(t_rss);
      iter_times.push_back(t_iter);
    }
    BenchRow row;
    row.n = n;
    row.rss_ms = median(rss_times);
    row.iterative_ms = median(iter_times);
    row.rss_params = parameter_count(rss);
    row.iterative_params = parameter_count(iter);
    rows.push_back(row);
  }
  return rows;
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%6s  %10s  %12s  %8s  %10s  %10s  %10s\n", "n", "rss_ms", "iterative_ms",
                "speedup", "gap_ms", "rss_params", "iter_params");
  out << line;
  for (const BenchRow& r : rows) {
    std::snprintf(line, sizeof line, "%6zu  %10.3f  %12.3f  %8.2f  %10.3f  %10zu  %10zu\n", r.n, r.rss_ms,
                  r.iterative_ms, r.speedup(), r.gap_ms(), r.rss_params, r.iterative_params);
    out << line;
  }
  return out.str();
}

}  // namespace resa
