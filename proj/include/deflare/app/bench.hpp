#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deflare/app/common.hpp"
#include "deflare/model/attention.hpp"
#include "deflare/synth/rng.hpp"

namespace deflare::app {

struct BenchOptions {
  std::vector<std::size_t> sizes{256, 512, 1024, 2048, 4096};
  std::size_t dim = 16;      // feature width of queries/keys/values
  std::size_t repeats = 3;   // timing is the minimum over repeats
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
};

struct BenchRow {
  std::size_t tokens = 0;
  double linear_s = 0;
  double quadratic_s = 0;
  double max_abs_diff = 0;
};

template <class F>
double min_time(std::size_t repeats, F&& f) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

// Single-precision timings of the linear path against the N x N oracle.
inline std::vector<BenchRow> bench_attention(const BenchOptions& o) {
  std::vector<BenchRow> rows;
  for (std::size_t n : o.sizes) {
    if (n == 0) throw UsageError("benchmark sizes must be >= 1");
    Rng rng(Rng(o.seed).fork(n).next_u64());
    auto make = [&] {
      Tensor<float> t(Shape{n, o.dim});
      for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
      return t;
    };
    const Tensor<float> q = make(), k = make(), v = make();
    Tensor<float> lin, quad;
    BenchRow row;
    row.tokens = n;
    row.linear_s = min_time(o.repeats, [&] { lin = linear_attention(q, k, v, 1e-6f); });
    row.quadratic_s = min_time(o.repeats, [&] { quad = quadratic_attention(q, k, v, 1e-6f); });
    row.max_abs_diff = static_cast<double>(max_abs_diff(lin, quad));
    rows.push_back(row);
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "tokens,linear_seconds,quadratic_seconds,max_abs_diff\n";
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.3g\n", r.tokens, r.linear_s, r.quadratic_s, r.max_abs_diff);
    os << line;
  }
  return os.str();
}

inline std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "tokens,linear_seconds,quadratic_seconds,max_abs_diff") throw IoError("unexpected benchmark header");
  std::vector<BenchRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    BenchRow r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &r.tokens, &r.linear_s, &r.quadratic_s, &r.max_abs_diff) != 4) {
      throw IoError("bad benchmark row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace deflare::app
