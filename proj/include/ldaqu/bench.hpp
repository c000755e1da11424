#pragma once

#include <span>
#include <vector>

#include "ldaqu/oracle.hpp"
#include "ldaqu/upsample.hpp"

namespace ldaqu {

struct BenchRow {
  int size = 0;               // H = W
  std::int64_t tokens = 0;    // H * W input tokens
  oracle::FlopsBreakdown flops;
  double seconds = 0.0;       // wall time per forward
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double flops_exponent = 0.0;  // log-log slope of model FLOPs vs tokens
  double time_exponent = 0.0;   // log-log slope of wall time vs tokens
};

// Least-squares slope of log(y) against log(x).
double fit_loglog_exponent(std::span<const double> xs,
                           std::span<const double> ys);

// Times the full forward at each square size and fits the scaling exponents.
BenchResult run_bench(const UpsampleConfig& config, std::span<const int> sizes,
                      int channels, std::uint64_t seed);

}  // namespace ldaqu
