#include "ldaqu/bench.hpp"

#include <chrono>
#include <cmath>

namespace ldaqu {

double fit_loglog_exponent(std::span<const double> xs,
                           std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw ConfigError("fit_loglog_exponent: need >= 2 paired samples");
  }
  const std::size_t n = xs.size();
  double mx = 0.0, my = 0.0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  return num / den;
}

BenchResult run_bench(const UpsampleConfig& config, std::span<const int> sizes,
                      int channels, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  BenchResult result;
  std::vector<double> tokens, times, model;
  for (const int s : sizes) {
    Rng rng(seed);
    Tensor<double> x(1, channels, s, s);
    fill_normal(x, rng);
    const LdaAquWeights<double> w = init_weights<double>(config, channels, rng);

    auto run_once = [&] { (void)lda_aqu_upsample(x, w, config); };
    run_once();  // warmup

    const auto t0 = clock::now();
    run_once();
    const double first =
        std::chrono::duration<double>(clock::now() - t0).count();
    const int reps = std::max(1, static_cast<int>(std::ceil(0.12 / std::max(first, 1e-4))));
    const auto t1 = clock::now();
    for (int i = 0; i < reps; ++i) run_once();
    const double per_run =
        std::chrono::duration<double>(clock::now() - t1).count() / reps;

    BenchRow row;
    row.size = s;
    row.tokens = static_cast<std::int64_t>(s) * s;
    row.flops = oracle::flops(config, s, s, channels);
    row.seconds = per_run;
    result.rows.push_back(row);

    tokens.push_back(static_cast<double>(row.tokens));
    times.push_back(per_run);
    model.push_back(row.flops.total);
  }
  result.flops_exponent = fit_loglog_exponent(tokens, model);
  result.time_exponent = fit_loglog_exponent(tokens, times);
  return result;
}

}  // namespace ldaqu
