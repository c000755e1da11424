#include "ldaqu/trainer.hpp"

#include <cmath>

#include "ldaqu/oracle.hpp"

namespace ldaqu {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDivergenceCap = 1e6;

}  // namespace

Coord task_shift(int ox, int oy, int out_w, int out_h) {
  // fixed smooth field; component magnitudes stay within 2 input pixels and
  // the mean is deliberately nonzero so constant offsets already help
  const double u = static_cast<double>(ox) / out_w;
  const double v = static_cast<double>(oy) / out_h;
  return {0.9 + 1.1 * std::sin(2.0 * kPi * u) * std::cos(kPi * v),
          -0.6 + 0.9 * std::sin(kPi * v) * std::cos(2.0 * kPi * u)};
}

ToyTask make_task(TaskKind kind, int n, int channels, int h, int w,
                  double alpha, Rng& rng) {
  if (n < 1 || channels < 1 || h < 1 || w < 1) {
    throw DimError("make_task: extents must be positive");
  }
  ToyTask task;
  task.kind = kind;
  task.alpha = alpha;
  task.inputs = Tensor<double>(n, channels, h, w);
  fill_normal(task.inputs, rng);

  if (kind == TaskKind::BilinearTarget) {
    task.targets = oracle::naive_bilinear(task.inputs, alpha,
                                          ProjectionMode::AlignCorners);
    return task;
  }

  const int out_h = scaled_extent(h, alpha);
  const int out_w = scaled_extent(w, alpha);
  const AxisProjection sx =
      axis_projection(w, alpha, ProjectionMode::AlignCorners);
  const AxisProjection sy =
      axis_projection(h, alpha, ProjectionMode::AlignCorners);
  task.targets = Tensor<double>(n, channels, out_h, out_w);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < channels; ++ch) {
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          const Coord s = task_shift(ox, oy, out_w, out_h);
          task.targets.at(b, ch, oy, ox) = oracle::naive_bilinear_read(
              task.inputs, b, ch, sx(ox) + s.x, sy(oy) + s.y,
              PaddingMode::Border);
        }
      }
    }
  }
  return task;
}

double mse_half_loss(const Tensor<double>& y, const Tensor<double>& target) {
  if (!y.same_shape(target)) {
    throw DimError("mse_half_loss: shapes differ, " + y.shape_str() + " vs " +
                   target.shape_str());
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    const double d = y.data()[i] - target.data()[i];
    acc += d * d;
  }
  return 0.5 * acc / static_cast<double>(y.size());
}

namespace {

void axpy(Tensor<double>& w, const Tensor<double>& g, double a) {
  for (std::int64_t i = 0; i < w.size(); ++i) w.data()[i] += a * g.data()[i];
}

}  // namespace

TrainLog train(const ToyTask& task, const UpsampleConfig& config, int steps,
               double lr, Rng& rng, UpsamplerKind kind) {
  if (kind != UpsamplerKind::LdaAqu && kind != UpsamplerKind::LaAqu) {
    throw ConfigError("train: kind must be LaAqu or LdaAqu");
  }
  if (lr < 0.0) throw ConfigError("train: lr must be >= 0");
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  const int channels = task.inputs.c();
  config.validate(channels);

  TrainLog log;
  LdaAquWeights<double> w = init_weights<double>(config, channels, rng);
  const double scale = 1.0 / static_cast<double>(task.targets.size());

  auto forward = [&]() -> Tensor<double> {
    if (kind == UpsamplerKind::LdaAqu) {
      return lda_aqu_upsample(task.inputs, w, config).y;
    }
    return la_aqu_upsample(task.inputs, w, config);
  };

  for (int step = 0; step <= steps; ++step) {
    const Tensor<double> y = forward();
    const double loss = mse_half_loss(y, task.targets);
    log.losses.push_back(loss);
    if (!std::isfinite(loss) || loss > kDivergenceCap) {
      log.diverged = true;
      break;
    }
    if (step == steps) break;  // final entry records the trained loss

    Tensor<double> upstream(y.n(), y.c(), y.h(), y.w());
    for (std::int64_t i = 0; i < y.size(); ++i) {
      upstream.data()[i] = (y.data()[i] - task.targets.data()[i]) * scale;
    }
    const GradBundle<double> g =
        (kind == UpsamplerKind::LdaAqu)
            ? lda_aqu_backward(task.inputs, w, config, upstream)
            : la_aqu_backward(task.inputs, w, config, upstream);

    axpy(w.w_q, g.w_q, -lr);
    axpy(w.w_k, g.w_k, -lr);
    if (!w.w_v.empty()) axpy(w.w_v, g.w_v, -lr);
    axpy(w.dw_kernel, g.dw_kernel, -lr);
    axpy(w.offset_weight, g.offset_weight, -lr);
    axpy(w.offset_bias, g.offset_bias, -lr);
  }
  log.weights = std::move(w);
  return log;
}

}  // namespace ldaqu
