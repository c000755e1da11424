#include "ldaqu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ldaqu/geometry.hpp"
#include "ldaqu/nn_ops.hpp"
#include "ldaqu/upsample.hpp"

namespace ldaqu {

std::vector<double> finite_diff(
    const std::function<double(std::span<const double>)>& fn,
    std::span<const double> params) {
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    const double step = 1e-5 * (1.0 + std::abs(keep));
    p[i] = keep + step;
    const double lp = fn(p);
    p[i] = keep - step;
    const double lm = fn(p);
    p[i] = keep;
    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      throw NumericError("finite_diff: non-finite loss when perturbing scalar " +
                         std::to_string(i));
    }
    g[i] = (lp - lm) / (2.0 * step);
  }
  return g;
}

namespace {

constexpr double kRelFloor = 1e-3;  // denominator floor for near-zero grads

std::uint64_t op_seed(std::uint64_t base, const std::string& op) {
  // FNV-1a, fixed so reports replay identically everywhere
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : op) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h ^ (base * 0x9e3779b97f4a7c15ULL);
}

double half_sq(const Tensor<double>& y) {
  double acc = 0.0;
  for (const double v : y.values()) acc += v * v;
  return 0.5 * acc;
}

struct Group {
  std::string name;
  std::function<std::vector<double>()> get;
  std::function<void(std::span<const double>)> set;
  std::vector<double> analytic;
};

ParamCheck compare_group(const std::string& name,
                         std::span<const double> analytic,
                         std::span<const double> numeric, double threshold) {
  ParamCheck c;
  c.name = name;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double abs_err = std::abs(a - n);
    const double denom = std::max({std::abs(a), std::abs(n), kRelFloor});
    c.max_abs_err = std::max(c.max_abs_err, abs_err);
    c.max_rel_err = std::max(c.max_rel_err, abs_err / denom);
  }
  c.pass = c.max_rel_err < threshold;
  return c;
}

GradReport run_groups(const std::string& op, const GradCheckOptions& opts,
                      const std::function<double()>& loss_fn,
                      std::vector<Group> groups) {
  GradReport report;
  report.op = op;
  report.seed = opts.seed;
  report.threshold = opts.threshold;
  report.pass = true;
  const bool corrupt = opts.corrupt_op == op;
  for (auto& grp : groups) {
    std::vector<double> current = grp.get();
    const std::vector<double> numeric = finite_diff(
        [&](std::span<const double> p) {
          grp.set(p);
          return loss_fn();
        },
        current);
    grp.set(current);  // restore
    if (corrupt) {
      for (double& a : grp.analytic) a += 0.01;
    }
    ParamCheck check =
        compare_group(grp.name, grp.analytic, numeric, opts.threshold);
    report.pass = report.pass && check.pass;
    report.params.push_back(std::move(check));
  }
  return report;
}

std::vector<double> tensor_values(const Tensor<double>& t) {
  return {t.data(), t.data() + t.size()};
}

Group tensor_group(const std::string& name, Tensor<double>* t,
                   const Tensor<double>& analytic) {
  Group g;
  g.name = name;
  g.get = [t] { return tensor_values(*t); };
  g.set = [t](std::span<const double> p) {
    std::copy(p.begin(), p.end(), t->data());
  };
  g.analytic = tensor_values(analytic);
  return g;
}

// --- per-op checks -------------------------------------------------------

GradReport check_linear_project(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "linear_project"));
  Tensor<double> x(1, 3, 4, 4);
  fill_normal(x, rng);
  Tensor<double> w(2, 3, 1, 1);
  fill_uniform(w, rng, -0.7, 0.7);
  Tensor<double> bias(2, 1, 1, 1);
  fill_uniform(bias, rng, -0.5, 0.5);

  auto loss = [&] { return half_sq(linear_project(x, w, &bias)); };
  const Tensor<double> y = linear_project(x, w, &bias);
  LinearProjectGrads<double> g = linear_project_grad(x, w, &bias, y);
  return run_groups("linear_project", opts, loss,
                    {tensor_group("x", &x, g.x), tensor_group("weight", &w, g.weight),
                     tensor_group("bias", &bias, g.bias)});
}

GradReport check_depthwise_conv(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "depthwise_conv"));
  Tensor<double> x(1, 3, 5, 5);
  fill_normal(x, rng);
  Tensor<double> k(3, 1, 3, 3);
  fill_uniform(k, rng, -0.6, 0.6);
  Tensor<double> bias(3, 1, 1, 1);
  fill_uniform(bias, rng, -0.4, 0.4);

  auto loss = [&] { return half_sq(depthwise_conv(x, k, &bias)); };
  const Tensor<double> y = depthwise_conv(x, k, &bias);
  DepthwiseConvGrads<double> g = depthwise_conv_grad(x, k, &bias, y);
  return run_groups("depthwise_conv", opts, loss,
                    {tensor_group("x", &x, g.x), tensor_group("kernel", &k, g.kernel),
                     tensor_group("bias", &bias, g.bias)});
}

GradReport check_conv2d(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "conv2d"));
  Tensor<double> x(1, 3, 4, 4);
  fill_normal(x, rng);
  Tensor<double> k(2, 3, 3, 3);
  fill_uniform(k, rng, -0.4, 0.4);
  Tensor<double> bias(2, 1, 1, 1);
  fill_uniform(bias, rng, -0.4, 0.4);

  auto loss = [&] { return half_sq(conv2d(x, k, &bias)); };
  const Tensor<double> y = conv2d(x, k, &bias);
  Conv2dGrads<double> g = conv2d_grad(x, k, &bias, y);
  return run_groups("conv2d", opts, loss,
                    {tensor_group("x", &x, g.x), tensor_group("kernel", &k, g.kernel),
                     tensor_group("bias", &bias, g.bias)});
}

GradReport check_softmax_lastaxis(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "softmax_lastaxis"));
  Tensor<double> x(1, 2, 3, 5);
  fill_normal(x, rng);

  auto loss = [&] { return half_sq(softmax_lastaxis(x, 3)); };
  const Tensor<double> y = softmax_lastaxis(x, 3);
  const Tensor<double> gx = softmax_lastaxis_grad(y, y, 3);
  return run_groups("softmax_lastaxis", opts, loss,
                    {tensor_group("x", &x, gx)});
}

GradReport check_tanh_scale(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "tanh_scale"));
  Tensor<double> x(1, 2, 3, 3);
  fill_normal(x, rng);
  const double theta = 1.7;

  auto loss = [&] { return half_sq(tanh_scale(x, theta)); };
  const Tensor<double> y = tanh_scale(x, theta);
  const Tensor<double> gx = tanh_scale_grad(x, theta, y);
  return run_groups("tanh_scale", opts, loss, {tensor_group("x", &x, gx)});
}

GradReport check_bilinear_sample(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "bilinear_sample"));
  Tensor<double> feat(1, 3, 5, 5);
  fill_normal(feat, rng);
  // jittered sample points: never within 1e-3 of an integer coordinate, so
  // central differences do not straddle the tap-weight kinks
  std::vector<Coord> coords;
  for (int i = 0; i < 6; ++i) {
    const double fx = 0.137 + 0.61803398875 * i;
    const double fy = 0.237 + 0.73205080757 * i;
    coords.push_back({std::fmod(fx, 3.4) + 0.21, std::fmod(fy, 3.3) + 0.31});
  }
  coords.push_back({-0.63, 2.44});  // out of range, exercises the padding paths

  GradReport report;
  report.op = "bilinear_sample";
  report.seed = opts.seed;
  report.threshold = opts.threshold;
  report.pass = true;
  for (const PaddingMode pad : {PaddingMode::Zeros, PaddingMode::Border}) {
    const char* tag = pad == PaddingMode::Zeros ? "zeros" : "border";
    auto loss = [&] {
      double acc = 0.0;
      for (const double v : bilinear_sample(feat, coords, pad)) acc += v * v;
      return 0.5 * acc;
    };
    const std::vector<double> y = bilinear_sample(feat, coords, pad);
    BilinearSampleGrads<double> g = bilinear_sample_grad(
        feat, coords, pad, std::span<const double>(y));

    std::vector<Group> groups;
    groups.push_back(tensor_group(std::string("feat.") + tag, &feat, g.feat));
    Group cg;
    cg.name = std::string("coords.") + tag;
    cg.get = [&coords] {
      std::vector<double> v;
      for (const Coord& c : coords) {
        v.push_back(c.x);
        v.push_back(c.y);
      }
      return v;
    };
    cg.set = [&coords](std::span<const double> p) {
      for (std::size_t i = 0; i < coords.size(); ++i) {
        coords[i].x = p[2 * i];
        coords[i].y = p[2 * i + 1];
      }
    };
    for (const Coord& c : g.coords) {
      cg.analytic.push_back(c.x);
      cg.analytic.push_back(c.y);
    }
    groups.push_back(std::move(cg));

    GradReport partial = run_groups("bilinear_sample", opts, loss, groups);
    report.pass = report.pass && partial.pass;
    for (auto& p : partial.params) report.params.push_back(std::move(p));
  }
  return report;
}

GradReport check_nearest_upsample(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "nearest_upsample"));
  Tensor<double> x(1, 2, 4, 4);
  fill_normal(x, rng);
  const double alpha = 2.0;

  auto loss = [&] {
    return half_sq(nearest_upsample(x, alpha, ProjectionMode::AlignCorners));
  };
  const Tensor<double> y =
      nearest_upsample(x, alpha, ProjectionMode::AlignCorners);
  const Tensor<double> gx =
      nearest_upsample_grad(x, alpha, ProjectionMode::AlignCorners, y);
  return run_groups("nearest_upsample", opts, loss,
                    {tensor_group("x", &x, gx)});
}

GradReport check_bilinear_upsample(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "bilinear_upsample"));
  Tensor<double> x(1, 2, 4, 4);
  fill_normal(x, rng);
  const double alpha = 1.5;

  auto loss = [&] {
    return half_sq(bilinear_upsample(x, alpha, ProjectionMode::AlignCorners,
                                     PaddingMode::Zeros));
  };
  const Tensor<double> y = bilinear_upsample(
      x, alpha, ProjectionMode::AlignCorners, PaddingMode::Zeros);
  const Tensor<double> gx = bilinear_upsample_grad(
      x, alpha, ProjectionMode::AlignCorners, PaddingMode::Zeros, y);
  return run_groups("bilinear_upsample", opts, loss,
                    {tensor_group("x", &x, gx)});
}

UpsampleConfig aqu_check_config() {
  UpsampleConfig cfg;
  cfg.alpha = 2.0;
  cfg.k_u = 3;
  cfg.k_e = 3;
  cfg.theta = 1.5;  // small range keeps FD coordinate motion tiny
  cfg.groups = 2;
  cfg.reduction = 2;
  return cfg;
}

// Offset-predictor state that parks every deformed sample point away from
// integer coordinates (the bilinear kinks). Verified, and re-jittered until
// the clearance holds.
void jitter_offsets(const Tensor<double>& x, LdaAquWeights<double>& w,
                    const UpsampleConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    fill_uniform(w.offset_weight, rng, -0.05, 0.05);
    for (std::int64_t i = 0; i < w.offset_bias.size(); ++i) {
      const double frac =
          0.13 + 0.17 * std::fmod(0.61803398875 * (i + 1) + 0.0137 * attempt, 1.0);
      const double target = (i % 2 == 0) ? frac : -frac;
      w.offset_bias.data()[i] = std::atanh(target / cfg.theta);
    }
    const LdaAquOutput<double> out = lda_aqu_upsample(x, w, cfg);
    double clearance = 1.0;
    for (const Coord& c : out.grid.r_prime) {
      clearance = std::min(clearance, std::abs(c.x - std::round(c.x)));
      clearance = std::min(clearance, std::abs(c.y - std::round(c.y)));
    }
    if (clearance > 1e-3) return;
  }
  throw NumericError("jitter_offsets: could not clear bilinear kinks");
}

GradReport check_predict_offsets(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "predict_offsets"));
  UpsampleConfig cfg = aqu_check_config();
  const int channels = 8;
  LdaAquWeights<double> w = init_weights<double>(cfg, channels, rng);
  fill_uniform(w.offset_weight, rng, -0.2, 0.2);
  fill_uniform(w.offset_bias, rng, -0.1, 0.1);
  Tensor<double> q_up(1, channels / cfg.reduction, 6, 6);
  fill_normal(q_up, rng);

  auto loss = [&] { return half_sq(predict_offsets(q_up, w, cfg)); };
  const Tensor<double> y = predict_offsets(q_up, w, cfg);
  PredictOffsetsGrads<double> g = predict_offsets_grad(q_up, w, cfg, y);
  return run_groups(
      "predict_offsets", opts, loss,
      {tensor_group("q_up", &q_up, g.q_up),
       tensor_group("dw_kernel", &w.dw_kernel, g.dw_kernel),
       tensor_group("offset_weight", &w.offset_weight, g.offset_weight),
       tensor_group("offset_bias", &w.offset_bias, g.offset_bias)});
}

GradReport check_la_aqu(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "la_aqu"));
  UpsampleConfig cfg = aqu_check_config();
  const int channels = 4;
  Tensor<double> x(1, channels, 4, 4);
  fill_normal(x, rng);
  LdaAquWeights<double> w = init_weights<double>(cfg, channels, rng);

  auto loss = [&] { return half_sq(la_aqu_upsample(x, w, cfg)); };
  const Tensor<double> y = la_aqu_upsample(x, w, cfg);
  GradBundle<double> g = la_aqu_backward(x, w, cfg, y);
  return run_groups("la_aqu", opts, loss,
                    {tensor_group("x", &x, g.x), tensor_group("w_q", &w.w_q, g.w_q),
                     tensor_group("w_k", &w.w_k, g.w_k)});
}

GradReport check_lda_aqu(const GradCheckOptions& opts) {
  Rng rng(op_seed(opts.seed, "lda_aqu"));
  UpsampleConfig cfg = aqu_check_config();
  cfg.value_projection = ValueProjection::Learned;  // covers the w_v path
  const int channels = 4;
  Tensor<double> x(1, channels, 4, 4);
  fill_normal(x, rng);
  LdaAquWeights<double> w = init_weights<double>(cfg, channels, rng);
  jitter_offsets(x, w, cfg, rng);

  auto loss = [&] { return half_sq(lda_aqu_upsample(x, w, cfg).y); };
  const Tensor<double> y = lda_aqu_upsample(x, w, cfg).y;
  GradBundle<double> g = lda_aqu_backward(x, w, cfg, y);
  GradReport report = run_groups(
      "lda_aqu", opts, loss,
      {tensor_group("x", &x, g.x), tensor_group("w_q", &w.w_q, g.w_q),
       tensor_group("w_k", &w.w_k, g.w_k), tensor_group("w_v", &w.w_v, g.w_v),
       tensor_group("dw_kernel", &w.dw_kernel, g.dw_kernel),
       tensor_group("offset_weight", &w.offset_weight, g.offset_weight),
       tensor_group("offset_bias", &w.offset_bias, g.offset_bias)});
  return report;
}

using CheckFn = GradReport (*)(const GradCheckOptions&);

const std::map<std::string, CheckFn>& registry() {
  static const std::map<std::string, CheckFn> reg = {
      {"linear_project", check_linear_project},
      {"depthwise_conv", check_depthwise_conv},
      {"conv2d", check_conv2d},
      {"softmax_lastaxis", check_softmax_lastaxis},
      {"tanh_scale", check_tanh_scale},
      {"bilinear_sample", check_bilinear_sample},
      {"nearest_upsample", check_nearest_upsample},
      {"bilinear_upsample", check_bilinear_upsample},
      {"predict_offsets", check_predict_offsets},
      {"la_aqu", check_la_aqu},
      {"lda_aqu", check_lda_aqu},
  };
  return reg;
}

}  // namespace

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops = {
      "linear_project",  "depthwise_conv",    "conv2d",
      "softmax_lastaxis", "tanh_scale",       "bilinear_sample",
      "nearest_upsample", "bilinear_upsample", "predict_offsets",
      "la_aqu",           "lda_aqu",
  };
  return ops;
}

std::vector<std::string> registered_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

GradReport grad_check(const std::string& op_id, const GradCheckOptions& opts) {
  const auto it = registry().find(op_id);
  if (it == registry().end()) {
    throw ConfigError("grad_check: no check registered for op '" + op_id + "'");
  }
  return it->second(opts);
}

std::vector<GradReport> grad_check_all(const GradCheckOptions& opts) {
  // enumerate the canonical list and fail loudly if the registry misses one
  std::vector<GradReport> reports;
  for (const std::string& op : differentiable_ops()) {
    reports.push_back(grad_check(op, opts));
  }
  return reports;
}

}  // namespace ldaqu
