#include "ldaqu/upsample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ldaqu {

void UpsampleConfig::validate(int channels) const {
  if (!(alpha > 1.0)) {
    throw ConfigError("alpha must be > 1, got " + std::to_string(alpha));
  }
  if (k_u < 1 || k_u % 2 == 0) {
    throw ConfigError("k_u must be odd and >= 1, got " + std::to_string(k_u));
  }
  if (k_e < 1 || k_e % 2 == 0) {
    throw ConfigError("k_e must be odd and >= 1, got " + std::to_string(k_e));
  }
  if (!(theta > 0.0)) {
    throw ConfigError("theta must be positive, got " + std::to_string(theta));
  }
  if (groups < 1) throw ConfigError("groups must be >= 1");
  if (reduction < 1) throw ConfigError("reduction must be >= 1");
  if (heads != 1) throw ConfigError("the number of heads is fixed to 1");
  if (channels % reduction != 0) {
    throw ConfigError("channels must be divisible by reduction: C=" +
                      std::to_string(channels) + ", reduction=" +
                      std::to_string(reduction));
  }
  const int reduced = channels / reduction;
  if (reduced % groups != 0) {
    throw ConfigError("C/reduction must be divisible by groups: C/r=" +
                      std::to_string(reduced) + ", groups=" +
                      std::to_string(groups));
  }
  if (channels % groups != 0) {
    throw ConfigError("channels must be divisible by groups: C=" +
                      std::to_string(channels) + ", groups=" +
                      std::to_string(groups));
  }
}

namespace {

inline int round_tie_low(double v) {
  return static_cast<int>(std::ceil(v - 0.5));
}

inline int clamp_index(int v, int hi) { return std::min(std::max(v, 0), hi); }

template <typename T>
void check_weights(const LdaAquWeights<T>& w, const UpsampleConfig& cfg,
                   int channels, const char* who) {
  const int reduced = channels / cfg.reduction;
  const int stencil = cfg.k_u * cfg.k_u;
  auto expect = [&](const Tensor<T>& t, std::array<int, 4> s,
                    const char* name) {
    if (t.empty() || t.shape() != s) {
      throw ConfigError(std::string(who) + ": weight " + name + " has shape " +
                        (t.empty() ? std::string("(empty)") : t.shape_str()) +
                        ", expected " + Tensor<T>::shape_to_string(s));
    }
  };
  expect(w.w_q, {reduced, channels, 1, 1}, "w_q");
  expect(w.w_k, {reduced, channels, 1, 1}, "w_k");
  if (cfg.value_projection == ValueProjection::Learned) {
    expect(w.w_v, {channels, channels, 1, 1}, "w_v");
  } else if (!w.w_v.empty()) {
    throw ConfigError(std::string(who) +
                      ": w_v present but value projection is identity");
  }
  expect(w.dw_kernel, {reduced, 1, 3, 3}, "dw_kernel");
  expect(w.offset_weight, {2 * cfg.groups * stencil, reduced, cfg.k_e, cfg.k_e},
         "offset_weight");
  expect(w.offset_bias, {2 * cfg.groups * stencil, 1, 1, 1}, "offset_bias");
}

template <typename T>
void fill_xavier(Tensor<T>& t, Rng& rng, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  fill_uniform(t, rng, -a, a);
}

// -sign(a-b) inside the unit window, 0 at the kinks and outside
inline double tap_deriv(double a, double b) {
  const double d = a - b;
  const double ad = std::abs(d);
  if (ad >= 1.0 || d == 0.0) return 0.0;
  return d > 0.0 ? -1.0 : 1.0;
}

// Scatters the gradient of one bilinear read covering channels
// [c0, c0+count) into gfeat; returns the gradient w.r.t. the coordinate.
// up(i) supplies the upstream value of channel c0+i.
template <typename T, typename UpFn>
Coord scatter_sample_grad(const Tensor<T>& feat, Tensor<T>& gfeat, int b,
                          int c0, int count, Coord c, PaddingMode padding,
                          UpFn&& up) {
  const int h = feat.h();
  const int w = feat.w();
  double x = c.x, y = c.y;
  // an active Border clamp zeroes that component's gradient
  bool x_alive = true, y_alive = true;
  if (padding == PaddingMode::Border) {
    x_alive = x >= 0.0 && x <= w - 1;
    y_alive = y >= 0.0 && y <= h - 1;
    x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  }
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int xs[2] = {static_cast<int>(fx), static_cast<int>(fx) + 1};
  const int ys[2] = {static_cast<int>(fy), static_cast<int>(fy) + 1};
  double gx = 0.0, gy = 0.0;
  for (int ty = 0; ty < 2; ++ty) {
    for (int tx = 0; tx < 2; ++tx) {
      int sx = xs[tx];
      int sy = ys[ty];
      if (padding == PaddingMode::Border) {
        sx = clamp_index(sx, w - 1);
        sy = clamp_index(sy, h - 1);
      } else if (sx < 0 || sx >= w || sy < 0 || sy >= h) {
        continue;
      }
      const double wx = std::max(0.0, 1.0 - std::abs(x - xs[tx]));
      const double wy = std::max(0.0, 1.0 - std::abs(y - ys[ty]));
      const double dwx = tap_deriv(x, xs[tx]);
      const double dwy = tap_deriv(y, ys[ty]);
      for (int i = 0; i < count; ++i) {
        const double u = static_cast<double>(up(i));
        const double f = static_cast<double>(feat.at(b, c0 + i, sy, sx));
        gfeat.at(b, c0 + i, sy, sx) += static_cast<T>(wy * wx * u);
        gx += dwx * wy * f * u;
        gy += wx * dwy * f * u;
      }
    }
  }
  return {x_alive ? gx : 0.0, y_alive ? gy : 0.0};
}

}  // namespace

template <typename T>
LdaAquWeights<T> init_weights(const UpsampleConfig& config, int channels,
                              Rng& rng, InitScheme scheme) {
  (void)scheme;  // XavierUniform is the only scheme
  config.validate(channels);
  const int reduced = channels / config.reduction;
  const int stencil = config.k_u * config.k_u;
  LdaAquWeights<T> w;
  w.w_q = Tensor<T>(reduced, channels, 1, 1);
  fill_xavier(w.w_q, rng, channels, reduced);
  w.w_k = Tensor<T>(reduced, channels, 1, 1);
  fill_xavier(w.w_k, rng, channels, reduced);
  if (config.value_projection == ValueProjection::Learned) {
    w.w_v = Tensor<T>(channels, channels, 1, 1);
    fill_xavier(w.w_v, rng, channels, channels);
  }
  w.dw_kernel = Tensor<T>(reduced, 1, 3, 3);
  fill_xavier(w.dw_kernel, rng, 9, 9);
  // zero start: deformation disabled until trained
  w.offset_weight = Tensor<T>(2 * config.groups * stencil, reduced,
                              config.k_e, config.k_e);
  w.offset_bias = Tensor<T>(2 * config.groups * stencil, 1, 1, 1);
  return w;
}

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, double alpha,
                           ProjectionMode mode) {
  if (x.empty()) throw DimError("nearest_upsample: empty tensor");
  if (!(alpha > 1.0)) {
    throw ConfigError("nearest_upsample: alpha must be > 1");
  }
  const int out_h = scaled_extent(x.h(), alpha);
  const int out_w = scaled_extent(x.w(), alpha);
  const AxisProjection sx = axis_projection(x.w(), alpha, mode);
  const AxisProjection sy = axis_projection(x.h(), alpha, mode);
  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  parallel_for(static_cast<std::int64_t>(x.n()) * x.c(), [&](std::int64_t job) {
    const int b = static_cast<int>(job / x.c());
    const int ch = static_cast<int>(job % x.c());
    for (int oy = 0; oy < out_h; ++oy) {
      const int iy = clamp_index(round_tie_low(sy(oy)), x.h() - 1);
      for (int ox = 0; ox < out_w; ++ox) {
        const int ix = clamp_index(round_tie_low(sx(ox)), x.w() - 1);
        out.at(b, ch, oy, ox) = x.at(b, ch, iy, ix);
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> nearest_upsample_grad(const Tensor<T>& x, double alpha,
                                ProjectionMode mode,
                                const Tensor<T>& upstream) {
  const int out_h = scaled_extent(x.h(), alpha);
  const int out_w = scaled_extent(x.w(), alpha);
  if (upstream.n() != x.n() || upstream.c() != x.c() ||
      upstream.h() != out_h || upstream.w() != out_w) {
    throw DimError("nearest_upsample_grad: upstream shape " +
                   upstream.shape_str() + " does not match output for input " +
                   x.shape_str());
  }
  const AxisProjection sx = axis_projection(x.w(), alpha, mode);
  const AxisProjection sy = axis_projection(x.h(), alpha, mode);
  Tensor<T> g(x.n(), x.c(), x.h(), x.w());
  for (int b = 0; b < x.n(); ++b) {
    for (int ch = 0; ch < x.c(); ++ch) {
      for (int oy = 0; oy < out_h; ++oy) {
        const int iy = clamp_index(round_tie_low(sy(oy)), x.h() - 1);
        for (int ox = 0; ox < out_w; ++ox) {
          const int ix = clamp_index(round_tie_low(sx(ox)), x.w() - 1);
          g.at(b, ch, iy, ix) += upstream.at(b, ch, oy, ox);
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, double alpha,
                            ProjectionMode mode, PaddingMode padding) {
  if (x.empty()) throw DimError("bilinear_upsample: empty tensor");
  if (!(alpha > 1.0)) {
    throw ConfigError("bilinear_upsample: alpha must be > 1");
  }
  const int out_h = scaled_extent(x.h(), alpha);
  const int out_w = scaled_extent(x.w(), alpha);
  const AxisProjection sx = axis_projection(x.w(), alpha, mode);
  const AxisProjection sy = axis_projection(x.h(), alpha, mode);
  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  parallel_for(static_cast<std::int64_t>(out_h) * out_w, [&](std::int64_t idx) {
    const int oy = static_cast<int>(idx / out_w);
    const int ox = static_cast<int>(idx % out_w);
    const TapWeights<T> t =
        bilinear_taps<T>(x.h(), x.w(), sx(ox), sy(oy), padding);
    for (int b = 0; b < x.n(); ++b) {
      for (int ch = 0; ch < x.c(); ++ch) {
        T acc = T(0);
        if (t.v00) acc += t.w00 * x.at(b, ch, t.y0, t.x0);
        if (t.v01) acc += t.w01 * x.at(b, ch, t.y0, t.x1);
        if (t.v10) acc += t.w10 * x.at(b, ch, t.y1, t.x0);
        if (t.v11) acc += t.w11 * x.at(b, ch, t.y1, t.x1);
        out.at(b, ch, oy, ox) = acc;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> bilinear_upsample_grad(const Tensor<T>& x, double alpha,
                                 ProjectionMode mode, PaddingMode padding,
                                 const Tensor<T>& upstream) {
  const int out_h = scaled_extent(x.h(), alpha);
  const int out_w = scaled_extent(x.w(), alpha);
  if (upstream.n() != x.n() || upstream.c() != x.c() ||
      upstream.h() != out_h || upstream.w() != out_w) {
    throw DimError("bilinear_upsample_grad: upstream shape " +
                   upstream.shape_str() + " does not match output for input " +
                   x.shape_str());
  }
  const AxisProjection sx = axis_projection(x.w(), alpha, mode);
  const AxisProjection sy = axis_projection(x.h(), alpha, mode);
  Tensor<T> g(x.n(), x.c(), x.h(), x.w());
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const TapWeights<T> t =
          bilinear_taps<T>(x.h(), x.w(), sx(ox), sy(oy), padding);
      for (int b = 0; b < x.n(); ++b) {
        for (int ch = 0; ch < x.c(); ++ch) {
          const T up = upstream.at(b, ch, oy, ox);
          if (t.v00) g.at(b, ch, t.y0, t.x0) += t.w00 * up;
          if (t.v01) g.at(b, ch, t.y0, t.x1) += t.w01 * up;
          if (t.v10) g.at(b, ch, t.y1, t.x0) += t.w10 * up;
          if (t.v11) g.at(b, ch, t.y1, t.x1) += t.w11 * up;
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> predict_offsets(const Tensor<T>& q_up, const LdaAquWeights<T>& w,
                          const UpsampleConfig& config) {
  const Tensor<T> d = depthwise_conv(q_up, w.dw_kernel);
  const Tensor<T> e = conv2d(d, w.offset_weight, &w.offset_bias);
  return tanh_scale(e, config.theta);
}

template <typename T>
PredictOffsetsGrads<T> predict_offsets_grad(const Tensor<T>& q_up,
                                            const LdaAquWeights<T>& w,
                                            const UpsampleConfig& config,
                                            const Tensor<T>& upstream) {
  const Tensor<T> d = depthwise_conv(q_up, w.dw_kernel);
  const Tensor<T> e = conv2d(d, w.offset_weight, &w.offset_bias);
  const Tensor<T> ge = tanh_scale_grad(e, config.theta, upstream);
  Conv2dGrads<T> cg = conv2d_grad(d, w.offset_weight, &w.offset_bias, ge);
  DepthwiseConvGrads<T> dg = depthwise_conv_grad<T>(q_up, w.dw_kernel, nullptr, cg.x);
  PredictOffsetsGrads<T> g;
  g.q_up = std::move(dg.x);
  g.dw_kernel = std::move(dg.kernel);
  g.offset_weight = std::move(cg.kernel);
  g.offset_bias = std::move(cg.bias);
  return g;
}

namespace {

template <typename T>
struct AquDims {
  int channels, reduced, stencil, dq, dv, out_h, out_w;
  T inv_sqrt_dk;
};

template <typename T>
AquDims<T> compute_dims(const Tensor<T>& x, const UpsampleConfig& cfg) {
  AquDims<T> d;
  d.channels = x.c();
  d.reduced = d.channels / cfg.reduction;
  d.stencil = cfg.k_u * cfg.k_u;
  d.dq = d.reduced / cfg.groups;
  d.dv = d.channels / cfg.groups;
  d.out_h = scaled_extent(x.h(), cfg.alpha);
  d.out_w = scaled_extent(x.w(), cfg.alpha);
  d.inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d.dq)));
  return d;
}

template <typename T>
struct AquState {
  Tensor<T> q, k, v_store;  // v_store empty for identity values
  Tensor<T> q_up;
  Tensor<T> offsets;  // empty when offsets are pinned to zero
  std::vector<Coord> p_prime;
  std::vector<PixelCoord> stencil;
};

template <typename T>
AquState<T> run_front_end(const Tensor<T>& x, const LdaAquWeights<T>& w,
                          const UpsampleConfig& cfg, bool zero_offsets) {
  AquState<T> s;
  s.q = linear_project(x, w.w_q);
  s.k = linear_project(x, w.w_k);
  if (cfg.value_projection == ValueProjection::Learned) {
    s.v_store = linear_project(x, w.w_v);
  }
  s.q_up = (cfg.query_upsample == QueryUpsample::Bilinear)
               ? bilinear_upsample(s.q, cfg.alpha, cfg.projection_mode,
                                   cfg.padding)
               : nearest_upsample(s.q, cfg.alpha, cfg.projection_mode);
  if (!zero_offsets) s.offsets = predict_offsets(s.q_up, w, cfg);
  const int out_h = s.q_up.h();
  const int out_w = s.q_up.w();
  const auto pixels = make_output_grid(out_h, out_w);
  s.p_prime =
      project_grid(pixels, x.h(), x.w(), cfg.alpha, cfg.projection_mode);
  s.stencil = neighbor_offsets(cfg.k_u);
  return s;
}

template <typename T>
LdaAquOutput<T> aqu_forward(const Tensor<T>& x, const LdaAquWeights<T>& w,
                            const UpsampleConfig& cfg, bool zero_offsets,
                            AttentionHook hook) {
  if (x.empty()) throw DimError("lda_aqu_upsample: empty tensor");
  cfg.validate(x.c());
  check_weights(w, cfg, x.c(), "lda_aqu_upsample");
  const AquDims<T> dims = compute_dims(x, cfg);
  AquState<T> s = run_front_end(x, w, cfg, zero_offsets);
  const Tensor<T>& v = s.v_store.empty() ? x : s.v_store;

  const int out_h = dims.out_h;
  const int out_w = dims.out_w;
  const std::int64_t pixels = static_cast<std::int64_t>(out_h) * out_w;
  const int g = cfg.groups;
  const int sten = dims.stencil;

  LdaAquOutput<T> out;
  out.y = Tensor<T>(x.n(), dims.channels, out_h, out_w);
  out.attention.assign(static_cast<std::size_t>(pixels) * g * sten, T(0));

  // inspection geometry for batch item 0
  CoordGrid& grid = out.grid;
  grid.out_h = out_h;
  grid.out_w = out_w;
  grid.k_u = cfg.k_u;
  grid.groups = g;
  grid.p = make_output_grid(out_h, out_w);
  grid.p_prime = s.p_prime;
  grid.r.resize(static_cast<std::size_t>(pixels) * sten);
  grid.delta_r.resize(static_cast<std::size_t>(pixels) * g * sten);
  grid.r_prime.resize(grid.delta_r.size());
  for (std::int64_t idx = 0; idx < pixels; ++idx) {
    const Coord base = s.p_prime[idx];
    const int oy = static_cast<int>(idx / out_w);
    const int ox = static_cast<int>(idx % out_w);
    for (int j = 0; j < sten; ++j) {
      const Coord r{base.x + s.stencil[j].x, base.y + s.stencil[j].y};
      grid.r[grid.stencil_index(idx, j)] = r;
      for (int gi = 0; gi < g; ++gi) {
        Coord d{0.0, 0.0};
        if (!s.offsets.empty()) {
          const int ch = (gi * sten + j) * 2;
          d.x = static_cast<double>(s.offsets.at(0, ch, oy, ox));
          d.y = static_cast<double>(s.offsets.at(0, ch + 1, oy, ox));
        }
        grid.delta_r[grid.group_index(idx, gi, j)] = d;
        grid.r_prime[grid.group_index(idx, gi, j)] =
            Coord{r.x + d.x, r.y + d.y};
      }
    }
  }

  parallel_for(static_cast<std::int64_t>(x.n()) * pixels, [&](std::int64_t job) {
    const int b = static_cast<int>(job / pixels);
    const std::int64_t idx = job % pixels;
    const int oy = static_cast<int>(idx / out_w);
    const int ox = static_cast<int>(idx % out_w);
    const Coord base = s.p_prime[idx];

    std::vector<Coord> coords(sten);
    std::vector<TapWeights<T>> taps(sten);
    std::vector<T> logits(sten);

    for (int gi = 0; gi < g; ++gi) {
      for (int j = 0; j < sten; ++j) {
        Coord c{base.x + s.stencil[j].x, base.y + s.stencil[j].y};
        if (!s.offsets.empty()) {
          const int ch = (gi * sten + j) * 2;
          c.x += static_cast<double>(s.offsets.at(b, ch, oy, ox));
          c.y += static_cast<double>(s.offsets.at(b, ch + 1, oy, ox));
        }
        coords[j] = c;
        taps[j] = bilinear_taps<T>(x.h(), x.w(), c.x, c.y, cfg.padding);
      }
      const int q0 = gi * dims.dq;
      for (int j = 0; j < sten; ++j) {
        const TapWeights<T>& t = taps[j];
        T dot = T(0);
        for (int ch = 0; ch < dims.dq; ++ch) {
          T kv = T(0);
          if (t.v00) kv += t.w00 * s.k.at(b, q0 + ch, t.y0, t.x0);
          if (t.v01) kv += t.w01 * s.k.at(b, q0 + ch, t.y0, t.x1);
          if (t.v10) kv += t.w10 * s.k.at(b, q0 + ch, t.y1, t.x0);
          if (t.v11) kv += t.w11 * s.k.at(b, q0 + ch, t.y1, t.x1);
          dot += s.q_up.at(b, q0 + ch, oy, ox) * kv;
        }
        logits[j] = dot * dims.inv_sqrt_dk;
      }
      softmax_inplace(std::span<T>(logits));

      const int v0 = gi * dims.dv;
      if (hook == AttentionHook::OneHotNearest) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < sten; ++j) {
          const double dx = coords[j].x - base.x;
          const double dy = coords[j].y - base.y;
          const double d2 = dx * dx + dy * dy;
          if (d2 < best_d) {
            best_d = d2;
            best = j;
          }
        }
        for (int j = 0; j < sten; ++j) logits[j] = (j == best) ? T(1) : T(0);
        const int nx = clamp_index(round_tie_low(coords[best].x), x.w() - 1);
        const int ny = clamp_index(round_tie_low(coords[best].y), x.h() - 1);
        for (int ch = 0; ch < dims.dv; ++ch) {
          out.y.at(b, v0 + ch, oy, ox) = v.at(b, v0 + ch, ny, nx);
        }
      } else {
        for (int ch = 0; ch < dims.dv; ++ch) {
          T acc = T(0);
          for (int j = 0; j < sten; ++j) {
            const TapWeights<T>& t = taps[j];
            T vv = T(0);
            if (t.v00) vv += t.w00 * v.at(b, v0 + ch, t.y0, t.x0);
            if (t.v01) vv += t.w01 * v.at(b, v0 + ch, t.y0, t.x1);
            if (t.v10) vv += t.w10 * v.at(b, v0 + ch, t.y1, t.x0);
            if (t.v11) vv += t.w11 * v.at(b, v0 + ch, t.y1, t.x1);
            acc += logits[j] * vv;
          }
          out.y.at(b, v0 + ch, oy, ox) = acc;
        }
      }
      if (b == 0) {
        for (int j = 0; j < sten; ++j) {
          out.attention[(static_cast<std::size_t>(idx) * g + gi) * sten + j] =
              logits[j];
        }
      }
    }
  });
  return out;
}

template <typename T>
GradBundle<T> aqu_backward(const Tensor<T>& x, const LdaAquWeights<T>& w,
                           const UpsampleConfig& cfg,
                           const Tensor<T>& upstream, bool zero_offsets) {
  if (x.empty()) throw DimError("lda_aqu_backward: empty tensor");
  cfg.validate(x.c());
  check_weights(w, cfg, x.c(), "lda_aqu_backward");
  const AquDims<T> dims = compute_dims(x, cfg);
  if (upstream.n() != x.n() || upstream.c() != dims.channels ||
      upstream.h() != dims.out_h || upstream.w() != dims.out_w) {
    throw DimError("lda_aqu_backward: upstream shape " + upstream.shape_str() +
                   " does not match forward output for input " +
                   x.shape_str());
  }
  AquState<T> s = run_front_end(x, w, cfg, zero_offsets);
  const bool learned_v = cfg.value_projection == ValueProjection::Learned;
  const Tensor<T>& v = learned_v ? s.v_store : x;

  const int out_w = dims.out_w;
  const std::int64_t pixels =
      static_cast<std::int64_t>(dims.out_h) * dims.out_w;
  const int g = cfg.groups;
  const int sten = dims.stencil;

  Tensor<T> gq_up(x.n(), dims.reduced, dims.out_h, dims.out_w);
  Tensor<T> gk(x.n(), dims.reduced, x.h(), x.w());
  Tensor<T> gv(x.n(), dims.channels, x.h(), x.w());
  Tensor<T> goff;
  if (!zero_offsets) {
    goff = Tensor<T>(x.n(), 2 * g * sten, dims.out_h, dims.out_w);
  }

  std::vector<Coord> coords(sten);
  std::vector<TapWeights<T>> taps(sten);
  std::vector<T> attn(sten), grad_attn(sten), grad_logit(sten);
  std::vector<T> ktilde(static_cast<std::size_t>(sten) * dims.dq);
  std::vector<T> vtilde(static_cast<std::size_t>(sten) * dims.dv);

  for (int b = 0; b < x.n(); ++b) {
    for (std::int64_t idx = 0; idx < pixels; ++idx) {
      const int oy = static_cast<int>(idx / out_w);
      const int ox = static_cast<int>(idx % out_w);
      const Coord base = s.p_prime[idx];
      for (int gi = 0; gi < g; ++gi) {
        const int q0 = gi * dims.dq;
        const int v0 = gi * dims.dv;
        // recompute the forward pieces of this pixel/group
        for (int j = 0; j < sten; ++j) {
          Coord c{base.x + s.stencil[j].x, base.y + s.stencil[j].y};
          if (!s.offsets.empty()) {
            const int ch = (gi * sten + j) * 2;
            c.x += static_cast<double>(s.offsets.at(b, ch, oy, ox));
            c.y += static_cast<double>(s.offsets.at(b, ch + 1, oy, ox));
          }
          coords[j] = c;
          taps[j] = bilinear_taps<T>(x.h(), x.w(), c.x, c.y, cfg.padding);
          const TapWeights<T>& t = taps[j];
          T dot = T(0);
          for (int ch = 0; ch < dims.dq; ++ch) {
            T kv = T(0);
            if (t.v00) kv += t.w00 * s.k.at(b, q0 + ch, t.y0, t.x0);
            if (t.v01) kv += t.w01 * s.k.at(b, q0 + ch, t.y0, t.x1);
            if (t.v10) kv += t.w10 * s.k.at(b, q0 + ch, t.y1, t.x0);
            if (t.v11) kv += t.w11 * s.k.at(b, q0 + ch, t.y1, t.x1);
            ktilde[static_cast<std::size_t>(j) * dims.dq + ch] = kv;
            dot += s.q_up.at(b, q0 + ch, oy, ox) * kv;
          }
          attn[j] = dot * dims.inv_sqrt_dk;
          for (int ch = 0; ch < dims.dv; ++ch) {
            T vv = T(0);
            if (t.v00) vv += t.w00 * v.at(b, v0 + ch, t.y0, t.x0);
            if (t.v01) vv += t.w01 * v.at(b, v0 + ch, t.y0, t.x1);
            if (t.v10) vv += t.w10 * v.at(b, v0 + ch, t.y1, t.x0);
            if (t.v11) vv += t.w11 * v.at(b, v0 + ch, t.y1, t.x1);
            vtilde[static_cast<std::size_t>(j) * dims.dv + ch] = vv;
          }
        }
        softmax_inplace(std::span<T>(attn));

        // weighted-sum backward
        T dot_ag = T(0);
        for (int j = 0; j < sten; ++j) {
          T ga = T(0);
          for (int ch = 0; ch < dims.dv; ++ch) {
            ga += upstream.at(b, v0 + ch, oy, ox) *
                  vtilde[static_cast<std::size_t>(j) * dims.dv + ch];
          }
          grad_attn[j] = ga;
          dot_ag += attn[j] * ga;
        }
        for (int j = 0; j < sten; ++j) {
          grad_logit[j] = attn[j] * (grad_attn[j] - dot_ag);
        }

        // query gradient
        for (int ch = 0; ch < dims.dq; ++ch) {
          T acc = T(0);
          for (int j = 0; j < sten; ++j) {
            acc += grad_logit[j] *
                   ktilde[static_cast<std::size_t>(j) * dims.dq + ch];
          }
          gq_up.at(b, q0 + ch, oy, ox) += acc * dims.inv_sqrt_dk;
        }

        // per-tap scatter into K, V and the offset map
        for (int j = 0; j < sten; ++j) {
          const T gl = grad_logit[j] * dims.inv_sqrt_dk;
          const Coord gk_coord = scatter_sample_grad(
              s.k, gk, b, q0, dims.dq, coords[j], cfg.padding,
              [&](int ch) { return gl * s.q_up.at(b, q0 + ch, oy, ox); });
          const T aj = attn[j];
          const Coord gv_coord = scatter_sample_grad(
              v, gv, b, v0, dims.dv, coords[j], cfg.padding,
              [&](int ch) { return aj * upstream.at(b, v0 + ch, oy, ox); });
          if (!zero_offsets) {
            const int ch = (gi * sten + j) * 2;
            goff.at(b, ch, oy, ox) += static_cast<T>(gk_coord.x + gv_coord.x);
            goff.at(b, ch + 1, oy, ox) +=
                static_cast<T>(gk_coord.y + gv_coord.y);
          }
        }
      }
    }
  }

  GradBundle<T> out;
  out.x = Tensor<T>(x.n(), x.c(), x.h(), x.w());

  if (!zero_offsets) {
    PredictOffsetsGrads<T> pg = predict_offsets_grad(s.q_up, w, cfg, goff);
    out.dw_kernel = std::move(pg.dw_kernel);
    out.offset_weight = std::move(pg.offset_weight);
    out.offset_bias = std::move(pg.offset_bias);
    for (std::int64_t i = 0; i < gq_up.size(); ++i) {
      gq_up.data()[i] += pg.q_up.data()[i];
    }
  } else {
    out.dw_kernel = Tensor<T>(w.dw_kernel.n(), 1, 3, 3);
    out.offset_weight = Tensor<T>(w.offset_weight.n(), w.offset_weight.c(),
                                  w.offset_weight.h(), w.offset_weight.w());
    out.offset_bias = Tensor<T>(w.offset_bias.n(), 1, 1, 1);
  }

  const Tensor<T> gq =
      (cfg.query_upsample == QueryUpsample::Bilinear)
          ? bilinear_upsample_grad(s.q, cfg.alpha, cfg.projection_mode,
                                   cfg.padding, gq_up)
          : nearest_upsample_grad(s.q, cfg.alpha, cfg.projection_mode, gq_up);

  LinearProjectGrads<T> lq = linear_project_grad<T>(x, w.w_q, nullptr, gq);
  out.w_q = std::move(lq.weight);
  for (std::int64_t i = 0; i < out.x.size(); ++i) {
    out.x.data()[i] += lq.x.data()[i];
  }
  LinearProjectGrads<T> lk = linear_project_grad<T>(x, w.w_k, nullptr, gk);
  out.w_k = std::move(lk.weight);
  for (std::int64_t i = 0; i < out.x.size(); ++i) {
    out.x.data()[i] += lk.x.data()[i];
  }
  if (learned_v) {
    LinearProjectGrads<T> lv = linear_project_grad<T>(x, w.w_v, nullptr, gv);
    out.w_v = std::move(lv.weight);
    for (std::int64_t i = 0; i < out.x.size(); ++i) {
      out.x.data()[i] += lv.x.data()[i];
    }
  } else {
    for (std::int64_t i = 0; i < out.x.size(); ++i) {
      out.x.data()[i] += gv.data()[i];
    }
  }
  return out;
}

}  // namespace

template <typename T>
LdaAquOutput<T> lda_aqu_upsample(const Tensor<T>& x, const LdaAquWeights<T>& w,
                                 const UpsampleConfig& config,
                                 AttentionHook hook) {
  return aqu_forward(x, w, config, /*zero_offsets=*/false, hook);
}

template <typename T>
Tensor<T> la_aqu_upsample(const Tensor<T>& x, const LdaAquWeights<T>& w,
                          const UpsampleConfig& config) {
  return aqu_forward(x, w, config, /*zero_offsets=*/true, AttentionHook::None)
      .y;
}

template <typename T>
GradBundle<T> lda_aqu_backward(const Tensor<T>& x, const LdaAquWeights<T>& w,
                               const UpsampleConfig& config,
                               const Tensor<T>& upstream) {
  return aqu_backward(x, w, config, upstream, /*zero_offsets=*/false);
}

template <typename T>
GradBundle<T> la_aqu_backward(const Tensor<T>& x, const LdaAquWeights<T>& w,
                              const UpsampleConfig& config,
                              const Tensor<T>& upstream) {
  return aqu_backward(x, w, config, upstream, /*zero_offsets=*/true);
}

#define LDAQU_INSTANTIATE(T)                                                  \
  template LdaAquWeights<T> init_weights(const UpsampleConfig&, int, Rng&,    \
                                         InitScheme);                         \
  template Tensor<T> nearest_upsample(const Tensor<T>&, double,              \
                                      ProjectionMode);                        \
  template Tensor<T> nearest_upsample_grad(const Tensor<T>&, double,         \
                                           ProjectionMode, const Tensor<T>&);\
  template Tensor<T> bilinear_upsample(const Tensor<T>&, double,             \
                                       ProjectionMode, PaddingMode);         \
  template Tensor<T> bilinear_upsample_grad(const Tensor<T>&, double,        \
                                            ProjectionMode, PaddingMode,     \
                                            const Tensor<T>&);               \
  template Tensor<T> predict_offsets(const Tensor<T>&,                        \
                                     const LdaAquWeights<T>&,                \
                                     const UpsampleConfig&);                  \
  template PredictOffsetsGrads<T> predict_offsets_grad(                       \
      const Tensor<T>&, const LdaAquWeights<T>&, const UpsampleConfig&,      \
      const Tensor<T>&);                                                      \
  template LdaAquOutput<T> lda_aqu_upsample(const Tensor<T>&,                 \
                                            const LdaAquWeights<T>&,         \
                                            const UpsampleConfig&,           \
                                            AttentionHook);                  \
  template Tensor<T> la_aqu_upsample(const Tensor<T>&,                        \
                                     const LdaAquWeights<T>&,                \
                                     const UpsampleConfig&);                  \
  template GradBundle<T> lda_aqu_backward(const Tensor<T>&,                   \
                                          const LdaAquWeights<T>&,           \
                                          const UpsampleConfig&,             \
                                          const Tensor<T>&);                 \
  template GradBundle<T> la_aqu_backward(const Tensor<T>&,                    \
                                         const LdaAquWeights<T>&,            \
                                         const UpsampleConfig&,              \
                                         const Tensor<T>&);

LDAQU_INSTANTIATE(float)
LDAQU_INSTANTIATE(double)

#undef LDAQU_INSTANTIATE

}  // namespace ldaqu
