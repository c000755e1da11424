#include "ldaqu/geometry.hpp"

#include <cmath>

namespace ldaqu {

int scaled_extent(int in_extent, double alpha) {
  if (in_extent < 1) {
    throw DimError("extent must be >= 1, got " + std::to_string(in_extent));
  }
  const int out = static_cast<int>(std::floor(alpha * in_extent + 1e-9));
  if (out < 1) {
    throw ConfigError("scaled extent collapsed to zero (alpha=" +
                      std::to_string(alpha) + ")");
  }
  return out;
}

std::vector<PixelCoord> make_output_grid(int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw DimError("output grid extents must be >= 1, got " +
                   std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  std::vector<PixelCoord> grid;
  grid.reserve(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      grid.push_back({x, y});
    }
  }
  return grid;
}

AxisProjection axis_projection(int in_extent, double alpha,
                               ProjectionMode mode) {
  if (mode == ProjectionMode::PaperExact) {
    const double denom = alpha * in_extent - 1.0;
    if (std::abs(denom) < 1e-12) {
      throw ConfigError("degenerate projection: alpha*extent = 1 (extent=" +
                        std::to_string(in_extent) + ", alpha=" +
                        std::to_string(alpha) + ")");
    }
    return {static_cast<double>(in_extent), denom};
  }
  const int out = scaled_extent(in_extent, alpha);
  if (out == 1) {
    if (in_extent == 1) return {0.0, 1.0};  // single pixel maps to 0
    throw ConfigError("degenerate projection: output extent 1 for input " +
                      std::to_string(in_extent));
  }
  return {static_cast<double>(in_extent - 1), static_cast<double>(out - 1)};
}

Coord project(PixelCoord p, int in_h, int in_w, double alpha,
              ProjectionMode mode) {
  const AxisProjection px = axis_projection(in_w, alpha, mode);
  const AxisProjection py = axis_projection(in_h, alpha, mode);
  return {px(p.x), py(p.y)};
}

std::vector<Coord> project_grid(std::span<const PixelCoord> pixels, int in_h,
                                int in_w, double alpha, ProjectionMode mode) {
  const AxisProjection px = axis_projection(in_w, alpha, mode);
  const AxisProjection py = axis_projection(in_h, alpha, mode);
  std::vector<Coord> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    out[i] = {px(pixels[i].x), py(pixels[i].y)};
  }
  return out;
}

std::vector<PixelCoord> neighbor_offsets(int k_u) {
  if (k_u < 1 || k_u % 2 == 0) {
    throw ConfigError("neighbor stencil size must be odd and >= 1, got " +
                      std::to_string(k_u));
  }
  const int half = k_u / 2;
  std::vector<PixelCoord> offsets;
  offsets.reserve(static_cast<std::size_t>(k_u) * k_u);
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      offsets.push_back({dx, dy});
    }
  }
  return offsets;
}

template <typename T>
std::vector<T> bilinear_sample(const Tensor<T>& feat,
                               std::span<const Coord> coords,
                               PaddingMode padding) {
  if (feat.empty()) throw DimError("bilinear_sample: empty tensor");
  for (const Coord& c : coords) {
    if (!std::isfinite(c.x) || !std::isfinite(c.y)) {
      throw ConfigError("bilinear_sample: non-finite coordinate");
    }
  }
  const std::int64_t len = static_cast<std::int64_t>(coords.size());
  std::vector<T> out(static_cast<std::size_t>(feat.n()) * len * feat.c());
  for (int b = 0; b < feat.n(); ++b) {
    for (std::int64_t i = 0; i < len; ++i) {
      const TapWeights<T> t =
          bilinear_taps<T>(feat.h(), feat.w(), coords[i].x, coords[i].y, padding);
      for (int ch = 0; ch < feat.c(); ++ch) {
        T acc = T(0);
        if (t.v00) acc += t.w00 * feat.at(b, ch, t.y0, t.x0);
        if (t.v01) acc += t.w01 * feat.at(b, ch, t.y0, t.x1);
        if (t.v10) acc += t.w10 * feat.at(b, ch, t.y1, t.x0);
        if (t.v11) acc += t.w11 * feat.at(b, ch, t.y1, t.x1);
        out[(static_cast<std::size_t>(b) * len + i) * feat.c() + ch] = acc;
      }
    }
  }
  return out;
}

namespace {

// d/da max(0, 1-|a-b|): -sign(a-b) strictly inside the unit window, 0 at the
// kinks and outside.
inline double tap_weight_deriv(double a, double b) {
  const double d = a - b;
  const double ad = std::abs(d);
  if (ad >= 1.0 || d == 0.0) return 0.0;
  return d > 0.0 ? -1.0 : 1.0;
}

}  // namespace

template <typename T>
BilinearSampleGrads<T> bilinear_sample_grad(const Tensor<T>& feat,
                                            std::span<const Coord> coords,
                                            PaddingMode padding,
                                            std::span<const T> upstream) {
  const std::int64_t len = static_cast<std::int64_t>(coords.size());
  const std::int64_t expected =
      static_cast<std::int64_t>(feat.n()) * len * feat.c();
  if (static_cast<std::int64_t>(upstream.size()) != expected) {
    throw DimError("bilinear_sample_grad: upstream has " +
                   std::to_string(upstream.size()) + " values, expected " +
                   std::to_string(expected));
  }
  BilinearSampleGrads<T> g;
  g.feat = Tensor<T>(feat.n(), feat.c(), feat.h(), feat.w());
  g.coords.assign(coords.size(), Coord{0.0, 0.0});

  const int h = feat.h();
  const int w = feat.w();
  for (int b = 0; b < feat.n(); ++b) {
    for (std::int64_t i = 0; i < len; ++i) {
      double x = coords[i].x;
      double y = coords[i].y;
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
            sx = std::min(std::max(sx, 0), w - 1);
            sy = std::min(std::max(sy, 0), h - 1);
          } else if (sx < 0 || sx >= w || sy < 0 || sy >= h) {
            continue;
          }
          const double wx = std::max(0.0, 1.0 - std::abs(x - xs[tx]));
          const double wy = std::max(0.0, 1.0 - std::abs(y - ys[ty]));
          const double dwx = tap_weight_deriv(x, xs[tx]);
          const double dwy = tap_weight_deriv(y, ys[ty]);
          for (int ch = 0; ch < feat.c(); ++ch) {
            const double up = static_cast<double>(
                upstream[(static_cast<std::size_t>(b) * len + i) * feat.c() + ch]);
            const double f = static_cast<double>(feat.at(b, ch, sy, sx));
            g.feat.at(b, ch, sy, sx) += static_cast<T>(wy * wx * up);
            gx += dwx * wy * f * up;
            gy += wx * dwy * f * up;
          }
        }
      }
      if (x_alive) g.coords[i].x += gx;
      if (y_alive) g.coords[i].y += gy;
    }
  }
  return g;
}

template std::vector<float> bilinear_sample(const Tensor<float>&,
                                            std::span<const Coord>,
                                            PaddingMode);
template std::vector<double> bilinear_sample(const Tensor<double>&,
                                             std::span<const Coord>,
                                             PaddingMode);
template BilinearSampleGrads<float> bilinear_sample_grad(
    const Tensor<float>&, std::span<const Coord>, PaddingMode,
    std::span<const float>);
template BilinearSampleGrads<double> bilinear_sample_grad(
    const Tensor<double>&, std::span<const Coord>, PaddingMode,
    std::span<const double>);

}  // namespace ldaqu
