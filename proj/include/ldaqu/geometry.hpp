#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ldaqu/tensor.hpp"

namespace ldaqu {

// Coordinate projection from output pixels to input space.
//   PaperExact:   x' = x * W / (alpha*W - 1)   (can leave [0, W-1])
//   AlignCorners: x' = x * (W-1) / (out_w - 1) (corners map to corners)
// For integer alpha*W the two denominators agree; for fractional scales the
// align-corners form uses the realized output extent so the corner property
// holds for every alpha.
enum class ProjectionMode { PaperExact, AlignCorners };

// Out-of-range sampling: Zeros reads 0 outside the map, Border clamps the
// coordinate into [0, extent-1] before sampling.
enum class PaddingMode { Zeros, Border };

struct PixelCoord {
  int x = 0;
  int y = 0;
};

struct Coord {
  double x = 0.0;
  double y = 0.0;
};

// floor(alpha * extent), with a tiny nudge so scales like 1.1 stored as the
// nearest double still produce the intended extent.
int scaled_extent(int in_extent, double alpha);

// Output pixel coordinates in row-major order, x fastest.
std::vector<PixelCoord> make_output_grid(int out_h, int out_w);

// One axis of the projection as a num/den pair. Applying it as (v*num)/den
// keeps the corner mapping exact: ((out-1)*(in-1))/(out-1) divides without
// rounding, which a precomputed ratio would not.
struct AxisProjection {
  double num = 0.0;
  double den = 1.0;
  double operator()(int v) const { return v * num / den; }
};

AxisProjection axis_projection(int in_extent, double alpha,
                               ProjectionMode mode);

Coord project(PixelCoord p, int in_h, int in_w, double alpha,
              ProjectionMode mode);

std::vector<Coord> project_grid(std::span<const PixelCoord> pixels, int in_h,
                                int in_w, double alpha, ProjectionMode mode);

// Centered square stencil, row-major; k_u must be odd.
std::vector<PixelCoord> neighbor_offsets(int k_u);

// 4-tap footprint of one real-valued sample position. Weight of tap t along
// one axis is max(0, 1-|a-t|); taps are (y,x)-indexed as w[y][x].
template <typename T>
struct TapWeights {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  T w00{}, w01{}, w10{}, w11{};
  bool v00 = false, v01 = false, v10 = false, v11 = false;  // tap usable
};

template <typename T>
inline TapWeights<T> bilinear_taps(int h, int w, double x, double y,
                                   PaddingMode padding) {
  if (padding == PaddingMode::Border) {
    x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  }
  TapWeights<T> t;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  t.x0 = static_cast<int>(fx);
  t.x1 = t.x0 + 1;
  t.y0 = static_cast<int>(fy);
  t.y1 = t.y0 + 1;
  const T ax = static_cast<T>(x - fx);
  const T ay = static_cast<T>(y - fy);
  t.w00 = (T(1) - ay) * (T(1) - ax);
  t.w01 = (T(1) - ay) * ax;
  t.w10 = ay * (T(1) - ax);
  t.w11 = ay * ax;
  if (padding == PaddingMode::Border) {
    t.x0 = std::min(std::max(t.x0, 0), w - 1);
    t.x1 = std::min(std::max(t.x1, 0), w - 1);
    t.y0 = std::min(std::max(t.y0, 0), h - 1);
    t.y1 = std::min(std::max(t.y1, 0), h - 1);
    t.v00 = t.v01 = t.v10 = t.v11 = true;
  } else {
    const bool x0in = t.x0 >= 0 && t.x0 < w;
    const bool x1in = t.x1 >= 0 && t.x1 < w;
    const bool y0in = t.y0 >= 0 && t.y0 < h;
    const bool y1in = t.y1 >= 0 && t.y1 < h;
    t.v00 = x0in && y0in;
    t.v01 = x1in && y0in;
    t.v10 = x0in && y1in;
    t.v11 = x1in && y1in;
  }
  return t;
}

template <typename T>
inline T bilinear_sample_at(const Tensor<T>& feat, int b, int ch, double x,
                            double y, PaddingMode padding) {
  const TapWeights<T> t = bilinear_taps<T>(feat.h(), feat.w(), x, y, padding);
  T acc = T(0);
  if (t.v00) acc += t.w00 * feat.at(b, ch, t.y0, t.x0);
  if (t.v01) acc += t.w01 * feat.at(b, ch, t.y0, t.x1);
  if (t.v10) acc += t.w10 * feat.at(b, ch, t.y1, t.x0);
  if (t.v11) acc += t.w11 * feat.at(b, ch, t.y1, t.x1);
  return acc;
}

// Samples every coordinate for every batch item and channel; result is laid
// out [n][len][c], flattened.
template <typename T>
std::vector<T> bilinear_sample(const Tensor<T>& feat,
                               std::span<const Coord> coords,
                               PaddingMode padding);

template <typename T>
struct BilinearSampleGrads {
  Tensor<T> feat;
  std::vector<Coord> coords;  // gradient per coordinate, summed over n and c
};

// Adjoint of bilinear_sample. The tap-weight derivative uses the convention
// d/da max(0, 1-|a-b|) = -sign(a-b) for |a-b| < 1 and 0 elsewhere (sign(0)=0),
// so a constant map has exactly zero coordinate gradient everywhere.
template <typename T>
BilinearSampleGrads<T> bilinear_sample_grad(const Tensor<T>& feat,
                                            std::span<const Coord> coords,
                                            PaddingMode padding,
                                            std::span<const T> upstream);

// Sampling geometry of one image: output pixels p, their projected reference
// points p', the uniform stencil r = p' + dP, predicted per-group offsets and
// the deformed positions r' = r + delta_r.
struct CoordGrid {
  int out_h = 0, out_w = 0;
  int k_u = 0, groups = 0;
  std::vector<PixelCoord> p;  // N entries, x fastest
  std::vector<Coord> p_prime; // N
  std::vector<Coord> r;       // N * k_u^2
  std::vector<Coord> delta_r; // N * groups * k_u^2
  std::vector<Coord> r_prime; // N * groups * k_u^2

  std::int64_t pixels() const {
    return static_cast<std::int64_t>(out_h) * out_w;
  }
  std::int64_t stencil_index(std::int64_t pixel, int j) const {
    return pixel * (static_cast<std::int64_t>(k_u) * k_u) + j;
  }
  std::int64_t group_index(std::int64_t pixel, int g, int j) const {
    const std::int64_t s = static_cast<std::int64_t>(k_u) * k_u;
    return (pixel * groups + g) * s + j;
  }
};

}  // namespace ldaqu
