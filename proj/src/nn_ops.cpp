#include "ldaqu/nn_ops.hpp"

#include <algorithm>
#include <cmath>

namespace ldaqu {

namespace {

template <typename T>
void require_nonempty(const Tensor<T>& t, const char* who) {
  if (t.empty()) throw DimError(std::string(who) + ": empty tensor");
}

template <typename T>
void check_bias(const Tensor<T>* bias, int c_out, const char* who) {
  if (!bias) return;
  if (bias->c() != 1 || bias->h() != 1 || bias->w() != 1 ||
      bias->n() != c_out) {
    throw DimError(std::string(who) + ": bias shape " + bias->shape_str() +
                   " does not match " + std::to_string(c_out) +
                   " output channels");
  }
}

void check_odd_kernel(int k, const char* who) {
  if (k % 2 == 0) {
    throw ConfigError(std::string(who) + ": kernel size must be odd, got " +
                      std::to_string(k));
  }
}

}  // namespace

template <typename T>
Tensor<T> linear_project(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>* bias) {
  require_nonempty(x, "linear_project");
  if (weight.h() != 1 || weight.w() != 1 || weight.c() != x.c()) {
    throw DimError("linear_project: weight shape " + weight.shape_str() +
                   " incompatible with input shape " + x.shape_str());
  }
  const int c_out = weight.n();
  check_bias(bias, c_out, "linear_project");

  Tensor<T> out(x.n(), c_out, x.h(), x.w());
  const std::int64_t plane = static_cast<std::int64_t>(x.h()) * x.w();
  parallel_for(static_cast<std::int64_t>(x.n()) * c_out, [&](std::int64_t job) {
    const int b = static_cast<int>(job / c_out);
    const int o = static_cast<int>(job % c_out);
    const T b0 = bias ? bias->at(o, 0, 0, 0) : T(0);
    T* dst = out.data() + out.offset(b, o, 0, 0);
    for (std::int64_t p = 0; p < plane; ++p) {
      T acc = b0;
      for (int i = 0; i < x.c(); ++i) {
        acc += weight.at(o, i, 0, 0) * x.data()[x.offset(b, i, 0, 0) + p];
      }
      dst[p] = acc;
    }
  });
  return out;
}

template <typename T>
LinearProjectGrads<T> linear_project_grad(const Tensor<T>& x,
                                          const Tensor<T>& weight,
                                          const Tensor<T>* bias,
                                          const Tensor<T>& upstream) {
  const int c_out = weight.n();
  if (upstream.n() != x.n() || upstream.c() != c_out ||
      upstream.h() != x.h() || upstream.w() != x.w()) {
    throw DimError("linear_project_grad: upstream shape " +
                   upstream.shape_str() + " does not match output of " +
                   x.shape_str());
  }
  LinearProjectGrads<T> g;
  g.x = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  g.weight = Tensor<T>(weight.n(), weight.c(), 1, 1);
  if (bias) g.bias = Tensor<T>(c_out, 1, 1, 1);

  const std::int64_t plane = static_cast<std::int64_t>(x.h()) * x.w();
  for (int b = 0; b < x.n(); ++b) {
    for (int o = 0; o < c_out; ++o) {
      const T* up = upstream.data() + upstream.offset(b, o, 0, 0);
      for (int i = 0; i < x.c(); ++i) {
        const T w = weight.at(o, i, 0, 0);
        const T* xin = x.data() + x.offset(b, i, 0, 0);
        T* gx = g.x.data() + g.x.offset(b, i, 0, 0);
        T acc = T(0);
        for (std::int64_t p = 0; p < plane; ++p) {
          acc += up[p] * xin[p];
          gx[p] += w * up[p];
        }
        g.weight.at(o, i, 0, 0) += acc;
      }
      if (bias) {
        T acc = T(0);
        for (std::int64_t p = 0; p < plane; ++p) acc += up[p];
        g.bias.at(o, 0, 0, 0) += acc;
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& x, const Tensor<T>& kernel,
                         const Tensor<T>* bias) {
  require_nonempty(x, "depthwise_conv");
  check_odd_kernel(kernel.h(), "depthwise_conv");
  if (kernel.n() != x.c() || kernel.c() != 1 || kernel.h() != kernel.w()) {
    throw DimError("depthwise_conv: kernel shape " + kernel.shape_str() +
                   " incompatible with input shape " + x.shape_str());
  }
  check_bias(bias, x.c(), "depthwise_conv");
  const int k = kernel.h();
  const int half = k / 2;

  Tensor<T> out(x.n(), x.c(), x.h(), x.w());
  parallel_for(static_cast<std::int64_t>(x.n()) * x.c(), [&](std::int64_t job) {
    const int b = static_cast<int>(job / x.c());
    const int ch = static_cast<int>(job % x.c());
    const T b0 = bias ? bias->at(ch, 0, 0, 0) : T(0);
    for (int y = 0; y < x.h(); ++y) {
      for (int xx = 0; xx < x.w(); ++xx) {
        T acc = b0;
        for (int dy = -half; dy <= half; ++dy) {
          const int sy = y + dy;
          if (sy < 0 || sy >= x.h()) continue;
          for (int dx = -half; dx <= half; ++dx) {
            const int sx = xx + dx;
            if (sx < 0 || sx >= x.w()) continue;
            acc += kernel.at(ch, 0, dy + half, dx + half) * x.at(b, ch, sy, sx);
          }
        }
        out.at(b, ch, y, xx) = acc;
      }
    }
  });
  return out;
}

template <typename T>
DepthwiseConvGrads<T> depthwise_conv_grad(const Tensor<T>& x,
                                          const Tensor<T>& kernel,
                                          const Tensor<T>* bias,
                                          const Tensor<T>& upstream) {
  if (!upstream.same_shape(x)) {
    throw DimError("depthwise_conv_grad: upstream shape " +
                   upstream.shape_str() + " does not match input shape " +
                   x.shape_str());
  }
  DepthwiseConvGrads<T> g;
  g.x = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  g.kernel = Tensor<T>(kernel.n(), 1, kernel.h(), kernel.w());
  if (bias) g.bias = Tensor<T>(x.c(), 1, 1, 1);
  const int k = kernel.h();
  const int half = k / 2;

  for (int b = 0; b < x.n(); ++b) {
    for (int ch = 0; ch < x.c(); ++ch) {
      for (int y = 0; y < x.h(); ++y) {
        for (int xx = 0; xx < x.w(); ++xx) {
          const T up = upstream.at(b, ch, y, xx);
          if (bias) g.bias.at(ch, 0, 0, 0) += up;
          for (int dy = -half; dy <= half; ++dy) {
            const int sy = y + dy;
            if (sy < 0 || sy >= x.h()) continue;
            for (int dx = -half; dx <= half; ++dx) {
              const int sx = xx + dx;
              if (sx < 0 || sx >= x.w()) continue;
              g.x.at(b, ch, sy, sx) +=
                  kernel.at(ch, 0, dy + half, dx + half) * up;
              g.kernel.at(ch, 0, dy + half, dx + half) +=
                  x.at(b, ch, sy, sx) * up;
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>* bias) {
  require_nonempty(x, "conv2d");
  check_odd_kernel(kernel.h(), "conv2d");
  if (kernel.c() != x.c() || kernel.h() != kernel.w()) {
    throw DimError("conv2d: kernel shape " + kernel.shape_str() +
                   " incompatible with input shape " + x.shape_str());
  }
  const int c_out = kernel.n();
  check_bias(bias, c_out, "conv2d");
  const int k = kernel.h();
  const int half = k / 2;

  Tensor<T> out(x.n(), c_out, x.h(), x.w());
  parallel_for(static_cast<std::int64_t>(x.n()) * c_out, [&](std::int64_t job) {
    const int b = static_cast<int>(job / c_out);
    const int o = static_cast<int>(job % c_out);
    const T b0 = bias ? bias->at(o, 0, 0, 0) : T(0);
    for (int y = 0; y < x.h(); ++y) {
      for (int xx = 0; xx < x.w(); ++xx) {
        T acc = b0;
        for (int i = 0; i < x.c(); ++i) {
          for (int dy = -half; dy <= half; ++dy) {
            const int sy = y + dy;
            if (sy < 0 || sy >= x.h()) continue;
            for (int dx = -half; dx <= half; ++dx) {
              const int sx = xx + dx;
              if (sx < 0 || sx >= x.w()) continue;
              acc += kernel.at(o, i, dy + half, dx + half) * x.at(b, i, sy, sx);
            }
          }
        }
        out.at(b, o, y, xx) = acc;
      }
    }
  });
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>* bias, const Tensor<T>& upstream) {
  const int c_out = kernel.n();
  if (upstream.n() != x.n() || upstream.c() != c_out ||
      upstream.h() != x.h() || upstream.w() != x.w()) {
    throw DimError("conv2d_grad: upstream shape " + upstream.shape_str() +
                   " does not match output of " + x.shape_str());
  }
  Conv2dGrads<T> g;
  g.x = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  g.kernel = Tensor<T>(kernel.n(), kernel.c(), kernel.h(), kernel.w());
  if (bias) g.bias = Tensor<T>(c_out, 1, 1, 1);
  const int k = kernel.h();
  const int half = k / 2;

  for (int b = 0; b < x.n(); ++b) {
    for (int o = 0; o < c_out; ++o) {
      for (int y = 0; y < x.h(); ++y) {
        for (int xx = 0; xx < x.w(); ++xx) {
          const T up = upstream.at(b, o, y, xx);
          if (bias) g.bias.at(o, 0, 0, 0) += up;
          for (int i = 0; i < x.c(); ++i) {
            for (int dy = -half; dy <= half; ++dy) {
              const int sy = y + dy;
              if (sy < 0 || sy >= x.h()) continue;
              for (int dx = -half; dx <= half; ++dx) {
                const int sx = xx + dx;
                if (sx < 0 || sx >= x.w()) continue;
                g.x.at(b, i, sy, sx) += kernel.at(o, i, dy + half, dx + half) * up;
                g.kernel.at(o, i, dy + half, dx + half) += x.at(b, i, sy, sx) * up;
              }
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
void softmax_inplace(std::span<T> v) {
  if (v.empty()) return;
  T mx = v[0];
  for (const T a : v) mx = std::max(mx, a);
  T sum = T(0);
  for (T& a : v) {
    a = std::exp(a - mx);
    sum += a;
  }
  for (T& a : v) a /= sum;
}

namespace {

// Iterates every 1-d slice of `t` along `axis`, handing the gathered slice to
// `fn` and scattering the result back.
template <typename T, typename Fn>
Tensor<T> map_axis_slices(const Tensor<T>& t, int axis, Fn&& fn) {
  if (axis < 0 || axis > 3) {
    throw ConfigError("axis must be in [0,3], got " + std::to_string(axis));
  }
  const std::array<int, 4> shape = t.shape();
  const int m = shape[axis];
  Tensor<T> out(shape[0], shape[1], shape[2], shape[3]);
  std::vector<T> buf(m);
  std::array<int, 4> idx{};
  std::array<int, 3> outer{};
  int oi = 0;
  for (int d = 0; d < 4; ++d) {
    if (d != axis) outer[oi++] = d;
  }
  for (int a = 0; a < shape[outer[0]]; ++a) {
    for (int b = 0; b < shape[outer[1]]; ++b) {
      for (int c = 0; c < shape[outer[2]]; ++c) {
        idx[outer[0]] = a;
        idx[outer[1]] = b;
        idx[outer[2]] = c;
        for (int i = 0; i < m; ++i) {
          idx[axis] = i;
          buf[i] = t.at(idx[0], idx[1], idx[2], idx[3]);
        }
        fn(std::span<T>(buf));
        for (int i = 0; i < m; ++i) {
          idx[axis] = i;
          out.at(idx[0], idx[1], idx[2], idx[3]) = buf[i];
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> softmax_lastaxis(const Tensor<T>& x, int axis) {
  require_nonempty(x, "softmax_lastaxis");
  return map_axis_slices(x, axis, [](std::span<T> v) { softmax_inplace(v); });
}

template <typename T>
Tensor<T> softmax_lastaxis_grad(const Tensor<T>& y, const Tensor<T>& upstream,
                                int axis) {
  if (!y.same_shape(upstream)) {
    throw DimError("softmax_lastaxis_grad: shapes differ, " + y.shape_str() +
                   " vs " + upstream.shape_str());
  }
  // grad_i = y_i * (u_i - sum_j y_j u_j); needs y and u together, so gather
  // pairs by walking both tensors with the same slice iterator.
  const std::array<int, 4> shape = y.shape();
  const int m = shape[axis];
  Tensor<T> out(shape[0], shape[1], shape[2], shape[3]);
  std::array<int, 4> idx{};
  std::array<int, 3> outer{};
  int oi = 0;
  for (int d = 0; d < 4; ++d) {
    if (d != axis) outer[oi++] = d;
  }
  for (int a = 0; a < shape[outer[0]]; ++a) {
    for (int b = 0; b < shape[outer[1]]; ++b) {
      for (int c = 0; c < shape[outer[2]]; ++c) {
        idx[outer[0]] = a;
        idx[outer[1]] = b;
        idx[outer[2]] = c;
        T dot = T(0);
        for (int i = 0; i < m; ++i) {
          idx[axis] = i;
          dot += y.at(idx[0], idx[1], idx[2], idx[3]) *
                 upstream.at(idx[0], idx[1], idx[2], idx[3]);
        }
        for (int i = 0; i < m; ++i) {
          idx[axis] = i;
          const T yi = y.at(idx[0], idx[1], idx[2], idx[3]);
          const T ui = upstream.at(idx[0], idx[1], idx[2], idx[3]);
          out.at(idx[0], idx[1], idx[2], idx[3]) = yi * (ui - dot);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> tanh_scale(const Tensor<T>& x, double theta) {
  require_nonempty(x, "tanh_scale");
  if (!(theta > 0.0)) {
    throw ConfigError("tanh_scale: theta must be positive, got " +
                      std::to_string(theta));
  }
  Tensor<T> out(x.n(), x.c(), x.h(), x.w());
  const T th = static_cast<T>(theta);
  const T* src = x.data();
  T* dst = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) dst[i] = th * std::tanh(src[i]);
  return out;
}

template <typename T>
Tensor<T> tanh_scale_grad(const Tensor<T>& x, double theta,
                          const Tensor<T>& upstream) {
  if (!x.same_shape(upstream)) {
    throw DimError("tanh_scale_grad: shapes differ, " + x.shape_str() +
                   " vs " + upstream.shape_str());
  }
  Tensor<T> out(x.n(), x.c(), x.h(), x.w());
  const T th = static_cast<T>(theta);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const T t = std::tanh(x.data()[i]);
    out.data()[i] = th * (T(1) - t * t) * upstream.data()[i];
  }
  return out;
}

#define LDAQU_INSTANTIATE(T)                                                   \
  template Tensor<T> linear_project(const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>*);                         \
  template LinearProjectGrads<T> linear_project_grad(                         \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const Tensor<T>&);\
  template Tensor<T> depthwise_conv(const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>*);                         \
  template DepthwiseConvGrads<T> depthwise_conv_grad(                         \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const Tensor<T>&);\
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,               \
                            const Tensor<T>*);                                 \
  template Conv2dGrads<T> conv2d_grad(const Tensor<T>&, const Tensor<T>&,     \
                                      const Tensor<T>*, const Tensor<T>&);    \
  template void softmax_inplace(std::span<T>);                                \
  template Tensor<T> softmax_lastaxis(const Tensor<T>&, int);                 \
  template Tensor<T> softmax_lastaxis_grad(const Tensor<T>&, const Tensor<T>&,\
                                           int);                              \
  template Tensor<T> tanh_scale(const Tensor<T>&, double);                    \
  template Tensor<T> tanh_scale_grad(const Tensor<T>&, double,                \
                                     const Tensor<T>&);

LDAQU_INSTANTIATE(float)
LDAQU_INSTANTIATE(double)

#undef LDAQU_INSTANTIATE

}  // namespace ldaqu
