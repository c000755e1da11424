#include "ldaqu/oracle.hpp"

#include <cmath>
#include <vector>

namespace ldaqu::oracle {

FlopsBreakdown flops(const UpsampleConfig& config, int h, int w, int c) {
  if (h < 1 || w < 1 || c < 1) {
    throw DimError("flops: extents must be positive");
  }
  const double hw = static_cast<double>(h) * static_cast<double>(w);
  const double a2 = config.alpha * config.alpha;
  const double ku2 = static_cast<double>(config.k_u) * config.k_u;
  const double ke2 = static_cast<double>(config.k_e) * config.k_e;
  FlopsBreakdown b;
  b.projection = 2.0 * hw * c * c;
  b.interaction = 2.0 * a2 * ku2 * hw * c;
  b.offset_prediction = 2.0 * a2 * ku2 * ke2 * hw * c;
  b.total = b.projection + b.interaction + b.offset_prediction;
  return b;
}

namespace {

// The projection formula, restated here so the oracle does not share code
// with the geometry module it certifies. Applied as (v*num)/den.
struct NaiveAxis {
  double num = 0.0;
  double den = 1.0;
  double operator()(int v) const { return v * num / den; }
};

NaiveAxis naive_scale(int extent, double alpha, ProjectionMode mode) {
  if (mode == ProjectionMode::PaperExact) {
    return {static_cast<double>(extent), alpha * extent - 1.0};
  }
  const int out = static_cast<int>(std::floor(alpha * extent + 1e-9));
  if (out <= 1) return {0.0, 1.0};
  return {static_cast<double>(extent - 1), static_cast<double>(out - 1)};
}

int naive_out_extent(int extent, double alpha) {
  return static_cast<int>(std::floor(alpha * extent + 1e-9));
}

int naive_nearest_index(double v, int extent) {
  int i = static_cast<int>(std::ceil(v - 0.5));
  if (i < 0) i = 0;
  if (i > extent - 1) i = extent - 1;
  return i;
}

void naive_softmax(std::vector<double>& v) {
  double mx = v[0];
  for (double a : v) mx = std::max(mx, a);
  double sum = 0.0;
  for (double& a : v) {
    a = std::exp(a - mx);
    sum += a;
  }
  for (double& a : v) a /= sum;
}

}  // namespace

template <typename T>
double naive_bilinear_read(const Tensor<T>& feat, int b, int ch, double x,
                           double y, PaddingMode padding) {
  const int h = feat.h();
  const int w = feat.w();
  if (padding == PaddingMode::Border) {
    x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  }
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  double acc = 0.0;
  for (int ty = y0; ty <= y0 + 1; ++ty) {
    for (int tx = x0; tx <= x0 + 1; ++tx) {
      int sx = tx;
      int sy = ty;
      if (padding == PaddingMode::Border) {
        sx = std::min(std::max(sx, 0), w - 1);
        sy = std::min(std::max(sy, 0), h - 1);
      } else if (sx < 0 || sx >= w || sy < 0 || sy >= h) {
        continue;
      }
      const double wx = std::max(0.0, 1.0 - std::abs(x - tx));
      const double wy = std::max(0.0, 1.0 - std::abs(y - ty));
      acc += wy * wx * static_cast<double>(feat.at(b, ch, sy, sx));
    }
  }
  return acc;
}

template <typename T>
Tensor<T> naive_bilinear(const Tensor<T>& x, double alpha, ProjectionMode mode,
                         PaddingMode padding) {
  const int out_h = naive_out_extent(x.h(), alpha);
  const int out_w = naive_out_extent(x.w(), alpha);
  const NaiveAxis sx = naive_scale(x.w(), alpha, mode);
  const NaiveAxis sy = naive_scale(x.h(), alpha, mode);
  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  for (int b = 0; b < x.n(); ++b) {
    for (int ch = 0; ch < x.c(); ++ch) {
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          out.at(b, ch, oy, ox) = static_cast<T>(
              naive_bilinear_read(x, b, ch, sx(ox), sy(oy), padding));
        }
      }
    }
  }
  return out;
}

namespace {

// Everything below is the scalar re-derivation of the attention upsampler:
// projections as per-pixel matrix-vector products, the predictor as explicit
// sliding windows, sampling through naive_bilinear_read.

template <typename T>
Tensor<double> naive_matvec_project(const Tensor<T>& x, const Tensor<T>& w) {
  const int c_out = w.n();
  Tensor<double> out(x.n(), c_out, x.h(), x.w());
  for (int b = 0; b < x.n(); ++b) {
    for (int o = 0; o < c_out; ++o) {
      for (int y = 0; y < x.h(); ++y) {
        for (int xx = 0; xx < x.w(); ++xx) {
          double acc = 0.0;
          for (int i = 0; i < x.c(); ++i) {
            acc += static_cast<double>(w.at(o, i, 0, 0)) *
                   static_cast<double>(x.at(b, i, y, xx));
          }
          out.at(b, o, y, xx) = acc;
        }
      }
    }
  }
  return out;
}

// Upsampled queries: one read per output pixel instead of materializing a
// projected grid first; equal to upsample-then-index by construction.
template <typename T>
Tensor<double> naive_query_upsample(const Tensor<double>& q,
                                    const UpsampleConfig& cfg, int out_h,
                                    int out_w) {
  const NaiveAxis sx = naive_scale(q.w(), cfg.alpha, cfg.projection_mode);
  const NaiveAxis sy = naive_scale(q.h(), cfg.alpha, cfg.projection_mode);
  Tensor<double> out(q.n(), q.c(), out_h, out_w);
  for (int b = 0; b < q.n(); ++b) {
    for (int ch = 0; ch < q.c(); ++ch) {
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          if (cfg.query_upsample == QueryUpsample::Bilinear) {
            out.at(b, ch, oy, ox) = naive_bilinear_read(
                q, b, ch, sx(ox), sy(oy), cfg.padding);
          } else {
            const int ix = naive_nearest_index(sx(ox), q.w());
            const int iy = naive_nearest_index(sy(oy), q.h());
            out.at(b, ch, oy, ox) = q.at(b, ch, iy, ix);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> naive_la_aqu(const Tensor<T>& x, const LdaAquWeights<T>& w,
                       const UpsampleConfig& config) {
  config.validate(x.c());
  const int out_h = naive_out_extent(x.h(), config.alpha);
  const int out_w = naive_out_extent(x.w(), config.alpha);
  const int reduced = x.c() / config.reduction;
  const int g = config.groups;
  const int dq = reduced / g;
  const int dv = x.c() / g;
  const int half = config.k_u / 2;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dq));
  const NaiveAxis sx = naive_scale(x.w(), config.alpha, config.projection_mode);
  const NaiveAxis sy = naive_scale(x.h(), config.alpha, config.projection_mode);

  const Tensor<double> q = naive_matvec_project(x, w.w_q);
  const Tensor<double> k = naive_matvec_project(x, w.w_k);
  Tensor<double> v_store;
  const bool learned_v = config.value_projection == ValueProjection::Learned;
  if (learned_v) v_store = naive_matvec_project(x, w.w_v);
  const Tensor<double> q_up = naive_query_upsample<T>(q, config, out_h, out_w);

  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  std::vector<double> logits(static_cast<std::size_t>(config.k_u) * config.k_u);
  for (int b = 0; b < x.n(); ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const double px = sx(ox);
        const double py = sy(oy);
        for (int gi = 0; gi < g; ++gi) {
          int j = 0;
          for (int dy = -half; dy <= half; ++dy) {
            for (int dx = -half; dx <= half; ++dx, ++j) {
              double dot = 0.0;
              for (int ch = 0; ch < dq; ++ch) {
                const double kv = naive_bilinear_read(
                    k, b, gi * dq + ch, px + dx, py + dy, config.padding);
                dot += q_up.at(b, gi * dq + ch, oy, ox) * kv;
              }
              logits[j] = dot * inv_sqrt_dk;
            }
          }
          naive_softmax(logits);
          for (int ch = 0; ch < dv; ++ch) {
            double acc = 0.0;
            j = 0;
            for (int dy = -half; dy <= half; ++dy) {
              for (int dx = -half; dx <= half; ++dx, ++j) {
                double vv;
                if (learned_v) {
                  vv = naive_bilinear_read(v_store, b, gi * dv + ch, px + dx,
                                           py + dy, config.padding);
                } else {
                  vv = naive_bilinear_read(x, b, gi * dv + ch, px + dx,
                                           py + dy, config.padding);
                }
                acc += logits[j] * vv;
              }
            }
            out.at(b, gi * dv + ch, oy, ox) = static_cast<T>(acc);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> naive_lda_aqu(const Tensor<T>& x, const LdaAquWeights<T>& w,
                        const UpsampleConfig& config) {
  config.validate(x.c());
  const int out_h = naive_out_extent(x.h(), config.alpha);
  const int out_w = naive_out_extent(x.w(), config.alpha);
  const int reduced = x.c() / config.reduction;
  const int g = config.groups;
  const int sten = config.k_u * config.k_u;
  const int dq = reduced / g;
  const int dv = x.c() / g;
  const int half = config.k_u / 2;
  const int khalf = config.k_e / 2;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dq));
  const NaiveAxis sx = naive_scale(x.w(), config.alpha, config.projection_mode);
  const NaiveAxis sy = naive_scale(x.h(), config.alpha, config.projection_mode);

  const Tensor<double> q = naive_matvec_project(x, w.w_q);
  const Tensor<double> k = naive_matvec_project(x, w.w_k);
  Tensor<double> v_store;
  const bool learned_v = config.value_projection == ValueProjection::Learned;
  if (learned_v) v_store = naive_matvec_project(x, w.w_v);
  const Tensor<double> q_up = naive_query_upsample<T>(q, config, out_h, out_w);

  // offset predictor, evaluated with explicit sliding windows
  Tensor<double> dwmap(q_up.n(), reduced, out_h, out_w);
  for (int b = 0; b < q_up.n(); ++b) {
    for (int ch = 0; ch < reduced; ++ch) {
      for (int y = 0; y < out_h; ++y) {
        for (int xx = 0; xx < out_w; ++xx) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int syy = y + dy;
              const int sxx = xx + dx;
              if (syy < 0 || syy >= out_h || sxx < 0 || sxx >= out_w) continue;
              acc += static_cast<double>(w.dw_kernel.at(ch, 0, dy + 1, dx + 1)) *
                     q_up.at(b, ch, syy, sxx);
            }
          }
          dwmap.at(b, ch, y, xx) = acc;
        }
      }
    }
  }
  const int off_channels = 2 * g * sten;
  Tensor<double> offsets(q_up.n(), off_channels, out_h, out_w);
  for (int b = 0; b < q_up.n(); ++b) {
    for (int o = 0; o < off_channels; ++o) {
      for (int y = 0; y < out_h; ++y) {
        for (int xx = 0; xx < out_w; ++xx) {
          double acc = static_cast<double>(w.offset_bias.at(o, 0, 0, 0));
          for (int i = 0; i < reduced; ++i) {
            for (int dy = -khalf; dy <= khalf; ++dy) {
              for (int dx = -khalf; dx <= khalf; ++dx) {
                const int syy = y + dy;
                const int sxx = xx + dx;
                if (syy < 0 || syy >= out_h || sxx < 0 || sxx >= out_w) continue;
                acc += static_cast<double>(
                           w.offset_weight.at(o, i, dy + khalf, dx + khalf)) *
                       dwmap.at(b, i, syy, sxx);
              }
            }
          }
          offsets.at(b, o, y, xx) = config.theta * std::tanh(acc);
        }
      }
    }
  }

  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  std::vector<double> logits(static_cast<std::size_t>(sten));
  std::vector<double> cx(sten), cy(sten);
  for (int b = 0; b < x.n(); ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const double px = sx(ox);
        const double py = sy(oy);
        for (int gi = 0; gi < g; ++gi) {
          int j = 0;
          for (int dy = -half; dy <= half; ++dy) {
            for (int dx = -half; dx <= half; ++dx, ++j) {
              const int ch = (gi * sten + j) * 2;
              cx[j] = px + dx + offsets.at(b, ch, oy, ox);
              cy[j] = py + dy + offsets.at(b, ch + 1, oy, ox);
            }
          }
          for (j = 0; j < sten; ++j) {
            double dot = 0.0;
            for (int ch = 0; ch < dq; ++ch) {
              const double kv = naive_bilinear_read(k, b, gi * dq + ch, cx[j],
                                                    cy[j], config.padding);
              dot += q_up.at(b, gi * dq + ch, oy, ox) * kv;
            }
            logits[j] = dot * inv_sqrt_dk;
          }
          naive_softmax(logits);
          for (int ch = 0; ch < dv; ++ch) {
            double acc = 0.0;
            for (j = 0; j < sten; ++j) {
              double vv;
              if (learned_v) {
                vv = naive_bilinear_read(v_store, b, gi * dv + ch, cx[j],
                                         cy[j], config.padding);
              } else {
                vv = naive_bilinear_read(x, b, gi * dv + ch, cx[j], cy[j],
                                         config.padding);
              }
              acc += logits[j] * vv;
            }
            out.at(b, gi * dv + ch, oy, ox) = static_cast<T>(acc);
          }
        }
      }
    }
  }
  return out;
}

#define LDAQU_ORACLE_INSTANTIATE(T)                                          \
  template double naive_bilinear_read(const Tensor<T>&, int, int, double,    \
                                      double, PaddingMode);                  \
  template Tensor<T> naive_bilinear(const Tensor<T>&, double, ProjectionMode,\
                                    PaddingMode);                            \
  template Tensor<T> naive_la_aqu(const Tensor<T>&, const LdaAquWeights<T>&, \
                                  const UpsampleConfig&);                    \
  template Tensor<T> naive_lda_aqu(const Tensor<T>&, const LdaAquWeights<T>&,\
                                   const UpsampleConfig&);

LDAQU_ORACLE_INSTANTIATE(float)
LDAQU_ORACLE_INSTANTIATE(double)

#undef LDAQU_ORACLE_INSTANTIATE

}  // namespace ldaqu::oracle
