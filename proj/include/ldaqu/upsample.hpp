#pragma once

#include "ldaqu/geometry.hpp"
#include "ldaqu/nn_ops.hpp"
#include "ldaqu/tensor.hpp"

namespace ldaqu {

enum class UpsamplerKind { Nearest, Bilinear, LaAqu, LdaAqu };
enum class ValueProjection { Identity, Learned };
enum class QueryUpsample { Bilinear, Nearest };
enum class InitScheme { XavierUniform };

// Test hook: replaces the per-pixel aggregation by a one-hot read of the grid
// point nearest the selected tap, which collapses the operator to
// nearest-neighbor upsampling when offsets are zero.
enum class AttentionHook { None, OneHotNearest };

struct UpsampleConfig {
  double alpha = 2.0;    // upsampling factor, > 1
  int k_u = 3;           // neighbor stencil size, odd
  int k_e = 3;           // offset-predictor conv kernel, odd
  double theta = 11.0;   // deformation range, input-pixel units
  int groups = 2;        // offset groups
  int reduction = 4;     // Q/K projected to C/reduction channels
  int heads = 1;         // fixed
  ValueProjection value_projection = ValueProjection::Identity;
  ProjectionMode projection_mode = ProjectionMode::AlignCorners;
  PaddingMode padding = PaddingMode::Zeros;
  QueryUpsample query_upsample = QueryUpsample::Bilinear;

  void validate(int channels) const;
  int reduced_channels(int channels) const { return channels / reduction; }
  // per-group interaction width d_k
  int head_dim(int channels) const {
    return reduced_channels(channels) / groups;
  }
};

template <typename T>
struct LdaAquWeights {
  Tensor<T> w_q;           // (C/r, C, 1, 1)
  Tensor<T> w_k;           // (C/r, C, 1, 1)
  Tensor<T> w_v;           // (C, C, 1, 1); empty for identity values
  Tensor<T> dw_kernel;     // (C/r, 1, 3, 3)
  Tensor<T> offset_weight; // (2*groups*k_u^2, C/r, k_e, k_e)
  Tensor<T> offset_bias;   // (2*groups*k_u^2, 1, 1, 1)
};

// Xavier-uniform Q/K/V and depthwise kernels; offset predictor weight and
// bias start at zero so deformation begins disabled.
template <typename T>
LdaAquWeights<T> init_weights(const UpsampleConfig& config, int channels,
                              Rng& rng,
                              InitScheme scheme = InitScheme::XavierUniform);

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, double alpha,
                           ProjectionMode mode);

template <typename T>
Tensor<T> nearest_upsample_grad(const Tensor<T>& x, double alpha,
                                ProjectionMode mode, const Tensor<T>& upstream);

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, double alpha,
                            ProjectionMode mode,
                            PaddingMode padding = PaddingMode::Zeros);

template <typename T>
Tensor<T> bilinear_upsample_grad(const Tensor<T>& x, double alpha,
                                 ProjectionMode mode, PaddingMode padding,
                                 const Tensor<T>& upstream);

// Offset predictor: theta * tanh(conv_{k_e}(dwconv_{3x3}(q_up))).
// Output channel layout: (group * k_u^2 + point) * 2 + {0: x, 1: y}.
template <typename T>
Tensor<T> predict_offsets(const Tensor<T>& q_up, const LdaAquWeights<T>& w,
                          const UpsampleConfig& config);

template <typename T>
struct PredictOffsetsGrads {
  Tensor<T> q_up, dw_kernel, offset_weight, offset_bias;
};

template <typename T>
PredictOffsetsGrads<T> predict_offsets_grad(const Tensor<T>& q_up,
                                            const LdaAquWeights<T>& w,
                                            const UpsampleConfig& config,
                                            const Tensor<T>& upstream);

template <typename T>
struct LdaAquOutput {
  Tensor<T> y;
  CoordGrid grid;            // sampling geometry of batch item 0
  std::vector<T> attention;  // batch item 0, [pixel][group][point]
};

template <typename T>
LdaAquOutput<T> lda_aqu_upsample(const Tensor<T>& x, const LdaAquWeights<T>& w,
                                 const UpsampleConfig& config,
                                 AttentionHook hook = AttentionHook::None);

// LDA-AQU with the deformation offsets pinned to zero (uniform stencil).
template <typename T>
Tensor<T> la_aqu_upsample(const Tensor<T>& x, const LdaAquWeights<T>& w,
                          const UpsampleConfig& config);

template <typename T>
struct GradBundle {
  Tensor<T> x;
  Tensor<T> w_q, w_k, w_v;  // w_v empty for identity values
  Tensor<T> dw_kernel, offset_weight, offset_bias;
  double loss = 0.0;  // filled by harnesses that evaluate one
};

template <typename T>
GradBundle<T> lda_aqu_backward(const Tensor<T>& x, const LdaAquWeights<T>& w,
                               const UpsampleConfig& config,
                               const Tensor<T>& upstream);

// Backward of the frozen-offset variant; predictor gradients come back zero.
template <typename T>
GradBundle<T> la_aqu_backward(const Tensor<T>& x, const LdaAquWeights<T>& w,
                              const UpsampleConfig& config,
                              const Tensor<T>& upstream);

}  // namespace ldaqu
