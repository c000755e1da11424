#pragma once

#include <span>

#include "ldaqu/tensor.hpp"

namespace ldaqu {

// Neural primitives over rank-4 tensors. All "same" convolutions are
// cross-correlations with zero padding; weights are rank-4 tensors:
//   linear weight   (c_out, c_in, 1, 1)
//   depthwise kernel(c,     1,    k, k)
//   conv2d kernel   (c_out, c_in, k, k)
//   bias            (c_out, 1,    1, 1), optional everywhere

template <typename T>
Tensor<T> linear_project(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>* bias = nullptr);

template <typename T>
struct LinearProjectGrads {
  Tensor<T> x, weight, bias;  // bias empty when the call had none
};

template <typename T>
LinearProjectGrads<T> linear_project_grad(const Tensor<T>& x,
                                          const Tensor<T>& weight,
                                          const Tensor<T>* bias,
                                          const Tensor<T>& upstream);

template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& x, const Tensor<T>& kernel,
                         const Tensor<T>* bias = nullptr);

template <typename T>
struct DepthwiseConvGrads {
  Tensor<T> x, kernel, bias;
};

template <typename T>
DepthwiseConvGrads<T> depthwise_conv_grad(const Tensor<T>& x,
                                          const Tensor<T>& kernel,
                                          const Tensor<T>* bias,
                                          const Tensor<T>& upstream);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>* bias = nullptr);

template <typename T>
struct Conv2dGrads {
  Tensor<T> x, kernel, bias;
};

template <typename T>
Conv2dGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>* bias, const Tensor<T>& upstream);

// Stable softmax over one contiguous group; shared by the public op and the
// attention kernels so every softmax in the project runs the same arithmetic.
template <typename T>
void softmax_inplace(std::span<T> v);

// Softmax along one axis of a tensor (0=batch .. 3=width).
template <typename T>
Tensor<T> softmax_lastaxis(const Tensor<T>& x, int axis = 3);

// Gradient w.r.t. the softmax input, given the softmax output y.
template <typename T>
Tensor<T> softmax_lastaxis_grad(const Tensor<T>& y, const Tensor<T>& upstream,
                                int axis = 3);

// theta * tanh(x); range [-theta, theta]
template <typename T>
Tensor<T> tanh_scale(const Tensor<T>& x, double theta);

template <typename T>
Tensor<T> tanh_scale_grad(const Tensor<T>& x, double theta,
                          const Tensor<T>& upstream);

}  // namespace ldaqu
