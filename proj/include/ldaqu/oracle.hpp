#pragma once

#include "ldaqu/tensor.hpp"
#include "ldaqu/upsample.hpp"

namespace ldaqu::oracle {

// Closed-form cost model. Counts one multiply-accumulate as 2 ops; stored as
// binary64 so fractional scale factors keep the exact-linearity property.
struct FlopsBreakdown {
  double projection = 0.0;
  double interaction = 0.0;
  double offset_prediction = 0.0;
  double total = 0.0;
};

FlopsBreakdown flops(const UpsampleConfig& config, int h, int w, int c);

// Direct 4-tap evaluation of one bilinear read; the arithmetic every naive
// path below goes through.
template <typename T>
double naive_bilinear_read(const Tensor<T>& feat, int b, int ch, double x,
                           double y, PaddingMode padding);

// Reference upsamplers: scalar loops, no shared machinery with the vectorized
// implementations beyond the data types. Ground truth for equivalence tests.
template <typename T>
Tensor<T> naive_bilinear(const Tensor<T>& x, double alpha, ProjectionMode mode,
                         PaddingMode padding = PaddingMode::Zeros);

template <typename T>
Tensor<T> naive_la_aqu(const Tensor<T>& x, const LdaAquWeights<T>& w,
                       const UpsampleConfig& config);

template <typename T>
Tensor<T> naive_lda_aqu(const Tensor<T>& x, const LdaAquWeights<T>& w,
                        const UpsampleConfig& config);

}  // namespace ldaqu::oracle
