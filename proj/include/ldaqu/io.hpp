#pragma once

#include <span>
#include <string>

#include "ldaqu/geometry.hpp"
#include "ldaqu/gradcheck.hpp"
#include "ldaqu/tensor.hpp"
#include "ldaqu/upsample.hpp"

namespace ldaqu {

// Shortest round-trip decimal formatting; all text writers use it so output
// bytes depend only on the values written.
std::string format_double(double v);

// Binary PGM (P5) / PPM (P6), maxval 255. Pixels land in [0,1]; P5 becomes a
// (1,1,h,w) tensor, P6 a (1,3,h,w) tensor with channels R,G,B.
Tensor<double> read_image(const std::string& path);
void write_image(const std::string& path, const Tensor<double>& t);

// Tensor container: "LDAT", version 1, dtype (0=binary32, 1=binary64), rank,
// extents, then little-endian scalars, row-major. Round trips bit-exactly.
void write_tensor(const std::string& path, const Tensor<float>& t);
void write_tensor(const std::string& path, const Tensor<double>& t);

// Requires the stored dtype to match T.
template <typename T>
Tensor<T> read_tensor(const std::string& path);

// Accepts either dtype; binary32 widens losslessly.
Tensor<double> read_tensor_as_double(const std::string& path);

// Weights container: key=value header naming the generating config, then one
// embedded tensor block per parameter. Loading against a different config
// fails.
void write_weights(const std::string& path, const LdaAquWeights<double>& w,
                   const UpsampleConfig& config, int channels);
LdaAquWeights<double> read_weights(const std::string& path,
                                   const UpsampleConfig& config, int channels);

// CSV with one row per (query pixel, group, stencil point) for queries on the
// stride subgrid: columns query_x, query_y, group, point_index, ref_x, ref_y,
// sample_x, sample_y, weight.
void write_offset_dump(const std::string& path, const CoordGrid& grid,
                       std::span<const double> attention, int stride = 1);

void write_loss_csv(const std::string& path, std::span<const double> losses);

// One key=value row per op.
void write_grad_reports(const std::string& path,
                        std::span<const GradReport> reports);

}  // namespace ldaqu
