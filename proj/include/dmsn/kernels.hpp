/* Copyright 2026 The DMSN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Forward and backward numeric kernels over Tensor5 activations.
//
// Convolutions are cross-correlations (no kernel flip) with zero padding.
// Every kernel accumulates in double precision regardless of the tensor
// scalar type, so float and double runs differ only by final rounding.

#ifndef DMSN_KERNELS_HPP_
#define DMSN_KERNELS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmsn/tensor.hpp"

namespace dmsn {

struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t volume() const { return t * h * w; }
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

// out = floor((in + 2p - k) / s) + 1. Throws when the result would be < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding,
                               const char* axis);

enum class ConvKind { kPointwise, kTemporal, kSpatial, kGeneral };

struct ConvLayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  bool has_bias = false;

  ConvKind kind() const;
  void validate() const;
  Dims5 weight_dims() const {
    return {out_channels, in_channels, kernel.t, kernel.h, kernel.w};
  }
  std::size_t weight_count() const { return weight_dims().numel(); }
  std::size_t param_count() const {
    return weight_count() + (has_bias ? out_channels : 0);
  }
  Dims5 output_dims(const Dims5& input) const;
  // e.g. "3x1x1 s1x1x1 p1x0x0 64->32"
  std::string str() const;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

ConvLayerSpec pointwise_conv(std::size_t in, std::size_t out,
                             std::size_t spatial_stride = 1);
// (k,1,1) kernel padded to preserve the temporal extent.
ConvLayerSpec temporal_conv(std::size_t in, std::size_t out,
                            std::size_t k = 3);
// (1,k,k) kernel padded to preserve the spatial extents.
ConvLayerSpec spatial_conv(std::size_t in, std::size_t out, std::size_t k = 3);

// Multiply-accumulate tally. `padded` counts kernel taps that fell on zero
// padding and were skipped; executed + padded is the dense MAC count.
struct MacCount {
  std::uint64_t executed = 0;
  std::uint64_t padded = 0;
  std::uint64_t total() const { return executed + padded; }
};

// While alive, conv and linear kernels on this thread add their MACs here.
class ScopedMacCounter {
 public:
  ScopedMacCounter();
  ~ScopedMacCounter();
  ScopedMacCounter(const ScopedMacCounter&) = delete;
  ScopedMacCounter& operator=(const ScopedMacCounter&) = delete;

  const MacCount& count() const { return count_; }

 private:
  MacCount count_;
  MacCount* previous_;
};

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                         const Tensor<T>& weight,
                         const Tensor<T>* bias = nullptr);

// Kernels specialized for (k,1,1) and (1,k,k) shapes. Both reject any other
// kernel shape; (1,1,1) is accepted by either.
template <typename T>
Tensor<T> conv_temporal_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                                const Tensor<T>& weight,
                                const Tensor<T>* bias = nullptr);
template <typename T>
Tensor<T> conv_spatial_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                               const Tensor<T>& weight,
                               const Tensor<T>* bias = nullptr);

// Routes to the specialized kernel matching spec.kind().
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                       const Tensor<T>& weight,
                       const Tensor<T>* bias = nullptr);

template <typename T>
struct ConvGrads {
  Tensor<T> grad_x;  // empty when not requested
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;  // empty when the conv has no bias
};

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const ConvLayerSpec& spec,
                             const Tensor<T>& weight, const Tensor<T>& grad_out,
                             bool need_grad_x = true);

// ---------------------------------------------------------------------------
// Pooling

struct PoolGeometry {
  Extent3 kernel{3, 3, 3};
  Extent3 stride{2, 2, 2};
  Extent3 padding{1, 1, 1};

  Dims5 output_dims(const Dims5& input) const;
  friend bool operator==(const PoolGeometry&, const PoolGeometry&) = default;
};

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  // Flat input offset of the winning element for every output element.
  std::vector<std::size_t> argmax;
  Dims5 input_dims;
};

template <typename T>
MaxPoolResult<T> maxpool3d_forward(const Tensor<T>& x,
                                   const PoolGeometry& geometry);
template <typename T>
Tensor<T> maxpool3d_backward(const MaxPoolResult<T>& forward,
                             const Tensor<T>& grad_out);

template <typename T>
Tensor<T> avgpool_spatial_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> avgpool_spatial_backward(const Tensor<T>& grad_out,
                                   const Dims5& input_dims);
template <typename T>
Tensor<T> avgpool_temporal_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> avgpool_temporal_backward(const Tensor<T>& grad_out,
                                    const Dims5& input_dims);

// ---------------------------------------------------------------------------
// Batch normalization

enum class Mode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::kEval;
  Tensor<T> x_hat;
  std::vector<double> inv_std;
  // Batch statistics (train mode only); variance is the biased estimate.
  std::vector<double> batch_mean;
  std::vector<double> batch_var;
  std::size_t reduce_count = 0;
};

// Per-channel normalization over (n,t,h,w). Scale, shift and running stats
// are (c,1,1,1,1) tensors.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& scale,
                            const Tensor<T>& shift,
                            const Tensor<T>& running_mean,
                            const Tensor<T>& running_var, Mode mode,
                            BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_scale;
  Tensor<T> grad_shift;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                     const Tensor<T>& scale,
                                     const Tensor<T>& grad_out);

// Exponential moving average with the unbiased batch variance.
template <typename T>
void update_running_stats(Tensor<T>& running_mean, Tensor<T>& running_var,
                          const BatchNormCache<T>& cache,
                          double momentum = kBatchNormMomentum);

// ---------------------------------------------------------------------------
// Elementwise, affine and channel plumbing

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
// `reference` is either the relu input or its output; both share the mask.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& reference, const Tensor<T>& grad_out);

// x is (rows, in, 1, 1, 1), weight (out, in, 1, 1, 1), bias (out, 1, 1, 1, 1).
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>* bias = nullptr);

template <typename T>
struct LinearGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, bool has_bias);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin,
                         std::size_t count);
template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src);

}  // namespace dmsn

#endif  // DMSN_KERNELS_HPP_
