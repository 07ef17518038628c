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

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dmsn/kernels.hpp"
#include "mac_counter.hpp"

namespace dmsn {

namespace detail {
namespace {
thread_local MacCount* g_active_counter = nullptr;
}  // namespace

MacCount* active_mac_counter() { return g_active_counter; }

void add_macs(const MacCount& delta) {
  if (g_active_counter == nullptr) return;
  g_active_counter->executed += delta.executed;
  g_active_counter->padded += delta.padded;
}
}  // namespace detail

ScopedMacCounter::ScopedMacCounter() : previous_(detail::g_active_counter) {
  detail::g_active_counter = &count_;
}

ScopedMacCounter::~ScopedMacCounter() {
  detail::g_active_counter = previous_;
  if (previous_ != nullptr) {
    previous_->executed += count_.executed;
    previous_->padded += count_.padded;
  }
}

// ---------------------------------------------------------------------------
// Pooling

Dims5 PoolGeometry::output_dims(const Dims5& input) const {
  if (padding.t >= kernel.t || padding.h >= kernel.h || padding.w >= kernel.w) {
    throw std::invalid_argument(
        "invalid pooling geometry: padding must be smaller than the kernel");
  }
  return {input.n, input.c,
          conv_output_extent(input.t, kernel.t, stride.t, padding.t, "time"),
          conv_output_extent(input.h, kernel.h, stride.h, padding.h, "height"),
          conv_output_extent(input.w, kernel.w, stride.w, padding.w, "width")};
}

template <typename T>
MaxPoolResult<T> maxpool3d_forward(const Tensor<T>& x,
                                   const PoolGeometry& g) {
  const Dims5& id = x.dims();
  const Dims5 od = g.output_dims(id);
  MaxPoolResult<T> r;
  r.input_dims = id;
  r.output = Tensor<T>(od);
  r.argmax.assign(od.numel(), 0);
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < id.n * id.c; ++nc) {
    const std::size_t base = nc * id.volume();
    for (std::size_t ot = 0; ot < od.t; ++ot) {
      for (std::size_t oh = 0; oh < od.h; ++oh) {
        for (std::size_t ow = 0; ow < od.w; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_at = base;
          bool found = false;
          for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * g.stride.t + kt) -
                                      static_cast<std::ptrdiff_t>(g.padding.t);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(id.t)) continue;
            for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride.h + kh) -
                                        static_cast<std::ptrdiff_t>(g.padding.h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(id.h)) continue;
              for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride.w + kw) -
                                          static_cast<std::ptrdiff_t>(g.padding.w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(id.w)) continue;
                const std::size_t at =
                    base + (static_cast<std::size_t>(it) * id.h +
                            static_cast<std::size_t>(ih)) * id.w +
                    static_cast<std::size_t>(iw);
                // First maximum wins on ties.
                if (!found || x[at] > best) {
                  best = x[at];
                  best_at = at;
                  found = true;
                }
              }
            }
          }
          r.output[o] = best;
          r.argmax[o] = best_at;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const MaxPoolResult<T>& fwd,
                             const Tensor<T>& grad_out) {
  if (grad_out.dims() != fwd.output.dims()) {
    throw std::invalid_argument("maxpool backward: grad_out extents " +
                                grad_out.dims().str() + " differ from " +
                                fwd.output.dims().str());
  }
  Tensor<T> gx(fwd.input_dims);
  for (std::size_t i = 0; i < grad_out.numel(); ++i) {
    gx[fwd.argmax[i]] += grad_out[i];
  }
  return gx;
}

template <typename T>
Tensor<T> avgpool_spatial_forward(const Tensor<T>& x) {
  const Dims5& d = x.dims();
  if (d.h == 0 || d.w == 0 || x.empty()) {
    throw std::invalid_argument("spatial avgpool on empty input");
  }
  const std::size_t plane = d.h * d.w;
  Tensor<T> out({d.n, d.c, d.t, 1, 1});
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double sum = 0.0;
    const T* p = x.ptr() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) sum += p[j];
    out[i] = static_cast<T>(sum / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
Tensor<T> avgpool_spatial_backward(const Tensor<T>& grad_out,
                                   const Dims5& input_dims) {
  const Dims5& d = input_dims;
  if (grad_out.dims() != Dims5{d.n, d.c, d.t, 1, 1}) {
    throw std::invalid_argument("spatial avgpool backward: extent mismatch");
  }
  const std::size_t plane = d.h * d.w;
  const double inv = 1.0 / static_cast<double>(plane);
  Tensor<T> gx(d);
  for (std::size_t i = 0; i < grad_out.numel(); ++i) {
    const T g = static_cast<T>(static_cast<double>(grad_out[i]) * inv);
    std::fill_n(gx.ptr() + i * plane, plane, g);
  }
  return gx;
}

template <typename T>
Tensor<T> avgpool_temporal_forward(const Tensor<T>& x) {
  const Dims5& d = x.dims();
  if (d.t == 0 || x.empty()) {
    throw std::invalid_argument("temporal avgpool on empty input");
  }
  const std::size_t plane = d.h * d.w;
  Tensor<T> out({d.n, d.c, 1, d.h, d.w});
  std::vector<double> acc(plane);
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < d.t; ++t) {
      const T* p = x.ptr() + (nc * d.t + t) * plane;
      for (std::size_t j = 0; j < plane; ++j) acc[j] += p[j];
    }
    for (std::size_t j = 0; j < plane; ++j) {
      out[nc * plane + j] = static_cast<T>(acc[j] / static_cast<double>(d.t));
    }
  }
  return out;
}

template <typename T>
Tensor<T> avgpool_temporal_backward(const Tensor<T>& grad_out,
                                    const Dims5& input_dims) {
  const Dims5& d = input_dims;
  if (grad_out.dims() != Dims5{d.n, d.c, 1, d.h, d.w}) {
    throw std::invalid_argument("temporal avgpool backward: extent mismatch");
  }
  const std::size_t plane = d.h * d.w;
  const double inv = 1.0 / static_cast<double>(d.t);
  Tensor<T> gx(d);
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    for (std::size_t t = 0; t < d.t; ++t) {
      for (std::size_t j = 0; j < plane; ++j) {
        gx[(nc * d.t + t) * plane + j] =
            static_cast<T>(static_cast<double>(grad_out[nc * plane + j]) * inv);
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Batch normalization

namespace {

template <typename T>
void check_channel_vector(const Tensor<T>& v, std::size_t c, const char* what) {
  if (v.numel() != c) {
    throw std::invalid_argument(std::string("batchnorm ") + what +
                                " has length " + std::to_string(v.numel()) +
                                ", expected " + std::to_string(c));
  }
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& scale,
                            const Tensor<T>& shift,
                            const Tensor<T>& running_mean,
                            const Tensor<T>& running_var, Mode mode,
                            BatchNormCache<T>* cache) {
  const Dims5& d = x.dims();
  check_channel_vector(scale, d.c, "scale");
  check_channel_vector(shift, d.c, "shift");
  check_channel_vector(running_mean, d.c, "running_mean");
  check_channel_vector(running_var, d.c, "running_var");
  const std::size_t vol = d.volume();
  const std::size_t m = d.n * vol;

  std::vector<double> mean(d.c), var(d.c);
  if (mode == Mode::kTrain) {
    if (m == 0) throw std::invalid_argument("batchnorm on empty input");
    for (std::size_t c = 0; c < d.c; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = x.ptr() + (n * d.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) sum += p[i];
      }
      mean[c] = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = x.ptr() + (n * d.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) {
          const double dv = p[i] - mean[c];
          sq += dv * dv;
        }
      }
      var[c] = sq / static_cast<double>(m);
    }
  } else {
    for (std::size_t c = 0; c < d.c; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }

  std::vector<double> inv_std(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
  }

  Tensor<T> y(d);
  Tensor<T> x_hat;
  if (cache != nullptr) x_hat = Tensor<T>(d);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * vol;
      const double sc = scale[c];
      const double sh = shift[c];
      for (std::size_t i = 0; i < vol; ++i) {
        const double xh = (x[base + i] - mean[c]) * inv_std[c];
        if (cache != nullptr) x_hat[base + i] = static_cast<T>(xh);
        y[base + i] = static_cast<T>(sc * xh + sh);
      }
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->reduce_count = m;
    if (mode == Mode::kTrain) {
      cache->batch_mean = std::move(mean);
      cache->batch_var = std::move(var);
    } else {
      cache->batch_mean.clear();
      cache->batch_var.clear();
    }
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache,
                                     const Tensor<T>& scale,
                                     const Tensor<T>& grad_out) {
  const Dims5& d = cache.x_hat.dims();
  if (grad_out.dims() != d) {
    throw std::invalid_argument("batchnorm backward: grad_out extents " +
                                grad_out.dims().str() + " differ from " +
                                d.str());
  }
  check_channel_vector(scale, d.c, "scale");
  const std::size_t vol = d.volume();
  const double m = static_cast<double>(d.n * vol);

  BatchNormGrads<T> g;
  g.grad_x = Tensor<T>(d);
  g.grad_scale = Tensor<T>({d.c, 1, 1, 1, 1});
  g.grad_shift = Tensor<T>({d.c, 1, 1, 1, 1});
  for (std::size_t c = 0; c < d.c; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t base = (n * d.c + c) * vol;
      for (std::size_t i = 0; i < vol; ++i) {
        sum_g += grad_out[base + i];
        sum_gx += static_cast<double>(grad_out[base + i]) * cache.x_hat[base + i];
      }
    }
    g.grad_scale[c] = static_cast<T>(sum_gx);
    g.grad_shift[c] = static_cast<T>(sum_g);
    const double sc = scale[c];
    const double istd = cache.inv_std[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t base = (n * d.c + c) * vol;
      for (std::size_t i = 0; i < vol; ++i) {
        const double go = grad_out[base + i];
        double gx;
        if (cache.mode == Mode::kTrain) {
          // d/dx of scale * (x - mean) * inv_std with batch statistics.
          gx = sc * istd *
               (go - sum_g / m - cache.x_hat[base + i] * sum_gx / m);
        } else {
          gx = sc * istd * go;
        }
        g.grad_x[base + i] = static_cast<T>(gx);
      }
    }
  }
  return g;
}

template <typename T>
void update_running_stats(Tensor<T>& running_mean, Tensor<T>& running_var,
                          const BatchNormCache<T>& cache, double momentum) {
  if (cache.mode != Mode::kTrain) return;
  const std::size_t c = cache.batch_mean.size();
  check_channel_vector(running_mean, c, "running_mean");
  check_channel_vector(running_var, c, "running_var");
  const double m = static_cast<double>(cache.reduce_count);
  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
  for (std::size_t i = 0; i < c; ++i) {
    running_mean[i] = static_cast<T>((1.0 - momentum) * running_mean[i] +
                                     momentum * cache.batch_mean[i]);
    running_var[i] = static_cast<T>((1.0 - momentum) * running_var[i] +
                                    momentum * cache.batch_var[i] * unbias);
  }
}

// ---------------------------------------------------------------------------
// Elementwise, affine and channel plumbing

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& reference, const Tensor<T>& grad_out) {
  if (reference.dims() != grad_out.dims()) {
    throw std::invalid_argument("relu backward: extent mismatch");
  }
  Tensor<T> g(grad_out.dims());
  for (std::size_t i = 0; i < g.numel(); ++i) {
    g[i] = reference[i] > T{0} ? grad_out[i] : T{0};
  }
  return g;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight,
                         const Tensor<T>* bias) {
  const std::size_t rows = x.dims().n;
  const std::size_t in = x.dims().c;
  const std::size_t out = weight.dims().n;
  if (x.dims().volume() != 1 || weight.dims() != Dims5{out, in, 1, 1, 1}) {
    throw std::invalid_argument("linear: x " + x.dims().str() +
                                " incompatible with weight " +
                                weight.dims().str());
  }
  if (bias != nullptr && bias->numel() != out) {
    throw std::invalid_argument("linear: bias length mismatch");
  }
  Tensor<T> y({rows, out, 1, 1, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
      const T* xr = x.ptr() + r * in;
      const T* wr = weight.ptr() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        acc += static_cast<double>(wr[i]) * static_cast<double>(xr[i]);
      }
      y[r * out + o] = static_cast<T>(acc);
    }
  }
  detail::add_macs({rows * in * out, 0});
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, bool has_bias) {
  const std::size_t rows = x.dims().n;
  const std::size_t in = x.dims().c;
  const std::size_t out = weight.dims().n;
  if (grad_out.dims() != Dims5{rows, out, 1, 1, 1}) {
    throw std::invalid_argument("linear backward: grad_out extents " +
                                grad_out.dims().str() + " unexpected");
  }
  LinearGrads<T> g;
  g.grad_x = Tensor<T>(x.dims());
  g.grad_weight = Tensor<T>(weight.dims());
  std::vector<double> gw(weight.numel(), 0.0);
  std::vector<double> gb(out, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        acc += static_cast<double>(grad_out[r * out + o]) * weight[o * in + i];
      }
      g.grad_x[r * in + i] = static_cast<T>(acc);
    }
    for (std::size_t o = 0; o < out; ++o) {
      const double go = grad_out[r * out + o];
      gb[o] += go;
      for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * x[r * in + i];
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) {
    g.grad_weight[i] = static_cast<T>(gw[i]);
  }
  if (has_bias) {
    g.grad_bias = Tensor<T>({out, 1, 1, 1, 1});
    for (std::size_t o = 0; o < out; ++o) g.grad_bias[o] = static_cast<T>(gb[o]);
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat of zero tensors");
  Dims5 d = inputs.front().dims();
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Dims5& e = t.dims();
    if (e.n != d.n || e.t != d.t || e.h != d.h || e.w != d.w) {
      throw std::invalid_argument("concat: extents " + e.str() +
                                  " disagree with " + d.str() +
                                  " outside the channel axis");
    }
    channels += e.c;
  }
  d.c = channels;
  Tensor<T> out(d);
  const std::size_t vol = d.volume();
  for (std::size_t n = 0; n < d.n; ++n) {
    T* dst = out.ptr() + n * d.c * vol;
    for (const auto& t : inputs) {
      const std::size_t chunk = t.dims().c * vol;
      std::copy_n(t.ptr() + n * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin,
                         std::size_t count) {
  const Dims5& d = x.dims();
  if (begin + count > d.c) {
    throw std::invalid_argument("slice_channels: range exceeds channel extent");
  }
  Tensor<T> out({d.n, count, d.t, d.h, d.w});
  const std::size_t vol = d.volume();
  for (std::size_t n = 0; n < d.n; ++n) {
    std::copy_n(x.ptr() + (n * d.c + begin) * vol, count * vol,
                out.ptr() + n * count * vol);
  }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.dims() != src.dims()) {
    throw std::invalid_argument("add: extents " + dst.dims().str() + " vs " +
                                src.dims().str());
  }
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

#define DMSN_INSTANTIATE(T)                                                   \
  template MaxPoolResult<T> maxpool3d_forward(const Tensor<T>&,               \
                                              const PoolGeometry&);           \
  template Tensor<T> maxpool3d_backward(const MaxPoolResult<T>&,              \
                                        const Tensor<T>&);                    \
  template Tensor<T> avgpool_spatial_forward(const Tensor<T>&);               \
  template Tensor<T> avgpool_spatial_backward(const Tensor<T>&,               \
                                              const Dims5&);                  \
  template Tensor<T> avgpool_temporal_forward(const Tensor<T>&);              \
  template Tensor<T> avgpool_temporal_backward(const Tensor<T>&,              \
                                               const Dims5&);                 \
  template Tensor<T> batchnorm_forward(                                       \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
      const Tensor<T>&, Mode, BatchNormCache<T>*);                            \
  template BatchNormGrads<T> batchnorm_backward(                              \
      const BatchNormCache<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template void update_running_stats(Tensor<T>&, Tensor<T>&,                  \
                                     const BatchNormCache<T>&, double);       \
  template Tensor<T> relu_forward(const Tensor<T>&);                          \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>*);                        \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&, \
                                          const Tensor<T>&, bool);            \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);             \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t,            \
                                    std::size_t);                             \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

DMSN_INSTANTIATE(float)
DMSN_INSTANTIATE(double)
#undef DMSN_INSTANTIATE

}  // namespace dmsn
