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
#include <stdexcept>
#include <string>
#include <vector>

#include "dmsn/kernels.hpp"
#include "mac_counter.hpp"

namespace dmsn {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding,
                               const char* axis) {
  if (kernel == 0 || stride == 0) {
    throw std::invalid_argument(std::string("invalid geometry on axis ") +
                                axis + ": kernel and stride must be >= 1");
  }
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel) {
    throw std::invalid_argument(
        std::string("invalid geometry on axis ") + axis + ": kernel " +
        std::to_string(kernel) + " exceeds padded extent " +
        std::to_string(padded) + " (output extent < 1)");
  }
  return (padded - kernel) / stride + 1;
}

ConvKind ConvLayerSpec::kind() const {
  const bool t1 = kernel.t == 1;
  const bool hw1 = kernel.h == 1 && kernel.w == 1;
  if (t1 && hw1) return ConvKind::kPointwise;
  if (hw1) return ConvKind::kTemporal;
  if (t1 && kernel.h == kernel.w) return ConvKind::kSpatial;
  return ConvKind::kGeneral;
}

void ConvLayerSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("conv channels must be positive");
  }
  if (kernel.t == 0 || kernel.h == 0 || kernel.w == 0) {
    throw std::invalid_argument("conv kernel extents must be >= 1");
  }
  if (stride.t == 0 || stride.h == 0 || stride.w == 0) {
    throw std::invalid_argument("conv stride extents must be >= 1");
  }
}

Dims5 ConvLayerSpec::output_dims(const Dims5& input) const {
  validate();
  if (input.c != in_channels) {
    throw std::invalid_argument(
        "shape mismatch on channel axis: input has " +
        std::to_string(input.c) + " channels, conv expects " +
        std::to_string(in_channels));
  }
  return {input.n, out_channels,
          conv_output_extent(input.t, kernel.t, stride.t, padding.t, "time"),
          conv_output_extent(input.h, kernel.h, stride.h, padding.h, "height"),
          conv_output_extent(input.w, kernel.w, stride.w, padding.w, "width")};
}

std::string ConvLayerSpec::str() const {
  auto e3 = [](const Extent3& e) {
    return std::to_string(e.t) + "x" + std::to_string(e.h) + "x" +
           std::to_string(e.w);
  };
  return e3(kernel) + " s" + e3(stride) + " p" + e3(padding) + " " +
         std::to_string(in_channels) + "->" + std::to_string(out_channels) +
         (has_bias ? " +bias" : "");
}

ConvLayerSpec pointwise_conv(std::size_t in, std::size_t out,
                             std::size_t spatial_stride) {
  ConvLayerSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.stride = {1, spatial_stride, spatial_stride};
  return s;
}

ConvLayerSpec temporal_conv(std::size_t in, std::size_t out, std::size_t k) {
  ConvLayerSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {k, 1, 1};
  s.padding = {k / 2, 0, 0};
  return s;
}

ConvLayerSpec spatial_conv(std::size_t in, std::size_t out, std::size_t k) {
  ConvLayerSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {1, k, k};
  s.padding = {0, k / 2, k / 2};
  return s;
}

namespace {

// Half-open range of output indices o whose input index o*s - p + k lies in
// [0, in).
struct ValidRange {
  std::size_t lo;
  std::size_t hi;
};

ValidRange valid_outputs(std::size_t out, std::size_t in, std::size_t stride,
                         std::size_t pad, std::size_t tap) {
  // o*s + tap >= pad  and  o*s + tap <= in - 1 + pad
  std::size_t lo = 0;
  if (pad > tap) lo = (pad - tap + stride - 1) / stride;
  const std::ptrdiff_t top =
      static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
      static_cast<std::ptrdiff_t>(tap);
  std::size_t hi = top < 0 ? 0 : static_cast<std::size_t>(top) / stride + 1;
  hi = std::min(hi, out);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

template <typename T>
void check_conv_args(const Tensor<T>& x, const ConvLayerSpec& spec,
                     const Tensor<T>& weight, const Tensor<T>* bias,
                     bool check_bias = true) {
  if (weight.dims() != spec.weight_dims()) {
    throw std::invalid_argument("shape mismatch on weight: got " +
                                weight.dims().str() + ", conv " + spec.str() +
                                " expects " + spec.weight_dims().str());
  }
  if (!check_bias) {
    // Backward never reads the bias.
  } else if (spec.has_bias) {
    if (bias == nullptr || bias->numel() != spec.out_channels) {
      throw std::invalid_argument("conv " + spec.str() +
                                  " requires a bias of length " +
                                  std::to_string(spec.out_channels));
    }
  } else if (bias != nullptr) {
    throw std::invalid_argument("conv " + spec.str() +
                                " was given a bias but has_bias is false");
  }
  (void)x;
}

// Shared direct-convolution loop. The temporal entry point enables a whole
// plane fast path for (k,1,1) kernels without spatial stride or padding;
// spatial kernels run the row loop with the time taps collapsed to one.
template <typename T, bool kTemporalOnly>
Tensor<T> conv_direct(const Tensor<T>& x, const ConvLayerSpec& spec,
                      const Tensor<T>& weight, const Tensor<T>* bias) {
  const Dims5 od = spec.output_dims(x.dims());
  check_conv_args(x, spec, weight, bias);
  const Dims5& id = x.dims();
  const Extent3 k = spec.kernel;
  const Extent3 s = spec.stride;
  const Extent3 p = spec.padding;
  const std::size_t in_plane = id.h * id.w;
  const std::size_t in_vol = id.t * in_plane;
  const std::size_t out_plane = od.h * od.w;
  const std::size_t out_vol = od.t * out_plane;
  const std::size_t kvol = k.volume();

  MacCount local;
  const bool counting = detail::active_mac_counter() != nullptr;

  // Valid output ranges depend only on the tap, so precompute per axis.
  std::vector<ValidRange> rt(k.t), rh(k.h), rw(k.w);
  for (std::size_t a = 0; a < k.t; ++a) rt[a] = valid_outputs(od.t, id.t, s.t, p.t, a);
  for (std::size_t a = 0; a < k.h; ++a) rh[a] = valid_outputs(od.h, id.h, s.h, p.h, a);
  for (std::size_t a = 0; a < k.w; ++a) rw[a] = valid_outputs(od.w, id.w, s.w, p.w, a);

  Tensor<T> out(od);
  std::vector<double> acc(out_vol);
  const bool contiguous_plane = s.h == 1 && s.w == 1 && p.h == 0 &&
                                p.w == 0 && k.h == 1 && k.w == 1;

  for (std::size_t n = 0; n < id.n; ++n) {
    for (std::size_t oc = 0; oc < od.c; ++oc) {
      const double b0 = bias ? static_cast<double>((*bias)[oc]) : 0.0;
      std::fill(acc.begin(), acc.end(), b0);
      for (std::size_t ic = 0; ic < id.c; ++ic) {
        const T* xin = x.ptr() + (n * id.c + ic) * in_vol;
        const T* wk = weight.ptr() + (oc * id.c + ic) * kvol;
        for (std::size_t kt = 0; kt < k.t; ++kt) {
          const ValidRange vt = rt[kt];
          if (counting) local.padded += (od.t - (vt.hi - vt.lo)) * out_plane * k.h * k.w;
          for (std::size_t ot = vt.lo; ot < vt.hi; ++ot) {
            const std::size_t it = ot * s.t + kt - p.t;
            const T* xplane = xin + it * in_plane;
            double* aplane = acc.data() + ot * out_plane;
            if constexpr (kTemporalOnly) {
              const double wv = static_cast<double>(wk[kt]);
              if (contiguous_plane) {
                for (std::size_t i = 0; i < out_plane; ++i) {
                  aplane[i] += wv * static_cast<double>(xplane[i]);
                }
                if (counting) local.executed += out_plane;
                continue;
              }
            }
            for (std::size_t kh = 0; kh < k.h; ++kh) {
              const ValidRange vh = rh[kh];
              if (counting) local.padded += (od.h - (vh.hi - vh.lo)) * od.w * k.w;
              for (std::size_t kw = 0; kw < k.w; ++kw) {
                const double wv = static_cast<double>(
                    wk[(kt * k.h + kh) * k.w + kw]);
                const ValidRange vw = rw[kw];
                const std::size_t span = vw.hi - vw.lo;
                if (counting) {
                  local.padded += (od.w - span) * (vh.hi - vh.lo);
                  local.executed += span * (vh.hi - vh.lo);
                }
                for (std::size_t oh = vh.lo; oh < vh.hi; ++oh) {
                  const T* xrow = xplane + (oh * s.h + kh - p.h) * id.w +
                                  kw - p.w;
                  double* arow = aplane + oh * od.w;
                  if (s.w == 1) {
                    for (std::size_t ow = vw.lo; ow < vw.hi; ++ow) {
                      arow[ow] += wv * static_cast<double>(xrow[ow]);
                    }
                  } else {
                    for (std::size_t ow = vw.lo; ow < vw.hi; ++ow) {
                      arow[ow] += wv * static_cast<double>(xrow[ow * s.w]);
                    }
                  }
                }
              }
            }
          }
        }
      }
      T* o = out.ptr() + (n * od.c + oc) * out_vol;
      for (std::size_t i = 0; i < out_vol; ++i) o[i] = static_cast<T>(acc[i]);
    }
  }
  if (counting) detail::add_macs(local);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                         const Tensor<T>& weight, const Tensor<T>* bias) {
  return conv_direct<T, false>(x, spec, weight, bias);
}

template <typename T>
Tensor<T> conv_temporal_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                                const Tensor<T>& weight, const Tensor<T>* bias) {
  const ConvKind kind = spec.kind();
  if (kind != ConvKind::kTemporal && kind != ConvKind::kPointwise) {
    throw std::invalid_argument("temporal conv path requires a (k,1,1) "
                                "kernel, got " + spec.str());
  }
  return conv_direct<T, true>(x, spec, weight, bias);
}

template <typename T>
Tensor<T> conv_spatial_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                               const Tensor<T>& weight, const Tensor<T>* bias) {
  const ConvKind kind = spec.kind();
  if (kind != ConvKind::kSpatial && kind != ConvKind::kPointwise) {
    throw std::invalid_argument("spatial conv path requires a (1,k,k) "
                                "kernel, got " + spec.str());
  }
  return conv_direct<T, false>(x, spec, weight, bias);
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const ConvLayerSpec& spec,
                       const Tensor<T>& weight, const Tensor<T>* bias) {
  switch (spec.kind()) {
    case ConvKind::kPointwise:
    case ConvKind::kTemporal:
      return conv_temporal_forward(x, spec, weight, bias);
    case ConvKind::kSpatial:
      return conv_spatial_forward(x, spec, weight, bias);
    case ConvKind::kGeneral:
      break;
  }
  return conv3d_forward(x, spec, weight, bias);
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const ConvLayerSpec& spec,
                             const Tensor<T>& weight, const Tensor<T>& grad_out,
                             bool need_grad_x) {
  const Dims5 od = spec.output_dims(x.dims());
  if (grad_out.dims() != od) {
    throw std::invalid_argument("conv backward: grad_out extents " +
                                grad_out.dims().str() +
                                " differ from forward output " + od.str());
  }
  check_conv_args<T>(x, spec, weight, nullptr, /*check_bias=*/false);
  const Dims5& id = x.dims();
  const Extent3 k = spec.kernel;
  const Extent3 s = spec.stride;
  const Extent3 p = spec.padding;
  const std::size_t in_plane = id.h * id.w;
  const std::size_t in_vol = id.t * in_plane;
  const std::size_t out_plane = od.h * od.w;
  const std::size_t out_vol = od.t * out_plane;
  const std::size_t kvol = k.volume();

  std::vector<ValidRange> rt(k.t), rh(k.h), rw(k.w);
  for (std::size_t a = 0; a < k.t; ++a) rt[a] = valid_outputs(od.t, id.t, s.t, p.t, a);
  for (std::size_t a = 0; a < k.h; ++a) rh[a] = valid_outputs(od.h, id.h, s.h, p.h, a);
  for (std::size_t a = 0; a < k.w; ++a) rw[a] = valid_outputs(od.w, id.w, s.w, p.w, a);

  ConvGrads<T> grads;

  // Weight gradient: correlation of grad_out with the input window.
  std::vector<double> gw(weight.numel(), 0.0);
  for (std::size_t n = 0; n < id.n; ++n) {
    for (std::size_t oc = 0; oc < od.c; ++oc) {
      const T* go = grad_out.ptr() + (n * od.c + oc) * out_vol;
      for (std::size_t ic = 0; ic < id.c; ++ic) {
        const T* xin = x.ptr() + (n * id.c + ic) * in_vol;
        double* gwk = gw.data() + (oc * id.c + ic) * kvol;
        for (std::size_t kt = 0; kt < k.t; ++kt) {
          for (std::size_t kh = 0; kh < k.h; ++kh) {
            for (std::size_t kw = 0; kw < k.w; ++kw) {
              double sum = 0.0;
              const ValidRange vw = rw[kw];
              for (std::size_t ot = rt[kt].lo; ot < rt[kt].hi; ++ot) {
                const T* xplane = xin + (ot * s.t + kt - p.t) * in_plane;
                const T* gplane = go + ot * out_plane;
                for (std::size_t oh = rh[kh].lo; oh < rh[kh].hi; ++oh) {
                  const T* xrow = xplane + (oh * s.h + kh - p.h) * id.w +
                                  kw - p.w;
                  const T* grow = gplane + oh * od.w;
                  for (std::size_t ow = vw.lo; ow < vw.hi; ++ow) {
                    sum += static_cast<double>(grow[ow]) *
                           static_cast<double>(xrow[ow * s.w]);
                  }
                }
              }
              gwk[(kt * k.h + kh) * k.w + kw] += sum;
            }
          }
        }
      }
    }
  }
  grads.grad_weight = Tensor<T>(weight.dims());
  for (std::size_t i = 0; i < gw.size(); ++i) {
    grads.grad_weight[i] = static_cast<T>(gw[i]);
  }

  if (spec.has_bias) {
    std::vector<double> gb(od.c, 0.0);
    for (std::size_t n = 0; n < od.n; ++n) {
      for (std::size_t oc = 0; oc < od.c; ++oc) {
        const T* go = grad_out.ptr() + (n * od.c + oc) * out_vol;
        for (std::size_t i = 0; i < out_vol; ++i) gb[oc] += go[i];
      }
    }
    grads.grad_bias = Tensor<T>({od.c, 1, 1, 1, 1});
    for (std::size_t i = 0; i < od.c; ++i) {
      grads.grad_bias[i] = static_cast<T>(gb[i]);
    }
  }

  if (need_grad_x) {
    grads.grad_x = Tensor<T>(id);
    std::vector<double> acc(in_vol);
    for (std::size_t n = 0; n < id.n; ++n) {
      for (std::size_t ic = 0; ic < id.c; ++ic) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t oc = 0; oc < od.c; ++oc) {
          const T* go = grad_out.ptr() + (n * od.c + oc) * out_vol;
          const T* wk = weight.ptr() + (oc * id.c + ic) * kvol;
          for (std::size_t kt = 0; kt < k.t; ++kt) {
            for (std::size_t kh = 0; kh < k.h; ++kh) {
              for (std::size_t kw = 0; kw < k.w; ++kw) {
                const double wv =
                    static_cast<double>(wk[(kt * k.h + kh) * k.w + kw]);
                const ValidRange vw = rw[kw];
                for (std::size_t ot = rt[kt].lo; ot < rt[kt].hi; ++ot) {
                  double* aplane = acc.data() + (ot * s.t + kt - p.t) * in_plane;
                  const T* gplane = go + ot * out_plane;
                  for (std::size_t oh = rh[kh].lo; oh < rh[kh].hi; ++oh) {
                    double* arow = aplane + (oh * s.h + kh - p.h) * id.w +
                                   kw - p.w;
                    const T* grow = gplane + oh * od.w;
                    for (std::size_t ow = vw.lo; ow < vw.hi; ++ow) {
                      arow[ow * s.w] += wv * static_cast<double>(grow[ow]);
                    }
                  }
                }
              }
            }
          }
        }
        T* gx = grads.grad_x.ptr() + (n * id.c + ic) * in_vol;
        for (std::size_t i = 0; i < in_vol; ++i) gx[i] = static_cast<T>(acc[i]);
      }
    }
  }
  return grads;
}

#define DMSN_INSTANTIATE(T)                                                   \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const ConvLayerSpec&,   \
                                    const Tensor<T>&, const Tensor<T>*);      \
  template Tensor<T> conv_temporal_forward(                                   \
      const Tensor<T>&, const ConvLayerSpec&, const Tensor<T>&,               \
      const Tensor<T>*);                                                      \
  template Tensor<T> conv_spatial_forward(const Tensor<T>&,                   \
                                          const ConvLayerSpec&,               \
                                          const Tensor<T>&, const Tensor<T>*); \
  template Tensor<T> conv_forward(const Tensor<T>&, const ConvLayerSpec&,     \
                                  const Tensor<T>&, const Tensor<T>*);        \
  template ConvGrads<T> conv3d_backward(const Tensor<T>&,                     \
                                        const ConvLayerSpec&,                 \
                                        const Tensor<T>&, const Tensor<T>&,   \
                                        bool);

DMSN_INSTANTIATE(float)
DMSN_INSTANTIATE(double)
#undef DMSN_INSTANTIATE

}  // namespace dmsn
