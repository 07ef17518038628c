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

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dmsn/block.hpp"

namespace dmsn {

char variant_letter(BlockVariant v) {
  switch (v) {
    case BlockVariant::kA: return 'A';
    case BlockVariant::kB: return 'B';
    case BlockVariant::kC: return 'C';
  }
  return '?';
}

BlockVariant variant_from_letter(char letter) {
  switch (letter) {
    case 'A': case 'a': return BlockVariant::kA;
    case 'B': case 'b': return BlockVariant::kB;
    case 'C': case 'c': return BlockVariant::kC;
    default: break;
  }
  throw std::invalid_argument(std::string("unknown block variant '") + letter +
                              "' (expected A, B or C)");
}

namespace {

// Variant B main element i (1-based) is spatial for odd i; its branch j is
// temporal for odd j.
bool main_is_temporal(BlockVariant v, std::size_t i) {
  switch (v) {
    case BlockVariant::kA: return true;
    case BlockVariant::kC: return false;
    case BlockVariant::kB: return i % 2 == 0;
  }
  return false;
}

bool branch_is_temporal(BlockVariant v, std::size_t j) {
  return !main_is_temporal(v, j);
}

ConvLayerSpec domain_conv(bool temporal, std::size_t in, std::size_t out) {
  return temporal ? temporal_conv(in, out, 3) : spatial_conv(in, out, 3);
}

const char* kind_name(ConvKind k) {
  switch (k) {
    case ConvKind::kPointwise: return "pointwise";
    case ConvKind::kTemporal: return "temporal";
    case ConvKind::kSpatial: return "spatial";
    case ConvKind::kGeneral: return "general";
  }
  return "?";
}

}  // namespace

BlockSpec build_block(BlockVariant variant, std::size_t in_channels,
                      std::size_t out_channels, std::size_t spatial_stride,
                      std::size_t branch_count, const std::string& id) {
  if (branch_count < 2 || branch_count > 4) {
    throw std::invalid_argument("branch_count must be 2, 3 or 4, got " +
                                std::to_string(branch_count));
  }
  if (spatial_stride != 1 && spatial_stride != 2) {
    throw std::invalid_argument("spatial_stride must be 1 or 2");
  }
  if (in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("block channels must be positive");
  }
  if (out_channels % 4 != 0) {
    throw std::invalid_argument(
        "out_channels/4 is not integral (out_channels " +
        std::to_string(out_channels) +
        "): mid = out/2 and the main stage width mid/2 must be whole");
  }
  const std::size_t mid = out_channels / 2;
  const std::size_t half = mid / 2;
  if (mid < branch_count) {
    throw std::invalid_argument("mid_channels/branch_count < 1 (mid " +
                                std::to_string(mid) + ", branches " +
                                std::to_string(branch_count) + ")");
  }

  BlockSpec s;
  s.id = id;
  s.variant = variant;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.mid_channels = mid;
  s.spatial_stride = spatial_stride;
  s.branch_count = branch_count;
  s.reduce = pointwise_conv(in_channels, mid, spatial_stride);
  for (std::size_t i = 1; i <= branch_count; ++i) {
    s.main_stage.push_back(
        domain_conv(main_is_temporal(variant, i), i == 1 ? mid : half, half));
  }
  const std::size_t base = mid / branch_count;
  const std::size_t extra = mid % branch_count;
  for (std::size_t j = 1; j <= branch_count; ++j) {
    const std::size_t width = base + (j <= extra ? 1 : 0);
    s.branches.push_back({j, domain_conv(branch_is_temporal(variant, j), half,
                                         width)});
  }
  s.fusion = pointwise_conv(mid, out_channels);
  if (in_channels != out_channels || spatial_stride != 1) {
    s.shortcut = ShortcutKind::kProjection;
    s.projection = pointwise_conv(in_channels, out_channels, spatial_stride);
  }
  s.validate();
  return s;
}

void BlockSpec::validate() const {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("block " + id + ": " + what);
  };
  if (main_stage.size() != branch_count) fail("main stage length != branch_count");
  if (branches.size() != branch_count) fail("branch list length != branch_count");
  if (reduce.kind() != ConvKind::kPointwise || reduce.in_channels != in_channels ||
      reduce.out_channels != mid_channels) {
    fail("reduce must be a pointwise in->mid conv");
  }
  std::size_t concat = 0;
  for (std::size_t i = 0; i < branch_count; ++i) {
    const ConvLayerSpec& m = main_stage[i];
    if (m.out_channels != mid_channels / 2) fail("main stage must output mid/2");
    if (m.in_channels != (i == 0 ? mid_channels : mid_channels / 2)) {
      fail("main stage input width broken at element " + std::to_string(i + 1));
    }
    const bool want_t = main_is_temporal(variant, i + 1);
    if (m.kind() != (want_t ? ConvKind::kTemporal : ConvKind::kSpatial)) {
      fail("main stage element " + std::to_string(i + 1) + " has wrong domain");
    }
    const BranchSpec& b = branches[i];
    if (b.tap != i + 1) fail("branch " + std::to_string(i + 1) + " taps wrong output");
    if (b.conv.in_channels != mid_channels / 2) fail("branch input must be mid/2");
    if (b.conv.kind() !=
        (branch_is_temporal(variant, i + 1) ? ConvKind::kTemporal
                                            : ConvKind::kSpatial)) {
      fail("branch " + std::to_string(i + 1) + " has wrong domain");
    }
    concat += b.conv.out_channels;
  }
  if (concat != mid_channels) fail("concatenated branch channels != mid_channels");
  if (fusion.kind() != ConvKind::kPointwise || fusion.in_channels != mid_channels ||
      fusion.out_channels != out_channels) {
    fail("fusion must be a pointwise mid->out conv");
  }
  const bool need_proj = in_channels != out_channels || spatial_stride != 1;
  if (need_proj != (shortcut == ShortcutKind::kProjection)) {
    fail("shortcut must be a projection exactly when channels or stride change");
  }
}

std::vector<std::pair<std::string, ConvLayerSpec>> BlockSpec::conv_layers() const {
  std::vector<std::pair<std::string, ConvLayerSpec>> out;
  out.emplace_back(layer_id("reduce"), reduce);
  for (std::size_t i = 0; i < main_stage.size(); ++i) {
    out.emplace_back(layer_id("main" + std::to_string(i + 1)), main_stage[i]);
  }
  for (std::size_t j = 0; j < branches.size(); ++j) {
    out.emplace_back(layer_id("branch" + std::to_string(j + 1)), branches[j].conv);
  }
  out.emplace_back(layer_id("fusion"), fusion);
  if (shortcut == ShortcutKind::kProjection) {
    out.emplace_back(layer_id("shortcut"), projection);
  }
  return out;
}

std::string describe_block(const BlockSpec& spec) {
  std::ostringstream os;
  os << "block " << spec.id << " DMSN-" << variant_letter(spec.variant)
     << " in=" << spec.in_channels << " out=" << spec.out_channels
     << " mid=" << spec.mid_channels << " stride=" << spec.spatial_stride
     << " branches=" << spec.branch_count << " shortcut="
     << (spec.shortcut == ShortcutKind::kProjection ? "projection" : "identity")
     << "\n";
  for (const auto& [layer, conv] : spec.conv_layers()) {
    os << "  " << layer << "  " << kind_name(conv.kind()) << "  " << conv.str();
    for (const auto& b : spec.branches) {
      if (layer == spec.layer_id("branch" + std::to_string(b.tap))) {
        os << "  tap " << b.tap;
      }
    }
    os << "\n";
  }
  return os.str();
}

namespace {

template <typename Axis>
std::size_t receptive_field(const BlockSpec& spec, std::size_t tap, Axis axis) {
  if (tap < 1 || tap > spec.branch_count) {
    throw std::out_of_range("tap index " + std::to_string(tap) +
                            " outside 1.." + std::to_string(spec.branch_count));
  }
  std::size_t rf = 1;
  std::size_t jump = 1;
  auto apply = [&](const ConvLayerSpec& c) {
    const auto [k, s] = axis(c);
    rf += (k - 1) * jump;
    jump *= s;
  };
  apply(spec.reduce);
  for (std::size_t i = 0; i < tap; ++i) apply(spec.main_stage[i]);
  apply(spec.branches[tap - 1].conv);
  return rf;
}

}  // namespace

std::size_t temporal_receptive_field(const BlockSpec& spec, std::size_t tap) {
  return receptive_field(spec, tap, [](const ConvLayerSpec& c) {
    return std::pair{c.kernel.t, c.stride.t};
  });
}

std::size_t spatial_receptive_field(const BlockSpec& spec, std::size_t tap) {
  return receptive_field(spec, tap, [](const ConvLayerSpec& c) {
    return std::pair{c.kernel.h, c.stride.h};
  });
}

// ---------------------------------------------------------------------------
// Units

template <typename T>
Tensor<T> conv_unit_forward(const std::string& layer, const ConvLayerSpec& conv,
                            const ParamBundle<T>& params, const Tensor<T>& x,
                            bool relu, Mode mode, UnitCache<T>* cache) {
  const Tensor<T>& w = params.at(layer + ".weight");
  const Tensor<T>* b = conv.has_bias ? &params.at(layer + ".bias") : nullptr;
  Tensor<T> y = conv_forward(x, conv, w, b);
  y = batchnorm_forward(y, params.at(layer + ".bn.scale"),
                        params.at(layer + ".bn.shift"),
                        params.at(layer + ".bn.running_mean"),
                        params.at(layer + ".bn.running_var"), mode,
                        cache ? &cache->bn : nullptr);
  if (relu) y = relu_forward(y);
  if (cache != nullptr) {
    cache->input = x;
    cache->output = y;
    cache->relu = relu;
  }
  return y;
}

template <typename T>
Tensor<T> conv_unit_backward(const std::string& layer,
                             const ConvLayerSpec& conv,
                             const ParamBundle<T>& params,
                             const UnitCache<T>& cache,
                             const Tensor<T>& grad_out, ParamBundle<T>& grads,
                             bool need_grad_x) {
  Tensor<T> g = cache.relu ? relu_backward(cache.output, grad_out) : grad_out;
  BatchNormGrads<T> bn =
      batchnorm_backward(cache.bn, params.at(layer + ".bn.scale"), g);
  grads.accumulate(layer + ".bn.scale", bn.grad_scale);
  grads.accumulate(layer + ".bn.shift", bn.grad_shift);
  ConvGrads<T> cg = conv3d_backward(cache.input, conv,
                                    params.at(layer + ".weight"), bn.grad_x,
                                    need_grad_x);
  grads.accumulate(layer + ".weight", cg.grad_weight);
  if (conv.has_bias) grads.accumulate(layer + ".bias", cg.grad_bias);
  return std::move(cg.grad_x);
}

template <typename T>
void init_conv_unit_params(const std::string& layer, const ConvLayerSpec& conv,
                           ParamBundle<T>& params, std::mt19937_64& rng) {
  const Dims5 wd = conv.weight_dims();
  const double fan_in = static_cast<double>(wd.c * wd.t * wd.h * wd.w);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  Tensor<T> w(wd);
  for (auto& v : w.data()) v = static_cast<T>(normal(rng));
  params.set(layer + ".weight", std::move(w));
  const Dims5 vec{conv.out_channels, 1, 1, 1, 1};
  if (conv.has_bias) params.set(layer + ".bias", Tensor<T>(vec));
  params.set(layer + ".bn.scale", Tensor<T>(vec, T{1}));
  params.set(layer + ".bn.shift", Tensor<T>(vec));
  params.set(layer + ".bn.running_mean", Tensor<T>(vec));
  params.set(layer + ".bn.running_var", Tensor<T>(vec, T{1}));
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
void init_block_params(const BlockSpec& spec, ParamBundle<T>& params,
                       std::mt19937_64& rng) {
  for (const auto& [layer, conv] : spec.conv_layers()) {
    init_conv_unit_params(layer, conv, params, rng);
  }
}

template <typename T>
Tensor<T> block_forward(const BlockSpec& spec, const ParamBundle<T>& params,
                        const Tensor<T>& x, Mode mode, BlockCache<T>* cache) {
  if (x.dims().c != spec.in_channels) {
    throw std::invalid_argument("block " + spec.id + " expects " +
                                std::to_string(spec.in_channels) +
                                " input channels, got " +
                                std::to_string(x.dims().c));
  }
  auto unit = [&](const std::string& name) -> UnitCache<T>* {
    return cache ? &cache->units[spec.layer_id(name)] : nullptr;
  };

  Tensor<T> reduced = conv_unit_forward(spec.layer_id("reduce"), spec.reduce,
                                        params, x, true, mode, unit("reduce"));
  std::vector<Tensor<T>> branch_out;
  branch_out.reserve(spec.branch_count);
  Tensor<T> chain = std::move(reduced);
  for (std::size_t i = 0; i < spec.branch_count; ++i) {
    const std::string mname = "main" + std::to_string(i + 1);
    chain = conv_unit_forward(spec.layer_id(mname), spec.main_stage[i], params,
                              chain, true, mode, unit(mname));
    const std::string bname = "branch" + std::to_string(i + 1);
    branch_out.push_back(conv_unit_forward(spec.layer_id(bname),
                                           spec.branches[i].conv, params, chain,
                                           true, mode, unit(bname)));
  }
  Tensor<T> fused = conv_unit_forward(
      spec.layer_id("fusion"), spec.fusion, params,
      concat_channels<T>(std::span<const Tensor<T>>(branch_out)), false, mode,
      unit("fusion"));
  if (spec.shortcut == ShortcutKind::kProjection) {
    add_inplace(fused, conv_unit_forward(spec.layer_id("shortcut"),
                                         spec.projection, params, x, false,
                                         mode, unit("shortcut")));
  } else {
    add_inplace(fused, x);
  }
  Tensor<T> out = relu_forward(fused);
  if (cache != nullptr) {
    cache->sum = std::move(fused);
    cache->output = out;
  }
  return out;
}

template <typename T>
Tensor<T> block_backward(const BlockSpec& spec, const ParamBundle<T>& params,
                         const BlockCache<T>& cache, const Tensor<T>& grad_out,
                         ParamBundle<T>& grads,
                         std::span<const Tensor<T>> branch_seeds) {
  if (!branch_seeds.empty() && branch_seeds.size() != spec.branch_count) {
    throw std::invalid_argument("block_backward: expected one seed per branch");
  }
  auto unit = [&](const std::string& name) -> const UnitCache<T>& {
    auto it = cache.units.find(spec.layer_id(name));
    if (it == cache.units.end()) {
      throw std::invalid_argument("block_backward: no cached activations for " +
                                  spec.layer_id(name));
    }
    return it->second;
  };

  const Tensor<T> g_sum = relu_backward(cache.output, grad_out);
  Tensor<T> g_x;
  if (spec.shortcut == ShortcutKind::kProjection) {
    g_x = conv_unit_backward(spec.layer_id("shortcut"), spec.projection, params,
                             unit("shortcut"), g_sum, grads);
  } else {
    g_x = g_sum;
  }
  const Tensor<T> g_concat = conv_unit_backward(
      spec.layer_id("fusion"), spec.fusion, params, unit("fusion"), g_sum, grads);

  // Branch gradients, then the main stage chain from the deepest tap back.
  std::vector<Tensor<T>> g_tap(spec.branch_count);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < spec.branch_count; ++j) {
    const std::size_t width = spec.branches[j].conv.out_channels;
    Tensor<T> g_branch = slice_channels(g_concat, offset, width);
    offset += width;
    if (!branch_seeds.empty() && !branch_seeds[j].empty()) {
      add_inplace(g_branch, branch_seeds[j]);
    }
    const std::string bname = "branch" + std::to_string(j + 1);
    g_tap[j] = conv_unit_backward(spec.layer_id(bname), spec.branches[j].conv,
                                  params, unit(bname), g_branch, grads);
  }
  Tensor<T> g_chain;
  for (std::size_t i = spec.branch_count; i-- > 0;) {
    Tensor<T> g = std::move(g_tap[i]);
    if (!g_chain.empty()) add_inplace(g, g_chain);
    const std::string mname = "main" + std::to_string(i + 1);
    g_chain = conv_unit_backward(spec.layer_id(mname), spec.main_stage[i],
                                 params, unit(mname), g, grads);
  }
  add_inplace(g_x, conv_unit_backward(spec.layer_id("reduce"), spec.reduce,
                                      params, unit("reduce"), g_chain, grads));
  return g_x;
}

template <typename T>
void update_block_running_stats(const BlockSpec& spec, ParamBundle<T>& params,
                                const BlockCache<T>& cache, double momentum) {
  for (const auto& [layer, conv] : spec.conv_layers()) {
    auto it = cache.units.find(layer);
    if (it == cache.units.end()) continue;
    update_running_stats(params.at(layer + ".bn.running_mean"),
                         params.at(layer + ".bn.running_var"), it->second.bn,
                         momentum);
  }
}

#define DMSN_INSTANTIATE(T)                                                    \
  template Tensor<T> conv_unit_forward(const std::string&,                     \
                                       const ConvLayerSpec&,                   \
                                       const ParamBundle<T>&, const Tensor<T>&, \
                                       bool, Mode, UnitCache<T>*);             \
  template Tensor<T> conv_unit_backward(                                       \
      const std::string&, const ConvLayerSpec&, const ParamBundle<T>&,         \
      const UnitCache<T>&, const Tensor<T>&, ParamBundle<T>&, bool);           \
  template void init_conv_unit_params(const std::string&,                      \
                                      const ConvLayerSpec&, ParamBundle<T>&,   \
                                      std::mt19937_64&);                       \
  template void init_block_params(const BlockSpec&, ParamBundle<T>&,           \
                                  std::mt19937_64&);                           \
  template Tensor<T> block_forward(const BlockSpec&, const ParamBundle<T>&,    \
                                   const Tensor<T>&, Mode, BlockCache<T>*);    \
  template Tensor<T> block_backward(const BlockSpec&, const ParamBundle<T>&,   \
                                    const BlockCache<T>&, const Tensor<T>&,    \
                                    ParamBundle<T>&,                           \
                                    std::span<const Tensor<T>>);               \
  template void update_block_running_stats(const BlockSpec&, ParamBundle<T>&,  \
                                           const BlockCache<T>&, double);

DMSN_INSTANTIATE(float)
DMSN_INSTANTIATE(double)
#undef DMSN_INSTANTIATE

}  // namespace dmsn
