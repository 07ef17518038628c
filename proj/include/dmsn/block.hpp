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

// Decomposed multiscale spatiotemporal blocks.
//
// A block runs
//
//   x -> reduce (1x1x1, carries the spatial stride)
//     -> main1 -> main2 -> ... -> mainK         (the Main Stage chain)
//          |        |               |
//       branch1  branch2  ...    branchK        (one conv per tap)
//          \________\______..._____/
//                 concat (tap order)
//                      -> fusion (1x1x1) -> + shortcut(x) -> relu
//
// The three variants differ only in which convs are temporal (k,1,1) and
// which are spatial (1,k,k):
//
//   A: main all temporal, branches all spatial
//   B: main spatial/temporal alternating from spatial; branch j is temporal
//      for odd j and spatial for even j
//   C: main all spatial, branches all temporal
//
// Every conv is followed by batch norm and relu, except fusion and the
// shortcut projection whose normalized outputs are summed before the final
// relu.

#ifndef DMSN_BLOCK_HPP_
#define DMSN_BLOCK_HPP_

#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmsn/kernels.hpp"
#include "dmsn/params.hpp"

namespace dmsn {

enum class BlockVariant { kA, kB, kC };

char variant_letter(BlockVariant v);
BlockVariant variant_from_letter(char letter);

enum class ShortcutKind { kIdentity, kProjection };

struct BranchSpec {
  std::size_t tap = 1;  // 1-based index into the Main Stage outputs
  ConvLayerSpec conv;
};

struct BlockSpec {
  std::string id = "block";
  BlockVariant variant = BlockVariant::kA;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t mid_channels = 0;
  std::size_t spatial_stride = 1;
  std::size_t branch_count = 4;
  ConvLayerSpec reduce;
  std::vector<ConvLayerSpec> main_stage;
  std::vector<BranchSpec> branches;
  ConvLayerSpec fusion;
  ShortcutKind shortcut = ShortcutKind::kIdentity;
  ConvLayerSpec projection;  // meaningful only for kProjection

  // Throws std::invalid_argument describing the first broken invariant.
  void validate() const;
  // (layer id, conv) pairs in execution order, shortcut last if present.
  std::vector<std::pair<std::string, ConvLayerSpec>> conv_layers() const;
  std::string layer_id(const std::string& unit) const { return id + "." + unit; }
};

// mid = out/2; main-stage width = mid/2; branch widths split mid as evenly as
// possible (exactly mid/branch_count when divisible).
BlockSpec build_block(BlockVariant variant, std::size_t in_channels,
                      std::size_t out_channels, std::size_t spatial_stride,
                      std::size_t branch_count = 4,
                      const std::string& id = "block");

// Human-readable listing of layer ids, kernel/stride/padding and channels.
std::string describe_block(const BlockSpec& spec);

// Receptive field, in input frames / input pixels, of branch `tap` output.
std::size_t temporal_receptive_field(const BlockSpec& spec, std::size_t tap);
std::size_t spatial_receptive_field(const BlockSpec& spec, std::size_t tap);

// ---------------------------------------------------------------------------
// conv -> batch norm -> optional relu, the unit every block layer is built on

template <typename T>
struct UnitCache {
  Tensor<T> input;
  BatchNormCache<T> bn;
  Tensor<T> output;
  bool relu = true;
};

template <typename T>
Tensor<T> conv_unit_forward(const std::string& layer, const ConvLayerSpec& conv,
                            const ParamBundle<T>& params, const Tensor<T>& x,
                            bool relu, Mode mode, UnitCache<T>* cache);

// Accumulates weight/scale/shift gradients into `grads` and returns the
// gradient w.r.t. the unit input (empty when need_grad_x is false).
template <typename T>
Tensor<T> conv_unit_backward(const std::string& layer,
                             const ConvLayerSpec& conv,
                             const ParamBundle<T>& params,
                             const UnitCache<T>& cache,
                             const Tensor<T>& grad_out, ParamBundle<T>& grads,
                             bool need_grad_x = true);

// Adds weight and normalization entries for one unit. Weights are drawn
// from N(0, 2/fan_in); scale 1, shift 0, running mean 0, running var 1.
template <typename T>
void init_conv_unit_params(const std::string& layer, const ConvLayerSpec& conv,
                           ParamBundle<T>& params, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Block execution

template <typename T>
struct BlockCache {
  std::map<std::string, UnitCache<T>> units;
  Tensor<T> sum;  // fusion + shortcut, before the final relu
  Tensor<T> output;
};

template <typename T>
void init_block_params(const BlockSpec& spec, ParamBundle<T>& params,
                       std::mt19937_64& rng);

template <typename T>
Tensor<T> block_forward(const BlockSpec& spec, const ParamBundle<T>& params,
                        const Tensor<T>& x, Mode mode = Mode::kEval,
                        BlockCache<T>* cache = nullptr);

// Back-propagates `grad_out` (w.r.t. the block output) and optional extra
// gradients injected directly at the branch outputs (`branch_seeds`, one per
// branch or empty). Returns the gradient w.r.t. the block input.
template <typename T>
Tensor<T> block_backward(const BlockSpec& spec, const ParamBundle<T>& params,
                         const BlockCache<T>& cache, const Tensor<T>& grad_out,
                         ParamBundle<T>& grads,
                         std::span<const Tensor<T>> branch_seeds = {});

template <typename T>
void update_block_running_stats(const BlockSpec& spec, ParamBundle<T>& params,
                                const BlockCache<T>& cache,
                                double momentum = kBatchNormMomentum);

}  // namespace dmsn

#endif  // DMSN_BLOCK_HPP_
