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

#ifndef DMSN_MODEL_HPP_
#define DMSN_MODEL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dmsn/block.hpp"
#include "dmsn/kernels.hpp"
#include "dmsn/params.hpp"

namespace dmsn {

enum class ModelKind { kDmsn, kDmsnA, kDmsnB, kDmsnC };

// "dmsn", "dmsn-a", "dmsn-b", "dmsn-c"
std::string model_kind_name(ModelKind kind);
// Throws with the list of valid names.
ModelKind parse_model_kind(std::string_view name);
std::vector<std::string> model_kind_names();

// Positive rational in (0, 1].
struct Ratio {
  std::uint32_t num = 1;
  std::uint32_t den = 1;

  double value() const { return static_cast<double>(num) / den; }
  std::string str() const;
  // Accepts "1/8", "0.125" is rejected; "1" means 1/1.
  static Ratio parse(std::string_view text);
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

struct ModelConfig {
  ModelKind kind = ModelKind::kDmsn;
  std::size_t clip_len = 16;
  std::size_t height = 112;
  std::size_t width = 112;
  std::size_t branch_count = 4;
  Ratio width_multiplier{1, 1};
  std::uint64_t seed = 0;

  void validate() const;
  // channels * width_multiplier; throws if not integral.
  std::size_t scaled(std::size_t channels) const;
  // Canonical key=value text, one key per line in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct StageSpec {
  std::string name;
  std::size_t out_channels = 0;
  std::vector<BlockSpec> blocks;
};

struct ModelSpec {
  ModelConfig config;
  ConvLayerSpec conv1;
  PoolGeometry pool;
  std::vector<StageSpec> stages;
  std::size_t head_in = 0;

  std::size_t block_count() const;
  std::vector<const BlockSpec*> blocks() const;
  Dims5 input_dims(std::size_t batch = 1) const {
    return {batch, 3, config.clip_len, config.height, config.width};
  }
};

// Table-style stack: conv1 7x7x7/(1,2,2), maxpool 3x3x3/2, stages res2..res5
// with 3/4/6/4 blocks at 128/256/512/1024 channels (times the width
// multiplier), then spatial mean -> per-frame linear -> temporal mean.
ModelSpec build_model(const ModelConfig& config);

struct ActivationRow {
  std::string layer;
  Dims5 dims;
};

// Output extents of input, conv1, pool, every block, every stage and the
// head, for the given input geometry.
std::vector<ActivationRow> activation_extents(const ModelSpec& spec,
                                              const Dims5& input);

// Deterministic layer-by-layer listing; `verbose` adds per-conv lines.
std::string describe_model(const ModelSpec& spec, bool verbose = false);

// Layer ids of every conv unit, in execution order.
std::vector<std::pair<std::string, ConvLayerSpec>> model_conv_layers(
    const ModelSpec& spec);

inline constexpr const char* kHeadWeight = "head.fc.weight";
inline constexpr const char* kHeadBias = "head.fc.bias";

template <typename T>
ParamBundle<T> init_params(const ModelSpec& spec, std::uint64_t seed);

template <typename T>
struct ModelCache {
  Mode mode = Mode::kEval;
  UnitCache<T> conv1;
  MaxPoolResult<T> pool;
  std::vector<BlockCache<T>> blocks;
  Dims5 trunk_dims;      // res5 output
  Tensor<T> head_rows;   // (n*t, C, 1, 1, 1) per-frame features
  Dims5 frame_dims;      // (n, 1, t, 1, 1) per-frame scores
};

// One score per batch item. Throws naming the expected dims when the clip
// geometry disagrees with the spec.
template <typename T>
std::vector<T> model_forward(const ModelSpec& spec, const ParamBundle<T>& params,
                             const Tensor<T>& clip, Mode mode = Mode::kEval,
                             ModelCache<T>* cache = nullptr);

// Gradients of sum_i grad_scores[i] * score_i for every trainable parameter.
template <typename T>
ParamBundle<T> model_backward(const ModelSpec& spec,
                              const ParamBundle<T>& params,
                              const ModelCache<T>& cache,
                              std::span<const T> grad_scores);

// Convenience: forward in `mode` with caching, then backward.
template <typename T>
ParamBundle<T> model_backward(const ModelSpec& spec,
                              const ParamBundle<T>& params,
                              const Tensor<T>& clip,
                              std::span<const T> grad_scores,
                              Mode mode = Mode::kTrain);

template <typename T>
void update_model_running_stats(const ModelSpec& spec, ParamBundle<T>& params,
                                const ModelCache<T>& cache,
                                double momentum = kBatchNormMomentum);

// Re-draws the regression head from a stream derived from `seed`; every other
// entry is left untouched.
template <typename T>
void reset_head(ParamBundle<T>& params, const ModelSpec& spec,
                std::uint64_t seed);

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const ModelSpec& spec, const ParamBundle<T>& params,
                     const std::string& path);
template <typename T>
std::pair<ModelSpec, ParamBundle<T>> load_checkpoint(const std::string& path);

}  // namespace dmsn

#endif  // DMSN_MODEL_HPP_
