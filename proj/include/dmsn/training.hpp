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

// Losses, optimizers, learning-rate schedules and the training loop.

#ifndef DMSN_TRAINING_HPP_
#define DMSN_TRAINING_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmsn/clips.hpp"
#include "dmsn/model.hpp"

namespace dmsn {

// ---------------------------------------------------------------------------
// Losses: mean over the batch, gradient w.r.t. each prediction.

enum class LossKind { kMse, kMae };
std::string loss_kind_name(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
};

LossResult mse_loss(std::span<const double> pred, std::span<const double> target);
// Subgradient 0 where pred == target.
LossResult mae_loss(std::span<const double> pred, std::span<const double> target);
LossResult compute_loss(LossKind kind, std::span<const double> pred,
                        std::span<const double> target);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { kSgd, kAdam };
std::string optimizer_kind_name(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Normalization scale/shift are not decayed unless this is set.
  bool decay_norm_params = false;
};

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  ParamBundle<T> first;   // SGD velocity or Adam first moment
  ParamBundle<T> second;  // Adam second moment
  std::uint64_t step = 0;
};

// v <- mu v + g + lambda theta; theta <- theta - lr v. Running statistics are
// skipped; a trainable entry missing from `grads` is treated as zero.
template <typename T>
void sgd_step(ParamBundle<T>& params, const ParamBundle<T>& grads,
              OptimizerState<T>& state, double lr);

// Bias-corrected Adam with L2 weight decay folded into the gradient.
template <typename T>
void adam_step(ParamBundle<T>& params, const ParamBundle<T>& grads,
               OptimizerState<T>& state, double lr);

template <typename T>
void optimizer_step(ParamBundle<T>& params, const ParamBundle<T>& grads,
                    OptimizerState<T>& state, double lr);

// ---------------------------------------------------------------------------
// Schedules

enum class ScheduleKind { kStepDecay, kTwoPhase, kConstant };

struct Schedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double initial_lr = 0.001;
  double later_lr = 0.001;        // two-phase: rate from epoch 1 on
  std::size_t decay_every = 10;   // step-decay: epochs per division by 10

  static Schedule step_decay(double initial = 0.01, std::size_t every = 10);
  static Schedule two_phase(double first = 0.005, double later = 0.0005);
  static Schedule constant(double lr = 0.001);
};

double lr_at(const Schedule& schedule, std::size_t epoch);

// Named regimes: pretrain (SGD, step decay), depression (Adam, two-phase,
// 3 epochs), pain (Adam, constant, 2 epochs).
struct TrainPreset {
  std::string name;
  OptimizerKind optimizer;
  Schedule schedule;
  std::size_t epochs;
};
TrainPreset train_preset(std::string_view name);
std::vector<std::string> train_preset_names();

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  OptimizerConfig optimizer;
  Schedule schedule = Schedule::step_decay();
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  LossKind loss = LossKind::kMse;
  std::uint64_t seed = 0;        // shuffling stream
  std::size_t max_steps = 0;     // 0 = no limit
  std::optional<double> lr_override;

  std::string to_text() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;       // mean of step losses
  std::optional<double> val_mae;
  std::optional<double> val_rmse;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::uint64_t seed = 0;
  std::string config_echo;

  // "step epoch lr loss" per line after a "# " config echo.
  std::string to_text() const;
};

template <typename T>
struct TrainResult {
  ParamBundle<T> params;
  TrainHistory history;
};

// Deterministic in (spec, initial params, dataset, config). When `initial`
// is null the parameters are drawn with init_params(spec, spec.config.seed).
// Throws on geometry mismatch and on a non-finite loss, naming the step.
template <typename T>
TrainResult<T> train(const ModelSpec& spec, const ClipDataset& dataset,
                     const TrainConfig& config,
                     const ParamBundle<T>* initial = nullptr,
                     const ClipDataset* validation = nullptr);

// Eval-mode predictions, one per clip, in dataset order.
template <typename T>
std::vector<double> predict(const ModelSpec& spec, const ParamBundle<T>& params,
                            const ClipDataset& dataset,
                            std::size_t batch_size = 8);

// Stacks clips [begin, end) into one (n, 3, t, h, w) batch.
template <typename T>
Tensor<T> make_batch(const ClipDataset& dataset,
                     std::span<const std::size_t> order, std::size_t begin,
                     std::size_t end);

// Throws unless the dataset geometry matches the model input.
void check_geometry(const ModelSpec& spec, const ClipDataset& dataset);

}  // namespace dmsn

#endif  // DMSN_TRAINING_HPP_
