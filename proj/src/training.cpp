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

#include "dmsn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dmsn/format.hpp"

namespace dmsn {

std::string loss_kind_name(LossKind kind) {
  return kind == LossKind::kMse ? "mse" : "mae";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "mse") return LossKind::kMse;
  if (text == "mae") return LossKind::kMae;
  throw std::invalid_argument("unknown loss '" + std::string(text) +
                              "'; use mse or mae");
}

namespace {

void check_loss_args(std::span<const double> pred, std::span<const double> target) {
  if (pred.empty()) throw std::invalid_argument("loss of an empty batch");
  if (pred.size() != target.size()) {
    throw std::invalid_argument("loss inputs differ in length (" +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  }
}

}  // namespace

LossResult mse_loss(std::span<const double> pred, std::span<const double> target) {
  check_loss_args(pred, target);
  const double n = static_cast<double>(pred.size());
  LossResult r;
  r.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.value /= n;
  return r;
}

LossResult mae_loss(std::span<const double> pred, std::span<const double> target) {
  check_loss_args(pred, target);
  const double n = static_cast<double>(pred.size());
  LossResult r;
  r.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += std::abs(d);
    r.grad[i] = d > 0 ? 1.0 / n : (d < 0 ? -1.0 / n : 0.0);
  }
  r.value /= n;
  return r;
}

LossResult compute_loss(LossKind kind, std::span<const double> pred,
                        std::span<const double> target) {
  return kind == LossKind::kMse ? mse_loss(pred, target) : mae_loss(pred, target);
}

// ---------------------------------------------------------------------------

std::string optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + std::string(text) +
                              "'; use sgd or adam");
}

namespace {

template <typename T>
const Tensor<T>* matching_grad(const std::string& name, const Tensor<T>& p,
                               const ParamBundle<T>& grads) {
  const Tensor<T>* g = grads.find(name);
  if (g != nullptr && g->dims() != p.dims()) {
    throw std::invalid_argument("gradient for '" + name + "' has extents " +
                                g->dims().str() + ", parameter has " +
                                p.dims().str());
  }
  return g;
}

template <typename T>
Tensor<T>& buffer(ParamBundle<T>& bundle, const std::string& name,
                  const Dims5& dims) {
  if (!bundle.contains(name)) bundle.set(name, Tensor<T>(dims));
  return bundle.at(name);
}

double decay_for(const OptimizerConfig& c, const std::string& name) {
  const ParamRole role = param_role(name);
  const bool norm = role == ParamRole::kNormScale || role == ParamRole::kNormShift;
  return norm && !c.decay_norm_params ? 0.0 : c.weight_decay;
}

}  // namespace

template <typename T>
void sgd_step(ParamBundle<T>& params, const ParamBundle<T>& grads,
              OptimizerState<T>& state, double lr) {
  const OptimizerConfig& c = state.config;
  ++state.step;
  for (auto& [name, p] : params) {
    if (!is_trainable(param_role(name))) continue;
    const Tensor<T>* g = matching_grad(name, p, grads);
    const double lambda = decay_for(c, name);
    Tensor<T>& v = buffer(state.first, name, p.dims());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g != nullptr ? static_cast<double>((*g)[i]) : 0.0;
      const double vi = c.momentum * v[i] + gi + lambda * p[i];
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(p[i] - lr * vi);
    }
  }
}

template <typename T>
void adam_step(ParamBundle<T>& params, const ParamBundle<T>& grads,
               OptimizerState<T>& state, double lr) {
  const OptimizerConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    if (!is_trainable(param_role(name))) continue;
    const Tensor<T>* g = matching_grad(name, p, grads);
    const double lambda = decay_for(c, name);
    Tensor<T>& m = buffer(state.first, name, p.dims());
    Tensor<T>& v = buffer(state.second, name, p.dims());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi =
          (g != nullptr ? static_cast<double>((*g)[i]) : 0.0) + lambda * p[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correct1;
      const double v_hat = vi / correct2;
      p[i] = static_cast<T>(p[i] - lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

template <typename T>
void optimizer_step(ParamBundle<T>& params, const ParamBundle<T>& grads,
                    OptimizerState<T>& state, double lr) {
  if (state.config.kind == OptimizerKind::kSgd) {
    sgd_step(params, grads, state, lr);
  } else {
    adam_step(params, grads, state, lr);
  }
}

// ---------------------------------------------------------------------------

Schedule Schedule::step_decay(double initial, std::size_t every) {
  if (every == 0) throw std::invalid_argument("decay interval must be positive");
  return {ScheduleKind::kStepDecay, initial, initial, every};
}

Schedule Schedule::two_phase(double first, double later) {
  return {ScheduleKind::kTwoPhase, first, later, 1};
}

Schedule Schedule::constant(double lr) {
  return {ScheduleKind::kConstant, lr, lr, 1};
}

double lr_at(const Schedule& schedule, std::size_t epoch) {
  switch (schedule.kind) {
    case ScheduleKind::kStepDecay:
      return schedule.initial_lr *
             std::pow(0.1, static_cast<double>(epoch / schedule.decay_every));
    case ScheduleKind::kTwoPhase:
      return epoch == 0 ? schedule.initial_lr : schedule.later_lr;
    case ScheduleKind::kConstant:
      return schedule.initial_lr;
  }
  return schedule.initial_lr;
}

std::vector<std::string> train_preset_names() {
  return {"pretrain", "depression", "pain"};
}

TrainPreset train_preset(std::string_view name) {
  if (name == "pretrain") {
    return {"pretrain", OptimizerKind::kSgd, Schedule::step_decay(), 30};
  }
  if (name == "depression") {
    return {"depression", OptimizerKind::kAdam, Schedule::two_phase(), 3};
  }
  if (name == "pain") {
    return {"pain", OptimizerKind::kAdam, Schedule::constant(), 2};
  }
  throw std::invalid_argument("unknown schedule '" + std::string(name) +
                              "'; valid names: pretrain, depression, pain");
}

// ---------------------------------------------------------------------------

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "optimizer=" << optimizer_kind_name(optimizer.kind)
     << " epochs=" << epochs << " batch=" << batch_size
     << " loss=" << loss_kind_name(loss) << " seed=" << seed
     << " weight_decay=" << format_shortest(optimizer.weight_decay);
  if (max_steps > 0) os << " max_steps=" << max_steps;
  if (lr_override) os << " lr=" << format_shortest(*lr_override);
  return os.str();
}

std::string TrainHistory::to_text() const {
  std::ostringstream os;
  os << "# " << config_echo << "\n";
  os << "step\tepoch\tlr\tloss\n";
  for (const auto& s : steps) {
    os << s.step << '\t' << s.epoch << '\t' << format_shortest(s.lr) << '\t'
       << format_shortest(s.loss) << "\n";
  }
  return os.str();
}

void check_geometry(const ModelSpec& spec, const ClipDataset& dataset) {
  const ModelConfig& c = spec.config;
  if (dataset.clip_len != c.clip_len || dataset.height != c.height ||
      dataset.width != c.width) {
    throw std::invalid_argument(
        "dataset clips are " + std::to_string(dataset.clip_len) + "x" +
        std::to_string(dataset.height) + "x" + std::to_string(dataset.width) +
        " but the model expects " + std::to_string(c.clip_len) + "x" +
        std::to_string(c.height) + "x" + std::to_string(c.width));
  }
  dataset.validate();
}

template <typename T>
Tensor<T> make_batch(const ClipDataset& dataset,
                     std::span<const std::size_t> order, std::size_t begin,
                     std::size_t end) {
  const std::size_t per_clip = 3 * dataset.clip_len * dataset.height * dataset.width;
  Tensor<T> batch({end - begin, 3, dataset.clip_len, dataset.height, dataset.width});
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor<float>& src = dataset.clips[order[i]].data;
    T* dst = batch.ptr() + (i - begin) * per_clip;
    for (std::size_t k = 0; k < per_clip; ++k) dst[k] = static_cast<T>(src[k]);
  }
  return batch;
}

template <typename T>
std::vector<double> predict(const ModelSpec& spec, const ParamBundle<T>& params,
                            const ClipDataset& dataset, std::size_t batch_size) {
  check_geometry(spec, dataset);
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> out;
  out.reserve(dataset.size());
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t e = std::min(order.size(), b + batch_size);
    const auto scores =
        model_forward(spec, params, make_batch<T>(dataset, order, b, e), Mode::kEval);
    for (T s : scores) out.push_back(static_cast<double>(s));
  }
  return out;
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0xD1B54A32D192ED03ULL;

}  // namespace

template <typename T>
TrainResult<T> train(const ModelSpec& spec, const ClipDataset& dataset,
                     const TrainConfig& config, const ParamBundle<T>* initial,
                     const ClipDataset* validation) {
  if (dataset.size() == 0) throw std::invalid_argument("training set is empty");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  check_geometry(spec, dataset);
  if (validation != nullptr) check_geometry(spec, *validation);

  TrainResult<T> result;
  result.params = initial != nullptr ? *initial : init_params<T>(spec, spec.config.seed);
  result.history.seed = config.seed;
  result.history.config_echo = config.to_text();
  OptimizerState<T> state;
  state.config = config.optimizer;

  std::mt19937_64 shuffle_rng(config.seed ^ kShuffleSalt);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  bool done = false;

  for (std::size_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = config.lr_override ? *config.lr_override
                                         : lr_at(config.schedule, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t steps_this_epoch = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      if (config.max_steps > 0 && step >= config.max_steps) {
        done = true;
        break;
      }
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      ModelCache<T> cache;
      const auto scores = model_forward(spec, result.params,
                                        make_batch<T>(dataset, order, b, e),
                                        Mode::kTrain, &cache);
      std::vector<double> pred(scores.begin(), scores.end());
      std::vector<double> target;
      for (std::size_t i = b; i < e; ++i) target.push_back(dataset.clips[order[i]].label);
      const LossResult loss = compute_loss(config.loss, pred, target);
      if (!std::isfinite(loss.value)) {
        throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                 " (epoch " + std::to_string(epoch) + ")");
      }
      std::vector<T> g(loss.grad.begin(), loss.grad.end());
      const ParamBundle<T> grads = model_backward(spec, result.params, cache,
                                                  std::span<const T>(g));
      optimizer_step(result.params, grads, state, lr);
      update_model_running_stats(spec, result.params, cache);
      result.history.steps.push_back({step, epoch, lr, loss.value});
      rec.train_loss += loss.value;
      ++steps_this_epoch;
      ++step;
    }
    if (steps_this_epoch == 0) break;
    rec.train_loss /= static_cast<double>(steps_this_epoch);
    if (validation != nullptr && validation->size() > 0) {
      const auto p = predict(spec, result.params, *validation, config.batch_size);
      const auto truth = validation->labels();
      rec.val_mae = metric_mae(p, truth);
      rec.val_rmse = metric_rmse(p, truth);
    }
    result.history.epochs.push_back(rec);
  }
  return result;
}

#define DMSN_INSTANTIATE(T)                                                   \
  template void sgd_step(ParamBundle<T>&, const ParamBundle<T>&,              \
                         OptimizerState<T>&, double);                         \
  template void adam_step(ParamBundle<T>&, const ParamBundle<T>&,             \
                          OptimizerState<T>&, double);                        \
  template void optimizer_step(ParamBundle<T>&, const ParamBundle<T>&,        \
                               OptimizerState<T>&, double);                   \
  template Tensor<T> make_batch<T>(const ClipDataset&,                        \
                                   std::span<const std::size_t>, std::size_t, \
                                   std::size_t);                              \
  template std::vector<double> predict(const ModelSpec&, const ParamBundle<T>&, \
                                       const ClipDataset&, std::size_t);      \
  template TrainResult<T> train(const ModelSpec&, const ClipDataset&,         \
                                const TrainConfig&, const ParamBundle<T>*,    \
                                const ClipDataset*);

DMSN_INSTANTIATE(float)
DMSN_INSTANTIATE(double)
#undef DMSN_INSTANTIATE

}  // namespace dmsn
