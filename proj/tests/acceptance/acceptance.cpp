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

// Acceptance checks A1-A10. Prints one PASS/FAIL line per criterion and
// exits non-zero if any failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dmsn/cli.hpp"
#include "dmsn/clips.hpp"
#include "dmsn/complexity.hpp"
#include "dmsn/format.hpp"
#include "dmsn/gradsuite.hpp"
#include "dmsn/kernels.hpp"
#include "dmsn/model.hpp"
#include "dmsn/training.hpp"
#include "support/oracles.hpp"

namespace dmsn {
namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

bool within(double value, double target, double tolerance) {
  return std::abs(value - target) <= tolerance * target;
}

std::string fmt(double v, int decimals = 2) { return format_fixed(v, decimals); }

ModelSpec default_model(ModelKind kind, std::size_t clip = 16, std::size_t branches = 4) {
  ModelConfig c;
  c.kind = kind;
  c.clip_len = clip;
  c.branch_count = branches;
  return build_model(c);
}

ModelConfig micro_config() {
  ModelConfig c;
  c.clip_len = 8;
  c.height = 32;
  c.width = 32;
  c.width_multiplier = {1, 8};
  return c;
}

Outcome a1_parameter_budgets() {
  const ModelKind kinds[] = {ModelKind::kDmsnA, ModelKind::kDmsn, ModelKind::kDmsnB,
                             ModelKind::kDmsnC};
  const double published[] = {19.0, 22.1, 23.6, 25.9};
  Outcome o;
  double prev = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = count_params(default_model(kinds[i])).params_millions();
    o.pass = o.pass && within(m, published[i], 0.08) && m > prev;
    prev = m;
    o.detail += model_kind_name(kinds[i]) + "=" + fmt(m) + "M ";
  }
  o.detail += "(order A < DMSN < B < C)";
  return o;
}

Outcome a2_branch_ablation() {
  const double params[] = {18.0, 20.1, 22.1};
  const double flops[] = {9.64, 10.48, 11.29};
  Outcome o;
  double prev_p = 0.0, prev_f = 0.0;
  for (std::size_t nb = 2; nb <= 4; ++nb) {
    const ModelSpec s = default_model(ModelKind::kDmsn, 16, nb);
    const CostReport r = count_flops(s, s.input_dims());
    const double p = r.params_millions(), f = r.flops_giga();
    o.pass = o.pass && within(p, params[nb - 2], 0.08) && within(f, flops[nb - 2], 0.30) &&
             p > prev_p && f > prev_f;
    prev_p = p;
    prev_f = f;
    o.detail += "b" + std::to_string(nb) + "=" + fmt(p) + "M/" + fmt(f) + "G ";
  }
  return o;
}

Outcome a3_flop_scaling() {
  const double published[] = {5.64, 11.29, 16.93, 22.57};
  Outcome best;
  double best_err = 1e300;
  for (MacConvention conv : {MacConvention::kMac1, MacConvention::kMac2}) {
    Outcome o;
    std::vector<double> g;
    double worst = 0.0;
    for (std::size_t k = 1; k <= 4; ++k) {
      const ModelSpec s = default_model(ModelKind::kDmsn, 8 * k);
      g.push_back(count_flops(s, s.input_dims(), conv).flops_giga());
      const double err = std::abs(g.back() - published[k - 1]) / published[k - 1];
      worst = std::max(worst, err);
      o.pass = o.pass && err <= 0.30;
    }
    for (std::size_t k = 2; k <= 4; ++k) {
      o.pass = o.pass && std::abs(g[k - 1] / g[0] - static_cast<double>(k)) <= 0.01 * k;
    }
    o.detail = convention_name(conv) + " " + fmt(g[0]) + "/" + fmt(g[1]) + "/" + fmt(g[2]) +
               "/" + fmt(g[3]) + "G ratio " + fmt(g[1] / g[0], 3) + ":" +
               fmt(g[2] / g[0], 3) + ":" + fmt(g[3] / g[0], 3) + " worst dev " +
               fmt(100 * worst, 1) + "%";
    if (worst < best_err) {
      best_err = worst;
      best = o;
    }
  }
  return best;
}

Outcome a4_describe_geometry() {
  std::ostringstream out, err;
  const int code = run_cli({"describe", "--model", "dmsn", "--frames", "16", "--format", "csv"},
                           out, err);
  Outcome o;
  if (code != 0) return {false, "describe exited " + std::to_string(code) + ": " + err.str()};
  const std::vector<std::pair<std::string, std::string>> want = {
      {"conv1", "16,56,56"}, {"pool", "8,28,28"}, {"res2", "8,28,28"},
      {"res3", "8,14,14"},   {"res4", "8,7,7"},   {"res5", "8,4,4"},
      {"head", "1,1,1"}};
  std::istringstream lines(out.str());
  std::vector<std::pair<std::string, std::string>> got;
  for (std::string l; std::getline(lines, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    const auto c1 = l.find(',');
    const auto c2 = l.find(',', c1 + 1);
    got.emplace_back(l.substr(0, c1), l.substr(c2 + 1));
  }
  for (const auto& [layer, extent] : want) {
    bool found = false;
    for (const auto& [gl, ge] : got) {
      if (gl == layer) {
        found = true;
        if (ge != extent) {
          o.pass = false;
          o.detail += layer + "=" + ge + "(want " + extent + ") ";
        }
      }
    }
    if (!found) {
      o.pass = false;
      o.detail += layer + " missing ";
    }
  }
  if (o.pass) o.detail = "conv1 16x56x56, pool 8x28x28, res2-5 28/14/7/4, scalar head";
  return o;
}

Outcome a5_kernel_oracle() {
  std::mt19937_64 rng(20260501);
  std::uniform_int_distribution<std::size_t> ch(1, 6), ext(1, 9), bat(1, 2), odd(1, 3),
      stride(1, 2);
  double worst = 0.0;
  std::size_t cases = 0;
  const auto t0 = Clock::now();
  for (int path = 0; path < 3; ++path) {
    for (int i = 0; i < 100; ++i) {
      const std::size_t in = ch(rng), out = ch(rng);
      ConvLayerSpec spec;
      const std::size_t k = 2 * odd(rng) + 1;
      if (path == 0) {
        spec = temporal_conv(in, out, k);
        spec.stride.t = stride(rng);
        spec.padding.t = std::uniform_int_distribution<std::size_t>(0, k / 2)(rng);
      } else if (path == 1) {
        spec = spatial_conv(in, out, k);
        spec.stride = {1, stride(rng), stride(rng)};
        spec.padding.h = spec.padding.w =
            std::uniform_int_distribution<std::size_t>(0, k / 2)(rng);
      } else {
        spec = pointwise_conv(in, out, stride(rng));
      }
      spec.has_bias = i % 2 == 1;
      Dims5 xd{bat(rng), in, ext(rng), ext(rng), ext(rng)};
      xd.t = std::max(xd.t, spec.kernel.t);
      xd.h = std::max(xd.h, spec.kernel.h);
      xd.w = std::max(xd.w, spec.kernel.w);
      const Tensor<float> x = testing::random_tensor<float>(xd, rng);
      const Tensor<float> w = testing::random_tensor<float>(spec.weight_dims(), rng);
      const Tensor<float> b = testing::random_tensor<float>({out, 1, 1, 1, 1}, rng);
      const Tensor<float>* bp = spec.has_bias ? &b : nullptr;
      Tensor<float> y;
      if (path == 0) {
        y = conv_temporal_forward(x, spec, w, bp);
      } else if (path == 1) {
        y = conv_spatial_forward(x, spec, w, bp);
      } else {
        y = conv_forward(x, spec, w, bp);
      }
      worst = std::max(worst, max_abs_diff(y, testing::naive_conv3d(x, spec, w, bp)));
      ++cases;
    }
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream d;
  d << cases << " cases (temporal/spatial/pointwise x100) max abs diff " << worst << " in "
    << fmt(secs) << " s";
  return {worst < 1e-5 && secs < 30.0, d.str()};
}

Outcome a6_gradient_suite() {
  const GradSuiteResult r = run_gradient_suite();
  std::ostringstream d;
  d << r.cases.size() << " cases max rel err " << r.max_rel_error << " (" << r.worst << ") in "
    << fmt(r.seconds) << " s";
  return {r.passed && r.max_rel_error < 1e-4 && r.seconds < 60.0, d.str()};
}

struct Support {
  std::size_t t = 0, h = 0;
};

// Extent of the non-zero input gradient after seeding one branch output.
Support impulse_support(const BlockSpec& spec, std::size_t branch) {
  std::mt19937_64 rng(7);
  ParamBundle<double> params;
  init_block_params(spec, params, rng);
  for (auto& [name, t] : params) {
    if (param_role(name) == ParamRole::kNormShift) t.fill(100.0);
    if (param_role(name) == ParamRole::kNormScale) t.fill(0.01);
  }
  const std::size_t e = 13, c = e / 2;
  const Tensor<double> x = testing::random_tensor<double>({1, spec.in_channels, e, e, e}, rng);
  BlockCache<double> cache;
  const Tensor<double> y = block_forward(spec, params, x, Mode::kEval, &cache);
  std::vector<Tensor<double>> seeds;
  for (const auto& b : spec.branches) seeds.emplace_back(Dims5{1, b.conv.out_channels, e, e, e});
  seeds[branch].at(0, 0, c, c, c) = 1.0;
  ParamBundle<double> grads;
  const Tensor<double> g = block_backward(spec, params, cache, Tensor<double>(y.dims()), grads,
                                          std::span<const Tensor<double>>(seeds));
  std::size_t t_lo = e, t_hi = 0, h_lo = e, h_hi = 0;
  for (std::size_t ch = 0; ch < spec.in_channels; ++ch)
    for (std::size_t t = 0; t < e; ++t)
      for (std::size_t h = 0; h < e; ++h)
        for (std::size_t w = 0; w < e; ++w) {
          if (g.at(0, ch, t, h, w) == 0.0) continue;
          t_lo = std::min(t_lo, t);
          t_hi = std::max(t_hi, t);
          h_lo = std::min(h_lo, h);
          h_hi = std::max(h_hi, h);
        }
  if (t_hi < t_lo) return {};
  return {t_hi - t_lo + 1, h_hi - h_lo + 1};
}

Outcome a7_receptive_field() {
  Outcome o;
  const BlockSpec a = build_block(BlockVariant::kA, 8, 8, 1);
  const BlockSpec c = build_block(BlockVariant::kC, 8, 8, 1);
  std::string ta = "A temporal", sc = "C spatial";
  for (std::size_t j = 0; j < 4; ++j) {
    const Support sa = impulse_support(a, j);
    const Support scs = impulse_support(c, j);
    o.pass = o.pass && sa.t == 2 * (j + 1) + 1 && scs.h == 2 * (j + 1) + 1;
    ta += " " + std::to_string(sa.t);
    sc += " " + std::to_string(scs.h);
  }
  o.detail = ta + "; " + sc + " (want 3 5 7 9)";
  return o;
}

Outcome a8_desk_learning() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.clips = 256;
  sc.frames = 8;
  sc.height = 32;
  sc.width = 32;
  sc.seed = 1;
  const ClipDataset all = synth_generate(sc);
  std::vector<std::size_t> train_idx, held_idx;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 4 == 3 ? held_idx : train_idx).push_back(i);
  const ClipDataset train_set = all.subset(train_idx);
  const ClipDataset held = all.subset(held_idx);

  const ModelSpec spec = build_model(micro_config());
  const auto initial = init_params<float>(spec, spec.config.seed);
  TrainConfig cfg;
  cfg.optimizer.kind = OptimizerKind::kAdam;
  cfg.optimizer.weight_decay = 0.0;
  cfg.schedule = Schedule::constant(3e-3);
  cfg.batch_size = 8;
  cfg.max_steps = 500;
  cfg.epochs = (cfg.max_steps * cfg.batch_size + train_set.size() - 1) / train_set.size();
  cfg.seed = 1;

  const auto labels = held.labels();
  const double before = metric_mae(predict(spec, initial, held), labels);
  const TrainResult<float> r = train<float>(spec, train_set, cfg, &initial);
  const double after = metric_mae(predict(spec, r.params, held), labels);

  double mean = 0.0;
  for (double l : train_set.labels()) mean += l;
  mean /= static_cast<double>(train_set.size());
  const std::vector<double> constant(labels.size(), mean);
  const double baseline = metric_mae(constant, labels);

  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream d;
  d << r.history.steps.size() << " steps, held-out MAE " << fmt(before, 3) << " -> "
    << fmt(after, 3) << " (ratio " << fmt(after / before, 3) << ", train-mean predictor "
    << fmt(baseline, 3) << ") in " << fmt(secs, 1) << " s";
  return {r.history.steps.size() == 500 && after <= 0.5 * before && secs < 600.0, d.str()};
}

Outcome a9_protocol() {
  Outcome o;
  const int pspi[16] = {0, 1, 2, 3, 4, 4, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5};
  for (int l = 0; l <= 15; ++l) o.pass = o.pass && quantize_pspi(l) == pspi[l];
  const std::pair<int, BdiBand> bands[] = {
      {0, BdiBand::kMinimal},   {13, BdiBand::kMinimal},  {14, BdiBand::kMild},
      {19, BdiBand::kMild},     {20, BdiBand::kModerate}, {28, BdiBand::kModerate},
      {29, BdiBand::kSevere},   {63, BdiBand::kSevere}};
  for (const auto& [s, b] : bands) o.pass = o.pass && bdi_severity_band(s) == b;

  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 5.0);
  std::uniform_int_distribution<int> len(1, 20), nsub(2, 8);
  std::size_t failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(len(rng)), truth(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = normal(rng);
      truth[i] = normal(rng);
    }
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double med = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    std::vector<double> shuffled = v;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (aggregate_video_score(v) != med || aggregate_video_score(shuffled) != med) ++failures;
    if (metric_rmse(v, truth) + 1e-12 < metric_mae(v, truth)) ++failures;

    std::uniform_int_distribution<int> pick(0, nsub(rng) - 1);
    std::vector<std::string> subjects(v.size() + 2);
    for (auto& s : subjects) s = "s" + std::to_string(pick(rng));
    subjects[0] = "s_first";
    subjects[1] = "s_last";
    const FoldPlan plan = loso_splits(subjects);
    std::vector<int> hits(subjects.size(), 0);
    for (const Fold& f : plan.folds) {
      for (std::size_t i : f.test_indices) {
        if (subjects[i] != f.test_subject) ++failures;
        ++hits[i];
      }
      for (std::size_t i : f.train_indices) {
        if (subjects[i] == f.test_subject) ++failures;
      }
    }
    for (int h : hits) failures += h != 1;
  }
  o.pass = o.pass && failures == 0;
  o.detail = "PSPI 16/16, BDI 8 boundaries, 1000-case median/LOSO/RMSE>=MAE suites, " +
             std::to_string(failures) + " failures";
  return o;
}

Outcome a10_mac_consistency() {
  Outcome o;
  for (ModelKind kind : {ModelKind::kDmsn, ModelKind::kDmsnA, ModelKind::kDmsnB,
                         ModelKind::kDmsnC}) {
    ModelConfig c = micro_config();
    c.kind = kind;
    const ModelSpec spec = build_model(c);
    const auto params = init_params<float>(spec, 3);
    std::mt19937_64 rng(4);
    const Tensor<float> x = testing::random_tensor<float>(spec.input_dims(2), rng);
    ScopedMacCounter counter;
    model_forward(spec, params, x);
    const std::uint64_t measured = counter.count().total();
    const std::uint64_t counted = count_flops(spec, spec.input_dims(2)).total_flops;
    o.pass = o.pass && measured == counted;
    o.detail += model_kind_name(kind) + " " + std::to_string(measured) +
                (measured == counted ? "==" : "!=") + std::to_string(counted) + " ";
  }
  return o;
}

}  // namespace
}  // namespace dmsn

int main() {
  using namespace dmsn;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"A1", a1_parameter_budgets}, {"A2", a2_branch_ablation}, {"A3", a3_flop_scaling},
      {"A4", a4_describe_geometry}, {"A5", a5_kernel_oracle},   {"A6", a6_gradient_suite},
      {"A7", a7_receptive_field},   {"A8", a8_desk_learning},   {"A9", a9_protocol},
      {"A10", a10_mac_consistency}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
