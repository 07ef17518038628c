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

#include "dmsn/gradsuite.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "dmsn/block.hpp"
#include "dmsn/format.hpp"
#include "dmsn/kernels.hpp"
#include "dmsn/model.hpp"

namespace dmsn {

namespace {

using Bundle = ParamBundle<double>;

Tensor<double> randn(const Dims5& dims, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(dims);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

struct Case {
  std::string group;
  std::string name;
  Bundle params;
  LossFn loss;
  GradFn grad;
  std::size_t probes = 0;
};

Case conv_case(const std::string& name, const ConvLayerSpec& spec,
               const Dims5& in, std::size_t probes, std::mt19937_64& rng) {
  Case c{"layer", name, {}, {}, {}, probes};
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel.volume());
  c.params.set("input", randn(in, rng));
  c.params.set("conv.weight", randn(spec.weight_dims(), rng, std::sqrt(1.0 / fan_in)));
  if (spec.has_bias) c.params.set("conv.bias", randn({spec.out_channels, 1, 1, 1, 1}, rng));
  const Tensor<double> r = randn(spec.output_dims(in), rng);
  c.loss = [spec, r](const Bundle& b) {
    const Tensor<double>* bias = spec.has_bias ? &b.at("conv.bias") : nullptr;
    return dot(conv_forward(b.at("input"), spec, b.at("conv.weight"), bias), r);
  };
  c.grad = [spec, r](const Bundle& b) {
    ConvGrads<double> g = conv3d_backward(b.at("input"), spec, b.at("conv.weight"), r);
    Bundle out;
    out.set("input", std::move(g.grad_x));
    out.set("conv.weight", std::move(g.grad_weight));
    if (spec.has_bias) out.set("conv.bias", std::move(g.grad_bias));
    return out;
  };
  return c;
}

Case batchnorm_case(Mode mode, std::size_t probes, std::mt19937_64& rng) {
  const Dims5 in{3, 4, 3, 4, 4};
  const Dims5 per_channel{4, 1, 1, 1, 1};
  Case c{"layer", mode == Mode::kTrain ? "batchnorm-train" : "batchnorm-eval",
         {}, {}, {}, probes};
  c.params.set("input", randn(in, rng));
  Tensor<double> scale = randn(per_channel, rng, 0.5);
  for (auto& v : scale.data()) v += 1.0;
  c.params.set("bn.bn.scale", std::move(scale));
  c.params.set("bn.bn.shift", randn(per_channel, rng));
  c.params.set("bn.bn.running_mean", randn(per_channel, rng, 0.3));
  Tensor<double> var(per_channel);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& v : var.data()) v = u(rng);
  c.params.set("bn.bn.running_var", std::move(var));
  const Tensor<double> r = randn(in, rng);
  auto forward = [mode](const Bundle& b, BatchNormCache<double>* cache) {
    return batchnorm_forward(b.at("input"), b.at("bn.bn.scale"), b.at("bn.bn.shift"),
                             b.at("bn.bn.running_mean"), b.at("bn.bn.running_var"),
                             mode, cache);
  };
  c.loss = [forward, r](const Bundle& b) { return dot(forward(b, nullptr), r); };
  c.grad = [forward, r](const Bundle& b) {
    BatchNormCache<double> cache;
    forward(b, &cache);
    BatchNormGrads<double> g = batchnorm_backward(cache, b.at("bn.bn.scale"), r);
    Bundle out;
    out.set("input", std::move(g.grad_x));
    out.set("bn.bn.scale", std::move(g.grad_scale));
    out.set("bn.bn.shift", std::move(g.grad_shift));
    return out;
  };
  return c;
}

// Single-input layer without parameters.
template <typename Fwd, typename Bwd>
Case input_case(const std::string& name, const Dims5& in, const Dims5& out,
                Fwd forward, Bwd backward, std::size_t probes,
                std::mt19937_64& rng) {
  Case c{"layer", name, {}, {}, {}, probes};
  c.params.set("input", randn(in, rng));
  const Tensor<double> r = randn(out, rng);
  c.loss = [forward, r](const Bundle& b) { return dot(forward(b.at("input")), r); };
  c.grad = [backward, r](const Bundle& b) {
    Bundle g;
    g.set("input", backward(b.at("input"), r));
    return g;
  };
  return c;
}

Case linear_case(std::size_t probes, std::mt19937_64& rng) {
  Case c{"layer", "linear", {}, {}, {}, probes};
  c.params.set("input", randn({6, 5, 1, 1, 1}, rng));
  c.params.set("fc.weight", randn({3, 5, 1, 1, 1}, rng, 0.5));
  c.params.set("fc.bias", randn({3, 1, 1, 1, 1}, rng));
  const Tensor<double> r = randn({6, 3, 1, 1, 1}, rng);
  c.loss = [r](const Bundle& b) {
    return dot(linear_forward(b.at("input"), b.at("fc.weight"), &b.at("fc.bias")), r);
  };
  c.grad = [r](const Bundle& b) {
    LinearGrads<double> g = linear_backward(b.at("input"), b.at("fc.weight"), r, true);
    Bundle out;
    out.set("input", std::move(g.grad_x));
    out.set("fc.weight", std::move(g.grad_weight));
    out.set("fc.bias", std::move(g.grad_bias));
    return out;
  };
  return c;
}

// concat(a, b) then slice channels [1, 4).
Case concat_case(std::size_t probes, std::mt19937_64& rng) {
  Case c{"layer", "concat-slice", {}, {}, {}, probes};
  const Dims5 da{2, 3, 2, 3, 3};
  const Dims5 db{2, 2, 2, 3, 3};
  c.params.set("a", randn(da, rng));
  c.params.set("b", randn(db, rng));
  const Tensor<double> r = randn({2, 3, 2, 3, 3}, rng);
  c.loss = [r](const Bundle& b) {
    const Tensor<double> parts[] = {b.at("a"), b.at("b")};
    return dot(slice_channels(concat_channels<double>(parts), 1, 3), r);
  };
  c.grad = [r, da, db](const Bundle&) {
    Tensor<double> full({2, 5, 2, 3, 3});
    const std::size_t vol = 2 * 3 * 3;
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t k = 0; k < vol; ++k) {
          full[(n * 5 + ch + 1) * vol + k] = r[(n * 3 + ch) * vol + k];
        }
      }
    }
    Bundle g;
    g.set("a", slice_channels(full, 0, da.c));
    g.set("b", slice_channels(full, da.c, db.c));
    return g;
  };
  return c;
}

// Non-trivial running statistics and affine terms.
void randomize_norm_params(Bundle& params, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.2);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, t] : params) {
    const ParamRole role = param_role(name);
    for (auto& v : t.data()) {
      if (role == ParamRole::kRunningVar || role == ParamRole::kNormScale) v = u(rng);
      if (role == ParamRole::kRunningMean || role == ParamRole::kNormShift) v = normal(rng);
    }
  }
}

Case block_case(BlockVariant variant, std::size_t in_c, std::size_t out_c,
                std::size_t stride, std::size_t branches, Mode mode,
                std::size_t probes, std::mt19937_64& rng) {
  const BlockSpec spec = build_block(variant, in_c, out_c, stride, branches, "blk");
  std::string name = std::string("block-") + variant_letter(variant) + "-" +
                     (mode == Mode::kTrain ? "train" : "eval") + "-" +
                     (spec.shortcut == ShortcutKind::kProjection ? "projection"
                                                                 : "identity");
  if (branches != 4) name += "-b" + std::to_string(branches);
  Case c{"block", name, {}, {}, {}, probes};
  const Dims5 in{2, in_c, 4, 6, 6};
  c.params.set("input", randn(in, rng));
  init_block_params(spec, c.params, rng);
  randomize_norm_params(c.params, rng);
  Dims5 out = spec.reduce.output_dims(in);
  out.c = out_c;
  const Tensor<double> r = randn(out, rng);
  c.loss = [spec, mode, r](const Bundle& b) {
    return dot(block_forward(spec, b, b.at("input"), mode), r);
  };
  c.grad = [spec, mode, r](const Bundle& b) {
    BlockCache<double> cache;
    block_forward(spec, b, b.at("input"), mode, &cache);
    Bundle g;
    Tensor<double> gx = block_backward(spec, b, cache, r, g);
    g.set("input", std::move(gx));
    return g;
  };
  return c;
}

Case model_case(Mode mode, std::size_t batch, std::size_t probes,
                std::mt19937_64& rng) {
  ModelConfig config;
  config.clip_len = 8;
  config.height = 32;
  config.width = 32;
  config.width_multiplier = {1, 8};
  const ModelSpec spec = build_model(config);
  Case c{"model",
         std::string("micro-model-") + (mode == Mode::kTrain ? "train" : "eval"),
         init_params<double>(spec, rng()), {}, {}, probes};
  randomize_norm_params(c.params, rng);
  const Tensor<double> clip = randn(spec.input_dims(batch), rng);
  std::vector<double> r(batch);
  std::normal_distribution<double> normal;
  for (double& v : r) v = normal(rng);
  c.loss = [spec, clip, r, mode](const Bundle& b) {
    const auto s = model_forward(spec, b, clip, mode);
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) sum += s[i] * r[i];
    return sum;
  };
  c.grad = [spec, clip, r, mode](const Bundle& b) {
    return model_backward(spec, b, clip, std::span<const double>(r), mode);
  };
  return c;
}

std::vector<Case> build_cases(const GradSuiteOptions& o, std::mt19937_64& rng) {
  std::vector<Case> cases;
  const std::size_t lp = o.layer_probes;
  const std::size_t bp = o.block_probes;
  ConvLayerSpec general;
  general.in_channels = 3;
  general.out_channels = 4;
  general.kernel = {3, 3, 3};
  general.stride = {1, 2, 2};
  general.padding = {1, 1, 1};
  general.has_bias = true;
  cases.push_back(conv_case("conv-general", general, {2, 3, 4, 7, 7}, lp, rng));
  cases.push_back(conv_case("conv-temporal", temporal_conv(3, 4), {2, 3, 5, 4, 4}, lp, rng));
  cases.push_back(conv_case("conv-spatial", spatial_conv(3, 4), {2, 3, 3, 5, 5}, lp, rng));
  cases.push_back(conv_case("conv-pointwise-stride2", pointwise_conv(3, 4, 2),
                            {2, 3, 3, 6, 6}, lp, rng));
  cases.push_back(batchnorm_case(Mode::kTrain, lp, rng));
  cases.push_back(batchnorm_case(Mode::kEval, lp, rng));
  const Dims5 act{2, 3, 3, 4, 4};
  cases.push_back(input_case(
      "relu", act, act, [](const Tensor<double>& x) { return relu_forward(x); },
      [](const Tensor<double>& x, const Tensor<double>& g) { return relu_backward(x, g); },
      lp, rng));
  const PoolGeometry pool;
  const Dims5 pool_in{2, 3, 4, 7, 7};
  cases.push_back(input_case(
      "maxpool", pool_in, pool.output_dims(pool_in),
      [pool](const Tensor<double>& x) { return maxpool3d_forward(x, pool).output; },
      [pool](const Tensor<double>& x, const Tensor<double>& g) {
        return maxpool3d_backward(maxpool3d_forward(x, pool), g);
      },
      lp, rng));
  cases.push_back(input_case(
      "avgpool-spatial", act, {2, 3, 3, 1, 1},
      [](const Tensor<double>& x) { return avgpool_spatial_forward(x); },
      [](const Tensor<double>& x, const Tensor<double>& g) {
        return avgpool_spatial_backward(g, x.dims());
      },
      lp, rng));
  cases.push_back(input_case(
      "avgpool-temporal", {2, 3, 5, 1, 1}, {2, 3, 1, 1, 1},
      [](const Tensor<double>& x) { return avgpool_temporal_forward(x); },
      [](const Tensor<double>& x, const Tensor<double>& g) {
        return avgpool_temporal_backward(g, x.dims());
      },
      lp, rng));
  cases.push_back(linear_case(lp, rng));
  cases.push_back(concat_case(lp, rng));

  using V = BlockVariant;
  cases.push_back(block_case(V::kA, 8, 16, 1, 4, Mode::kTrain, bp, rng));
  cases.push_back(block_case(V::kB, 16, 16, 1, 4, Mode::kTrain, bp, rng));
  cases.push_back(block_case(V::kC, 8, 16, 2, 4, Mode::kTrain, bp, rng));
  cases.push_back(block_case(V::kA, 16, 16, 1, 4, Mode::kEval, bp, rng));
  cases.push_back(block_case(V::kB, 8, 16, 2, 4, Mode::kEval, bp, rng));
  cases.push_back(block_case(V::kC, 16, 16, 1, 4, Mode::kEval, bp, rng));
  cases.push_back(block_case(V::kB, 16, 16, 1, 3, Mode::kTrain, bp, rng));
  if (o.include_model) {
    cases.push_back(model_case(Mode::kEval, 2, o.model_probes, rng));
  }
  return cases;
}

}  // namespace

GradSuiteResult run_gradient_suite(const GradSuiteOptions& options) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  std::mt19937_64 rng(options.seed);
  GradSuiteResult result;
  for (Case& c : build_cases(options, rng)) {
    const auto t0 = Clock::now();
    GradFn grad = c.grad;
    if (options.inject_fault) {
      grad = [inner = c.grad](const Bundle& b) {
        Bundle g = inner(b);
        for (auto& [name, t] : g) {
          for (auto& v : t.data()) v *= 1.01;
        }
        return g;
      };
    }
    GradCheckOptions gco;
    gco.probe_count = c.probes;
    gco.epsilon = options.epsilon;
    gco.threshold = options.threshold;
    gco.seed = rng();
    GradSuiteCase out{c.group, c.name, grad_check(c.loss, grad, c.params, gco), 0.0};
    out.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    result.passed = result.passed && out.report.passed;
    if (out.report.max_rel_error >= result.max_rel_error) {
      result.max_rel_error = out.report.max_rel_error;
      result.worst = c.name + ": " + out.report.worst_param;
    }
    result.cases.push_back(std::move(out));
  }
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

std::string GradSuiteResult::to_text() const {
  std::ostringstream os;
  for (const auto& c : cases) {
    os << (c.report.passed ? "PASS " : "FAIL ") << c.group << " " << c.name
       << " probes=" << c.report.probes << " skipped=" << c.report.skipped
       << " max_rel_err=" << format_significant(c.report.max_rel_error, 3);
    if (!c.report.passed) os << " worst=" << c.report.worst_param;
    os << "\n";
  }
  os << (passed ? "PASS" : "FAIL") << " gradient suite: " << cases.size()
     << " cases, max_rel_err=" << format_significant(max_rel_error, 3)
     << " worst=" << worst
     << "\n";
  return os.str();
}

}  // namespace dmsn
