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

#include "dmsn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace dmsn {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double central_difference(const LossFn& loss, ParamBundle<double>& params,
                          const std::string& name, std::size_t idx, double eps) {
  const double saved = params.at(name)[idx];
  params.at(name)[idx] = saved + eps;
  const double up = loss(params);
  params.at(name)[idx] = saved - eps;
  const double down = loss(params);
  params.at(name)[idx] = saved;
  return (up - down) / (2.0 * eps);
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const GradFn& gradient,
                           ParamBundle<double> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.threshold = options.threshold;
  const ParamBundle<double> analytic = gradient(params);

  std::vector<std::string> names;
  for (const auto& [name, t] : params) {
    if (is_trainable(param_role(name)) && !t.empty()) names.push_back(name);
  }
  std::mt19937_64 rng(options.seed);
  std::shuffle(names.begin(), names.end(), rng);

  // Round-robin quota per tensor, capped by its size.
  std::map<std::string, std::size_t> quota;
  std::size_t assigned = 0;
  bool progress = true;
  while (assigned < options.probe_count && progress) {
    progress = false;
    for (const auto& name : names) {
      if (assigned == options.probe_count) break;
      if (quota[name] < params.at(name).numel()) {
        ++quota[name];
        ++assigned;
        progress = true;
      }
    }
  }

  for (const auto& name : names) {
    const std::size_t want = quota[name];
    if (want == 0) continue;
    std::vector<std::size_t> pool(params.at(name).numel());
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);

    ParamCheck check;
    check.name = name;
    const Tensor<double>* grad = analytic.find(name);
    // Skipped probes are replaced at most `want` times.
    std::size_t next = 0;
    while (check.probes < want && next < pool.size() &&
           check.skipped < want) {
      const std::size_t idx = pool[next++];
      const double numeric =
          central_difference(loss, params, name, idx, options.epsilon);
      if (options.self_consistency) {
        const double half =
            central_difference(loss, params, name, idx, 0.5 * options.epsilon);
        if (relative_error(numeric, half) > options.threshold) {
          ++check.skipped;
          continue;
        }
      }
      const double a = grad != nullptr ? (*grad)[idx] : 0.0;
      check.max_rel_error = std::max(check.max_rel_error, relative_error(a, numeric));
      check.max_abs_error = std::max(check.max_abs_error, std::abs(a - numeric));
      ++check.probes;
    }
    check.passed = check.max_rel_error < options.threshold;
    if (check.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = check.max_rel_error;
      report.worst_param = name;
    }
    report.max_abs_error = std::max(report.max_abs_error, check.max_abs_error);
    report.probes += check.probes;
    report.skipped += check.skipped;
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  const std::size_t attempts = report.probes + report.skipped;
  if (attempts > 0 &&
      static_cast<double>(report.skipped) >
          options.max_skip_fraction * static_cast<double>(attempts)) {
    report.passed = false;
  }
  if (report.probes == 0) report.passed = false;
  std::sort(report.params.begin(), report.params.end(),
            [](const ParamCheck& a, const ParamCheck& b) { return a.name < b.name; });
  return report;
}

}  // namespace dmsn
