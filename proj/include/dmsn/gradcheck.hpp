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

#ifndef DMSN_GRADCHECK_HPP_
#define DMSN_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmsn/params.hpp"

namespace dmsn {

inline constexpr double kRelErrorFloor = 1e-12;

// |a - f| / max(|a|, |f|, kRelErrorFloor)
double relative_error(double analytic, double numeric);

struct GradCheckOptions {
  // Total number of probed coordinates, spread round-robin over the
  // trainable tensors in a seeded random order.
  std::size_t probe_count = 64;
  double epsilon = 1e-6;
  double threshold = 1e-4;
  std::uint64_t seed = 0;
  // Also evaluates the central difference at epsilon/2. When the two
  // estimates differ by more than `threshold` (relative) the coordinate sits
  // on a kink or below the rounding floor; it is skipped and replaced by
  // another coordinate of the same tensor.
  bool self_consistency = true;
  // Check fails when more than this fraction of probes had to be skipped.
  double max_skip_fraction = 0.25;
};

struct ParamCheck {
  std::string name;
  std::size_t probes = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_param;
  std::size_t probes = 0;
  std::size_t skipped = 0;
  double threshold = 0.0;
  bool passed = true;
};

using LossFn = std::function<double(const ParamBundle<double>&)>;
using GradFn = std::function<ParamBundle<double>(const ParamBundle<double>&)>;

// Compares `gradient(params)` against central differences
// (loss(p + eps) - loss(p - eps)) / 2eps on probed coordinates. Running
// statistics are never probed.
GradCheckReport grad_check(const LossFn& loss, const GradFn& gradient,
                           ParamBundle<double> params,
                           const GradCheckOptions& options = {});

}  // namespace dmsn

#endif  // DMSN_GRADCHECK_HPP_
