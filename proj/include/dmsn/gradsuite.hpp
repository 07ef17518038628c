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

// Finite-difference gradient suites over layers, blocks and a micro model.

#ifndef DMSN_GRADSUITE_HPP_
#define DMSN_GRADSUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "dmsn/gradcheck.hpp"

namespace dmsn {

struct GradSuiteOptions {
  std::size_t layer_probes = 48;
  std::size_t block_probes = 96;
  std::size_t model_probes = 96;
  double epsilon = 1e-6;
  double threshold = 1e-4;
  std::uint64_t seed = 0;
  bool include_model = true;
  // Test hook: perturbs every analytic gradient by 1% so every case fails.
  bool inject_fault = false;
};

struct GradSuiteCase {
  std::string group;  // layer, block or model
  std::string name;
  GradCheckReport report;
  double seconds = 0.0;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;
  bool passed = true;
  double max_rel_error = 0.0;
  std::string worst;  // "<case>: <parameter>"
  double seconds = 0.0;

  std::string to_text() const;
};

// Layers: every conv path, batch norm (train, eval), relu, max pool, both
// average pools, linear, channel concat/slice. Blocks: A, B, C in train and
// eval mode, with identity and projection shortcuts and a three-branch
// block. Model: width 1/8, clip_len 8, 32x32 input, eval mode. Inputs are
// probed alongside parameters. Runs in double precision.
GradSuiteResult run_gradient_suite(const GradSuiteOptions& options = {});

}  // namespace dmsn

#endif  // DMSN_GRADSUITE_HPP_
