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

// Execution-free parameter and FLOP accounting.

#ifndef DMSN_COMPLEXITY_HPP_
#define DMSN_COMPLEXITY_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmsn/block.hpp"
#include "dmsn/model.hpp"

namespace dmsn {

// MAC=1 counts one multiply-accumulate as one FLOP, MAC=2 as two.
enum class MacConvention { kMac1, kMac2 };

std::string convention_name(MacConvention c);  // "MAC=1" / "MAC=2"
MacConvention parse_convention(std::string_view text);

struct CostRow {
  std::string layer;
  std::string kind;  // conv, norm, linear, pool
  Dims5 output;      // zero dims in parameter-only reports
  std::uint64_t params = 0;
  std::uint64_t flops = 0;      // headline: conv and linear only
  std::uint64_t aux_flops = 0;  // normalization, pooling
};

struct CostReport {
  std::string model;
  std::vector<CostRow> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t aux_flops = 0;
  // Normalization running mean/var; excluded from total_params.
  std::uint64_t running_stat_params = 0;
  MacConvention convention = MacConvention::kMac1;
  bool has_flops = false;
  Dims5 input;
  std::size_t clip_len = 0;

  double params_millions() const { return total_params / 1e6; }
  double flops_giga() const { return total_flops / 1e9; }
};

CostReport count_params(const ModelSpec& spec);
CostReport count_params(const BlockSpec& spec);

// Rows carry output extents for `input`; FLOPs per conv are
// weight_count * (n * t_out * h_out * w_out), linear in * out per
// application. Parameter columns are filled as in count_params.
CostReport count_flops(const ModelSpec& spec, const Dims5& input,
                       MacConvention convention = MacConvention::kMac1);
CostReport count_flops(const BlockSpec& spec, const Dims5& input,
                       MacConvention convention = MacConvention::kMac1);

enum class TableFormat { kText, kCsv };
TableFormat parse_table_format(std::string_view text);

// Text: aligned columns, params as "19.0M", FLOPs as "11.29G".
// CSV columns: model,params_M,flops_G,convention,clip_len.
std::string emit_cost_table(std::span<const CostReport> reports,
                            TableFormat format);

// RFC 4180 field quoting.
std::string csv_field(std::string_view text);

}  // namespace dmsn

#endif  // DMSN_COMPLEXITY_HPP_
