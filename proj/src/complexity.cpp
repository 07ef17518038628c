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

#include "dmsn/complexity.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "dmsn/format.hpp"

namespace dmsn {

std::string convention_name(MacConvention c) {
  return c == MacConvention::kMac1 ? "MAC=1" : "MAC=2";
}

MacConvention parse_convention(std::string_view text) {
  if (text == "MAC=1" || text == "mac1" || text == "1") return MacConvention::kMac1;
  if (text == "MAC=2" || text == "mac2" || text == "2") return MacConvention::kMac2;
  throw std::invalid_argument("unknown FLOP convention '" + std::string(text) +
                              "'; use MAC=1 or MAC=2");
}

TableFormat parse_table_format(std::string_view text) {
  if (text == "text") return TableFormat::kText;
  if (text == "csv") return TableFormat::kCsv;
  throw std::invalid_argument("unknown format '" + std::string(text) +
                              "'; use text or csv");
}

namespace {

class Accumulator {
 public:
  explicit Accumulator(CostReport& report) : report_(report) {}

  // Appends conv + norm rows; returns the conv output dims (zero dims when
  // `in` is null).
  Dims5 conv_unit(const std::string& layer, const ConvLayerSpec& conv,
                  const Dims5* in) {
    CostRow row{layer, "conv", {0, 0, 0, 0, 0}, conv.param_count(), 0, 0};
    Dims5 out{0, 0, 0, 0, 0};
    if (in != nullptr) {
      out = conv.output_dims(*in);
      row.output = out;
      row.flops = conv.weight_count() * out.n * out.t * out.h * out.w;
    }
    add(std::move(row));
    CostRow norm{layer + ".bn", "norm", out, 2 * conv.out_channels, 0, 0};
    if (in != nullptr) norm.aux_flops = out.numel();
    add(std::move(norm));
    report_.running_stat_params += 2 * conv.out_channels;
    return out;
  }

  void add(CostRow row) {
    report_.total_params += row.params;
    report_.total_flops += row.flops;
    report_.aux_flops += row.aux_flops;
    report_.rows.push_back(std::move(row));
  }

 private:
  CostReport& report_;
};

Dims5 walk_block(const BlockSpec& b, const Dims5* x, Accumulator& acc) {
  const bool geo = x != nullptr;
  const Dims5 r = acc.conv_unit(b.layer_id("reduce"), b.reduce, x);
  std::vector<Dims5> taps;
  Dims5 prev = r;
  for (std::size_t i = 0; i < b.main_stage.size(); ++i) {
    prev = acc.conv_unit(b.layer_id("main" + std::to_string(i + 1)),
                         b.main_stage[i], geo ? &prev : nullptr);
    taps.push_back(prev);
  }
  for (std::size_t j = 0; j < b.branches.size(); ++j) {
    const BranchSpec& br = b.branches[j];
    acc.conv_unit(b.layer_id("branch" + std::to_string(j + 1)), br.conv,
                  geo ? &taps[br.tap - 1] : nullptr);
  }
  Dims5 cat{r.n, b.mid_channels, r.t, r.h, r.w};
  const Dims5 out = acc.conv_unit(b.layer_id("fusion"), b.fusion,
                                  geo ? &cat : nullptr);
  if (b.shortcut == ShortcutKind::kProjection) {
    acc.conv_unit(b.layer_id("shortcut"), b.projection, x);
  }
  return out;
}

void walk_model(const ModelSpec& spec, const Dims5* input, Accumulator& acc) {
  const bool geo = input != nullptr;
  Dims5 x = acc.conv_unit("conv1", spec.conv1, input);
  CostRow pool{"pool", "pool", {0, 0, 0, 0, 0}, 0, 0, 0};
  if (geo) {
    x = spec.pool.output_dims(x);
    pool.output = x;
    pool.aux_flops = x.numel() * spec.pool.kernel.volume();
  }
  acc.add(std::move(pool));
  for (const BlockSpec* b : spec.blocks()) {
    x = walk_block(*b, geo ? &x : nullptr, acc);
  }
  CostRow head{"head.fc", "linear", {0, 0, 0, 0, 0}, spec.head_in + 1, 0, 0};
  if (geo) {
    // Spatial mean, one linear application per remaining frame, temporal mean.
    head.output = {x.n, 1, x.t, 1, 1};
    head.flops = spec.head_in * 1 * x.n * x.t;
    head.aux_flops = x.numel() + x.n * x.t;
  }
  acc.add(std::move(head));
}

void apply_convention(CostReport& report, MacConvention convention) {
  report.convention = convention;
  report.has_flops = true;
  if (convention == MacConvention::kMac2) {
    report.total_flops = 0;
    for (auto& row : report.rows) {
      row.flops *= 2;
      report.total_flops += row.flops;
    }
  }
}

}  // namespace

CostReport count_params(const ModelSpec& spec) {
  CostReport report;
  report.model = model_kind_name(spec.config.kind);
  Accumulator acc(report);
  walk_model(spec, nullptr, acc);
  return report;
}

CostReport count_params(const BlockSpec& spec) {
  CostReport report;
  report.model = spec.id;
  Accumulator acc(report);
  walk_block(spec, nullptr, acc);
  return report;
}

CostReport count_flops(const ModelSpec& spec, const Dims5& input,
                       MacConvention convention) {
  if (input.c != 3) {
    throw std::invalid_argument("model input must have 3 channels, got " +
                                input.str());
  }
  CostReport report;
  report.model = model_kind_name(spec.config.kind);
  report.input = input;
  report.clip_len = input.t;
  Accumulator acc(report);
  walk_model(spec, &input, acc);
  apply_convention(report, convention);
  return report;
}

CostReport count_flops(const BlockSpec& spec, const Dims5& input,
                       MacConvention convention) {
  if (input.c != spec.in_channels) {
    throw std::invalid_argument("block " + spec.id + " expects " +
                                std::to_string(spec.in_channels) +
                                " input channels, got " + input.str());
  }
  CostReport report;
  report.model = spec.id;
  report.input = input;
  report.clip_len = input.t;
  Accumulator acc(report);
  walk_block(spec, &input, acc);
  apply_convention(report, convention);
  return report;
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) {
    return std::string(text);
  }
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string emit_cost_table(std::span<const CostReport> reports,
                            TableFormat format) {
  if (reports.empty()) throw std::invalid_argument("no cost reports to emit");
  std::ostringstream os;
  if (format == TableFormat::kCsv) {
    os << "model,params_M,flops_G,convention,clip_len\r\n";
    for (const auto& r : reports) {
      os << csv_field(r.model) << "," << format_fixed(r.params_millions(), 6)
         << "," << (r.has_flops ? format_fixed(r.flops_giga(), 6) : "") << ","
         << (r.has_flops ? convention_name(r.convention) : "") << ","
         << (r.has_flops ? std::to_string(r.clip_len) : "") << "\r\n";
    }
    return os.str();
  }
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"model", "params", "FLOPs", "convention", "clip_len"});
  for (const auto& r : reports) {
    cells.push_back({r.model, format_fixed(r.params_millions(), 1) + "M",
                     r.has_flops ? format_fixed(r.flops_giga(), 2) + "G" : "-",
                     r.has_flops ? convention_name(r.convention) : "-",
                     r.has_flops ? std::to_string(r.clip_len) : "-"});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      width[i] = std::max(width[i], row[i].size());
    }
  }
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::string cell = row[i];
      // Name column left-aligned, numbers right-aligned.
      const std::size_t pad = width[i] - cell.size();
      if (i == 0) {
        cell += std::string(pad, ' ');
      } else {
        cell = std::string(pad, ' ') + cell;
      }
      if (i > 0) line += "  ";
      line += cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << "\n";
  }
  return os.str();
}

}  // namespace dmsn
