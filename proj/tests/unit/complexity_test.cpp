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

#include <gtest/gtest.h>

#include <sstream>

#include "dmsn/complexity.hpp"
#include "dmsn/kernels.hpp"
#include "support/oracles.hpp"

namespace dmsn {
namespace {

// Independent tally from the channel rules alone: conv weights plus a
// scale/shift pair per normalized unit.
std::uint64_t oracle_block_params(char variant, std::uint64_t in, std::uint64_t out,
                                  bool projection, std::uint64_t nb) {
  const std::uint64_t mid = out / 2, half = mid / 2;
  auto unit = [](std::uint64_t w, std::uint64_t c) { return w + 2 * c; };
  std::uint64_t p = unit(in * mid, mid);
  for (std::uint64_t i = 1; i <= nb; ++i) {
    const bool spatial_main = variant == 'C' || (variant == 'B' && i % 2 == 1);
    const std::uint64_t k = spatial_main ? 9 : 3;
    p += unit((i == 1 ? mid : half) * half * k, half);
  }
  for (std::uint64_t j = 1; j <= nb; ++j) {
    const std::uint64_t width = mid / nb + (j <= mid % nb ? 1 : 0);
    const bool spatial_branch = variant == 'A' || (variant == 'B' && j % 2 == 0);
    p += unit(half * width * (spatial_branch ? 9 : 3), width);
  }
  p += unit(mid * out, out);
  if (projection) p += unit(in * out, out);
  return p;
}

std::uint64_t oracle_model_params(const std::string& sequence, std::uint64_t nb) {
  const std::uint64_t stage_blocks[] = {3, 4, 6, 4};
  std::uint64_t p = 343 * 3 * 64 + 2 * 64;
  std::uint64_t in = 64, out = 128;
  for (std::uint64_t s = 0; s < 4; ++s, out *= 2) {
    for (std::uint64_t b = 0; b < stage_blocks[s]; ++b) {
      const char v = sequence.size() == 1 ? sequence[0] : "ABC"[b % 3];
      p += oracle_block_params(v, in, out, b == 0, nb);
      in = out;
    }
  }
  return p + in + 1;
}

ModelSpec model_of(ModelKind kind, std::size_t clip = 16, std::size_t nb = 4) {
  ModelConfig c;
  c.kind = kind;
  c.clip_len = clip;
  c.branch_count = nb;
  return build_model(c);
}

TEST(ParamCountTest, SingleConvExamples) {
  EXPECT_EQ(pointwise_conv(64, 128).param_count(), 8192u);
  const ModelSpec spec = model_of(ModelKind::kDmsn);
  EXPECT_EQ(spec.conv1.param_count(), 65856u);
  const CostReport r = count_params(spec);
  ASSERT_FALSE(r.rows.empty());
  EXPECT_EQ(r.rows[0].layer, "conv1");
  EXPECT_EQ(r.rows[0].params, 65856u);
  EXPECT_EQ(r.rows[1].layer, "conv1.bn");
  EXPECT_EQ(r.rows[1].params, 128u);
}

TEST(ParamCountTest, MatchesIndependentTally) {
  EXPECT_EQ(count_params(model_of(ModelKind::kDmsn)).total_params, oracle_model_params("ABC", 4));
  EXPECT_EQ(count_params(model_of(ModelKind::kDmsnA)).total_params, oracle_model_params("A", 4));
  EXPECT_EQ(count_params(model_of(ModelKind::kDmsnB)).total_params, oracle_model_params("B", 4));
  EXPECT_EQ(count_params(model_of(ModelKind::kDmsnC)).total_params, oracle_model_params("C", 4));
  for (std::size_t nb : {2u, 3u}) {
    EXPECT_EQ(count_params(model_of(ModelKind::kDmsn, 16, nb)).total_params,
              oracle_model_params("ABC", nb));
  }
  const BlockSpec block = build_block(BlockVariant::kB, 64, 128, 2, 3);
  EXPECT_EQ(count_params(block).total_params, oracle_block_params('B', 64, 128, true, 3));
}

TEST(ParamCountTest, PublishedBudgetsAndOrdering) {
  const double a = count_params(model_of(ModelKind::kDmsnA)).params_millions();
  const double b = count_params(model_of(ModelKind::kDmsnB)).params_millions();
  const double c = count_params(model_of(ModelKind::kDmsnC)).params_millions();
  const double d = count_params(model_of(ModelKind::kDmsn)).params_millions();
  EXPECT_NEAR(a, 19.0, 19.0 * 0.08);
  EXPECT_NEAR(b, 23.6, 23.6 * 0.08);
  EXPECT_NEAR(c, 25.9, 25.9 * 0.08);
  EXPECT_NEAR(d, 22.1, 22.1 * 0.08);
  EXPECT_LT(a, d);
  EXPECT_LT(d, b);
  EXPECT_LT(b, c);
}

TEST(ParamCountTest, RunningStatsAreSeparateAndGeometryFree) {
  const ModelSpec spec = model_of(ModelKind::kDmsn);
  const CostReport r = count_params(spec);
  std::uint64_t norm = 0, sum = 0;
  for (const auto& row : r.rows) {
    if (row.kind == "norm") norm += row.params;
    sum += row.params;
  }
  EXPECT_EQ(sum, r.total_params);
  EXPECT_EQ(r.running_stat_params, norm);
  EXPECT_FALSE(r.has_flops);
  EXPECT_EQ(count_flops(model_of(ModelKind::kDmsn, 32), model_of(ModelKind::kDmsn, 32).input_dims())
                .total_params,
            r.total_params);
}

TEST(FlopCountTest, PointwiseExample) {
  const BlockSpec block = build_block(BlockVariant::kA, 64, 128, 1);
  const CostReport r = count_flops(block, {1, 64, 8, 28, 28});
  bool found = false;
  for (const auto& row : r.rows) {
    if (row.layer == "block.fusion") {
      EXPECT_EQ(row.flops, 51380224u);
      EXPECT_EQ(row.output, (Dims5{1, 128, 8, 28, 28}));
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(FlopCountTest, TotalsEqualSumOfRows) {
  const ModelSpec spec = model_of(ModelKind::kDmsnB);
  const CostReport r = count_flops(spec, spec.input_dims());
  std::uint64_t flops = 0, aux = 0;
  for (const auto& row : r.rows) {
    flops += row.flops;
    aux += row.aux_flops;
    if (row.kind == "norm" || row.kind == "pool") {
      EXPECT_EQ(row.flops, 0u) << row.layer;
    }
  }
  EXPECT_EQ(flops, r.total_flops);
  EXPECT_EQ(aux, r.aux_flops);
  EXPECT_TRUE(r.has_flops);
}

TEST(FlopCountTest, ExactlyLinearInBatchAndClipLength) {
  const ModelSpec s16 = model_of(ModelKind::kDmsn, 16);
  const std::uint64_t base = count_flops(s16, s16.input_dims()).total_flops;
  EXPECT_EQ(count_flops(s16, s16.input_dims(3)).total_flops, 3 * base);
  for (std::size_t k : {1u, 2u, 3u, 4u}) {
    const ModelSpec s = model_of(ModelKind::kDmsn, 8 * k);
    const CostReport r = count_flops(s, s.input_dims());
    EXPECT_EQ(2 * r.total_flops, k * base) << k;
  }
  const CostReport mac2 = count_flops(s16, s16.input_dims(), MacConvention::kMac2);
  EXPECT_EQ(mac2.total_flops, 2 * base);
  EXPECT_EQ(mac2.convention, MacConvention::kMac2);
}

TEST(FlopCountTest, PublishedTotalsWithinTolerance) {
  const double published[] = {5.64, 11.29, 16.93, 22.57};
  for (std::size_t k = 1; k <= 4; ++k) {
    const ModelSpec s = model_of(ModelKind::kDmsn, 8 * k);
    const double g = count_flops(s, s.input_dims()).flops_giga();
    EXPECT_NEAR(g, published[k - 1], published[k - 1] * 0.3) << 8 * k;
  }
}

TEST(FlopCountTest, AchievableVariantOrderings) {
  auto flops = [](ModelKind k) {
    const ModelSpec s = model_of(k);
    return count_flops(s, s.input_dims()).total_flops;
  };
  const auto a = flops(ModelKind::kDmsnA), b = flops(ModelKind::kDmsnB),
             c = flops(ModelKind::kDmsnC), d = flops(ModelKind::kDmsn);
  EXPECT_LT(a, b);
  EXPECT_LT(a, d);
  EXPECT_LT(b, c);
  EXPECT_LT(d, c);
}

TEST(FlopCountTest, BranchSweepIncreases) {
  std::uint64_t prev_p = 0, prev_f = 0;
  const double params[] = {18.0, 20.1, 22.1};
  const double flops[] = {9.64, 10.48, 11.29};
  for (std::size_t nb = 2; nb <= 4; ++nb) {
    const ModelSpec s = model_of(ModelKind::kDmsn, 16, nb);
    const CostReport r = count_flops(s, s.input_dims());
    EXPECT_GT(r.total_params, prev_p);
    EXPECT_GT(r.total_flops, prev_f);
    EXPECT_NEAR(r.params_millions(), params[nb - 2], params[nb - 2] * 0.08);
    EXPECT_NEAR(r.flops_giga(), flops[nb - 2], flops[nb - 2] * 0.3);
    prev_p = r.total_params;
    prev_f = r.total_flops;
  }
}

TEST(FlopCountTest, MatchesInstrumentedForwardOnMicroModel) {
  ModelConfig c;
  c.clip_len = 8;
  c.height = 32;
  c.width = 32;
  c.width_multiplier = {1, 8};
  for (ModelKind kind : {ModelKind::kDmsn, ModelKind::kDmsnC}) {
    c.kind = kind;
    const ModelSpec spec = build_model(c);
    const auto params = init_params<float>(spec, 1);
    std::mt19937_64 rng(2);
    const Tensor<float> x = testing::random_tensor<float>(spec.input_dims(2), rng);
    ScopedMacCounter counter;
    model_forward(spec, params, x);
    EXPECT_EQ(counter.count().total(), count_flops(spec, spec.input_dims(2)).total_flops);
  }
}

TEST(ConventionTest, ParseAndName) {
  EXPECT_EQ(parse_convention("MAC=2"), MacConvention::kMac2);
  EXPECT_EQ(parse_convention("MAC=1"), MacConvention::kMac1);
  EXPECT_EQ(convention_name(MacConvention::kMac1), "MAC=1");
  EXPECT_THROW(parse_convention("MAC=3"), std::invalid_argument);
  EXPECT_EQ(parse_table_format("csv"), TableFormat::kCsv);
  EXPECT_THROW(parse_table_format("xml"), std::invalid_argument);
}

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF records.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows(1);
  std::string field;
  bool quoted = false, started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
      started = true;
    } else if (ch == ',') {
      rows.back().push_back(field);
      field.clear();
      started = false;
    } else if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      rows.back().push_back(field);
      field.clear();
      started = false;
      rows.emplace_back();
      ++i;
    } else {
      field += ch;
      started = true;
    }
  }
  if (!field.empty() || started) rows.back().push_back(field);
  if (rows.back().empty()) rows.pop_back();
  return rows;
}

TEST(CostTableTest, CsvRoundTripsAndQuotes) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("line\nbreak"), "\"line\nbreak\"");

  std::vector<CostReport> reports;
  for (ModelKind k : {ModelKind::kDmsnA, ModelKind::kDmsnB, ModelKind::kDmsnC, ModelKind::kDmsn}) {
    const ModelSpec s = model_of(k);
    reports.push_back(count_flops(s, s.input_dims()));
  }
  reports[1].model = "odd, \"name\"";
  const auto rows = parse_csv(emit_cost_table(reports, TableFormat::kCsv));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"model", "params_M", "flops_G", "convention",
                                               "clip_len"}));
  EXPECT_EQ(rows[1][0], "dmsn-a");
  EXPECT_EQ(rows[2][0], "odd, \"name\"");
  EXPECT_EQ(rows[4][0], "dmsn");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 5u);
    EXPECT_NEAR(std::stod(rows[i][1]), reports[i - 1].params_millions(), 1e-6);
    EXPECT_NEAR(std::stod(rows[i][2]), reports[i - 1].flops_giga(), 1e-6);
    EXPECT_EQ(rows[i][3], "MAC=1");
    EXPECT_EQ(rows[i][4], "16");
  }
}

TEST(CostTableTest, TextUsesPublishedStyle) {
  const ModelSpec s = model_of(ModelKind::kDmsnA);
  const CostReport r = count_flops(s, s.input_dims());
  const std::string text = emit_cost_table(std::span<const CostReport>(&r, 1), TableFormat::kText);
  EXPECT_NE(text.find("19.1M"), std::string::npos) << text;
  EXPECT_NE(text.find("9.15G"), std::string::npos) << text;
  std::istringstream lines(text);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  EXPECT_EQ(header.size(), row.size());
}

}  // namespace
}  // namespace dmsn
