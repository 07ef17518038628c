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

#include <filesystem>
#include <fstream>
#include <random>

#include "dmsn/model.hpp"
#include "support/oracles.hpp"

namespace dmsn {
namespace {

using testing::random_tensor;

ModelConfig micro_config(ModelKind kind = ModelKind::kDmsn) {
  ModelConfig c;
  c.kind = kind;
  c.clip_len = 8;
  c.height = 32;
  c.width = 32;
  c.width_multiplier = {1, 8};
  c.seed = 5;
  return c;
}

std::filesystem::path scratch_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dmsn_model_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TEST(ModelConfigTest, NamesAndRatios) {
  EXPECT_EQ(parse_model_kind("dmsn-b"), ModelKind::kDmsnB);
  EXPECT_EQ(model_kind_name(ModelKind::kDmsnC), "dmsn-c");
  try {
    parse_model_kind("resnet");
    FAIL() << "expected unknown model";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("dmsn-a"), std::string::npos);
  }
  EXPECT_EQ(Ratio::parse("1/8"), (Ratio{1, 8}));
  EXPECT_EQ(Ratio::parse("1"), (Ratio{1, 1}));
  EXPECT_THROW(Ratio::parse("0.125"), std::invalid_argument);
  EXPECT_THROW(Ratio::parse("3/2"), std::invalid_argument);
  EXPECT_THROW(Ratio::parse("0/4"), std::invalid_argument);
}

TEST(ModelConfigTest, TextRoundTrip) {
  ModelConfig c = micro_config(ModelKind::kDmsnA);
  c.branch_count = 3;
  c.seed = 1234567890123ULL;
  EXPECT_EQ(ModelConfig::from_text(c.to_text()), c);
  EXPECT_EQ(ModelConfig::from_text("# comment\n\nmodel = dmsn-c\n").kind, ModelKind::kDmsnC);
}

TEST(ModelConfigTest, RejectsBadText) {
  try {
    ModelConfig::from_text("model=dmsn\nlayers=3\n");
    FAIL() << "expected unknown key";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("layers"), std::string::npos);
  }
  EXPECT_THROW(ModelConfig::from_text("clip_len\n"), std::invalid_argument);
  EXPECT_THROW(ModelConfig::from_text("clip_len=7\n"), std::invalid_argument);
  EXPECT_THROW(ModelConfig::from_text("branches=5\n"), std::invalid_argument);
  EXPECT_THROW(ModelConfig::from_text("height=-1\n"), std::invalid_argument);
}

TEST(ModelSpecTest, SeventeenBlocksInStageOrder) {
  const ModelSpec spec = build_model(ModelConfig{});
  EXPECT_EQ(spec.block_count(), 17u);
  ASSERT_EQ(spec.stages.size(), 4u);
  const char* sequences[] = {"ABC", "ABCA", "ABCABC", "ABCA"};
  const std::size_t widths[] = {128, 256, 512, 1024};
  for (std::size_t s = 0; s < 4; ++s) {
    const StageSpec& stage = spec.stages[s];
    EXPECT_EQ(stage.name, "res" + std::to_string(s + 2));
    EXPECT_EQ(stage.out_channels, widths[s]);
    std::string letters;
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      letters += variant_letter(stage.blocks[b].variant);
      EXPECT_EQ(stage.blocks[b].spatial_stride, (s > 0 && b == 0) ? 2u : 1u);
      EXPECT_EQ(stage.blocks[b].id, stage.name + "." + std::to_string(b));
    }
    EXPECT_EQ(letters, sequences[s]);
  }
  EXPECT_EQ(spec.head_in, 1024u);
  EXPECT_EQ(spec.conv1.kernel, (Extent3{7, 7, 7}));
  EXPECT_EQ(spec.conv1.stride, (Extent3{1, 2, 2}));
  EXPECT_EQ(spec.conv1.out_channels, 64u);
}

TEST(ModelSpecTest, SingleVariantModels) {
  for (auto [kind, letter] : {std::pair{ModelKind::kDmsnA, 'A'}, std::pair{ModelKind::kDmsnB, 'B'},
                              std::pair{ModelKind::kDmsnC, 'C'}}) {
    ModelConfig c;
    c.kind = kind;
    for (const BlockSpec* b : build_model(c).blocks()) EXPECT_EQ(variant_letter(b->variant), letter);
  }
}

TEST(ModelSpecTest, ActivationExtentsMatchArchitectureTable) {
  const ModelSpec spec = build_model(ModelConfig{});
  const auto rows = activation_extents(spec, spec.input_dims());
  auto find = [&](const std::string& name) {
    for (const auto& r : rows) {
      if (r.layer == name) return r.dims;
    }
    ADD_FAILURE() << "no row " << name;
    return Dims5{};
  };
  EXPECT_EQ(find("input"), (Dims5{1, 3, 16, 112, 112}));
  EXPECT_EQ(find("conv1"), (Dims5{1, 64, 16, 56, 56}));
  EXPECT_EQ(find("pool"), (Dims5{1, 64, 8, 28, 28}));
  EXPECT_EQ(find("res2"), (Dims5{1, 128, 8, 28, 28}));
  EXPECT_EQ(find("res3"), (Dims5{1, 256, 8, 14, 14}));
  EXPECT_EQ(find("res4"), (Dims5{1, 512, 8, 7, 7}));
  EXPECT_EQ(find("res5"), (Dims5{1, 1024, 8, 4, 4}));
  EXPECT_EQ(find("head"), (Dims5{1, 1, 1, 1, 1}));
}

TEST(ModelSpecTest, TimeIsHalvedOnlyByThePool) {
  ModelConfig c;
  c.clip_len = 32;
  const ModelSpec spec = build_model(c);
  const auto rows = activation_extents(spec, spec.input_dims(2));
  EXPECT_EQ(rows.back().dims.n, 2u);
  for (const auto& r : rows) {
    if (r.layer.rfind("res", 0) == 0) {
      EXPECT_EQ(r.dims.t, 16u) << r.layer;
    }
  }
}

TEST(ModelSpecTest, WidthMultiplierScalesEveryStage) {
  const ModelSpec spec = build_model(micro_config());
  EXPECT_EQ(spec.conv1.out_channels, 8u);
  EXPECT_EQ(spec.stages.back().out_channels, 128u);
  EXPECT_EQ(spec.head_in, 128u);
  ModelConfig bad;
  bad.width_multiplier = {1, 3};
  EXPECT_THROW(build_model(bad), std::invalid_argument);
}

TEST(ModelSpecTest, DescribeIsDeterministic) {
  const ModelSpec spec = build_model(ModelConfig{});
  const std::string text = describe_model(spec);
  EXPECT_EQ(text, describe_model(build_model(ModelConfig{})));
  EXPECT_NE(text.find("res5.3"), std::string::npos);
  EXPECT_NE(text.find("8x4x4"), std::string::npos);
  EXPECT_EQ(text.find(" \n"), std::string::npos);
  EXPECT_GT(describe_model(spec, true).size(), text.size());
}

TEST(ModelParamsTest, InitIsSeededAndComplete) {
  const ModelSpec spec = build_model(micro_config());
  const auto a = init_params<float>(spec, 3);
  EXPECT_EQ(a, init_params<float>(spec, 3));
  EXPECT_NE(a, init_params<float>(spec, 4));
  std::size_t units = 0;
  for (const auto& [layer, conv] : model_conv_layers(spec)) {
    EXPECT_TRUE(a.contains(layer + ".weight")) << layer;
    EXPECT_TRUE(a.contains(layer + ".bn.running_var")) << layer;
    ++units;
  }
  std::size_t per_block = 0;
  for (const BlockSpec* b : spec.blocks()) per_block += b->conv_layers().size();
  EXPECT_EQ(units, 1 + per_block);
  EXPECT_TRUE(a.contains(kHeadWeight));
  EXPECT_TRUE(a.contains(kHeadBias));
  EXPECT_EQ(a.size(), units * 5 + 2);
}

TEST(ModelParamsTest, ResetHeadTouchesOnlyTheHead) {
  const ModelSpec spec = build_model(micro_config());
  auto p = init_params<double>(spec, 1);
  const auto before = p;
  reset_head(p, spec, 99);
  for (const auto& [name, t] : p) {
    if (name == kHeadWeight) {
      EXPECT_NE(t, before.at(name));
    } else {
      EXPECT_EQ(t, before.at(name)) << name;
    }
  }
  auto q = before;
  reset_head(q, spec, 99);
  EXPECT_EQ(p, q);
}

TEST(ModelForwardTest, ScoresPerClipAndGeometryErrors) {
  const ModelSpec spec = build_model(micro_config());
  const auto params = init_params<float>(spec, 2);
  std::mt19937_64 rng(8);
  const Tensor<float> clips = random_tensor<float>(spec.input_dims(3), rng);
  const std::vector<float> scores = model_forward(spec, params, clips);
  ASSERT_EQ(scores.size(), 3u);
  for (float s : scores) EXPECT_TRUE(std::isfinite(s));

  Dims5 one = clips.dims();
  one.n = 1;
  const std::size_t stride = one.numel();
  const Tensor<float> second(
      one, std::vector<float>(clips.data().begin() + stride, clips.data().begin() + 2 * stride));
  EXPECT_NEAR(model_forward(spec, params, second)[0], scores[1], 1e-5);

  try {
    model_forward(spec, params, random_tensor<float>({1, 3, 16, 32, 32}, rng));
    FAIL() << "expected geometry error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("(n,3,8,32,32)"), std::string::npos) << e.what();
  }
}

TEST(ModelForwardTest, BackwardCoversTrainableParams) {
  const ModelSpec spec = build_model(micro_config(ModelKind::kDmsnB));
  const auto params = init_params<float>(spec, 2);
  std::mt19937_64 rng(8);
  const Tensor<float> clips = random_tensor<float>(spec.input_dims(2), rng);
  const std::vector<float> seed{1.0f, -1.0f};
  const auto grads = model_backward(spec, params, clips, std::span<const float>(seed));
  for (const auto& [name, t] : params) {
    const bool trainable = is_trainable(param_role(name));
    EXPECT_EQ(grads.contains(name), trainable) << name;
    if (trainable) {
      EXPECT_EQ(grads.at(name).dims(), t.dims()) << name;
    }
  }
  // d(score)/d(bias) is 1 per clip, so the seeds cancel.
  EXPECT_NEAR(grads.at(kHeadBias)[0], 0.0f, 1e-6);
}

TEST(CheckpointTest, RoundTripPreservesEverything) {
  const ModelSpec spec = build_model(micro_config(ModelKind::kDmsnC));
  const auto params = init_params<float>(spec, 17);
  const auto path = scratch_file("round.ckpt").string();
  save_checkpoint(spec, params, path);
  const auto [loaded_spec, loaded] = load_checkpoint<float>(path);
  EXPECT_EQ(loaded_spec.config, spec.config);
  EXPECT_EQ(loaded, params);
  const auto as_double = load_checkpoint<double>(path).second;
  EXPECT_EQ(as_double.at(kHeadWeight)[0], static_cast<double>(params.at(kHeadWeight)[0]));
}

TEST(CheckpointTest, RejectsCorruptFiles) {
  const ModelSpec spec = build_model(micro_config());
  const auto params = init_params<float>(spec, 1);
  const auto path = scratch_file("bad.ckpt").string();
  save_checkpoint(spec, params, path);
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << b;
  };
  write(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint<float>(path), std::runtime_error);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  write(wrong_magic);
  EXPECT_THROW(load_checkpoint<float>(path), std::runtime_error);
  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  write(wrong_version);
  EXPECT_THROW(load_checkpoint<float>(path), std::runtime_error);
  EXPECT_THROW(load_checkpoint<float>(scratch_file("missing.ckpt").string()),
               std::runtime_error);

  auto partial = params;
  ParamBundle<float> trimmed;
  for (const auto& [name, t] : partial) {
    if (name != kHeadBias) trimmed.set(name, t);
  }
  save_checkpoint(spec, trimmed, path);
  EXPECT_THROW(load_checkpoint<float>(path), std::runtime_error);
}

}  // namespace
}  // namespace dmsn
