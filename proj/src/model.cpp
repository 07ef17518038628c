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

#include "dmsn/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace dmsn {

// ---------------------------------------------------------------------------
// Names and config text

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDmsn: return "dmsn";
    case ModelKind::kDmsnA: return "dmsn-a";
    case ModelKind::kDmsnB: return "dmsn-b";
    case ModelKind::kDmsnC: return "dmsn-c";
  }
  return "?";
}

std::vector<std::string> model_kind_names() {
  return {"dmsn", "dmsn-a", "dmsn-b", "dmsn-c"};
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : {ModelKind::kDmsn, ModelKind::kDmsnA, ModelKind::kDmsnB,
                      ModelKind::kDmsnC}) {
    if (model_kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown model '" + std::string(name) +
                              "'; valid names: dmsn, dmsn-a, dmsn-b, dmsn-c");
}

namespace {

template <typename U>
U parse_unsigned(std::string_view text, const char* what) {
  U value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument(std::string("invalid ") + what + " '" +
                                std::string(text) + "'");
  }
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

std::string Ratio::str() const {
  return std::to_string(num) + "/" + std::to_string(den);
}

Ratio Ratio::parse(std::string_view text) {
  text = trim(text);
  Ratio r;
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    r.num = parse_unsigned<std::uint32_t>(text.substr(0, slash), "ratio numerator");
    r.den = parse_unsigned<std::uint32_t>(text.substr(slash + 1), "ratio denominator");
  } else {
    r.num = parse_unsigned<std::uint32_t>(text, "ratio");
    r.den = 1;
  }
  if (r.num == 0 || r.den == 0 || r.num > r.den) {
    throw std::invalid_argument("width multiplier must lie in (0, 1], got '" +
                                std::string(text) + "'");
  }
  return r;
}

std::size_t ModelConfig::scaled(std::size_t channels) const {
  const std::size_t prod = channels * width_multiplier.num;
  if (prod % width_multiplier.den != 0) {
    throw std::invalid_argument(
        "width multiplier " + width_multiplier.str() + " leaves " +
        std::to_string(channels) + " channels non-integral");
  }
  return prod / width_multiplier.den;
}

void ModelConfig::validate() const {
  if (clip_len < 2 || clip_len % 2 != 0) {
    throw std::invalid_argument("clip_len must be even and >= 2, got " +
                                std::to_string(clip_len));
  }
  if (height == 0 || width == 0) {
    throw std::invalid_argument("input height and width must be positive");
  }
  if (branch_count < 2 || branch_count > 4) {
    throw std::invalid_argument("branch count must be 2, 3 or 4");
  }
  (void)Ratio::parse(width_multiplier.str());
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "model=" << model_kind_name(kind) << "\n"
     << "clip_len=" << clip_len << "\n"
     << "height=" << height << "\n"
     << "width=" << width << "\n"
     << "branches=" << branch_count << "\n"
     << "width_multiplier=" << width_multiplier.str() << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("model config line " + std::to_string(line_no) +
                                  ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key == "model") {
      c.kind = parse_model_kind(value);
    } else if (key == "clip_len") {
      c.clip_len = parse_unsigned<std::size_t>(value, "clip_len");
    } else if (key == "height") {
      c.height = parse_unsigned<std::size_t>(value, "height");
    } else if (key == "width") {
      c.width = parse_unsigned<std::size_t>(value, "width");
    } else if (key == "branches") {
      c.branch_count = parse_unsigned<std::size_t>(value, "branches");
    } else if (key == "width_multiplier") {
      c.width_multiplier = Ratio::parse(value);
    } else if (key == "seed") {
      c.seed = parse_unsigned<std::uint64_t>(value, "seed");
    } else {
      throw std::invalid_argument("model config line " + std::to_string(line_no) +
                                  ": unknown key '" + std::string(key) + "'");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Architecture

std::size_t ModelSpec::block_count() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.blocks.size();
  return n;
}

std::vector<const BlockSpec*> ModelSpec::blocks() const {
  std::vector<const BlockSpec*> out;
  for (const auto& s : stages) {
    for (const auto& b : s.blocks) out.push_back(&b);
  }
  return out;
}

ModelSpec build_model(const ModelConfig& config) {
  config.validate();
  ModelSpec spec;
  spec.config = config;
  spec.conv1.in_channels = 3;
  spec.conv1.out_channels = config.scaled(64);
  spec.conv1.kernel = {7, 7, 7};
  spec.conv1.stride = {1, 2, 2};
  spec.conv1.padding = {3, 3, 3};
  spec.pool = PoolGeometry{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}};

  struct StageLayout {
    const char* name;
    std::size_t channels;
    const char* variants;
  };
  static constexpr StageLayout kLayout[] = {
      {"res2", 128, "ABC"},
      {"res3", 256, "ABCA"},
      {"res4", 512, "ABCABC"},
      {"res5", 1024, "ABCA"},
  };
  std::size_t in = spec.conv1.out_channels;
  for (std::size_t si = 0; si < std::size(kLayout); ++si) {
    const StageLayout& layout = kLayout[si];
    StageSpec stage;
    stage.name = layout.name;
    stage.out_channels = config.scaled(layout.channels);
    const std::string letters = layout.variants;
    for (std::size_t bi = 0; bi < letters.size(); ++bi) {
      BlockVariant v = variant_from_letter(letters[bi]);
      switch (config.kind) {
        case ModelKind::kDmsnA: v = BlockVariant::kA; break;
        case ModelKind::kDmsnB: v = BlockVariant::kB; break;
        case ModelKind::kDmsnC: v = BlockVariant::kC; break;
        case ModelKind::kDmsn: break;
      }
      const std::size_t stride = (si > 0 && bi == 0) ? 2 : 1;
      stage.blocks.push_back(build_block(
          v, in, stage.out_channels, stride, config.branch_count,
          stage.name + "." + std::to_string(bi)));
      in = stage.out_channels;
    }
    spec.stages.push_back(std::move(stage));
  }
  spec.head_in = in;
  // Surfaces geometry errors (e.g. an input too small for conv1) early.
  (void)activation_extents(spec, spec.input_dims());
  return spec;
}

std::vector<ActivationRow> activation_extents(const ModelSpec& spec,
                                              const Dims5& input) {
  std::vector<ActivationRow> rows;
  rows.push_back({"input", input});
  Dims5 d = spec.conv1.output_dims(input);
  rows.push_back({"conv1", d});
  d = spec.pool.output_dims(d);
  rows.push_back({"pool", d});
  for (const auto& stage : spec.stages) {
    for (const auto& block : stage.blocks) {
      d = block.reduce.output_dims(d);
      d.c = block.out_channels;
      rows.push_back({block.id, d});
    }
    rows.push_back({stage.name, d});
  }
  rows.push_back({"head", {input.n, 1, 1, 1, 1}});
  return rows;
}

namespace {

std::string thw(const Dims5& d) {
  return std::to_string(d.t) + "x" + std::to_string(d.h) + "x" +
         std::to_string(d.w);
}

std::string e3(const Extent3& e) {
  return std::to_string(e.t) + "x" + std::to_string(e.h) + "x" +
         std::to_string(e.w);
}

}  // namespace

std::string describe_model(const ModelSpec& spec, bool verbose) {
  const ModelConfig& c = spec.config;
  const auto rows = activation_extents(spec, spec.input_dims());
  std::ostringstream os;
  os << "model " << model_kind_name(c.kind) << " clip_len=" << c.clip_len
     << " input=3x" << c.clip_len << "x" << c.height << "x" << c.width
     << " branches=" << c.branch_count
     << " width_multiplier=" << c.width_multiplier.str() << "\n";
  auto line = [&](const std::string& layer, std::size_t channels,
                  const std::string& extents, const std::string& detail) {
    std::ostringstream l;
    l << std::left << std::setw(12) << layer << std::setw(8) << channels
      << std::setw(14) << extents << detail;
    std::string text = l.str();
    while (!text.empty() && text.back() == ' ') text.pop_back();
    os << text << "\n";
  };
  os << std::left << std::setw(12) << "layer" << std::setw(8) << "chan"
     << std::setw(14) << "output" << "structure\n";
  auto find = [&](const std::string& id) -> const Dims5& {
    for (const auto& r : rows) {
      if (r.layer == id) return r.dims;
    }
    throw std::logic_error("missing extents for " + id);
  };
  line("input", 3, thw(find("input")), "");
  line("conv1", spec.conv1.out_channels, thw(find("conv1")),
       "conv " + e3(spec.conv1.kernel) + " s" + e3(spec.conv1.stride) + " p" +
           e3(spec.conv1.padding));
  line("pool", spec.conv1.out_channels, thw(find("pool")),
       "maxpool " + e3(spec.pool.kernel) + " s" + e3(spec.pool.stride) + " p" +
           e3(spec.pool.padding));
  for (const auto& stage : spec.stages) {
    std::string seq;
    for (const auto& b : stage.blocks) {
      if (!seq.empty()) seq += ",";
      seq += variant_letter(b.variant);
    }
    line(stage.name, stage.out_channels, thw(find(stage.name)), "stage " + seq);
    for (const auto& b : stage.blocks) {
      line("  " + b.id, b.out_channels, thw(find(b.id)),
           std::string("DMSN-") + variant_letter(b.variant) + " stride " +
               std::to_string(b.spatial_stride) + " " +
               (b.shortcut == ShortcutKind::kProjection ? "projection"
                                                        : "identity"));
      if (verbose) {
        std::istringstream detail(describe_block(b));
        std::string l;
        std::getline(detail, l);  // header repeats the line above
        while (std::getline(detail, l)) os << "    " << l << "\n";
      }
    }
  }
  line("regression", 1, "1x1",
       "spatial avgpool, fc " + std::to_string(spec.head_in) +
           "->1 per frame, temporal avgpool");
  return os.str();
}

std::vector<std::pair<std::string, ConvLayerSpec>> model_conv_layers(
    const ModelSpec& spec) {
  std::vector<std::pair<std::string, ConvLayerSpec>> out;
  out.emplace_back("conv1", spec.conv1);
  for (const BlockSpec* b : spec.blocks()) {
    for (auto& l : b->conv_layers()) out.push_back(std::move(l));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

constexpr std::uint64_t kHeadResetSalt = 0x9E3779B97F4A7C15ULL;

template <typename T>
void draw_head(ParamBundle<T>& params, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0,
                                          std::sqrt(2.0 / static_cast<double>(in)));
  Tensor<T> w({1, in, 1, 1, 1});
  for (auto& v : w.data()) v = static_cast<T>(normal(rng));
  params.set(kHeadWeight, std::move(w));
  params.set(kHeadBias, Tensor<T>({1, 1, 1, 1, 1}));
}

}  // namespace

template <typename T>
ParamBundle<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamBundle<T> params;
  std::mt19937_64 rng(seed);
  for (const auto& [layer, conv] : model_conv_layers(spec)) {
    init_conv_unit_params(layer, conv, params, rng);
  }
  draw_head(params, spec.head_in, rng);
  return params;
}

template <typename T>
void reset_head(ParamBundle<T>& params, const ModelSpec& spec,
                std::uint64_t seed) {
  if (!params.contains(kHeadWeight)) {
    throw std::invalid_argument("parameter bundle has no regression head");
  }
  std::mt19937_64 rng(seed ^ kHeadResetSalt);
  draw_head(params, spec.head_in, rng);
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

// (n, C, t, 1, 1) -> (n*t, C, 1, 1, 1)
template <typename T>
Tensor<T> frames_to_rows(const Tensor<T>& x) {
  const Dims5& d = x.dims();
  Tensor<T> rows({d.n * d.t, d.c, 1, 1, 1});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      for (std::size_t t = 0; t < d.t; ++t) {
        rows[(n * d.t + t) * d.c + c] = x[(n * d.c + c) * d.t + t];
      }
    }
  }
  return rows;
}

template <typename T>
Tensor<T> rows_to_frames(const Tensor<T>& rows, std::size_t n, std::size_t c,
                         std::size_t t) {
  Tensor<T> x({n, c, t, 1, 1});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t f = 0; f < t; ++f) {
        x[(b * c + ch) * t + f] = rows[(b * t + f) * c + ch];
      }
    }
  }
  return x;
}

}  // namespace

template <typename T>
std::vector<T> model_forward(const ModelSpec& spec, const ParamBundle<T>& params,
                             const Tensor<T>& clip, Mode mode,
                             ModelCache<T>* cache) {
  const Dims5 want = spec.input_dims(clip.dims().n);
  if (clip.dims() != want || clip.dims().n == 0) {
    throw std::invalid_argument("model input has extents " + clip.dims().str() +
                                ", expected (n,3," +
                                std::to_string(spec.config.clip_len) + "," +
                                std::to_string(spec.config.height) + "," +
                                std::to_string(spec.config.width) + ")");
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->blocks.assign(spec.block_count(), {});
  }
  Tensor<T> x = conv_unit_forward("conv1", spec.conv1, params, clip, true, mode,
                                  cache ? &cache->conv1 : nullptr);
  {
    MaxPoolResult<T> pooled = maxpool3d_forward(x, spec.pool);
    x = pooled.output;
    if (cache != nullptr) cache->pool = std::move(pooled);
  }
  const auto blocks = spec.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = block_forward(*blocks[i], params, x, mode,
                      cache ? &cache->blocks[i] : nullptr);
  }
  const Dims5 trunk = x.dims();
  Tensor<T> rows = frames_to_rows(avgpool_spatial_forward(x));
  Tensor<T> frame_scores =
      linear_forward(rows, params.at(kHeadWeight), &params.at(kHeadBias));
  const Dims5 frame_dims{trunk.n, 1, trunk.t, 1, 1};
  Tensor<T> scores =
      avgpool_temporal_forward(frame_scores.reshaped(frame_dims));
  if (cache != nullptr) {
    cache->trunk_dims = trunk;
    cache->head_rows = std::move(rows);
    cache->frame_dims = frame_dims;
  }
  return std::vector<T>(scores.data().begin(), scores.data().end());
}

template <typename T>
ParamBundle<T> model_backward(const ModelSpec& spec,
                              const ParamBundle<T>& params,
                              const ModelCache<T>& cache,
                              std::span<const T> grad_scores) {
  const Dims5& trunk = cache.trunk_dims;
  if (grad_scores.size() != trunk.n) {
    throw std::invalid_argument("grad_scores has length " +
                                std::to_string(grad_scores.size()) +
                                ", batch is " + std::to_string(trunk.n));
  }
  ParamBundle<T> grads;
  Tensor<T> g_scores({trunk.n, 1, 1, 1, 1},
                     std::vector<T>(grad_scores.begin(), grad_scores.end()));
  Tensor<T> g_frames = avgpool_temporal_backward(g_scores, cache.frame_dims);
  LinearGrads<T> head = linear_backward(
      cache.head_rows, params.at(kHeadWeight),
      g_frames.reshaped({trunk.n * trunk.t, 1, 1, 1, 1}), true);
  grads.accumulate(kHeadWeight, head.grad_weight);
  grads.accumulate(kHeadBias, head.grad_bias);
  Tensor<T> g = avgpool_spatial_backward(
      rows_to_frames(head.grad_x, trunk.n, trunk.c, trunk.t), trunk);

  const auto blocks = spec.blocks();
  for (std::size_t i = blocks.size(); i-- > 0;) {
    g = block_backward(*blocks[i], params, cache.blocks[i], g, grads);
  }
  g = maxpool3d_backward(cache.pool, g);
  conv_unit_backward("conv1", spec.conv1, params, cache.conv1, g, grads,
                     /*need_grad_x=*/false);
  for (const auto& [name, t] : params) {
    if (is_trainable(param_role(name)) && !grads.contains(name)) {
      grads.set(name, Tensor<T>(t.dims()));
    }
  }
  return grads;
}

template <typename T>
ParamBundle<T> model_backward(const ModelSpec& spec,
                              const ParamBundle<T>& params,
                              const Tensor<T>& clip,
                              std::span<const T> grad_scores, Mode mode) {
  ModelCache<T> cache;
  model_forward(spec, params, clip, mode, &cache);
  return model_backward(spec, params, cache, grad_scores);
}

template <typename T>
void update_model_running_stats(const ModelSpec& spec, ParamBundle<T>& params,
                                const ModelCache<T>& cache, double momentum) {
  update_running_stats(params.at("conv1.bn.running_mean"),
                       params.at("conv1.bn.running_var"), cache.conv1.bn,
                       momentum);
  const auto blocks = spec.blocks();
  for (std::size_t i = 0; i < blocks.size() && i < cache.blocks.size(); ++i) {
    update_block_running_stats(*blocks[i], params, cache.blocks[i], momentum);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "DMSNCKPT", u32 version, config text, u64 entry count, then
// (name, u64 byte length, tensor blob) per entry.

template <typename T>
void save_checkpoint(const ModelSpec& spec, const ParamBundle<T>& params,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("DMSNCKPT", 8);
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  io::put_string(os, spec.config.to_text());
  io::put_le<std::uint64_t>(os, params.size());
  for (const auto& [name, tensor] : params) {
    io::put_string(os, name);
    std::ostringstream blob(std::ios::binary);
    write_tensor(blob, tensor);
    io::put_string(os, blob.str());
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

template <typename T>
std::pair<ModelSpec, ParamBundle<T>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  io::expect_magic(is, "DMSNCKPT", "checkpoint");
  const auto version = io::get_le<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  }
  ModelSpec spec = build_model(
      ModelConfig::from_text(io::get_string(is, "checkpoint config", 1 << 20)));
  const auto count = io::get_le<std::uint64_t>(is, "checkpoint entry count");
  ParamBundle<T> params;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = io::get_string(is, "parameter name", 4096);
    std::istringstream blob(io::get_string(is, "parameter blob"),
                            std::ios::binary);
    AnyTensor any = read_any_tensor(blob);
    Tensor<T> tensor = std::visit(
        [](auto&& t) { return tensor_cast<T>(t); }, std::move(any));
    params.set(name, std::move(tensor));
  }
  // The stored bundle must match the architecture exactly.
  const ParamBundle<T> fresh = init_params<T>(spec, 0);
  if (fresh.size() != params.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(params.size()) +
                             " entries, architecture needs " +
                             std::to_string(fresh.size()));
  }
  for (const auto& [name, t] : fresh) {
    const Tensor<T>* got = params.find(name);
    if (got == nullptr || got->dims() != t.dims()) {
      throw std::runtime_error("checkpoint entry '" + name +
                               "' missing or mis-shaped");
    }
  }
  return {std::move(spec), std::move(params)};
}

#define DMSN_INSTANTIATE(T)                                                    \
  template ParamBundle<T> init_params<T>(const ModelSpec&, std::uint64_t);     \
  template void reset_head(ParamBundle<T>&, const ModelSpec&, std::uint64_t);  \
  template std::vector<T> model_forward(const ModelSpec&,                      \
                                        const ParamBundle<T>&,                 \
                                        const Tensor<T>&, Mode,                \
                                        ModelCache<T>*);                       \
  template ParamBundle<T> model_backward(const ModelSpec&,                     \
                                         const ParamBundle<T>&,                \
                                         const ModelCache<T>&,                 \
                                         std::span<const T>);                  \
  template ParamBundle<T> model_backward(const ModelSpec&,                     \
                                         const ParamBundle<T>&,                \
                                         const Tensor<T>&,                     \
                                         std::span<const T>, Mode);            \
  template void update_model_running_stats(const ModelSpec&, ParamBundle<T>&,  \
                                           const ModelCache<T>&, double);      \
  template void save_checkpoint(const ModelSpec&, const ParamBundle<T>&,       \
                                const std::string&);                           \
  template std::pair<ModelSpec, ParamBundle<T>> load_checkpoint<T>(            \
      const std::string&);

DMSN_INSTANTIATE(float)
DMSN_INSTANTIATE(double)
#undef DMSN_INSTANTIATE

}  // namespace dmsn
