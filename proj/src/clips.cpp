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

#include "dmsn/clips.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dmsn/format.hpp"

namespace dmsn {

namespace fs = std::filesystem;

SegmentPlan segment_frames(std::size_t frame_count, std::size_t clip_len) {
  if (clip_len == 0) throw std::invalid_argument("clip_len must be >= 1");
  SegmentPlan plan;
  const std::size_t count = frame_count / clip_len;
  for (std::size_t i = 0; i < count; ++i) plan.starts.push_back(i * clip_len);
  plan.dropped_frames = frame_count - count * clip_len;
  plan.warning = count == 0;
  return plan;
}

template <typename T>
SegmentedVideo<T> segment_clips(const Tensor<T>& video, std::size_t clip_len) {
  const Dims5& d = video.dims();
  if (d.n != 1) {
    throw std::invalid_argument("segment_clips expects one video, got " + d.str());
  }
  const SegmentPlan plan = segment_frames(d.t, clip_len);
  SegmentedVideo<T> out;
  out.dropped_frames = plan.dropped_frames;
  out.warning = plan.warning;
  const std::size_t plane = d.h * d.w;
  for (std::size_t start : plan.starts) {
    Tensor<T> clip({1, d.c, clip_len, d.h, d.w});
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* src = video.ptr() + (c * d.t + start) * plane;
      std::copy(src, src + clip_len * plane, clip.ptr() + c * clip_len * plane);
    }
    out.clips.push_back(std::move(clip));
  }
  return out;
}

template SegmentedVideo<float> segment_clips(const Tensor<float>&, std::size_t);
template SegmentedVideo<double> segment_clips(const Tensor<double>&, std::size_t);

int quantize_pspi(int level) {
  if (level < 0 || level > 15) {
    throw std::out_of_range("PSPI level must be in 0..15, got " +
                            std::to_string(level));
  }
  if (level <= 3) return level;
  if (level <= 5) return 4;
  return 5;
}

double clip_label(std::span<const int> frame_levels, LabelOrder order) {
  if (frame_levels.empty()) throw std::invalid_argument("clip has no frame labels");
  double sum = 0.0;
  if (order == LabelOrder::kQuantizeThenAverage) {
    for (int v : frame_levels) sum += quantize_pspi(v);
    return sum / static_cast<double>(frame_levels.size());
  }
  for (int v : frame_levels) {
    (void)quantize_pspi(v);  // range check
    sum += v;
  }
  const double mean = sum / static_cast<double>(frame_levels.size());
  return quantize_pspi(static_cast<int>(std::floor(mean + 0.5)));
}

double aggregate_video_score(std::span<const double> clip_scores) {
  if (clip_scores.empty()) throw std::invalid_argument("no clip scores to aggregate");
  std::vector<double> v(clip_scores.begin(), clip_scores.end());
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  if (v.size() % 2 == 1) return v[m];
  return 0.5 * (v[m - 1] + v[m]);
}

BdiBand bdi_severity_band(int score) {
  if (score < 0 || score > 63) {
    throw std::out_of_range("BDI-II score must be in 0..63, got " +
                            std::to_string(score));
  }
  if (score <= 13) return BdiBand::kMinimal;
  if (score <= 19) return BdiBand::kMild;
  if (score <= 28) return BdiBand::kModerate;
  return BdiBand::kSevere;
}

std::string bdi_band_name(BdiBand band) {
  switch (band) {
    case BdiBand::kMinimal: return "minimal";
    case BdiBand::kMild: return "mild";
    case BdiBand::kModerate: return "moderate";
    case BdiBand::kSevere: return "severe";
  }
  return "?";
}

namespace {

void check_pair(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw std::invalid_argument("metric inputs must be nonempty and equal length (" +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(truth.size()) + ")");
  }
}

}  // namespace

double metric_mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double metric_mse(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

double metric_rmse(std::span<const double> pred, std::span<const double> truth) {
  return std::sqrt(metric_mse(pred, truth));
}

// ---------------------------------------------------------------------------

std::vector<std::string> ClipDataset::subjects() const {
  std::set<std::string> s;
  for (const auto& c : clips) s.insert(c.subject_id);
  return {s.begin(), s.end()};
}

std::vector<double> ClipDataset::labels() const {
  std::vector<double> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(c.label);
  return out;
}

ClipDataset ClipDataset::subset(std::span<const std::size_t> indices) const {
  ClipDataset out;
  out.clip_len = clip_len;
  out.height = height;
  out.width = width;
  for (std::size_t i : indices) out.clips.push_back(clips.at(i));
  return out;
}

void ClipDataset::validate() const {
  const Dims5 want{1, 3, clip_len, height, width};
  for (const auto& c : clips) {
    if (c.data.dims() != want) {
      throw std::invalid_argument("clip " + c.video_id + "#" +
                                  std::to_string(c.clip_index) + " has extents " +
                                  c.data.dims().str() + ", dataset expects " +
                                  want.str());
    }
  }
}

FoldPlan loso_splits(std::span<const std::string> clip_subjects) {
  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < clip_subjects.size(); ++i) {
    by_subject[clip_subjects[i]].push_back(i);
  }
  if (by_subject.size() < 2) {
    throw std::invalid_argument(
        "leave-one-subject-out needs at least 2 subjects, got " +
        std::to_string(by_subject.size()));
  }
  FoldPlan plan;
  for (const auto& [subject, indices] : by_subject) {
    Fold fold;
    fold.test_subject = subject;
    fold.test_indices = indices;
    for (const auto& [other, other_indices] : by_subject) {
      if (other == subject) continue;
      fold.train_subjects.push_back(other);
    }
    for (std::size_t i = 0; i < clip_subjects.size(); ++i) {
      if (clip_subjects[i] != subject) fold.train_indices.push_back(i);
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

FoldPlan loso_splits(const ClipDataset& dataset) {
  std::vector<std::string> subjects;
  for (const auto& c : dataset.clips) subjects.push_back(c.subject_id);
  return loso_splits(subjects);
}

VideoScores aggregate_by_video(const ClipDataset& dataset,
                               std::span<const double> clip_predictions) {
  if (clip_predictions.size() != dataset.size()) {
    throw std::invalid_argument("prediction count does not match clip count");
  }
  std::map<std::string, std::vector<double>> preds;
  std::map<std::string, double> labels;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Clip& c = dataset.clips[i];
    const std::string key = c.subject_id + "/" + c.video_id;
    preds[key].push_back(clip_predictions[i]);
    labels[key] = c.label;
  }
  VideoScores out;
  for (const auto& [key, p] : preds) {
    out.video_ids.push_back(key);
    out.predictions.push_back(aggregate_video_score(p));
    out.labels.push_back(labels[key]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

template <typename U>
U parse_count(std::string_view text, std::string_view key) {
  const double v = parse_double(text, key);
  if (v < 0 || v != std::floor(v)) {
    throw std::invalid_argument("invalid " + std::string(key) + " '" +
                                std::string(text) + "'");
  }
  return static_cast<U>(v);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

double round_significant(double v) {
  return parse_double(format_significant(v, 6), "label");
}

std::string zero_pad(std::size_t v, std::size_t digits) {
  std::string s = std::to_string(v);
  if (s.size() < digits) s.insert(0, digits - s.size(), '0');
  return s;
}

constexpr double kAngularStep = std::numbers::pi / 4.0;  // radians per frame

}  // namespace

void SynthConfig::validate() const {
  if (clips == 0) throw std::invalid_argument("synth clips must be positive");
  if (clips_per_video == 0) {
    throw std::invalid_argument("synth clips_per_video must be positive");
  }
  if (subjects == 0) throw std::invalid_argument("synth subjects must be positive");
  if (frames == 0) throw std::invalid_argument("synth frames must be positive");
  if (height < 8 || width < 8) {
    throw std::invalid_argument("synth height and width must be >= 8");
  }
  if (!(label_max > label_min)) {
    throw std::invalid_argument("synth label_max must exceed label_min");
  }
  if (noise < 0) throw std::invalid_argument("synth noise must be >= 0");
}

std::string SynthConfig::to_text() const {
  std::ostringstream os;
  os << "clips=" << clips << "\n"
     << "clips_per_video=" << clips_per_video << "\n"
     << "subjects=" << subjects << "\n"
     << "frames=" << frames << "\n"
     << "height=" << height << "\n"
     << "width=" << width << "\n"
     << "label_min=" << format_shortest(label_min) << "\n"
     << "label_max=" << format_shortest(label_max) << "\n"
     << "noise=" << format_shortest(noise) << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

SynthConfig SynthConfig::from_text(std::string_view text) {
  SynthConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("synth config line " + std::to_string(line_no) +
                                  ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key == "clips") c.clips = parse_count<std::size_t>(value, key);
    else if (key == "clips_per_video") c.clips_per_video = parse_count<std::size_t>(value, key);
    else if (key == "subjects") c.subjects = parse_count<std::size_t>(value, key);
    else if (key == "frames") c.frames = parse_count<std::size_t>(value, key);
    else if (key == "height") c.height = parse_count<std::size_t>(value, key);
    else if (key == "width") c.width = parse_count<std::size_t>(value, key);
    else if (key == "label_min") c.label_min = parse_double(value, key);
    else if (key == "label_max") c.label_max = parse_double(value, key);
    else if (key == "noise") c.noise = parse_double(value, key);
    else if (key == "seed") c.seed = parse_count<std::uint64_t>(value, key);
    else {
      throw std::invalid_argument("synth config line " + std::to_string(line_no) +
                                  ": unknown key '" + std::string(key) + "'");
    }
  }
  c.validate();
  return c;
}

double synth_radius(const SynthConfig& config, double label) {
  const double max_radius =
      0.25 * static_cast<double>(std::min(config.height, config.width));
  return max_radius * (label - config.label_min) /
         (config.label_max - config.label_min);
}

ClipDataset synth_generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ClipDataset ds;
  ds.clip_len = config.frames;
  ds.height = config.height;
  ds.width = config.width;
  const std::size_t h = config.height;
  const std::size_t w = config.width;
  const double side = static_cast<double>(std::min(h, w));
  const double sigma = 0.1 * side;
  const std::size_t videos =
      (config.clips + config.clips_per_video - 1) / config.clips_per_video;
  const std::size_t digits = std::to_string(videos).size();

  for (std::size_t v = 0; v < videos; ++v) {
    const std::string subject =
        "s" + zero_pad(v % config.subjects, std::to_string(config.subjects).size());
    const std::string video = "v" + zero_pad(v, digits);
    const double label = round_significant(
        config.label_min + (config.label_max - config.label_min) * unit(rng));
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double cx = 0.5 * (w - 1) + 0.1 * side * (2.0 * unit(rng) - 1.0);
    const double cy = 0.5 * (h - 1) + 0.1 * side * (2.0 * unit(rng) - 1.0);
    double colour[3];
    for (double& c : colour) c = 0.5 + 0.5 * unit(rng);
    const double radius = synth_radius(config, label);

    const std::size_t frames = config.clips_per_video * config.frames;
    Tensor<float> frames_t({1, 3, frames, h, w});
    for (std::size_t f = 0; f < frames; ++f) {
      const double angle = phase + kAngularStep * static_cast<double>(f);
      const double bx = cx + radius * std::cos(angle);
      const double by = cy + radius * std::sin(angle);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dx = static_cast<double>(x) - bx;
          const double dy = static_cast<double>(y) - by;
          const double bump = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          for (std::size_t c = 0; c < 3; ++c) {
            const double value = colour[c] * bump + config.noise * gauss(rng);
            frames_t.at(0, c, f, y, x) = static_cast<float>(value);
          }
        }
      }
    }
    SegmentedVideo<float> seg = segment_clips(frames_t, config.frames);
    for (std::size_t k = 0; k < seg.clips.size() && ds.clips.size() < config.clips;
         ++k) {
      Clip clip;
      clip.subject_id = subject;
      clip.video_id = video;
      clip.clip_index = k;
      clip.tensor_file = "clips/" + video + "_" + std::to_string(k) + ".dmsn";
      clip.label = label;
      clip.data = std::move(seg.clips[k]);
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

double mean_frame_displacement(const Tensor<float>& clip) {
  const Dims5& d = clip.dims();
  if (d.t < 2) return 0.0;
  std::vector<std::pair<double, double>> centres;
  for (std::size_t f = 0; f < d.t; ++f) {
    double mean = 0.0;
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) mean += clip.at(0, 0, f, y, x);
    }
    mean /= static_cast<double>(d.h * d.w);
    double sw = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        const double wgt = std::max(0.0, clip.at(0, 0, f, y, x) - mean);
        sw += wgt;
        sx += wgt * x;
        sy += wgt * y;
      }
    }
    centres.emplace_back(sw > 0 ? sx / sw : 0.0, sw > 0 ? sy / sw : 0.0);
  }
  double total = 0.0;
  for (std::size_t f = 1; f < centres.size(); ++f) {
    total += std::hypot(centres[f].first - centres[f - 1].first,
                        centres[f].second - centres[f - 1].second);
  }
  return total / static_cast<double>(centres.size() - 1);
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

constexpr std::string_view kManifestHeader =
    "subject_id\tvideo_id\tclip_index\ttensor_file\tlabel";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::vector<Clip> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  std::vector<Clip> clips;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == kManifestHeader) continue;
    const auto fields = split_tabs(line);
    auto fail = [&](const std::string& why) {
      return std::runtime_error(path + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 5) {
      throw fail("expected 5 tab-separated fields, got " +
                 std::to_string(fields.size()));
    }
    Clip clip;
    clip.subject_id = fields[0];
    clip.video_id = fields[1];
    clip.tensor_file = fields[3];
    if (clip.subject_id.empty() || clip.video_id.empty() || clip.tensor_file.empty()) {
      throw fail("empty field");
    }
    try {
      clip.clip_index = parse_count<std::size_t>(fields[2], "clip_index");
      clip.label = parse_double(fields[4], "label");
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

void save_manifest(std::span<const Clip> clips, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << kManifestHeader << "\n";
  for (const Clip& c : clips) {
    for (const std::string* f : {&c.subject_id, &c.video_id, &c.tensor_file}) {
      if (f->find_first_of("\t\n\r") != std::string::npos) {
        throw std::invalid_argument("manifest field contains a tab or newline: '" +
                                    *f + "'");
      }
    }
    os << c.subject_id << '\t' << c.video_id << '\t' << c.clip_index << '\t'
       << c.tensor_file << '\t' << format_significant(c.label, 6) << "\n";
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

ClipDataset load_dataset(const std::string& manifest_path) {
  ClipDataset ds;
  ds.clips = load_manifest(manifest_path);
  if (ds.clips.empty()) throw std::runtime_error("manifest " + manifest_path + " is empty");
  const fs::path base = fs::path(manifest_path).parent_path();
  for (Clip& c : ds.clips) {
    c.data = load_tensor<float>((base / c.tensor_file).string());
  }
  const Dims5& d = ds.clips.front().data.dims();
  ds.clip_len = d.t;
  ds.height = d.h;
  ds.width = d.w;
  ds.validate();
  return ds;
}

void save_dataset(const ClipDataset& dataset, const std::string& dir) {
  const fs::path base(dir);
  for (const Clip& c : dataset.clips) {
    const fs::path file = base / c.tensor_file;
    fs::create_directories(file.parent_path());
    save_tensor(file.string(), c.data);
  }
  fs::create_directories(base);
  save_manifest(dataset.clips, (base / "manifest.tsv").string());
}

}  // namespace dmsn
