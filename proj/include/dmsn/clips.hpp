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

// Clip datasets and the evaluation protocol: segmentation, PSPI labels,
// video aggregation, subject-exclusive folds, metrics and a synthetic
// moving-bump generator.

#ifndef DMSN_CLIPS_HPP_
#define DMSN_CLIPS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmsn/tensor.hpp"

namespace dmsn {

// ---------------------------------------------------------------------------
// Segmentation

struct SegmentPlan {
  std::vector<std::size_t> starts;  // first frame of each clip
  std::size_t dropped_frames = 0;
  bool warning = false;  // set when no clip fits
};

// Non-overlapping windows from frame 0; the trailing remainder is dropped.
SegmentPlan segment_frames(std::size_t frame_count, std::size_t clip_len);

template <typename T>
struct SegmentedVideo {
  std::vector<Tensor<T>> clips;  // each (1, c, clip_len, h, w)
  std::size_t dropped_frames = 0;
  bool warning = false;
};

// `video` is (1, c, frames, h, w).
template <typename T>
SegmentedVideo<T> segment_clips(const Tensor<T>& video, std::size_t clip_len);

// ---------------------------------------------------------------------------
// Labels

// 0:0, 1:1, 2:2, 3:3, 4-5:4, 6-15:5. Throws outside 0..15.
int quantize_pspi(int level);

enum class LabelOrder { kQuantizeThenAverage, kAverageThenQuantize };

// Clip label from raw per-frame PSPI levels. The alternative order rounds the
// raw mean half-up before quantizing.
double clip_label(std::span<const int> frame_levels,
                  LabelOrder order = LabelOrder::kQuantizeThenAverage);

// Median; an even count gives the mean of the two middle values.
double aggregate_video_score(std::span<const double> clip_scores);

enum class BdiBand { kMinimal, kMild, kModerate, kSevere };
// minimal 0-13, mild 14-19, moderate 20-28, severe 29-63. Throws outside 0..63.
BdiBand bdi_severity_band(int score);
std::string bdi_band_name(BdiBand band);

// ---------------------------------------------------------------------------
// Metrics; all throw on empty or mismatched inputs.

double metric_mae(std::span<const double> pred, std::span<const double> truth);
double metric_mse(std::span<const double> pred, std::span<const double> truth);
double metric_rmse(std::span<const double> pred, std::span<const double> truth);

// ---------------------------------------------------------------------------
// Datasets

struct Clip {
  std::string subject_id;
  std::string video_id;
  std::size_t clip_index = 0;
  std::string tensor_file;  // relative to the manifest directory
  double label = 0.0;
  Tensor<float> data;       // (1, 3, clip_len, h, w); empty if not loaded
};

struct ClipDataset {
  std::vector<Clip> clips;
  std::size_t clip_len = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return clips.size(); }
  // Sorted, unique.
  std::vector<std::string> subjects() const;
  std::vector<double> labels() const;
  ClipDataset subset(std::span<const std::size_t> indices) const;
  // Throws unless every clip tensor is (1, 3, clip_len, height, width).
  void validate() const;
};

struct Fold {
  std::string test_subject;
  std::vector<std::string> train_subjects;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

// One fold per subject in lexicographic order. Throws with fewer than two
// subjects.
FoldPlan loso_splits(std::span<const std::string> clip_subjects);
FoldPlan loso_splits(const ClipDataset& dataset);

// Per-video median of clip predictions, paired with the video label.
struct VideoScores {
  std::vector<std::string> video_ids;
  std::vector<double> predictions;
  std::vector<double> labels;
};
VideoScores aggregate_by_video(const ClipDataset& dataset,
                               std::span<const double> clip_predictions);

// ---------------------------------------------------------------------------
// Synthetic data

// A Gaussian bump circles a per-video centre; the radius, and so the
// per-frame displacement, is proportional to (label - label_min).
struct SynthConfig {
  std::size_t clips = 64;
  std::size_t clips_per_video = 2;
  std::size_t subjects = 8;
  std::size_t frames = 16;  // clip_len
  std::size_t height = 32;
  std::size_t width = 32;
  double label_min = 0.0;
  double label_max = 4.0;
  double noise = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
  // key=value lines; unknown keys are rejected.
  static SynthConfig from_text(std::string_view text);
};

// Radius in pixels for `label`.
double synth_radius(const SynthConfig& config, double label);

ClipDataset synth_generate(const SynthConfig& config);

// Mean over frames of the bump-centre displacement, measured from pixel
// intensities (intensity-weighted centroid) of channel 0.
double mean_frame_displacement(const Tensor<float>& clip);

// ---------------------------------------------------------------------------
// Manifest: tab-separated subject_id, video_id, clip_index, tensor_file,
// label, one clip per line after a header line.

std::vector<Clip> load_manifest(const std::string& path);
void save_manifest(std::span<const Clip> clips, const std::string& path);

// Manifest plus tensors, paths resolved against the manifest directory.
ClipDataset load_dataset(const std::string& manifest_path);
// Writes `<dir>/manifest.tsv` and one tensor file per clip.
void save_dataset(const ClipDataset& dataset, const std::string& dir);

}  // namespace dmsn

#endif  // DMSN_CLIPS_HPP_
