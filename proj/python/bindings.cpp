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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "dmsn/cli.hpp"
#include "dmsn/clips.hpp"
#include "dmsn/complexity.hpp"
#include "dmsn/model.hpp"

namespace py = pybind11;

namespace {

dmsn::ModelSpec make_spec(const std::string& model, std::size_t frames, std::size_t height,
                          std::size_t width, std::size_t branches,
                          const std::string& width_multiplier, std::uint64_t seed) {
  dmsn::ModelConfig c;
  c.kind = dmsn::parse_model_kind(model);
  c.clip_len = frames;
  c.height = height;
  c.width = width;
  c.branch_count = branches;
  c.width_multiplier = dmsn::Ratio::parse(width_multiplier);
  c.seed = seed;
  return dmsn::build_model(c);
}

py::dict cost(const std::string& model, std::size_t frames, std::size_t branches,
              const std::string& width_multiplier, const std::string& convention) {
  const dmsn::ModelSpec spec = make_spec(model, frames, 112, 112, branches, width_multiplier, 0);
  const dmsn::CostReport r =
      dmsn::count_flops(spec, spec.input_dims(), dmsn::parse_convention(convention));
  py::dict d;
  d["params"] = r.total_params;
  d["flops"] = r.total_flops;
  d["aux_flops"] = r.aux_flops;
  d["running_stat_params"] = r.running_stat_params;
  d["convention"] = dmsn::convention_name(r.convention);
  return d;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> extents(
    const std::string& model, std::size_t frames, std::size_t height, std::size_t width,
    const std::string& width_multiplier) {
  const dmsn::ModelSpec spec = make_spec(model, frames, height, width, 4, width_multiplier, 0);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (const auto& row : dmsn::activation_extents(spec, spec.input_dims())) {
    out.push_back({row.layer, {row.dims.c, row.dims.t, row.dims.h, row.dims.w}});
  }
  return out;
}

py::array_t<float> forward(py::array_t<float, py::array::c_style | py::array::forcecast> clips,
                           const std::string& model, const std::string& width_multiplier,
                           std::size_t branches, std::uint64_t seed) {
  if (clips.ndim() != 5) throw std::invalid_argument("clips must be (n, 3, t, h, w)");
  const auto* s = clips.shape();
  const dmsn::Dims5 dims{static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]),
                         static_cast<std::size_t>(s[2]), static_cast<std::size_t>(s[3]),
                         static_cast<std::size_t>(s[4])};
  const dmsn::ModelSpec spec =
      make_spec(model, dims.t, dims.h, dims.w, branches, width_multiplier, seed);
  const auto params = dmsn::init_params<float>(spec, seed);
  dmsn::Tensor<float> x(dims, std::vector<float>(clips.data(), clips.data() + dims.numel()));
  std::vector<float> scores;
  {
    py::gil_scoped_release release;
    scores = dmsn::model_forward(spec, params, x);
  }
  return py::array_t<float>(static_cast<py::ssize_t>(scores.size()), scores.data());
}

py::tuple run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = dmsn::run_cli(args, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_dmsn, m) {
  m.doc() = "Decomposed multiscale spatiotemporal networks: costs, protocol and forward pass.";

  m.def("cost", &cost, py::arg("model") = "dmsn", py::arg("frames") = 16,
        py::arg("branches") = 4, py::arg("width_multiplier") = "1",
        py::arg("convention") = "MAC=1",
        "Parameter and FLOP totals for a 112x112 input.");
  m.def("extents", &extents, py::arg("model") = "dmsn", py::arg("frames") = 16,
        py::arg("height") = 112, py::arg("width") = 112, py::arg("width_multiplier") = "1",
        "(layer, [channels, t, h, w]) for every stage.");
  m.def(
      "describe",
      [](const std::string& model, std::size_t frames, bool verbose) {
        return dmsn::describe_model(make_spec(model, frames, 112, 112, 4, "1", 0), verbose);
      },
      py::arg("model") = "dmsn", py::arg("frames") = 16, py::arg("verbose") = false);
  m.def("forward", &forward, py::arg("clips"), py::arg("model") = "dmsn",
        py::arg("width_multiplier") = "1/8", py::arg("branches") = 4, py::arg("seed") = 0,
        "Eval-mode scores of a freshly initialised model.");

  m.def("quantize_pspi", &dmsn::quantize_pspi, py::arg("level"));
  m.def(
      "clip_label",
      [](const std::vector<int>& levels, bool average_first) {
        return dmsn::clip_label(levels, average_first
                                            ? dmsn::LabelOrder::kAverageThenQuantize
                                            : dmsn::LabelOrder::kQuantizeThenAverage);
      },
      py::arg("levels"), py::arg("average_first") = false);
  m.def(
      "aggregate_video_score",
      [](const std::vector<double>& v) { return dmsn::aggregate_video_score(v); },
      py::arg("scores"));
  m.def(
      "bdi_severity_band",
      [](int score) { return dmsn::bdi_band_name(dmsn::bdi_severity_band(score)); },
      py::arg("score"));
  m.def(
      "mae", [](const std::vector<double>& p, const std::vector<double>& t) {
        return dmsn::metric_mae(p, t);
      });
  m.def(
      "mse", [](const std::vector<double>& p, const std::vector<double>& t) {
        return dmsn::metric_mse(p, t);
      });
  m.def(
      "rmse", [](const std::vector<double>& p, const std::vector<double>& t) {
        return dmsn::metric_rmse(p, t);
      });
  m.def(
      "loso_splits",
      [](const std::vector<std::string>& subjects) {
        py::list folds;
        for (const auto& f : dmsn::loso_splits(subjects).folds) {
          py::dict d;
          d["test_subject"] = f.test_subject;
          d["train_indices"] = f.train_indices;
          d["test_indices"] = f.test_indices;
          folds.append(d);
        }
        return folds;
      },
      py::arg("subjects"));

  m.def("run", &run, py::arg("args"),
        "Runs the command-line front end; returns (exit_code, stdout, stderr).");
}
