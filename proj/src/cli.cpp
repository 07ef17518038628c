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

#include "dmsn/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "dmsn/clips.hpp"
#include "dmsn/complexity.hpp"
#include "dmsn/format.hpp"
#include "dmsn/gradsuite.hpp"
#include "dmsn/model.hpp"
#include "dmsn/training.hpp"

namespace dmsn {

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "text";
};

struct ArchFlags {
  std::string model = "dmsn";
  std::size_t branches = 4;
  std::string width_multiplier = "1";
  std::size_t frames = 0;  // 0: command default or dataset geometry
  std::size_t height = 0;
  std::size_t width = 0;
};

struct TrainFlags {
  std::string schedule = "depression";
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::string> optimizer;
  std::optional<double> weight_decay;
  std::size_t batch = 8;
  std::string loss = "mse";
  std::size_t max_steps = 0;
};

void add_arch_flags(CLI::App* cmd, ArchFlags& f) {
  cmd->add_option("--model", f.model, "dmsn, dmsn-a, dmsn-b or dmsn-c");
  cmd->add_option("--branches", f.branches, "Branches per block (2-4)");
  cmd->add_option("--width-multiplier", f.width_multiplier,
                  "Channel scaling, e.g. 1/8");
  cmd->add_option("--frames", f.frames, "Clip length");
  cmd->add_option("--height", f.height, "Input height");
  cmd->add_option("--width", f.width, "Input width");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--schedule", f.schedule, "pretrain, depression or pain")
      ->check(CLI::IsMember(train_preset_names()));
  cmd->add_option("--epochs", f.epochs, "Override the schedule's epoch count");
  cmd->add_option("--lr", f.lr, "Constant learning rate override");
  cmd->add_option("--optimizer", f.optimizer, "Override: sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}));
  cmd->add_option("--weight-decay", f.weight_decay, "L2 weight decay");
  cmd->add_option("--batch", f.batch, "Minibatch size")->check(CLI::PositiveNumber);
  cmd->add_option("--loss", f.loss, "mse or mae")->check(CLI::IsMember({"mse", "mae"}));
  cmd->add_option("--max-steps", f.max_steps, "Stop after this many steps (0: no limit)");
}

ModelConfig model_config(const ArchFlags& f, std::size_t frames, std::size_t height,
                         std::size_t width, std::uint64_t seed) {
  ModelConfig c;
  c.kind = parse_model_kind(f.model);
  c.branch_count = f.branches;
  c.width_multiplier = Ratio::parse(f.width_multiplier);
  c.clip_len = f.frames != 0 ? f.frames : frames;
  c.height = f.height != 0 ? f.height : height;
  c.width = f.width != 0 ? f.width : width;
  c.seed = seed;
  c.validate();
  return c;
}

TrainConfig train_config(const TrainFlags& f, std::uint64_t seed) {
  const TrainPreset preset = train_preset(f.schedule);
  TrainConfig c;
  c.optimizer.kind = f.optimizer ? parse_optimizer_kind(*f.optimizer) : preset.optimizer;
  if (f.weight_decay) c.optimizer.weight_decay = *f.weight_decay;
  c.schedule = preset.schedule;
  c.epochs = f.epochs ? *f.epochs : preset.epochs;
  c.batch_size = f.batch;
  c.loss = parse_loss_kind(f.loss);
  c.seed = seed;
  c.max_steps = f.max_steps;
  c.lr_override = f.lr;
  return c;
}

// Writes to --out when set, otherwise to `out`.
void emit(const Globals& g, std::ostream& out, const std::string& text) {
  if (g.out.empty()) {
    out << text;
    return;
  }
  std::ofstream os(g.out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + g.out + " for writing");
  os << text;
}

// ---------------------------------------------------------------------------

int cmd_describe(const Globals& g, const ArchFlags& f, bool verbose,
                 std::ostream& out) {
  const ModelSpec spec = build_model(model_config(f, 16, 112, 112, g.seed));
  if (parse_table_format(g.format) == TableFormat::kText) {
    emit(g, out, describe_model(spec, verbose));
    return 0;
  }
  std::ostringstream os;
  os << "layer,channels,t,h,w\r\n";
  for (const auto& row : activation_extents(spec, spec.input_dims())) {
    os << csv_field(row.layer) << "," << row.dims.c << "," << row.dims.t << ","
       << row.dims.h << "," << row.dims.w << "\r\n";
  }
  emit(g, out, os.str());
  return 0;
}

int cmd_count(const Globals& g, const std::vector<std::string>& models,
              const std::vector<std::size_t>& frames,
              const std::vector<std::size_t>& branches, const ArchFlags& f,
              const std::string& convention, std::ostream& out) {
  const MacConvention conv = parse_convention(convention);
  const TableFormat format = parse_table_format(g.format);
  std::vector<CostReport> reports;
  for (const auto& name : models) {
    for (std::size_t nb : branches) {
      for (std::size_t clip_len : frames) {
        ArchFlags a = f;
        a.model = name;
        a.branches = nb;
        a.frames = clip_len;
        const ModelSpec spec = build_model(model_config(a, 16, 112, 112, g.seed));
        CostReport r = count_flops(spec, spec.input_dims(), conv);
        if (branches.size() > 1 || nb != 4) r.model += " b=" + std::to_string(nb);
        if (f.width_multiplier != "1") r.model += " w=" + spec.config.width_multiplier.str();
        reports.push_back(std::move(r));
      }
    }
  }
  emit(g, out, emit_cost_table(reports, format));
  return 0;
}

int cmd_gradcheck(const Globals& g, bool inject_fault, std::ostream& out,
                  std::ostream& err) {
  GradSuiteOptions o;
  o.seed = g.seed;
  o.inject_fault = inject_fault;
  const GradSuiteResult r = run_gradient_suite(o);
  if (parse_table_format(g.format) == TableFormat::kText) {
    emit(g, out, r.to_text());
  } else {
    std::ostringstream os;
    os << "group,case,probes,skipped,max_rel_error,worst_param,passed\r\n";
    for (const auto& c : r.cases) {
      os << c.group << "," << csv_field(c.name) << "," << c.report.probes << ","
         << c.report.skipped << "," << format_significant(c.report.max_rel_error, 6)
         << "," << csv_field(c.report.worst_param) << ","
         << (c.report.passed ? "true" : "false") << "\r\n";
    }
    emit(g, out, os.str());
  }
  if (!r.passed) {
    err << "gradient check failed; worst offender " << r.worst
        << " (relative error " << format_significant(r.max_rel_error, 3) << ")\n";
    return 1;
  }
  return 0;
}

int cmd_synth(const Globals& g, SynthConfig config, std::ostream& out) {
  if (g.out.empty()) throw std::invalid_argument("synth requires --out <directory>");
  config.seed = g.seed;
  const ClipDataset ds = synth_generate(config);
  save_dataset(ds, g.out);
  std::ofstream cfg(std::filesystem::path(g.out) / "synth.cfg", std::ios::binary);
  cfg << config.to_text();
  out << "wrote " << ds.size() << " clips (" << ds.subjects().size()
      << " subjects, " << ds.clip_len << "x" << ds.height << "x" << ds.width
      << ") to " << (std::filesystem::path(g.out) / "manifest.tsv").string() << "\n";
  return 0;
}

std::string epoch_lines(const TrainHistory& h, const TrainConfig& c) {
  std::ostringstream os;
  for (const auto& e : h.epochs) {
    const double lr = c.lr_override ? *c.lr_override : lr_at(c.schedule, e.epoch);
    os << "epoch " << e.epoch << " lr " << format_shortest(lr) << " train_loss "
       << format_significant(e.train_loss, 6);
    if (e.val_mae) {
      os << " val_mae " << format_significant(*e.val_mae, 6) << " val_rmse "
         << format_significant(*e.val_rmse, 6);
    }
    os << "\n";
  }
  return os.str();
}

struct Initial {
  std::optional<ModelSpec> spec;
  ParamBundle<float> params;
};

Initial load_initial(const std::string& path, bool reset, std::uint64_t seed) {
  Initial init;
  if (path.empty()) return init;
  auto [spec, params] = load_checkpoint<float>(path);
  if (reset) reset_head(params, spec, seed);
  init.spec = std::move(spec);
  init.params = std::move(params);
  return init;
}

int cmd_train(const Globals& g, const ArchFlags& f, const TrainFlags& tf,
              const std::string& data, const std::string& val,
              const std::string& init_path, bool reset_head_flag,
              std::string history_path, std::ostream& out) {
  const ClipDataset ds = load_dataset(data);
  Initial init = load_initial(init_path, reset_head_flag, g.seed);
  const ModelSpec spec =
      init.spec ? *init.spec
                : build_model(model_config(f, ds.clip_len, ds.height, ds.width, g.seed));
  check_geometry(spec, ds);
  std::optional<ClipDataset> validation;
  if (!val.empty()) validation = load_dataset(val);
  const TrainConfig tc = train_config(tf, g.seed);
  const TrainResult<float> r =
      train<float>(spec, ds, tc, init.spec ? &init.params : nullptr,
                   validation ? &*validation : nullptr);
  const std::string ckpt = g.out.empty() ? "model.ckpt" : g.out;
  save_checkpoint(spec, r.params, ckpt);
  if (history_path.empty()) history_path = ckpt + ".history.tsv";
  std::ofstream hs(history_path, std::ios::binary);
  if (!hs) throw std::runtime_error("cannot open " + history_path + " for writing");
  hs << r.history.to_text();

  out << "model " << model_kind_name(spec.config.kind) << " schedule " << tf.schedule
      << " optimizer " << optimizer_kind_name(tc.optimizer.kind) << " epochs "
      << tc.epochs << " batch " << tc.batch_size << "\n";
  out << epoch_lines(r.history, tc);
  out << "steps " << r.history.steps.size() << " final_loss "
      << (r.history.steps.empty() ? std::string("-")
                                  : format_significant(r.history.steps.back().loss, 6))
      << "\n";
  out << "checkpoint " << ckpt << "\nhistory " << history_path << "\n";
  return 0;
}

struct MetricRow {
  std::string scope;
  std::string subject;
  std::size_t count = 0;
  double mae = 0, rmse = 0, mse = 0;
};

MetricRow metrics_row(std::string scope, std::string subject,
                      std::span<const double> pred, std::span<const double> truth) {
  return {std::move(scope), std::move(subject), pred.size(), metric_mae(pred, truth),
          metric_rmse(pred, truth), metric_mse(pred, truth)};
}

// Clip-level or median-aggregated video-level pairs.
std::pair<std::vector<double>, std::vector<double>> scored_pairs(
    const ClipDataset& ds, const std::vector<double>& preds, bool median) {
  if (!median) return {preds, ds.labels()};
  VideoScores v = aggregate_by_video(ds, preds);
  return {v.predictions, v.labels};
}

std::string metrics_table(const std::vector<MetricRow>& rows, TableFormat format,
                          bool median) {
  std::ostringstream os;
  const char* unit = median ? "videos" : "clips";
  if (format == TableFormat::kCsv) {
    os << "scope,test_subject,count,mae,rmse,mse\r\n";
    for (const auto& r : rows) {
      os << r.scope << "," << csv_field(r.subject) << "," << r.count << ","
         << format_significant(r.mae, 6) << "," << format_significant(r.rmse, 6)
         << "," << format_significant(r.mse, 6) << "\r\n";
    }
    return os.str();
  }
  for (const auto& r : rows) {
    os << r.scope;
    if (!r.subject.empty()) os << " " << r.subject;
    os << " " << unit << " " << r.count << " MAE " << format_fixed(r.mae, 4)
       << " RMSE " << format_fixed(r.rmse, 4) << " MSE " << format_fixed(r.mse, 4)
       << "\n";
  }
  return os.str();
}

int cmd_eval(const Globals& g, const ArchFlags& f, const TrainFlags& tf,
             const std::string& data, const std::string& checkpoint,
             const std::string& aggregate, bool loso, std::size_t batch,
             std::ostream& out) {
  const ClipDataset ds = load_dataset(data);
  const bool median = aggregate == "median";
  const TableFormat format = parse_table_format(g.format);
  std::vector<MetricRow> rows;

  if (!loso) {
    if (checkpoint.empty()) {
      throw std::invalid_argument("eval requires --checkpoint unless --loso is given");
    }
    auto [spec, params] = load_checkpoint<float>(checkpoint);
    check_geometry(spec, ds);
    const auto preds = predict(spec, params, ds, batch);
    const auto [p, t] = scored_pairs(ds, preds, median);
    rows.push_back(metrics_row("all", "", p, t));
    emit(g, out, metrics_table(rows, format, median));
    return 0;
  }

  Initial init = load_initial(checkpoint, true, g.seed);
  const ModelSpec spec =
      init.spec ? *init.spec
                : build_model(model_config(f, ds.clip_len, ds.height, ds.width, g.seed));
  check_geometry(spec, ds);
  const TrainConfig tc = train_config(tf, g.seed);
  const FoldPlan plan = loso_splits(ds);
  std::vector<double> pooled_p, pooled_t;
  for (const Fold& fold : plan.folds) {
    const ClipDataset train_set = ds.subset(fold.train_indices);
    const ClipDataset test_set = ds.subset(fold.test_indices);
    const TrainResult<float> r =
        train<float>(spec, train_set, tc, init.spec ? &init.params : nullptr);
    const auto preds = predict(spec, r.params, test_set, batch);
    const auto [p, t] = scored_pairs(test_set, preds, median);
    rows.push_back(metrics_row("fold", fold.test_subject, p, t));
    pooled_p.insert(pooled_p.end(), p.begin(), p.end());
    pooled_t.insert(pooled_t.end(), t.begin(), t.end());
  }
  rows.push_back(metrics_row("pooled", "", pooled_p, pooled_t));
  emit(g, out, metrics_table(rows, format, median));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Decomposed multiscale spatiotemporal networks", "dmsn"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--out", g.out, "Output file (directory for synth)");
  app.add_option("--format", g.format, "text or csv")
      ->check(CLI::IsMember({"text", "csv"}));
  app.set_config("--config", "", "Read key=value options from a file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // describe
  ArchFlags describe_flags;
  bool verbose = false;
  auto* describe = app.add_subcommand("describe", "Layer-by-layer model listing");
  add_arch_flags(describe, describe_flags);
  describe->add_flag("--verbose", verbose, "List every convolution");

  // count
  ArchFlags count_flags;
  std::vector<std::string> count_models{"dmsn"};
  std::vector<std::size_t> count_frames{16};
  std::vector<std::size_t> count_branches{4};
  std::string convention = "MAC=1";
  auto* count = app.add_subcommand("count", "Parameter and FLOP table");
  count->add_option("--model", count_models, "Comma-separated model names")
      ->delimiter(',');
  count->add_option("--frames", count_frames, "Comma-separated clip lengths")
      ->delimiter(',');
  count->add_option("--branches", count_branches, "Comma-separated branch counts")
      ->delimiter(',');
  count->add_option("--width-multiplier", count_flags.width_multiplier,
                    "Channel scaling, e.g. 1/8");
  count->add_option("--height", count_flags.height, "Input height");
  count->add_option("--width", count_flags.width, "Input width");
  count->add_option("--convention", convention, "MAC=1 or MAC=2");

  // gradcheck
  std::string scale = "micro";
  bool inject_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  gradcheck->add_option("--scale", scale, "Suite scale")->check(CLI::IsMember({"micro"}));
  gradcheck->add_flag("--inject-fault", inject_fault)->group("");

  // synth
  SynthConfig synth_config;
  auto* synth = app.add_subcommand("synth", "Write a synthetic moving-bump dataset");
  synth->add_option("--clips", synth_config.clips, "Number of clips");
  synth->add_option("--frames", synth_config.frames, "Frames per clip");
  synth->add_option("--height", synth_config.height, "Frame height");
  synth->add_option("--width", synth_config.width, "Frame width");
  synth->add_option("--clips-per-video", synth_config.clips_per_video, "Clips per video");
  synth->add_option("--subjects", synth_config.subjects, "Number of subjects");
  synth->add_option("--label-min", synth_config.label_min, "Smallest label");
  synth->add_option("--label-max", synth_config.label_max, "Largest label");
  synth->add_option("--noise", synth_config.noise, "Pixel noise standard deviation");

  // train
  ArchFlags train_arch;
  TrainFlags train_flags;
  std::string train_data, train_val, train_init, history_path;
  bool reset = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_arch_flags(train_cmd, train_arch);
  add_train_flags(train_cmd, train_flags);
  train_cmd->add_option("--data", train_data, "Training manifest")->required();
  train_cmd->add_option("--val", train_val, "Validation manifest");
  train_cmd->add_option("--init", train_init, "Start from this checkpoint");
  train_cmd->add_flag("--reset-head", reset, "Re-draw the regression head of --init");
  train_cmd->add_option("--history", history_path, "Loss history file");

  // eval
  ArchFlags eval_arch;
  TrainFlags eval_train;
  std::string eval_data, checkpoint, aggregate = "none";
  bool loso = false;
  std::size_t eval_batch = 8;
  auto* eval = app.add_subcommand("eval", "Evaluate predictions against labels");
  add_arch_flags(eval, eval_arch);
  add_train_flags(eval, eval_train);
  eval->add_option("--data", eval_data, "Manifest to evaluate")->required();
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--aggregate", aggregate, "none or median")
      ->check(CLI::IsMember({"none", "median"}));
  eval->add_flag("--loso", loso, "Leave-one-subject-out: train and test per fold");
  eval->add_option("--eval-batch", eval_batch, "Prediction batch size")
      ->check(CLI::PositiveNumber);

  std::vector<std::string> argv_store{"dmsn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*describe) return cmd_describe(g, describe_flags, verbose, out);
    if (*count) {
      return cmd_count(g, count_models, count_frames, count_branches, count_flags,
                       convention, out);
    }
    if (*gradcheck) return cmd_gradcheck(g, inject_fault, out, err);
    if (*synth) return cmd_synth(g, synth_config, out);
    if (*train_cmd) {
      return cmd_train(g, train_arch, train_flags, train_data, train_val, train_init,
                       reset, history_path, out);
    }
    if (*eval) {
      return cmd_eval(g, eval_arch, eval_train, eval_data, checkpoint, aggregate, loso,
                      eval_batch, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dmsn
