// midline: command line front end for the midline-shift pipeline.
//
// Subcommands: synth-gen | train | predict | evaluate | plot.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "midline/data_model.hpp"
#include "midline/decode.hpp"
#include "midline/metrics.hpp"
#include "midline/mls.hpp"
#include "midline/network.hpp"
#include "midline/pipeline.hpp"
#include "midline/preprocess.hpp"
#include "midline/synth.hpp"
#include "midline/training.hpp"
#include "midline/types.hpp"

#include "png_image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> list_study_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw midline::Error("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw midline::Error("no study directories under " + root.string());
  return dirs;
}

int cmd_synth_gen(int n, int slices, const std::string& out, uint64_t seed,
                  double positive_frac) {
  midline::ShiftDistribution dist;
  dist.positive_frac = positive_frac;
  const auto dataset = midline::gen_dataset(n, slices, dist, seed);
  int positives = 0;
  for (const auto& item : dataset) {
    midline::save_study(fs::path(out) / item.study.id, item.study);
    midline::save_annotations(fs::path(out) / item.study.id / "annotation.json",
                              item.annotation);
    if (item.annotation.gt_mls_mm && *item.annotation.gt_mls_mm >= 5.0) ++positives;
  }
  json summary{{"n", n},
               {"slices_per_study", slices},
               {"significant_studies", positives},
               {"out", out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, double val_frac,
              const std::string& out_dir, int64_t seed_override) {
  auto [train_config, model_config] = midline::parse_train_config_file(config_path);
  if (seed_override >= 0) train_config.seed = static_cast<uint64_t>(seed_override);
  if (val_frac < 0.0 || val_frac >= 1.0)
    throw midline::Error("--val-frac must lie in [0, 1)");

  const auto dirs = list_study_dirs(data_dir);
  std::vector<size_t> order(dirs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(train_config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_val = std::min(dirs.size() - 1,
                                static_cast<size_t>(std::lround(val_frac * dirs.size())));

  std::vector<midline::TrainSample> train_set, val_set;
  for (size_t k = 0; k < order.size(); ++k) {
    const auto& dir = dirs[order[k]];
    const auto study = midline::load_study(dir);
    const auto ann = midline::load_annotations(dir / "annotation.json", study);
    auto samples = midline::make_training_samples(study, ann, model_config);
    auto& dst = (k < n_val) ? val_set : train_set;
    for (auto& s : samples) dst.push_back(std::move(s));
  }
  std::cerr << "training on " << train_set.size() << " slices, validating on "
            << val_set.size() << "\n";

  const auto result = midline::train(train_set, val_set, train_config, model_config);
  fs::create_directories(out_dir);
  const fs::path ckpt = fs::path(out_dir) / "model.ckpt";
  result.model.save(ckpt);
  midline::write_history_csv(fs::path(out_dir) / "history.csv", result.history);

  json summary{{"iterations", train_config.iterations},
               {"final_total", result.history.back().total},
               {"checkpoint", ckpt.string()}};
  if (result.best_val_rmses) {
    summary["best_val_rmses"] = *result.best_val_rmses;
    summary["best_iteration"] = result.best_iteration;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& study_dir,
                const std::string& out_path, double coverage, double limits_threshold) {
  const auto model = midline::Model::load(model_path);
  const auto study = midline::load_study(study_dir);
  midline::PredictOptions options;
  options.coverage = coverage;
  options.limits_threshold = limits_threshold;
  const auto pred = midline::predict_study(model, study, options);
  midline::save_predictions(out_path, pred);
  json summary{{"id", pred.study_id},
               {"mls_mm", pred.mls_mm ? json(*pred.mls_mm) : json(nullptr)},
               {"significant", pred.significant},
               {"out", out_path}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                 const std::string& out_path, double mls_threshold_mm) {
  const auto dirs = list_study_dirs(gt_dir);
  std::vector<midline::StudyCurves> curve_studies;
  std::vector<std::pair<double, double>> mls_pairs;
  std::vector<bool> labels;
  std::vector<double> scores;

  for (const auto& dir : dirs) {
    const auto study = midline::load_study(dir);
    const auto ann = midline::load_annotations(dir / "annotation.json", study);
    const auto pred =
        midline::load_predictions(fs::path(pred_dir) / (study.id + ".json"));
    if (pred.slices.size() != study.slices.size())
      throw midline::Error("evaluate: prediction/study slice count mismatch for " + study.id);

    if (!ann.gt_mls_mm) continue;  // no ground-truth midline anywhere

    midline::StudyCurves curves;
    for (size_t i = 0; i < study.slices.size(); ++i) {
      if (ann.slices[i].is_empty()) continue;
      // Compare in the resampled frame the predictions live in.
      const auto gt = midline::resample_annotation(
          ann.slices[i], study.spacing_mm[1], study.spacing_mm[2],
          static_cast<int>(pred.slices[i].curve.size()));
      if (gt.is_empty()) continue;
      curves.push_back({gt, pred.slices[i].curve});
    }
    if (!curves.empty()) curve_studies.push_back(std::move(curves));

    const double gt_mls = *ann.gt_mls_mm;
    const double pred_mls = pred.mls_mm.value_or(0.0);  // empty limits score as 0 mm
    mls_pairs.emplace_back(gt_mls, pred_mls);
    labels.push_back(gt_mls >= mls_threshold_mm);
    scores.push_back(pred_mls);
  }
  if (mls_pairs.empty()) throw midline::Error("evaluate: no studies with ground truth");

  midline::EvaluationReport report;
  report.mae_mm = midline::mls_mae(mls_pairs);
  report.curve = midline::aggregate_curve_metrics(curve_studies);
  report.n_studies = static_cast<int>(mls_pairs.size());
  report.n_slices = report.curve.n_slices;
  const bool has_pos = std::count(labels.begin(), labels.end(), true) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), false) > 0;
  if (has_pos && has_neg) {
    report.roc_auc = midline::roc_auc(labels, scores);
    report.roc_auc_defined = true;
  }

  const std::string doc = midline::evaluation_report_json(report);
  if (!out_path.empty()) {
    fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw midline::Error("evaluate: cannot write " + out_path);
    out << doc << "\n";
  }
  std::cout << doc << "\n";
  return 0;
}

int cmd_plot(const std::string& study_dir, const std::string& pred_path,
             const std::string& out_path, const std::string& slice_arg) {
  const auto study = midline::load_study(study_dir);
  const auto pred = midline::load_predictions(pred_path);
  if (pred.slices.size() != study.slices.size())
    throw midline::Error("plot: prediction/study slice count mismatch");

  std::optional<midline::StudyAnnotation> ann;
  if (fs::exists(fs::path(study_dir) / "annotation.json"))
    ann = midline::load_annotations(fs::path(study_dir) / "annotation.json", study);

  int slice = 0;
  if (slice_arg == "auto") {
    slice = pred.argmax_slice.value_or(0);
  } else {
    slice = std::stoi(slice_arg);
  }
  if (slice < 0 || slice >= static_cast<int>(study.slices.size()))
    throw midline::Error("plot: slice index out of range");

  const auto pre = midline::preprocess_slice(study.slices[static_cast<size_t>(slice)],
                                             study.spacing_mm[1], study.spacing_mm[2]);
  const auto& img = pre.image;

  // Grayscale background windowed to the 2nd..98th intensity percentiles.
  std::vector<float> sorted(img.data);
  std::sort(sorted.begin(), sorted.end());
  const float lo = sorted[static_cast<size_t>(0.02 * (sorted.size() - 1))];
  const float hi = sorted[static_cast<size_t>(0.98 * (sorted.size() - 1))];
  const float span = std::max(1e-6f, hi - lo);
  midline::tools::RgbImage canvas(img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) {
      const float v = std::clamp((img(y, x) - lo) / span, 0.0f, 1.0f);
      const auto g = static_cast<uint8_t>(v * 255.0f);
      canvas.set(y, x, g, g, g);
    }

  const auto& sp = pred.slices[static_cast<size_t>(slice)];
  if (!sp.interval.is_empty()) {
    for (int y = sp.interval.y_lo; y <= sp.interval.y_hi; ++y) {
      const auto yi = static_cast<size_t>(y);
      // confidence band, shaded
      const int bx0 = static_cast<int>(std::lround(sp.lower[yi]));
      const int bx1 = static_cast<int>(std::lround(sp.upper[yi]));
      for (int x = bx0; x <= bx1; ++x) canvas.blend(y, x, 255, 220, 40, 0.30);
      // predicted midline, dashed
      if ((y / 4) % 2 == 0)
        canvas.set(y, static_cast<int>(std::lround(sp.curve[yi])), 255, 220, 40);
    }
  }
  if (ann && !ann->slices[static_cast<size_t>(slice)].is_empty()) {
    const auto gt = midline::resample_annotation(ann->slices[static_cast<size_t>(slice)],
                                                 study.spacing_mm[1], study.spacing_mm[2],
                                                 img.rows);
    for (int y = gt.interval.y_lo; y <= gt.interval.y_hi; ++y)
      canvas.set(y, static_cast<int>(std::lround(gt.x_at(y))), 230, 40, 40);
  }

  fs::path p(out_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  midline::tools::write_png(p, canvas);
  json summary{{"out", out_path}, {"slice", slice}};
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"midline: structurally constrained brain midline-shift estimation"};
  app.require_subcommand(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate synthetic phantom studies");
  int n = 10, slices = 4;
  std::string synth_out;
  uint64_t synth_seed = 0;
  double positive_frac = 0.5;
  synth->add_option("--n", n, "number of studies")->required();
  synth->add_option("--slices", slices, "slices per study");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--positive-frac", positive_frac, "fraction with MLS >= 5 mm");

  // train
  auto* train = app.add_subcommand("train", "train a model on a study directory");
  std::string train_config, train_data, train_out;
  double val_frac = 0.1;
  int64_t train_seed = -1;
  train->add_option("--config", train_config, "key = value config file")->required();
  train->add_option("--data", train_data, "directory of study subdirectories")->required();
  train->add_option("--val-frac", val_frac, "fraction of studies held out for validation");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--seed", train_seed, "override the config seed");

  // predict
  auto* predict = app.add_subcommand("predict", "run inference on one study");
  std::string model_path, study_dir, pred_out;
  double coverage = 0.95, limits_threshold = 0.5;
  predict->add_option("--model", model_path, "checkpoint file")->required();
  predict->add_option("--study", study_dir, "study directory")->required();
  predict->add_option("--out", pred_out, "prediction JSON path")->required();
  predict->add_option("--coverage", coverage, "confidence band coverage");
  predict->add_option("--limits-threshold", limits_threshold, "limits decision threshold");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  std::string pred_dir, gt_dir, eval_out;
  double mls_threshold = 5.0;
  evaluate->add_option("--pred-dir", pred_dir, "directory of <id>.json predictions")
      ->required();
  evaluate->add_option("--gt-dir", gt_dir, "directory of ground-truth studies")->required();
  evaluate->add_option("--out", eval_out, "metrics report path");
  evaluate->add_option("--mls-threshold-mm", mls_threshold, "significant-MLS threshold");

  // plot
  auto* plot = app.add_subcommand("plot", "render curve overlays to PNG");
  std::string plot_study, plot_pred, plot_out, plot_slice = "auto";
  plot->add_option("--study", plot_study, "study directory")->required();
  plot->add_option("--pred", plot_pred, "prediction JSON")->required();
  plot->add_option("--out", plot_out, "output PNG path")->required();
  plot->add_option("--slice", plot_slice, "slice index or 'auto'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth_gen(n, slices, synth_out, synth_seed, positive_frac);
    if (train->parsed())
      return cmd_train(train_config, train_data, val_frac, train_out, train_seed);
    if (predict->parsed())
      return cmd_predict(model_path, study_dir, pred_out, coverage, limits_threshold);
    if (evaluate->parsed())
      return cmd_evaluate(pred_dir, gt_dir, eval_out, mls_threshold);
    if (plot->parsed()) return cmd_plot(plot_study, plot_pred, plot_out, plot_slice);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
