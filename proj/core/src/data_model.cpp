#include "midline/data_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "midline/mls.hpp"

static_assert(std::endian::native == std::endian::little,
              "volume.raw is little-endian; big-endian hosts are not supported");

namespace midline {

using nlohmann::json;

void Study::validate() const {
  if (id.empty()) throw Error("Study: empty id");
  if (slices.empty()) throw Error("Study: no slices");
  for (double s : spacing_mm)
    if (!(s > 0.0)) throw Error("Study: spacing components must be positive");
  for (const auto& s : slices)
    if (!s.same_shape(slices.front())) throw Error("Study: slices differ in shape");
}

void MidlineAnnotation::validate(int rows, int cols) const {
  if (interval.is_empty()) {
    if (!xs.empty()) throw Error("MidlineAnnotation: xs present for empty interval");
    return;
  }
  if (interval.y_lo < 0 || interval.y_hi >= rows)
    throw Error("MidlineAnnotation: interval outside image rows");
  if (xs.size() != static_cast<size_t>(interval.length()))
    throw Error("MidlineAnnotation: xs length " + std::to_string(xs.size()) +
                " does not match interval length " + std::to_string(interval.length()));
  for (double x : xs)
    if (!(x >= 0.0 && x < cols) || !std::isfinite(x))
      throw Error("MidlineAnnotation: x out of [0, W)");
}

void StudyPrediction::validate() const {
  std::optional<double> best;
  std::optional<int> best_idx;
  for (size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    if (s.interval.is_empty() != !s.mls_mm.has_value())
      throw Error("StudyPrediction: slice interval/mls mismatch");
    if (s.mls_mm && (!best || *s.mls_mm > *best)) {
      best = *s.mls_mm;
      best_idx = static_cast<int>(i);
    }
  }
  const double tol = 1e-9;
  if (best.has_value() != mls_mm.has_value())
    throw Error("StudyPrediction: mls_mm presence mismatch");
  if (best && std::abs(*best - *mls_mm) > tol)
    throw Error("StudyPrediction: mls_mm is not the max over slices");
  if (best_idx != argmax_slice) throw Error("StudyPrediction: argmax_slice mismatch");
  if (mls_mm && significant != (*mls_mm >= significance_threshold_mm))
    throw Error("StudyPrediction: significant flag inconsistent");
}

Study load_study(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const auto vol_path = dir / "volume.raw";
  json meta;
  try {
    meta = json::parse(detail::read_file(meta_path));
  } catch (const json::exception& e) {
    throw Error("load_study: bad meta.json: " + std::string(e.what()));
  }

  Study study;
  try {
    study.id = meta.at("id").get<std::string>();
    const auto shape = meta.at("shape").get<std::vector<long>>();
    const auto spacing = meta.at("spacing_mm").get<std::vector<double>>();
    if (shape.size() != 3 || spacing.size() != 3)
      throw Error("load_study: shape/spacing_mm must have 3 entries");
    const long S = shape[0], H = shape[1], W = shape[2];
    if (S < 1 || H < 1 || W < 1) throw Error("load_study: non-positive shape");
    study.spacing_mm = {spacing[0], spacing[1], spacing[2]};
    for (double s : study.spacing_mm)
      if (!(s > 0.0)) throw Error("load_study: non-positive spacing");

    const std::string raw = detail::read_file(vol_path, /*binary=*/true);
    const size_t expected = static_cast<size_t>(S) * H * W * sizeof(float);
    if (raw.size() != expected)
      throw Error("load_study: volume.raw has " + std::to_string(raw.size()) +
                  " bytes, expected " + std::to_string(expected));
    study.slices.reserve(static_cast<size_t>(S));
    const char* p = raw.data();
    for (long s = 0; s < S; ++s) {
      ImageF img(static_cast<int>(H), static_cast<int>(W));
      std::memcpy(img.data.data(), p, static_cast<size_t>(H) * W * sizeof(float));
      p += static_cast<size_t>(H) * W * sizeof(float);
      study.slices.push_back(std::move(img));
    }
  } catch (const json::exception& e) {
    throw Error("load_study: bad meta.json: " + std::string(e.what()));
  }
  study.validate();
  return study;
}

void save_study(const std::filesystem::path& dir, const Study& study) {
  study.validate();
  std::filesystem::create_directories(dir);
  json meta;
  meta["id"] = study.id;
  meta["shape"] = {study.slices.size(), study.rows(), study.cols()};
  meta["spacing_mm"] = study.spacing_mm;
  detail::write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");

  std::string raw;
  raw.resize(study.slices.size() * study.slices.front().size() * sizeof(float));
  char* p = raw.data();
  for (const auto& slice : study.slices) {
    std::memcpy(p, slice.data.data(), slice.size() * sizeof(float));
    p += slice.size() * sizeof(float);
  }
  detail::write_file_atomic(dir / "volume.raw", raw, /*binary=*/true);
}

std::optional<double> annotation_mls_mm(const StudyAnnotation& ann, double px_mm) {
  std::vector<std::optional<SliceMls>> per_slice;
  per_slice.reserve(ann.slices.size());
  for (const auto& a : ann.slices)
    per_slice.push_back(a.is_empty() ? std::nullopt : slice_mls(a.xs, a.interval, px_mm));
  const auto result = study_mls(per_slice);
  if (!result) return std::nullopt;
  return result->value_mm;
}

StudyAnnotation load_annotations(const std::filesystem::path& file, const Study& study) {
  json doc;
  try {
    doc = json::parse(detail::read_file(file));
  } catch (const json::exception& e) {
    throw Error("load_annotations: bad JSON: " + std::string(e.what()));
  }

  StudyAnnotation ann;
  try {
    const auto& slices = doc.at("slices");
    if (slices.size() != study.slices.size())
      throw Error("load_annotations: " + std::to_string(slices.size()) +
                  " entries for a study with " + std::to_string(study.slices.size()) +
                  " slices");
    for (const auto& entry : slices) {
      MidlineAnnotation a;
      if (!entry.is_null()) {
        const int y_lo = entry.at("y_lo").get<int>();
        const int y_hi = entry.at("y_hi").get<int>();
        if (y_hi < y_lo) throw Error("load_annotations: y_hi < y_lo");
        a.interval = Interval::of(y_lo, y_hi);
        a.xs = entry.at("xs").get<std::vector<double>>();
      }
      a.validate(study.rows(), study.cols());
      ann.slices.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw Error("load_annotations: bad JSON: " + std::string(e.what()));
  }
  ann.gt_mls_mm = annotation_mls_mm(ann, study.spacing_mm[2]);
  return ann;
}

void save_annotations(const std::filesystem::path& file, const StudyAnnotation& ann) {
  json doc;
  doc["slices"] = json::array();
  for (const auto& a : ann.slices) {
    if (a.is_empty()) {
      doc["slices"].push_back(nullptr);
    } else {
      doc["slices"].push_back(
          {{"y_lo", a.interval.y_lo}, {"y_hi", a.interval.y_hi}, {"xs", a.xs}});
    }
  }
  detail::write_file_atomic(file, doc.dump() + "\n");
}

namespace {

json optional_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}
json optional_to_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void save_predictions(const std::filesystem::path& file, const StudyPrediction& pred) {
  pred.validate();
  json doc;
  doc["id"] = pred.study_id;
  doc["mls_mm"] = optional_to_json(pred.mls_mm);
  doc["argmax_slice"] = optional_to_json(pred.argmax_slice);
  doc["significant"] = pred.significant;
  doc["significance_threshold_mm"] = pred.significance_threshold_mm;
  doc["px_mm"] = pred.px_mm;
  doc["slices"] = json::array();
  for (const auto& s : pred.slices) {
    json entry;
    entry["curve"] = s.curve;
    entry["lower"] = s.lower;
    entry["upper"] = s.upper;
    entry["coverage"] = s.coverage;
    entry["interval"] = s.interval.is_empty()
                            ? json(nullptr)
                            : json{{"y_lo", s.interval.y_lo}, {"y_hi", s.interval.y_hi}};
    entry["mls_mm"] = optional_to_json(s.mls_mm);
    entry["mls_row"] = optional_to_json(s.mls_row);
    doc["slices"].push_back(std::move(entry));
  }
  detail::write_file_atomic(file, doc.dump() + "\n");
}

StudyPrediction load_predictions(const std::filesystem::path& file) {
  json doc;
  try {
    doc = json::parse(detail::read_file(file));
  } catch (const json::exception& e) {
    throw Error("load_predictions: bad JSON: " + std::string(e.what()));
  }
  StudyPrediction pred;
  try {
    pred.study_id = doc.at("id").get<std::string>();
    if (!doc.at("mls_mm").is_null()) pred.mls_mm = doc["mls_mm"].get<double>();
    if (!doc.at("argmax_slice").is_null()) pred.argmax_slice = doc["argmax_slice"].get<int>();
    pred.significant = doc.at("significant").get<bool>();
    pred.significance_threshold_mm = doc.at("significance_threshold_mm").get<double>();
    pred.px_mm = doc.value("px_mm", 0.5);
    for (const auto& entry : doc.at("slices")) {
      SlicePrediction s;
      s.curve = entry.at("curve").get<std::vector<double>>();
      s.lower = entry.at("lower").get<std::vector<double>>();
      s.upper = entry.at("upper").get<std::vector<double>>();
      s.coverage = entry.at("coverage").get<double>();
      if (!entry.at("interval").is_null())
        s.interval = Interval::of(entry["interval"].at("y_lo").get<int>(),
                                  entry["interval"].at("y_hi").get<int>());
      else
        s.interval = Interval::empty();
      if (!entry.at("mls_mm").is_null()) s.mls_mm = entry["mls_mm"].get<double>();
      if (!entry.at("mls_row").is_null()) s.mls_row = entry["mls_row"].get<int>();
      pred.slices.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error("load_predictions: bad JSON: " + std::string(e.what()));
  }
  return pred;
}

}  // namespace midline
