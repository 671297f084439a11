#pragma once

#include <sstream>

#include "bundle_io.hpp"
#include "infer_eval.hpp"
#include "learner.hpp"
#include "pipeline.hpp"

namespace pl3d {

// On-disk products of the fuse / train / infer stages. All arrays go through the tensor container.

inline std::vector<float> to_f32(std::span<const double> v) { return {v.begin(), v.end()}; }
inline std::vector<double> to_f64(std::span<const float> v) { return {v.begin(), v.end()}; }

inline std::vector<std::int64_t> to_i64(std::span<const std::size_t> v) {
  std::vector<std::int64_t> out;
  for (auto x : v) out.push_back(static_cast<std::int64_t>(x));
  return out;
}

inline std::vector<std::size_t> to_index(std::span<const std::int64_t> v, const fs::path& where) {
  std::vector<std::size_t> out;
  for (auto x : v) {
    if (x < 0) throw Error(ErrorCode::CorruptHeader, where.string() + ": negative index");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

/// Fuse output: dense labels (0 where uncovered), coverage, binarized mask, q, weights, views.
inline void write_fuse_result(const FuseResult& r, std::size_t numPoints, const fs::path& dir) {
  using detail::u32dims;
  fs::create_directories(dir);
  std::vector<float> labels(numPoints, 0.0f);
  std::vector<std::int64_t> coverage(numPoints, 0);
  std::vector<std::uint8_t> labeled(numPoints, 0);
  for (const auto& [p, l] : r.labels.labels) {
    labels[p] = static_cast<float>(l);
    labeled[p] = 1;
  }
  for (const auto& [p, c] : r.labels.coverage) coverage[p] = static_cast<std::int64_t>(c);
  write_tensor<float>(dir / "labels.pl3d", u32dims({numPoints}), labels);
  write_tensor<std::uint8_t>(dir / "labeled.pl3d", u32dims({numPoints}), labeled);
  write_tensor<std::int64_t>(dir / "coverage.pl3d", u32dims({numPoints}), coverage);
  const auto mask = r.labels.binarize(numPoints);
  write_tensor<std::uint8_t>(dir / "mask.pl3d", u32dims({numPoints}), mask);
  const auto q = to_f32(r.query.q);
  write_tensor<float>(dir / "query.pl3d", u32dims({q.size()}), q);
  const auto w = to_f32(r.query.weights);
  write_tensor<float>(dir / "weights.pl3d", u32dims({w.size()}), w);
  const auto retained = to_i64(r.query.retainedViews);
  write_tensor<std::int64_t>(dir / "retained_views.pl3d", u32dims({retained.size()}), retained);
  const auto selected = to_i64(r.selectedViews);
  write_tensor<std::int64_t>(dir / "selected_views.pl3d", u32dims({selected.size()}), selected);
}

/// Restores the fuse products and rebuilds the correspondence set from the bundle (a pure function of
/// the bundle, the retained views and the depth tolerance). q and weights are re-normalized after the
/// f32 round trip.
inline FuseResult read_fuse_result(const SceneBundle& scene, const fs::path& dir, const PipelineConfig& cfg) {
  FuseResult r;
  const auto n = scene.points.size();
  const auto labels = read_tensor<float>(dir / "labels.pl3d", detail::u32dims({n}));
  const auto labeled = read_tensor<std::uint8_t>(dir / "labeled.pl3d", detail::u32dims({n}));
  const auto coverage = read_tensor<std::int64_t>(dir / "coverage.pl3d", detail::u32dims({n}));
  for (std::size_t p = 0; p < n; ++p) {
    if (labeled.values[p]) r.labels.labels[p] = labels.values[p];
    if (coverage.values[p] > 0) r.labels.coverage[p] = static_cast<std::size_t>(coverage.values[p]);
  }
  r.query.q = to_f64(read_tensor<float>(dir / "query.pl3d").values);
  if (!detail::normalize_in_place(r.query.q)) throw Error(ErrorCode::CorruptHeader, (dir / "query.pl3d").string() + ": zero query");
  r.query.weights = to_f64(read_tensor<float>(dir / "weights.pl3d").values);
  double ws = 0.0;
  for (double w : r.query.weights) ws += w;
  if (!(ws > 0.0)) throw Error(ErrorCode::CorruptHeader, (dir / "weights.pl3d").string() + ": weights sum to zero");
  for (auto& w : r.query.weights) w /= ws;
  const auto rv = dir / "retained_views.pl3d";
  r.query.retainedViews = to_index(read_tensor<std::int64_t>(rv).values, rv);
  if (r.query.retainedViews.size() != r.query.weights.size())
    throw Error(ErrorCode::DimMismatch, rv.string() + ": one weight per retained view required");
  const auto sv = dir / "selected_views.pl3d";
  r.selectedViews = to_index(read_tensor<std::int64_t>(sv).values, sv);
  if (r.query.q.size() != scene.embedDim)
    throw Error(ErrorCode::DimMismatch, (dir / "query.pl3d").string() + ": query width differs from bundle d_e");
  r.pairs = build_correspondences(scene, r.query.retainedViews, cfg.depthTolFrac);
  return r;
}

/// Checkpoint: model.json (architecture + input normalization) and one f32 tensor per parameter.
inline void write_checkpoint(const FeatureModel& model, const fs::path& dir) {
  using detail::u32dims;
  fs::create_directories(dir);
  json m;
  m["format"] = "pl3d-checkpoint";
  m["version"] = 1;
  json layers = json::array();
  for (std::size_t l = 0; l < model.params.layers.size(); ++l) {
    const auto& layer = model.params.layers[l];
    const auto w = "layer_" + std::to_string(l) + "_weight.pl3d";
    const auto b = "layer_" + std::to_string(l) + "_bias.pl3d";
    write_tensor<float>(dir / w, u32dims({layer.out, layer.in}), to_f32(layer.weight));
    write_tensor<float>(dir / b, u32dims({layer.out}), to_f32(layer.bias));
    layers.push_back({{"in", layer.in}, {"out", layer.out}, {"weight", w}, {"bias", b}});
  }
  m["layers"] = layers;
  write_tensor<float>(dir / "query_projection.pl3d", u32dims({model.params.projRows, model.params.projCols}),
                      to_f32(model.params.projection));
  m["query_projection"] = "query_projection.pl3d";
  const auto shift = to_f32(model.inputShift), scale = to_f32(model.inputScale);
  write_tensor<float>(dir / "input_shift.pl3d", u32dims({kModelInputDim}), shift);
  write_tensor<float>(dir / "input_scale.pl3d", u32dims({kModelInputDim}), scale);
  m["input_shift"] = "input_shift.pl3d";
  m["input_scale"] = "input_scale.pl3d";
  detail::save_json(dir / "model.json", m);
}

inline FeatureModel read_checkpoint(const fs::path& dir) {
  using detail::member;
  using detail::u32dims;
  const auto manifest = dir / "model.json";
  const json m = detail::load_json(manifest);
  if (m.value("format", "") != "pl3d-checkpoint")
    throw Error(ErrorCode::CorruptHeader, manifest.string() + ": not a checkpoint manifest");
  FeatureModel model;
  std::size_t prevOut = kModelInputDim;
  for (const auto& l : m.at("layers")) {
    DenseLayer layer;
    layer.in = detail::field<std::size_t>(l, "in", manifest);
    layer.out = detail::field<std::size_t>(l, "out", manifest);
    if (layer.in != prevOut) throw Error(ErrorCode::DimMismatch, manifest.string() + ": layer widths do not chain");
    layer.weight = to_f64(read_tensor<float>(member(dir, l, "weight", manifest), u32dims({layer.out, layer.in})).values);
    layer.bias = to_f64(read_tensor<float>(member(dir, l, "bias", manifest), u32dims({layer.out})).values);
    prevOut = layer.out;
    model.params.layers.push_back(std::move(layer));
  }
  if (model.params.layers.empty()) throw Error(ErrorCode::CorruptHeader, manifest.string() + ": no layers");
  const auto pp = member(dir, m, "query_projection", manifest);
  const auto proj = read_tensor<float>(pp);
  if (proj.dims.size() != 2 || proj.dims[0] != prevOut)
    throw Error(ErrorCode::DimMismatch, pp.string() + ": projection rows must equal the model output width");
  model.params.projRows = proj.dims[0];
  model.params.projCols = proj.dims[1];
  model.params.projection = to_f64(proj.values);
  const auto shift = read_tensor<float>(member(dir, m, "input_shift", manifest), u32dims({kModelInputDim}));
  const auto scale = read_tensor<float>(member(dir, m, "input_scale", manifest), u32dims({kModelInputDim}));
  for (std::size_t i = 0; i < kModelInputDim; ++i) {
    model.inputShift[i] = shift.values[i];
    model.inputScale[i] = scale.values[i];
  }
  return model;
}

inline std::string loss_history_tsv(const std::vector<LossRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch\tl_mms\tl_spatial\tl_gt\tl_total\n";
  for (const auto& r : history) os << r.epoch << "\t" << r.mms << "\t" << r.spatial << "\t" << r.gt << "\t" << r.total << "\n";
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_query_result(const QueryResult& r, const fs::path& dir) {
  using detail::u32dims;
  fs::create_directories(dir);
  const auto probs = to_f32(r.pointProbs);
  write_tensor<float>(dir / "probs.pl3d", u32dims({probs.size()}), probs);
  write_tensor<std::uint8_t>(dir / "mask.pl3d", u32dims({r.binaryMask.size()}), r.binaryMask);
  json m;
  m["num_points"] = r.binaryMask.size();
  std::size_t on = 0;
  for (auto b : r.binaryMask) on += b;
  m["positive_points"] = on;
  if (r.iouVsGT) m["iou_vs_gt"] = *r.iouVsGT;
  detail::save_json(dir / "result.json", m);
}

/// The binarized point mask written by either fuse or infer.
inline std::vector<std::uint8_t> read_point_mask(const fs::path& dir, std::size_t n) {
  return read_tensor<std::uint8_t>(dir / "mask.pl3d", detail::u32dims({n})).values;
}

}  // namespace pl3d
