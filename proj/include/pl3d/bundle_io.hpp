#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "tensor_io.hpp"
#include "types.hpp"

namespace pl3d {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBundleFormat = "pl3d-bundle";

namespace detail {

inline std::string view_dir(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03zu", i);
  return buf;
}

inline std::vector<float> flatten(const std::vector<Vec3f>& v) {
  std::vector<float> out;
  out.reserve(v.size() * 3);
  for (const auto& p : v) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline std::vector<Vec3f> unflatten(const std::vector<float>& v) {
  std::vector<Vec3f> out(v.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

inline json load_json(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, path.string() + ": " + e.what());
  }
}

inline void save_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

/// Resolves a manifest-relative path and requires it to exist.
inline fs::path member(const fs::path& dir, const json& node, const char* key, const fs::path& manifest) {
  if (!node.contains(key) || !node[key].is_string())
    throw Error(ErrorCode::CorruptHeader, manifest.string() + ": missing key '" + key + "'");
  auto p = dir / node[key].get<std::string>();
  if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, p.string());
  return p;
}

template <typename T>
T field(const json& node, const char* key, const fs::path& manifest) {
  try {
    return node.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, manifest.string() + ": field '" + key + "': " + e.what());
  }
}

inline std::vector<std::uint32_t> u32dims(std::initializer_list<std::size_t> dims) {
  std::vector<std::uint32_t> out;
  for (auto d : dims) out.push_back(static_cast<std::uint32_t>(d));
  return out;
}

}  // namespace detail

/// Writes the manifest plus one tensor file per array; returns the manifest path.
inline fs::path write_bundle(const SceneBundle& bundle, const fs::path& dir) {
  using detail::u32dims;
  fs::create_directories(dir);
  const auto n = bundle.points.size();

  json m;
  m["format"] = kBundleFormat;
  m["version"] = 1;
  m["scene_id"] = bundle.id;
  m["query"] = bundle.query;
  m["d_e"] = bundle.embedDim;
  m["d_f"] = bundle.featureDim;
  m["num_points"] = n;

  const auto pts = detail::flatten(bundle.points.positions);
  write_tensor<float>(dir / "points.pl3d", u32dims({n, 3}), pts);
  m["points"] = "points.pl3d";
  if (bundle.points.colors) {
    const auto cols = detail::flatten(*bundle.points.colors);
    write_tensor<float>(dir / "colors.pl3d", u32dims({bundle.points.colors->size(), 3}), cols);
    m["colors"] = "colors.pl3d";
  }
  if (bundle.gtMask) {
    write_tensor<std::uint8_t>(dir / "gt_mask.pl3d", u32dims({bundle.gtMask->size()}), *bundle.gtMask);
    m["gt_mask"] = "gt_mask.pl3d";
  }

  json views = json::array();
  for (std::size_t i = 0; i < bundle.views.size(); ++i) {
    const auto& view = bundle.views[i];
    const auto sub = detail::view_dir(i);
    json v;
    v["width"] = view.width;
    v["height"] = view.height;
    write_tensor<float>(dir / sub / "intrinsics.pl3d", u32dims({3, 3}), view.intrinsics);
    write_tensor<float>(dir / sub / "world_to_camera.pl3d", u32dims({4, 4}), view.worldToCamera);
    write_tensor<float>(dir / sub / "depth.pl3d", u32dims({view.depth.height, view.depth.width}), view.depth.data);
    v["intrinsics"] = sub + "/intrinsics.pl3d";
    v["world_to_camera"] = sub + "/world_to_camera.pl3d";
    v["depth"] = sub + "/depth.pl3d";
    if (i < bundle.predictions.size()) {
      const auto& pred = bundle.predictions[i];
      write_tensor<float>(dir / sub / "mask.pl3d", u32dims({pred.mask.height, pred.mask.width}), pred.mask.data);
      write_tensor<float>(dir / sub / "embedding.pl3d", u32dims({pred.embedding.size()}), pred.embedding);
      const float conf[1] = {pred.confidence};
      write_tensor<float>(dir / sub / "confidence.pl3d", u32dims({1}), std::span<const float>(conf));
      v["mask"] = sub + "/mask.pl3d";
      v["embedding"] = sub + "/embedding.pl3d";
      v["confidence"] = sub + "/confidence.pl3d";
      if (pred.featureMap) {
        const auto& f = *pred.featureMap;
        write_tensor<float>(dir / sub / "feature_map.pl3d", u32dims({f.height, f.width, f.channels}), f.data);
        v["feature_map"] = sub + "/feature_map.pl3d";
      }
    }
    views.push_back(std::move(v));
  }
  m["views"] = std::move(views);

  const auto manifest = dir / kManifestName;
  detail::save_json(manifest, m);
  return manifest;
}

inline SceneBundle read_bundle(const fs::path& dir) {
  using detail::field;
  using detail::member;
  using detail::u32dims;
  const auto manifest = dir / kManifestName;
  const json m = detail::load_json(manifest);
  if (!m.is_object() || m.value("format", "") != kBundleFormat)
    throw Error(ErrorCode::CorruptHeader, manifest.string() + ": not a " + kBundleFormat + " manifest");

  SceneBundle b;
  b.id = field<std::string>(m, "scene_id", manifest);
  b.query = field<std::string>(m, "query", manifest);
  b.embedDim = field<std::size_t>(m, "d_e", manifest);
  b.featureDim = field<std::size_t>(m, "d_f", manifest);
  const auto n = field<std::size_t>(m, "num_points", manifest);

  b.points.positions = detail::unflatten(read_tensor<float>(member(dir, m, "points", manifest), u32dims({n, 3})).values);
  if (m.contains("colors"))
    b.points.colors = detail::unflatten(read_tensor<float>(member(dir, m, "colors", manifest), u32dims({n, 3})).values);
  if (m.contains("gt_mask"))
    b.gtMask = read_tensor<std::uint8_t>(member(dir, m, "gt_mask", manifest), u32dims({n})).values;

  if (!m.contains("views") || !m["views"].is_array())
    throw Error(ErrorCode::CorruptHeader, manifest.string() + ": missing views array");
  std::size_t withPred = 0;
  for (const auto& v : m["views"]) {
    CameraView view;
    view.width = field<std::size_t>(v, "width", manifest);
    view.height = field<std::size_t>(v, "height", manifest);
    const auto k = read_tensor<float>(member(dir, v, "intrinsics", manifest), u32dims({3, 3}));
    std::copy(k.values.begin(), k.values.end(), view.intrinsics.begin());
    const auto pose = read_tensor<float>(member(dir, v, "world_to_camera", manifest), u32dims({4, 4}));
    std::copy(pose.values.begin(), pose.values.end(), view.worldToCamera.begin());
    view.depth = Raster<float>(view.height, view.width);
    view.depth.data = read_tensor<float>(member(dir, v, "depth", manifest), u32dims({view.height, view.width})).values;
    b.views.push_back(std::move(view));

    if (!v.contains("mask")) continue;
    ++withPred;
    ViewPrediction pred;
    pred.mask = Raster<float>(b.views.back().height, b.views.back().width);
    pred.mask.data = read_tensor<float>(member(dir, v, "mask", manifest), u32dims({pred.mask.height, pred.mask.width})).values;
    pred.embedding = read_tensor<float>(member(dir, v, "embedding", manifest), u32dims({b.embedDim})).values;
    pred.confidence = read_tensor<float>(member(dir, v, "confidence", manifest), u32dims({1})).values[0];
    if (v.contains("feature_map")) {
      const auto path = member(dir, v, "feature_map", manifest);
      auto f = read_tensor<float>(path);
      if (f.dims.size() != 3 || f.dims[2] != b.featureDim)
        throw Error(ErrorCode::DimMismatch, path.string() + ": feature map must be H'xW'x" + std::to_string(b.featureDim));
      Raster<float> r;
      r.height = f.dims[0];
      r.width = f.dims[1];
      r.channels = f.dims[2];
      r.data = std::move(f.values);
      pred.featureMap = std::move(r);
    }
    b.predictions.push_back(std::move(pred));
  }
  if (withPred != 0 && withPred != b.views.size())
    throw Error(ErrorCode::CorruptHeader, manifest.string() + ": predictions must cover every view or none");
  return b;
}

}  // namespace pl3d
