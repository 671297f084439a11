#pragma once

#include <filesystem>
#include <string>

#include "bundle_io.hpp"
#include "synth.hpp"
#include "types.hpp"

namespace pl3d {

inline json to_json(const PipelineConfig& c) {
  return json{{"k", c.k},
              {"alphaMin", c.alphaMin},
              {"areaMinFrac", c.areaMinFrac},
              {"lambda", c.lambda},
              {"inferThreshold", c.inferThreshold},
              {"depthTolFrac", c.depthTolFrac},
              {"fixedPointIters", c.fixedPointIters},
              {"seed", c.seed},
              {"tokenAttention", c.tokenAttention},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"weightDecay", c.weightDecay},
              {"hidden", c.hidden},
              {"featureDim", c.featureDim},
              {"hybrid", c.hybrid},
              {"inferMode", c.inferMode == InferMode::Dot ? "dot" : "cosine"}};
}

namespace detail {

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline InferMode parse_infer_mode(const std::string& s) {
  if (s == "dot") return InferMode::Dot;
  if (s == "cosine") return InferMode::Cosine;
  throw Error(ErrorCode::InvalidArgument, "inferMode must be 'dot' or 'cosine', got '" + s + "'");
}

/// Parses the text of a --set value into JSON: numbers, booleans, arrays; anything else is a string.
inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

}  // namespace detail

/// Unknown keys are rejected so typos surface as errors.
inline PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c = {}) {
  static const char* known[] = {"k", "alphaMin", "areaMinFrac", "lambda", "inferThreshold", "depthTolFrac",
                                "fixedPointIters", "seed", "tokenAttention", "epochs", "lr", "momentum",
                                "weightDecay", "hidden", "featureDim", "hybrid", "inferMode"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
  try {
    detail::take(j, "k", c.k);
    detail::take(j, "alphaMin", c.alphaMin);
    detail::take(j, "areaMinFrac", c.areaMinFrac);
    detail::take(j, "lambda", c.lambda);
    detail::take(j, "inferThreshold", c.inferThreshold);
    detail::take(j, "depthTolFrac", c.depthTolFrac);
    detail::take(j, "fixedPointIters", c.fixedPointIters);
    detail::take(j, "seed", c.seed);
    detail::take(j, "tokenAttention", c.tokenAttention);
    detail::take(j, "epochs", c.epochs);
    detail::take(j, "lr", c.lr);
    detail::take(j, "momentum", c.momentum);
    detail::take(j, "weightDecay", c.weightDecay);
    detail::take(j, "hidden", c.hidden);
    detail::take(j, "featureDim", c.featureDim);
    detail::take(j, "hybrid", c.hybrid);
    if (j.contains("inferMode")) c.inferMode = detail::parse_infer_mode(j.at("inferMode").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Applies one "key=value" override on top of a config.
inline PipelineConfig apply_override(const PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::InvalidArgument, "override must look like key=value, got '" + assignment + "'");
  json j;
  j[assignment.substr(0, eq)] = detail::parse_scalar(assignment.substr(eq + 1));
  return pipeline_config_from_json(j, c);
}

inline PipelineConfig load_pipeline_config(const fs::path& path) { return pipeline_config_from_json(detail::load_json(path)); }

inline json to_json(const SynthSpec& s) {
  return json{{"seed", s.seed},
              {"numObjects", s.numObjects},
              {"pointsPerObject", s.pointsPerObject},
              {"roomExtent", s.roomExtent},
              {"targetIndex", s.targetIndex},
              {"viewCount", s.viewCount},
              {"imageSize", s.imageSize},
              {"hallucinationRate", s.hallucinationRate},
              {"dropVisibleRate", s.dropVisibleRate},
              {"embedNoise", s.embedNoise},
              {"featureNoise", s.featureNoise},
              {"embedDim", s.embedDim},
              {"featureDim", s.featureDim},
              {"fovDegrees", s.fovDegrees},
              {"objectSizeMin", s.objectSizeMin},
              {"objectSizeMax", s.objectSizeMax},
              {"layoutSpan", s.layoutSpan}};
}

inline SynthSpec synth_spec_from_json(const json& j, SynthSpec s = {}) {
  const json defaults = to_json(s);
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "synth spec must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw Error(ErrorCode::InvalidArgument, "unknown synth spec key '" + key + "'");
  try {
    detail::take(j, "seed", s.seed);
    detail::take(j, "numObjects", s.numObjects);
    detail::take(j, "pointsPerObject", s.pointsPerObject);
    detail::take(j, "roomExtent", s.roomExtent);
    detail::take(j, "targetIndex", s.targetIndex);
    detail::take(j, "viewCount", s.viewCount);
    detail::take(j, "imageSize", s.imageSize);
    detail::take(j, "hallucinationRate", s.hallucinationRate);
    detail::take(j, "dropVisibleRate", s.dropVisibleRate);
    detail::take(j, "embedNoise", s.embedNoise);
    detail::take(j, "featureNoise", s.featureNoise);
    detail::take(j, "embedDim", s.embedDim);
    detail::take(j, "featureDim", s.featureDim);
    detail::take(j, "fovDegrees", s.fovDegrees);
    detail::take(j, "objectSizeMin", s.objectSizeMin);
    detail::take(j, "objectSizeMax", s.objectSizeMax);
    detail::take(j, "layoutSpan", s.layoutSpan);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace pl3d
