#pragma once

#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "infer_eval.hpp"
#include "pipeline.hpp"
#include "synth.hpp"

namespace pl3d {

struct AblationVariant {
  std::string name;
  std::size_t views = 4;
  bool tokenAttention = true;
  double lambda = 1.0;
};

struct AblationRow {
  AblationVariant variant;
  std::vector<double> fusedIous;  // per seed
  std::vector<double> modelIous;  // per seed, empty when training is skipped
  MetricsReport fused;
  std::optional<MetricsReport> model;
};

struct SeedOutcome {
  double fusedIou = 0.0;
  std::optional<double> modelIou;
};

/// One synthetic query through fuse (and optionally train + infer). A query whose views are all
/// filtered out scores IoU 0.
inline SeedOutcome run_synthetic_query(SynthSpec spec, PipelineConfig cfg, bool trainModel) {
  const auto scene = make_synthetic_bundle(spec);
  SeedOutcome out;
  FuseResult fused;
  try {
    fused = fuse_scene(scene.bundle, cfg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllViewsFiltered) throw;
    if (trainModel) out.modelIou = 0.0;
    return out;
  }
  out.fusedIou = fused_iou(scene.bundle, fused);
  if (trainModel) {
    const auto state = train_scene(scene.bundle, fused, cfg);
    out.modelIou = *infer_scene(state.model, scene.bundle, fused, cfg).iouVsGT;
  }
  return out;
}

/// Standard variant list: full pipeline, uniform weights, lambda = 0, then one row per view count.
inline std::vector<AblationVariant> standard_variants(std::span<const std::size_t> viewCounts, const PipelineConfig& base) {
  std::vector<AblationVariant> v;
  v.push_back({"full", 4, true, base.lambda});
  v.push_back({"uniform_weights", 4, false, base.lambda});
  v.push_back({"lambda_0", 4, true, 0.0});
  for (auto n : viewCounts) v.push_back({"views_" + std::to_string(n), n, true, base.lambda});
  return v;
}

/// Paired comparison over seeds firstSeed .. firstSeed + seeds - 1; identical settings are computed once.
inline std::vector<AblationRow> run_ablation(std::span<const AblationVariant> variants, const SynthSpec& baseSpec,
                                             const PipelineConfig& baseCfg, std::size_t seeds, bool trainModel) {
  using Key = std::tuple<std::size_t, bool, double>;
  std::map<Key, std::vector<SeedOutcome>> cache;
  std::vector<AblationRow> rows;
  for (const auto& var : variants) {
    const Key key{var.views, var.tokenAttention, var.lambda};
    auto it = cache.find(key);
    if (it == cache.end()) {
      std::vector<SeedOutcome> outcomes;
      for (std::size_t i = 0; i < seeds; ++i) {
        SynthSpec spec = baseSpec;
        spec.seed = baseSpec.seed + i;
        spec.viewCount = var.views;
        PipelineConfig cfg = baseCfg;
        cfg.seed = spec.seed;
        cfg.k = var.views;
        cfg.tokenAttention = var.tokenAttention;
        cfg.lambda = var.lambda;
        outcomes.push_back(run_synthetic_query(spec, cfg, trainModel));
      }
      it = cache.emplace(key, std::move(outcomes)).first;
    }
    AblationRow row;
    row.variant = var;
    std::vector<QueryRow> fusedRows, modelRows;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const auto id = "synth_" + std::to_string(baseSpec.seed + i);
      row.fusedIous.push_back(it->second[i].fusedIou);
      fusedRows.push_back({id, it->second[i].fusedIou});
      if (it->second[i].modelIou) {
        row.modelIous.push_back(*it->second[i].modelIou);
        modelRows.push_back({id, *it->second[i].modelIou});
      }
    }
    row.fused = MetricsReport::from_rows(std::move(fusedRows));
    if (!modelRows.empty()) row.model = MetricsReport::from_rows(std::move(modelRows));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Tab-separated comparison table, one row per variant.
inline std::string ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "variant\tviews\tattention\tlambda\tfused_miou\tmodel_acc@0.25\tmodel_acc@0.5\tmodel_miou_all\tmodel_miou_grounded\n";
  for (const auto& r : rows) {
    os << r.variant.name << "\t" << r.variant.views << "\t" << (r.variant.tokenAttention ? "token" : "uniform") << "\t"
       << r.variant.lambda << "\t" << r.fused.miouAll;
    if (r.model)
      os << "\t" << r.model->acc25 << "\t" << r.model->acc50 << "\t" << r.model->miouAll << "\t" << r.model->miouGrounded;
    else
      os << "\t-\t-\t-\t-";
    os << "\n";
  }
  return os.str();
}

/// Corruption preset used by the ablate command.
inline SynthSpec default_corruption(SynthSpec spec = {}) {
  spec.hallucinationRate = 0.3;
  spec.dropVisibleRate = 0.1;
  return spec;
}

}  // namespace pl3d
