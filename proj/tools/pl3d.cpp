// Command-line front end: synth | fuse | train | infer | eval | ablate.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pl3d/ablation.hpp"
#include "pl3d/artifacts.hpp"
#include "pl3d/bundle_io.hpp"
#include "pl3d/config.hpp"
#include "pl3d/synth.hpp"

namespace {

using namespace pl3d;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "pipeline config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override one config field, key=value (repeatable)");
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg = file.empty() ? PipelineConfig{} : load_pipeline_config(file);
    for (const auto& o : overrides) cfg = apply_override(cfg, o);
    return cfg;
  }
};

std::string percent(double x) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << x;
  return os.str();
}

int run_synth(const std::string& specFile, const std::vector<std::string>& sets, std::size_t count,
              const std::string& out, std::optional<std::uint64_t> seed, std::optional<std::size_t> views,
              std::optional<double> hallucination, std::optional<double> drop) {
  SynthSpec spec = specFile.empty() ? SynthSpec{} : synth_spec_from_json(detail::load_json(specFile));
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "override must look like key=value");
    json j;
    j[s.substr(0, eq)] = detail::parse_scalar(s.substr(eq + 1));
    spec = synth_spec_from_json(j, spec);
  }
  if (seed) spec.seed = *seed;
  if (views) spec.viewCount = *views;
  if (hallucination) spec.hallucinationRate = *hallucination;
  if (drop) spec.dropVisibleRate = *drop;
  spec.validate();
  for (std::size_t i = 0; i < count; ++i) {
    SynthSpec one = spec;
    one.seed = spec.seed + i;
    const auto scene = make_synthetic_bundle(one);
    char sub[32];
    std::snprintf(sub, sizeof(sub), "scene_%03zu", i);
    const fs::path dir = count == 1 ? fs::path(out) : fs::path(out) / sub;
    const auto manifest = write_bundle(scene.bundle, dir);
    detail::save_json(dir / "synth_spec.json", to_json(one));
    std::cout << manifest.string() << "\n";
  }
  return 0;
}

int run_fuse(const std::string& bundleDir, const std::string& out, const PipelineConfig& cfg) {
  const auto bundle = read_bundle(bundleDir);
  const auto report = validate_scene(bundle);
  if (!report.ok()) {
    for (const auto& v : report.violations) std::cerr << "invalid bundle: " << v.code << " (" << v.detail << ")\n";
    return 1;
  }
  const auto fused = fuse_scene(bundle, cfg);
  write_fuse_result(fused, bundle.points.size(), out);
  json summary;
  summary["scene_id"] = bundle.id;
  summary["retained_views"] = fused.query.retainedViews;
  summary["weights"] = fused.query.weights;
  summary["pairs"] = fused.pairs.size();
  summary["labeled_points"] = fused.labels.labels.size();
  if (bundle.gtMask) summary["iou_vs_gt"] = fused_iou(bundle, fused);
  summary["config"] = to_json(cfg);
  detail::save_json(fs::path(out) / "fuse.json", summary);
  std::cout << "fused " << fused.labels.labels.size() << " points from " << fused.query.retainedViews.size()
            << " views";
  if (bundle.gtMask) std::cout << ", IoU vs GT " << percent(fused_iou(bundle, fused));
  std::cout << "\n";
  return 0;
}

int run_train(const std::string& bundleDir, const std::string& fusedDir, const std::string& out,
              const PipelineConfig& cfg) {
  const auto bundle = read_bundle(bundleDir);
  const auto fused = read_fuse_result(bundle, fusedDir, cfg);
  const auto state = train_scene(bundle, fused, cfg);
  write_checkpoint(state.model, out);
  write_text(fs::path(out) / "loss_history.tsv", loss_history_tsv(state.lossHistory));
  detail::save_json(fs::path(out) / "train_config.json", to_json(cfg));
  std::cout << "trained " << state.epoch << " epochs, L_total " << state.lossHistory.front().total << " -> "
            << state.lossHistory.back().total << "\n";
  return 0;
}

int run_infer(const std::string& bundleDir, const std::string& fusedDir, const std::string& modelDir,
              const std::string& out, const PipelineConfig& cfg) {
  const auto bundle = read_bundle(bundleDir);
  const auto fused = read_fuse_result(bundle, fusedDir, cfg);
  const auto model = read_checkpoint(modelDir);
  const auto result = infer_scene(model, bundle, fused, cfg);
  write_query_result(result, out);
  std::size_t on = 0;
  for (auto b : result.binaryMask) on += b;
  std::cout << on << " of " << result.binaryMask.size() << " points selected";
  if (result.iouVsGT) std::cout << ", IoU vs GT " << percent(*result.iouVsGT);
  std::cout << "\n";
  return 0;
}

int run_eval(const std::vector<std::string>& bundles, const std::vector<std::string>& preds, const std::string& out) {
  if (bundles.size() != preds.size())
    throw Error(ErrorCode::InvalidArgument, "--bundle and --pred must be given the same number of times");
  std::vector<QueryRow> rows;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto bundle = read_bundle(bundles[i]);
    if (!bundle.gtMask) throw Error(ErrorCode::InvalidArgument, bundles[i] + " carries no GT mask");
    const auto mask = read_point_mask(preds[i], bundle.points.size());
    rows.push_back({bundle.id, iou(mask, *bundle.gtMask)});
  }
  const auto report = MetricsReport::from_rows(std::move(rows));
  if (!out.empty()) {
    write_text(fs::path(out) / "metrics.txt", report.to_text());
    write_text(fs::path(out) / "per_query.tsv", report.to_tsv());
  }
  std::cout << report.to_text();
  return 0;
}

int run_ablate(const std::vector<std::size_t>& views, std::size_t seeds, std::uint64_t firstSeed, bool noTrain,
               double hallucination, double drop, const std::string& out, const PipelineConfig& cfg) {
  SynthSpec spec;
  spec.seed = firstSeed;
  spec.hallucinationRate = hallucination;
  spec.dropVisibleRate = drop;
  const auto variants = standard_variants(views, cfg);
  const auto rows = run_ablation(variants, spec, cfg, seeds, !noTrain);
  const auto table = ablation_table(rows);
  if (!out.empty()) write_text(out, table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-free multi-view pseudo-label transfer to 3D point clouds"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write synthetic scene + prediction bundles");
  std::string specFile, synthOut;
  std::vector<std::string> specSets;
  std::size_t count = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> viewCount;
  std::optional<double> hallucination, drop;
  synth->add_option("--spec", specFile, "SynthSpec file (JSON)")->check(CLI::ExistingFile);
  synth->add_option("--set", specSets, "override one SynthSpec field, key=value (repeatable)");
  synth->add_option("--seed", seed, "base seed");
  synth->add_option("--views", viewCount, "cameras on the ring");
  synth->add_option("--hallucination", hallucination, "per-view hallucination rate")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--drop", drop, "per-view dropped-target rate")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--count", count, "number of scenes (seeds seed..seed+count-1)")->check(CLI::PositiveNumber);
  synth->add_option("--out", synthOut, "output directory")->required();

  // fuse
  auto* fuse = app.add_subcommand("fuse", "fuse per-view predictions into point pseudo-labels");
  std::string fuseBundle, fuseOut;
  ConfigArgs fuseCfg;
  fuse->add_option("--bundle", fuseBundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
  fuse->add_option("--out", fuseOut, "output directory")->required();
  fuseCfg.attach(fuse);

  // train
  auto* trainCmd = app.add_subcommand("train", "train the per-point feature model");
  std::string trainBundle, trainFused, trainOut;
  ConfigArgs trainCfg;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  bool hybrid = false;
  trainCmd->add_option("--bundle", trainBundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
  trainCmd->add_option("--fused", trainFused, "fuse output directory")->required()->check(CLI::ExistingDirectory);
  trainCmd->add_option("--out", trainOut, "checkpoint directory")->required();
  trainCmd->add_option("--epochs", epochs, "training epochs");
  trainCmd->add_option("--lr", lr, "learning rate");
  trainCmd->add_flag("--hybrid", hybrid, "add GT supervision from the bundle's GT mask");
  trainCfg.attach(trainCmd);

  // infer
  auto* inferCmd = app.add_subcommand("infer", "segment the queried object with a trained model");
  std::string inferBundle, inferFused, inferModel, inferOut;
  ConfigArgs inferCfg;
  inferCmd->add_option("--bundle", inferBundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
  inferCmd->add_option("--fused", inferFused, "fuse output directory (unified query)")->required()->check(CLI::ExistingDirectory);
  inferCmd->add_option("--model", inferModel, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  inferCmd->add_option("--out", inferOut, "output directory")->required();
  inferCfg.attach(inferCmd);

  // eval
  auto* evalCmd = app.add_subcommand("eval", "Acc@0.25 / Acc@0.5 / mIoU against GT");
  std::vector<std::string> evalBundles, evalPreds;
  std::string evalOut;
  evalCmd->add_option("--bundle", evalBundles, "bundle directory with GT (repeatable)")->required()->check(CLI::ExistingDirectory);
  evalCmd->add_option("--pred", evalPreds, "infer or fuse output directory, paired with --bundle (repeatable)")
      ->required()
      ->check(CLI::ExistingDirectory);
  evalCmd->add_option("--out", evalOut, "report directory");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "ablation table on corrupted synthetic scenes");
  std::vector<std::size_t> ablateViews{2, 4, 8};
  std::size_t ablateSeeds = 10;
  std::uint64_t firstSeed = 0;
  bool noTrain = false;
  double ablateH = 0.3, ablateDrop = 0.1;
  std::string ablateOut;
  ConfigArgs ablateCfg;
  ablate->add_option("--views", ablateViews, "view counts, comma separated")->delimiter(',');
  ablate->add_option("--seeds", ablateSeeds, "number of seeds")->check(CLI::PositiveNumber);
  ablate->add_option("--first-seed", firstSeed, "first seed");
  ablate->add_option("--hallucination", ablateH, "per-view hallucination rate")->check(CLI::Range(0.0, 1.0));
  ablate->add_option("--drop", ablateDrop, "per-view dropped-target rate")->check(CLI::Range(0.0, 1.0));
  ablate->add_flag("--no-train", noTrain, "fusion-only comparison");
  ablate->add_option("--out", ablateOut, "write the table to this file");
  ablateCfg.attach(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(specFile, specSets, count, synthOut, seed, viewCount, hallucination, drop);
    if (*fuse) return run_fuse(fuseBundle, fuseOut, fuseCfg.resolve());
    if (*trainCmd) {
      auto cfg = trainCfg.resolve();
      if (epochs) cfg.epochs = *epochs;
      if (lr) cfg.lr = *lr;
      if (hybrid) cfg.hybrid = true;
      cfg.validate();
      return run_train(trainBundle, trainFused, trainOut, cfg);
    }
    if (*inferCmd) return run_infer(inferBundle, inferFused, inferModel, inferOut, inferCfg.resolve());
    if (*evalCmd) return run_eval(evalBundles, evalPreds, evalOut);
    if (*ablate) return run_ablate(ablateViews, ablateSeeds, firstSeed, noTrain, ablateH, ablateDrop, ablateOut, ablateCfg.resolve());
  } catch (const pl3d::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
