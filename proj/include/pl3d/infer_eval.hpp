#pragma once

#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "learner.hpp"

namespace pl3d {

struct QueryResult {
  std::vector<double> pointProbs;
  std::vector<std::uint8_t> binaryMask;  // pointProbs >= threshold
  std::optional<double> iouVsGT;
};

/// |pred & gt| / |pred | gt|; 1.0 when both are empty.
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size())
    throw Error(ErrorCode::DimensionMismatch, "iou over different universes (" + std::to_string(pred.size()) + " vs " +
                                                  std::to_string(gt.size()) + ")");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

/// Point probabilities from the trained features and the projected query.
/// Dot mode: sigma(f . t), the training logit. Cosine mode: (1 + cos(f, t)) / 2.
inline QueryResult infer_mask(const FeatureModel& model, const PointCloud& cloud, std::span<const double> q,
                              double threshold, InferMode mode = InferMode::Dot,
                              const std::optional<std::vector<std::uint8_t>>& gt = {}) {
  const auto f = forward_features(model, cloud);
  const auto t = project_query(model, q);
  QueryResult r;
  r.pointProbs.resize(cloud.size());
  r.binaryMask.resize(cloud.size());
  double tn = 0.0;
  for (double x : t) tn += x * x;
  tn = std::sqrt(tn);
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const auto fp = f.row(p);
    double dot = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      dot += fp[j] * t[j];
      fn += fp[j] * fp[j];
    }
    double prob;
    if (mode == InferMode::Dot) {
      prob = detail::sigmoid(dot);
    } else {
      fn = std::sqrt(fn);
      prob = (fn > 1e-12 && tn > 1e-12) ? 0.5 * (1.0 + std::clamp(dot / (fn * tn), -1.0, 1.0)) : 0.5;
    }
    r.pointProbs[p] = prob;
    r.binaryMask[p] = prob >= threshold ? 1 : 0;
  }
  if (gt) r.iouVsGT = iou(r.binaryMask, *gt);
  return r;
}

/// Fraction of queries with IoU >= k.
inline double acc_at_k(std::span<const double> ious, double k) {
  if (ious.empty()) throw Error(ErrorCode::EmptyQuerySet, "no queries");
  if (!(k > 0.0 && k <= 1.0)) throw Error(ErrorCode::InvalidArgument, "k must be in (0, 1]");
  std::size_t hit = 0;
  for (double v : ious) hit += v >= k ? 1 : 0;
  return double(hit) / double(ious.size());
}

struct MiouMode {
  bool groundedOnly = false;
  double k = 0.25;

  static MiouMode all() { return {false, 0.25}; }
  static MiouMode groundedAt(double k = 0.25) { return {true, k}; }
};

/// Plain mean, or mean over queries grounded at IoU >= k (0 if none are).
inline double miou(std::span<const double> ious, MiouMode mode = MiouMode::all()) {
  if (ious.empty()) throw Error(ErrorCode::EmptyQuerySet, "no queries");
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : ious) {
    if (mode.groundedOnly && !(v >= mode.k)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? 0.0 : sum / double(n);
}

struct QueryRow {
  std::string id;
  double iou = 0.0;
};

struct MetricsReport {
  std::vector<QueryRow> rows;
  double acc25 = 0.0;
  double acc50 = 0.0;
  double miouAll = 0.0;
  double miouGrounded = 0.0;

  static MetricsReport from_rows(std::vector<QueryRow> rows) {
    MetricsReport r;
    r.rows = std::move(rows);
    std::vector<double> ious;
    for (const auto& q : r.rows) ious.push_back(q.iou);
    r.acc25 = acc_at_k(ious, 0.25);
    r.acc50 = acc_at_k(ious, 0.5);
    r.miouAll = miou(ious, MiouMode::all());
    r.miouGrounded = miou(ious, MiouMode::groundedAt(0.25));
    return r;
  }

  /// Flat key=value text.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "queries=" << rows.size() << "\n"
       << "acc@0.25=" << acc25 << "\n"
       << "acc@0.5=" << acc50 << "\n"
       << "miou_all=" << miouAll << "\n"
       << "miou_grounded@0.25=" << miouGrounded << "\n";
    return os.str();
  }

  /// Tab-separated rows: id, iou, grounded@0.25, grounded@0.5.
  std::string to_tsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "id\tiou\tgrounded@0.25\tgrounded@0.5\n";
    for (const auto& r : rows) os << r.id << "\t" << r.iou << "\t" << (r.iou >= 0.25 ? 1 : 0) << "\t" << (r.iou >= 0.5 ? 1 : 0) << "\n";
    return os.str();
  }
};

/// Parses to_tsv() output back into rows.
inline std::vector<QueryRow> parse_report_rows(const std::string& tsv) {
  std::istringstream in(tsv);
  std::string line;
  std::vector<QueryRow> rows;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    QueryRow r;
    std::string iouText;
    std::getline(ls, r.id, '\t');
    std::getline(ls, iouText, '\t');
    r.iou = std::stod(iouText);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace pl3d
