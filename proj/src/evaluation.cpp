#include "adapnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adapnet {

std::set<int> predict_labels(const Eigen::VectorXd& probabilities,
                             double theta_cls) {
  if (theta_cls <= 0.0 || theta_cls >= 1.0)
    throw std::invalid_argument("predict_labels: theta_cls must be in (0,1)");
  if (probabilities.size() == 0 || probabilities.minCoeff() < 0 ||
      std::abs(probabilities.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("predict_labels: invalid distribution");
  std::set<int> labels;
  int argmax = 0;
  for (int c = 0; c < probabilities.size(); ++c) {
    if (probabilities(c) > probabilities(argmax)) argmax = c;  // lowest index wins ties
    if (probabilities(c) >= theta_cls) labels.insert(c);
  }
  labels.insert(argmax);
  return labels;
}

double accuracy(const std::vector<int>& top1_predicted,
                const std::vector<std::set<int>>& ground_truth) {
  if (top1_predicted.size() != ground_truth.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (top1_predicted.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < top1_predicted.size(); ++i)
    if (ground_truth[i].count(top1_predicted[i])) ++correct;
  return static_cast<double>(correct) / top1_predicted.size();
}

double interval_iou(std::pair<double, double> a, std::pair<double, double> b) {
  if (a.second <= a.first || b.second <= b.first)
    throw std::invalid_argument("interval_iou: degenerate interval");
  const double inter =
      std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
  const double uni = (a.second - a.first) + (b.second - b.first) - inter;
  return inter / uni;
}

bool detection_rank_less(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.t_start != b.t_start) return a.t_start < b.t_start;
  return a.video_id < b.video_id;
}

double average_precision(std::vector<Detection> detections,
                         const std::vector<GroundTruthInstance>& ground_truths,
                         double iou_threshold) {
  if (ground_truths.empty()) return 0.0;
  std::stable_sort(detections.begin(), detections.end(), detection_rank_less);
  std::vector<bool> matched(ground_truths.size(), false);
  int tp = 0;
  double ap = 0.0;
  int rank = 0;
  for (const auto& det : detections) {
    ++rank;
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < ground_truths.size(); ++g) {
      if (matched[g] || ground_truths[g].video_id != det.video_id) continue;
      const double iou = interval_iou({det.t_start, det.t_end},
                                      {ground_truths[g].t_start,
                                       ground_truths[g].t_end});
      if (iou >= iou_threshold && iou > best_iou) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      matched[best] = true;
      ++tp;
      ap += static_cast<double>(tp) / rank;  // precision at this rank
    }
  }
  return ap / ground_truths.size();
}

EvalReport map_at_iou(const std::vector<Detection>& detections,
                      const std::vector<GroundTruthInstance>& ground_truths,
                      const std::vector<double>& thresholds,
                      bool with_average) {
  if (thresholds.empty())
    throw std::invalid_argument("map_at_iou: empty threshold list");
  EvalReport report;
  report.n_detections = static_cast<int>(detections.size());
  report.n_ground_truths = static_cast<int>(ground_truths.size());

  std::set<int> classes;
  for (const auto& g : ground_truths) classes.insert(g.cls);

  for (double thr : thresholds) {
    double sum = 0.0;
    for (int c : classes) {
      std::vector<Detection> dets;
      std::vector<GroundTruthInstance> gts;
      for (const auto& d : detections)
        if (d.cls == c) dets.push_back(d);
      for (const auto& g : ground_truths)
        if (g.cls == c) gts.push_back(g);
      const double ap = average_precision(std::move(dets), gts, thr);
      report.ap[thr][c] = ap;
      sum += ap;
    }
    report.map_at[thr] = classes.empty() ? 0.0 : sum / classes.size();
  }
  if (with_average) {
    double s = 0.0;
    for (const auto& [thr, v] : report.map_at) s += v;
    report.average_map = s / report.map_at.size();
    report.has_average = true;
  }
  return report;
}

}  // namespace adapnet
