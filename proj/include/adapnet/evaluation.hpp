#pragma once
#include <Eigen/Dense>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace adapnet {

// One localized action prediction.
struct Detection {
  std::string video_id;
  int cls = 0;
  long ind_start = 0;  // inclusive frame indices
  long ind_end = 0;
  double t_start = 0;  // seconds
  double t_end = 0;
  double score = 0;
};

struct GroundTruthInstance {
  std::string video_id;
  int cls = 0;
  double t_start = 0;
  double t_end = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::map<double, double> map_at;             // IoU threshold -> mAP
  std::map<double, std::map<int, double>> ap;  // threshold -> class -> AP
  double average_map = 0.0;                    // mean over map_at, if requested
  bool has_average = false;
  int n_videos = 0;
  int n_detections = 0;
  int n_ground_truths = 0;
};

// Classes with probability >= theta, always including the argmax class.
std::set<int> predict_labels(const Eigen::VectorXd& probabilities,
                             double theta_cls);

// Top-1 convention: the argmax-predicted class must be in the
// ground-truth set.
double accuracy(const std::vector<int>& top1_predicted,
                const std::vector<std::set<int>>& ground_truth);

double interval_iou(std::pair<double, double> a, std::pair<double, double> b);

double average_precision(std::vector<Detection> detections,
                         const std::vector<GroundTruthInstance>& ground_truths,
                         double iou_threshold);

EvalReport map_at_iou(const std::vector<Detection>& detections,
                      const std::vector<GroundTruthInstance>& ground_truths,
                      const std::vector<double>& thresholds,
                      bool with_average = false);

// Score-descending order with the declared tie rules (earlier start,
// then video id); shared by AP and NMS ranking.
bool detection_rank_less(const Detection& a, const Detection& b);

}  // namespace adapnet
