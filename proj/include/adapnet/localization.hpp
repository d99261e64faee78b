#pragma once
#include <Eigen/Dense>
#include <set>
#include <string>
#include <vector>

#include "adapnet/corpus.hpp"
#include "adapnet/evaluation.hpp"
#include "adapnet/model.hpp"

namespace adapnet {

// Cascade artifacts for one video. P/Q/R are per stream (s = shared view,
// p = private view); S onward fuse both streams and are identical in the
// RGB and FLOW copies held by LocalizeResult.
struct TCamStack {
  Mat P_s, P_p;      // C x m raw class activations
  Mat Q_s, Q_p;      // attention-weighted
  Mat R;             // multi-view blend
  Mat S;             // two-stream blend
  Mat S_smooth;
  Mat S_norm;        // per-class min-max rescale of S_smooth
  Mat S_refined;
};

enum class FrameLabel : std::uint8_t { Action, Background, Unknown };

// Per (class, frame) pseudo-labels together with the thresholds that
// produced them.
struct FrameLabelSeq {
  std::vector<std::vector<FrameLabel>> labels;  // [class][frame]
  double tau_upper = 0.7;
  double tau_lower = 0.3;

  int C() const { return static_cast<int>(labels.size()); }
  int m() const {
    return labels.empty() ? 0 : static_cast<int>(labels[0].size());
  }
};

enum class TrppDirection { Forward, Backward };

struct TrppConfig {
  int r = 8;             // recurrent state size
  int iterations = 120;
  double lr = 0.5;
  std::uint64_t seed = 0;
};

// Gated recurrent per-frame action-probability estimator.
struct TrppModel {
  TrppDirection direction = TrppDirection::Forward;
  int r = 0;
  Mat U, V;                   // candidate-state input / recurrent weights
  Mat G, H;                   // gate input / recurrent weights
  Mat O;                      // C x r output projection
  std::vector<bool> trained;  // classes with both label kinds present
  double final_loss = 0.0;

  // C x m probabilities in processing order (reversed frames for the
  // backward direction). `inputs` columns are always original order.
  Mat probabilities(const Mat& inputs) const;
};

Mat tcam(const Mat& W, const Mat& F);
Mat weighted_tcam(const Eigen::VectorXd& a, const Mat& P);
Mat multiview_tcam(const Mat& Q_s, const Mat& Q_p, double delta);
Mat fuse_streams(const Mat& R_rgb, const Mat& R_flow, double epsilon);
Mat smooth(const Mat& S, int window);

// Per-row (x - min) / (max - min); constant rows map to 0.5.
Mat minmax_rows(const Mat& S);

FrameLabelSeq pseudo_label(const Mat& S_smooth, double tau_upper,
                           double tau_lower);

TrppModel fit_trpp(const Mat& inputs, const FrameLabelSeq& labels,
                   TrppDirection direction, const TrppConfig& config);

Mat refine_bidirectional(const Mat& S_smooth, const Mat& inputs,
                         const TrppModel& fwd, const TrppModel& bwd,
                         const FrameLabelSeq& labels);

std::vector<Detection> extract_segments(const Mat& S_refined,
                                        const std::set<int>& predicted_classes,
                                        double tau_seg, int max_gap,
                                        const std::string& video_id,
                                        double fps);

std::vector<Detection> nms(std::vector<Detection> detections,
                           double iou_threshold);

std::pair<double, double> indices_to_time(long ind_start, long ind_end,
                                          double fps);

struct LocalizeConfig {
  double delta = 0.5;
  double epsilon = 0.5;
  double tau_upper = 0.7;
  double tau_lower = 0.3;
  double tau_seg = 0.5;
  int max_gap = 1;
  int smooth_window = 5;
  double nms_threshold = 0.5;
  double theta_cls = 0.1;
  TrppConfig trpp;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct LocalizeResult {
  std::vector<Detection> detections;
  TCamStack rgb, flow;
  Eigen::VectorXd class_probs;  // stream-blended classifier output
  std::set<int> predicted_classes;
  FrameLabelSeq labels;
};

LocalizeResult localize_full(const CorpusIndex& corpus,
                             const VideoRecord& video,
                             const ModelParams& params,
                             const LocalizeConfig& config);

std::vector<Detection> localize(const CorpusIndex& corpus,
                                const VideoRecord& video,
                                const ModelParams& params,
                                const LocalizeConfig& config);

}  // namespace adapnet
