#pragma once
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "adapnet/corpus.hpp"
#include "adapnet/evaluation.hpp"
#include "adapnet/localization.hpp"
#include "adapnet/losses.hpp"
#include "adapnet/model.hpp"

namespace adapnet {

inline const std::string kAblateAdp = "L_adp";
inline const std::string kAblateDif = "L_dif";

struct TrainConfig {
  ModelConfig model;
  int n_b = 32;
  double momentum = 0.9;
  double learning_rate = 0.01;
  double lr_decay_factor = 10.0;
  int lr_decay_interval = 0;  // iterations between decays; 0 disables
  int max_iterations = 100;
  std::uint64_t seed = 0;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  double gamma = kDefaultGamma;
  std::set<std::string> ablation;  // subset of {L_adp, L_dif}

  void validate() const;  // throws std::invalid_argument
};

struct IterationRecord {
  int iteration = 0;
  LossBreakdown loss;  // mean over the two streams; ablated terms are 0
  double seconds = 0;
};

struct TrainHistory {
  std::vector<IterationRecord> records;
};

// The batch sampler stream used by train(); exposed so callers can
// reproduce the exact batch sequence of a run.
Rng train_batch_rng(std::uint64_t seed);

std::pair<ModelParams, TrainHistory> train(const CorpusIndex& corpus,
                                           const TrainConfig& config);

// Analytic dL_total/dtheta on one batch, per stream, aligned with
// StreamParams::tensors() order. Also returns the loss value.
struct BatchGradients {
  std::vector<Mat> rgb, flow;
  double loss_rgb = 0, loss_flow = 0;
};
BatchGradients compute_batch_gradients(const CorpusIndex& corpus,
                                       const PairBatch& batch,
                                       const ModelParams& params,
                                       const TrainConfig& config);

struct GradCheckReport {
  // "rgb/enc_shared.conv1_w" -> max |a-n| / max(|a|,|n|,1e-8)
  std::map<std::string, double> block_error;
  double max_error = 0;
};
GradCheckReport gradient_check(const CorpusIndex& corpus,
                               const PairBatch& batch,
                               const ModelParams& params,
                               const TrainConfig& config, double eps = 1e-5);

// Test-split metrics: top-1 accuracy from the stream-blended classifier
// plus localization mAP at the given IoU thresholds.
EvalReport evaluate_model(const CorpusIndex& corpus, const ModelParams& params,
                          const LocalizeConfig& loc,
                          const std::vector<double>& iou_thresholds,
                          bool with_average = false);

struct AblationRow {
  std::set<std::string> ablation;
  std::vector<double> accuracies, maps;  // one entry per seed
  double accuracy_mean = 0, accuracy_std = 0;
  double map_mean = 0, map_std = 0;
};

std::vector<AblationRow> run_ablation(
    const CorpusIndex& corpus, const TrainConfig& base_config,
    const std::vector<std::set<std::string>>& variants,
    const std::vector<std::uint64_t>& seeds, const LocalizeConfig& loc);

}  // namespace adapnet
