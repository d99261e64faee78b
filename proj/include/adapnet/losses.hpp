#pragma once
#include <Eigen/Dense>
#include <set>
#include <vector>

#include "adapnet/autodiff.hpp"

namespace adapnet {

using Vec = Eigen::VectorXd;

struct EmbeddingBatch {
  // d_f x n_b; column i belongs to pair i
  Eigen::MatrixXd H_st, H_pt, H_su, H_pu;
  std::vector<int> omega;      // label-matched pair indices
  std::vector<int> omega_bar;  // complement

  int n_b() const { return static_cast<int>(H_st.cols()); }
  void validate() const;
};

struct LossBreakdown {
  double L_cls = 0, L_adp = 0, L_dif = 0, L_rec = 0, L_total = 0;
  double alpha = 0.5, beta = 0.1, gamma = 0.01;
};

inline constexpr double kDefaultAlpha = 0.5;
inline constexpr double kDefaultBeta = 0.1;
inline constexpr double kDefaultGamma = 0.01;
inline constexpr double kLogGuard = 1e-12;

// 1/2 KL(p||m) + 1/2 KL(q||m), m = (p+q)/2, natural log, 0*log0 = 0.
double js_divergence(const Vec& p, const Vec& q);

// softmax-normalizes both vectors over their coordinates, then JS.
double embedding_divergence(const Vec& h1, const Vec& h2);

double adaptability_loss(const EmbeddingBatch& batch);
double difference_loss(const EmbeddingBatch& batch);

// Frobenius recovery loss over matched (original, recovered) pairs.
double recovery_loss(
    const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& trimmed,
    const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& untrimmed);

// Multi-label cross entropy against the normalized multi-hot target.
double classification_loss(const std::vector<Vec>& probabilities,
                           const std::vector<std::set<int>>& labels);

LossBreakdown total_loss(double l_cls, double l_adp, double l_dif,
                         double l_rec, double alpha = kDefaultAlpha,
                         double beta = kDefaultBeta,
                         double gamma = kDefaultGamma);

// Differentiable counterparts used by the trainer. Embedding inputs are
// raw (pre-softmax) d_f x 1 columns.
namespace graph {

ad::Var js_divergence_of_softmaxed(ad::Var h1, ad::Var h2);

// per-pair trimmed/untrimmed shared and private embeddings
struct EmbeddingVars {
  std::vector<ad::Var> h_st, h_pt, h_su, h_pu;
  std::vector<int> omega, omega_bar;
};

ad::Var adaptability_loss(ad::Tape& t, const EmbeddingVars& e);
ad::Var difference_loss(ad::Tape& t, const EmbeddingVars& e);
ad::Var recovery_loss(ad::Tape& t,
                      const std::vector<std::pair<ad::Var, ad::Var>>& trimmed,
                      const std::vector<std::pair<ad::Var, ad::Var>>& untrimmed);
ad::Var classification_loss(ad::Tape& t, const std::vector<ad::Var>& probs,
                            const std::vector<std::set<int>>& labels, int C);

}  // namespace graph

}  // namespace adapnet
