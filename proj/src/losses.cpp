#include "adapnet/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace adapnet {

void EmbeddingBatch::validate() const {
  const int n = n_b();
  if (H_pt.cols() != n || H_su.cols() != n || H_pu.cols() != n)
    throw std::invalid_argument("EmbeddingBatch: column counts disagree");
  if (n == 0) throw std::invalid_argument("EmbeddingBatch: empty batch");
  std::vector<bool> seen(n, false);
  auto mark = [&](const std::vector<int>& idx) {
    for (int i : idx) {
      if (i < 0 || i >= n || seen[i])
        throw std::invalid_argument(
            "EmbeddingBatch: omega sets do not partition the batch");
      seen[i] = true;
    }
  };
  mark(omega);
  mark(omega_bar);
  for (bool s : seen)
    if (!s)
      throw std::invalid_argument(
          "EmbeddingBatch: omega sets do not partition the batch");
}

double js_divergence(const Vec& p, const Vec& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("js_divergence: length mismatch");
  if (p.minCoeff() < 0 || q.minCoeff() < 0)
    throw std::invalid_argument("js_divergence: negative entries");
  if (std::abs(p.sum() - 1.0) > 1e-8 || std::abs(q.sum() - 1.0) > 1e-8)
    throw std::invalid_argument("js_divergence: inputs must sum to 1");
  double acc = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p(i) + q(i));
    if (p(i) > 0) acc += 0.5 * p(i) * std::log(p(i) / m);
    if (q(i) > 0) acc += 0.5 * q(i) * std::log(q(i) / m);
  }
  return acc;
}

namespace {

Vec softmax(const Vec& h) {
  Vec e = (h.array() - h.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

double embedding_divergence(const Vec& h1, const Vec& h2) {
  if (h1.size() != h2.size())
    throw std::invalid_argument("embedding_divergence: length mismatch");
  if (!h1.allFinite() || !h2.allFinite())
    throw std::invalid_argument("embedding_divergence: non-finite input");
  return js_divergence(softmax(h1), softmax(h2));
}

double adaptability_loss(const EmbeddingBatch& batch) {
  batch.validate();
  double matched = 0.0, unmatched = 0.0;
  for (int i : batch.omega)
    matched += embedding_divergence(batch.H_st.col(i), batch.H_su.col(i));
  for (int i : batch.omega_bar)
    unmatched += embedding_divergence(batch.H_st.col(i), batch.H_su.col(i));
  double loss = 0.0;
  if (!batch.omega.empty()) loss += 0.5 * matched / batch.omega.size();
  if (!batch.omega_bar.empty())
    loss -= 0.5 * unmatched / batch.omega_bar.size();
  return loss;
}

double difference_loss(const EmbeddingBatch& batch) {
  batch.validate();
  double t = 0.0, u = 0.0;
  const int n = batch.n_b();
  for (int i = 0; i < n; ++i) {
    t += embedding_divergence(batch.H_pt.col(i), batch.H_st.col(i));
    u += embedding_divergence(batch.H_pu.col(i), batch.H_su.col(i));
  }
  return -0.5 * t / n - 0.5 * u / n;
}

double recovery_loss(
    const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>& trimmed,
    const std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>>&
        untrimmed) {
  auto side = [](const std::vector<std::pair<Eigen::MatrixXd,
                                             Eigen::MatrixXd>>& list) {
    double acc = 0.0;
    for (const auto& [x, xr] : list) {
      if (x.rows() != xr.rows() || x.cols() != xr.cols())
        throw std::invalid_argument("recovery_loss: shape mismatch");
      acc += (x - xr).squaredNorm();
    }
    return list.empty() ? 0.0 : acc / (2.0 * list.size());
  };
  return side(trimmed) + side(untrimmed);
}

double classification_loss(const std::vector<Vec>& probabilities,
                           const std::vector<std::set<int>>& labels) {
  if (probabilities.size() != labels.size() || probabilities.empty())
    throw std::invalid_argument("classification_loss: list size mismatch");
  double acc = 0.0;
  for (std::size_t v = 0; v < probabilities.size(); ++v) {
    const Vec& p = probabilities[v];
    if (labels[v].empty())
      throw std::invalid_argument("classification_loss: empty label set");
    if (p.minCoeff() < 0 || std::abs(p.sum() - 1.0) > 1e-6)
      throw std::invalid_argument("classification_loss: invalid distribution");
    const double target = 1.0 / labels[v].size();
    for (int c : labels[v]) {
      if (c < 0 || c >= p.size())
        throw std::invalid_argument("classification_loss: label out of range");
      acc -= target * std::log(p(c) + kLogGuard);
    }
  }
  return acc / probabilities.size();
}

LossBreakdown total_loss(double l_cls, double l_adp, double l_dif,
                         double l_rec, double alpha, double beta,
                         double gamma) {
  if (alpha < 0 || beta < 0 || gamma < 0)
    throw std::invalid_argument("total_loss: negative weights");
  LossBreakdown b;
  b.L_cls = l_cls;
  b.L_adp = l_adp;
  b.L_dif = l_dif;
  b.L_rec = l_rec;
  b.alpha = alpha;
  b.beta = beta;
  b.gamma = gamma;
  b.L_total = l_cls + alpha * l_adp + beta * l_dif + gamma * l_rec;
  return b;
}

namespace graph {

ad::Var js_divergence_of_softmaxed(ad::Var h1, ad::Var h2) {
  ad::Var s1 = ad::softmax_vec(h1);
  ad::Var s2 = ad::softmax_vec(h2);
  ad::Var mid = ad::scale(ad::add(s1, s2), 0.5);
  ad::Var log_mid = ad::log_(mid);
  ad::Var kl1 = ad::dot(s1, ad::sub(ad::log_(s1), log_mid));
  ad::Var kl2 = ad::dot(s2, ad::sub(ad::log_(s2), log_mid));
  return ad::scale(ad::add(kl1, kl2), 0.5);
}

namespace {

ad::Var zero(ad::Tape& t) { return ad::leaf(t, Eigen::MatrixXd::Zero(1, 1)); }

ad::Var mean_divergence(ad::Tape& t, const std::vector<ad::Var>& a,
                        const std::vector<ad::Var>& b,
                        const std::vector<int>& idx) {
  if (idx.empty()) return zero(t);
  ad::Var acc = zero(t);
  for (int i : idx)
    acc = ad::add(acc, js_divergence_of_softmaxed(a[i], b[i]));
  return ad::scale(acc, 1.0 / idx.size());
}

}  // namespace

ad::Var adaptability_loss(ad::Tape& t, const EmbeddingVars& e) {
  ad::Var matched = mean_divergence(t, e.h_st, e.h_su, e.omega);
  ad::Var unmatched = mean_divergence(t, e.h_st, e.h_su, e.omega_bar);
  return ad::scale(ad::sub(matched, unmatched), 0.5);
}

ad::Var difference_loss(ad::Tape& t, const EmbeddingVars& e) {
  std::vector<int> all(e.h_st.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  ad::Var tr = mean_divergence(t, e.h_pt, e.h_st, all);
  ad::Var un = mean_divergence(t, e.h_pu, e.h_su, all);
  return ad::scale(ad::add(tr, un), -0.5);
}

ad::Var recovery_loss(
    ad::Tape& t, const std::vector<std::pair<ad::Var, ad::Var>>& trimmed,
    const std::vector<std::pair<ad::Var, ad::Var>>& untrimmed) {
  auto side = [&](const std::vector<std::pair<ad::Var, ad::Var>>& list) {
    ad::Var acc = zero(t);
    for (const auto& [x, xr] : list)
      acc = ad::add(acc, ad::sqnorm(ad::sub(x, xr)));
    return list.empty() ? acc : ad::scale(acc, 1.0 / (2.0 * list.size()));
  };
  return ad::add(side(trimmed), side(untrimmed));
}

ad::Var classification_loss(ad::Tape& t, const std::vector<ad::Var>& probs,
                            const std::vector<std::set<int>>& labels, int C) {
  if (probs.size() != labels.size() || probs.empty())
    throw std::invalid_argument("classification_loss: list size mismatch");
  ad::Var acc = zero(t);
  for (std::size_t v = 0; v < probs.size(); ++v) {
    if (labels[v].empty())
      throw std::invalid_argument("classification_loss: empty label set");
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(C, 1);
    for (int c : labels[v]) target(c, 0) = 1.0 / labels[v].size();
    ad::Var term =
        ad::dot(ad::leaf(t, target), ad::log_guarded(probs[v], kLogGuard));
    acc = ad::sub(acc, term);
  }
  return ad::scale(acc, 1.0 / probs.size());
}

}  // namespace graph

}  // namespace adapnet
