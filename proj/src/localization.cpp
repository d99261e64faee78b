#include "adapnet/localization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adapnet {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

Mat uniform_mat(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(1.0 / cols);
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

Mat tcam(const Mat& W, const Mat& F) {
  if (W.cols() != F.rows())
    throw std::invalid_argument("tcam: inner dimension mismatch");
  return W * F;
}

Mat weighted_tcam(const Eigen::VectorXd& a, const Mat& P) {
  if (a.size() != P.cols())
    throw std::invalid_argument("weighted_tcam: attention length mismatch");
  if (a.minCoeff() < 0 || std::abs(a.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("weighted_tcam: a is not a simplex vector");
  Mat q(P.rows(), P.cols());
  for (int k = 0; k < P.cols(); ++k)
    for (int c = 0; c < P.rows(); ++c)
      q(c, k) = a(k) / (1.0 + std::exp(-P(c, k)));
  return q;
}

Mat multiview_tcam(const Mat& Q_s, const Mat& Q_p, double delta) {
  check_same_shape(Q_s, Q_p, "multiview_tcam");
  if (delta < 0.0 || delta > 1.0)
    throw std::invalid_argument("multiview_tcam: delta outside [0,1]");
  return delta * Q_s + (1.0 - delta) * Q_p;
}

Mat fuse_streams(const Mat& R_rgb, const Mat& R_flow, double epsilon) {
  check_same_shape(R_rgb, R_flow, "fuse_streams");
  if (epsilon < 0.0 || epsilon > 1.0)
    throw std::invalid_argument("fuse_streams: epsilon outside [0,1]");
  return epsilon * R_rgb + (1.0 - epsilon) * R_flow;
}

Mat smooth(const Mat& S, int window) {
  if (window < 1 || window % 2 == 0)
    throw std::invalid_argument("smooth: window must be odd and positive");
  const int half = window / 2;
  const int m = static_cast<int>(S.cols());
  Mat out(S.rows(), m);
  for (int k = 0; k < m; ++k) {
    const int lo = std::max(0, k - half);
    const int hi = std::min(m - 1, k + half);
    out.col(k) = S.middleCols(lo, hi - lo + 1).rowwise().mean();
  }
  return out;
}

Mat minmax_rows(const Mat& S) {
  Mat out(S.rows(), S.cols());
  for (int c = 0; c < S.rows(); ++c) {
    const double lo = S.row(c).minCoeff();
    const double hi = S.row(c).maxCoeff();
    if (hi - lo < 1e-12)
      out.row(c).setConstant(0.5);
    else
      out.row(c) = (S.row(c).array() - lo) / (hi - lo);
  }
  return out;
}

FrameLabelSeq pseudo_label(const Mat& S_smooth, double tau_upper,
                           double tau_lower) {
  if (tau_upper <= tau_lower)
    throw std::invalid_argument("pseudo_label: tau_upper must exceed tau_lower");
  FrameLabelSeq seq;
  seq.tau_upper = tau_upper;
  seq.tau_lower = tau_lower;
  seq.labels.assign(S_smooth.rows(),
                    std::vector<FrameLabel>(S_smooth.cols(),
                                            FrameLabel::Unknown));
  for (int c = 0; c < S_smooth.rows(); ++c)
    for (int k = 0; k < S_smooth.cols(); ++k) {
      if (S_smooth(c, k) > tau_upper)
        seq.labels[c][k] = FrameLabel::Action;
      else if (S_smooth(c, k) < tau_lower)
        seq.labels[c][k] = FrameLabel::Background;
    }
  return seq;
}

Mat TrppModel::probabilities(const Mat& inputs) const {
  const int m = static_cast<int>(inputs.cols());
  const int C = static_cast<int>(O.rows());
  Mat probs(C, m);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(r);
  for (int step = 0; step < m; ++step) {
    const int k = direction == TrppDirection::Forward ? step : m - 1 - step;
    const Eigen::VectorXd x = inputs.col(k);
    const Eigen::VectorXd g =
        (1.0 / (1.0 + (-(G * x + H * s)).array().exp())).matrix();
    const Eigen::VectorXd cand = (U * x + V * s).array().tanh().matrix();
    s = (1.0 - g.array()) * s.array() + g.array() * cand.array();
    probs.col(step) = (1.0 / (1.0 + (-(O * s)).array().exp())).matrix();
  }
  return probs;
}

TrppModel fit_trpp(const Mat& inputs, const FrameLabelSeq& labels,
                   TrppDirection direction, const TrppConfig& config) {
  const int m = static_cast<int>(inputs.cols());
  const int in_dim = static_cast<int>(inputs.rows());
  const int C = labels.C();
  if (labels.m() != m)
    throw std::invalid_argument("fit_trpp: label/input length mismatch");
  if (config.r < 1 || config.iterations < 0 || config.lr <= 0)
    throw std::invalid_argument("fit_trpp: invalid config");

  TrppModel model;
  model.direction = direction;
  model.r = config.r;
  model.trained.assign(C, false);
  int n_labeled = 0;
  for (int c = 0; c < C; ++c) {
    bool has_action = false, has_background = false;
    for (int k = 0; k < m; ++k) {
      has_action |= labels.labels[c][k] == FrameLabel::Action;
      has_background |= labels.labels[c][k] == FrameLabel::Background;
    }
    model.trained[c] = has_action && has_background;
    if (model.trained[c])
      for (int k = 0; k < m; ++k)
        n_labeled += labels.labels[c][k] != FrameLabel::Unknown;
  }
  bool any_label = false;
  for (int c = 0; c < C && !any_label; ++c)
    for (int k = 0; k < m && !any_label; ++k)
      any_label = labels.labels[c][k] != FrameLabel::Unknown;
  if (!any_label) throw std::invalid_argument("fit_trpp: no labeled frames");

  Rng rng(config.seed);
  model.U = uniform_mat(config.r, in_dim, rng);
  model.V = uniform_mat(config.r, config.r, rng);
  model.G = uniform_mat(config.r, in_dim, rng);
  model.H = uniform_mat(config.r, config.r, rng);
  model.O = uniform_mat(C, config.r, rng);
  if (n_labeled == 0 || config.iterations == 0) return model;

  // Per-frame label masks over trained classes, in processing order.
  std::vector<Mat> mask_pos(m, Mat::Zero(C, 1)), mask_neg(m, Mat::Zero(C, 1));
  for (int step = 0; step < m; ++step) {
    const int k = direction == TrppDirection::Forward ? step : m - 1 - step;
    for (int c = 0; c < C; ++c) {
      if (!model.trained[c]) continue;
      if (labels.labels[c][k] == FrameLabel::Action) mask_pos[step](c, 0) = 1;
      if (labels.labels[c][k] == FrameLabel::Background)
        mask_neg[step](c, 0) = 1;
    }
  }

  constexpr double kGuard = 1e-12;
  Mat* tensors[] = {&model.U, &model.V, &model.G, &model.H, &model.O};
  for (int it = 0; it < config.iterations; ++it) {
    ad::Tape tape;
    std::vector<ad::Var> params;
    for (Mat* t : tensors) params.push_back(ad::leaf(tape, *t));
    const ad::Var ones_r = ad::leaf(tape, Mat::Ones(config.r, 1));
    const ad::Var ones_c = ad::leaf(tape, Mat::Ones(C, 1));
    ad::Var s_prev = ad::leaf(tape, Mat::Zero(config.r, 1));
    ad::Var loss{};
    bool have_loss = false;
    for (int step = 0; step < m; ++step) {
      const int k = direction == TrppDirection::Forward ? step : m - 1 - step;
      const ad::Var x = ad::leaf(tape, inputs.col(k));
      const ad::Var g = ad::sigmoid_(
          ad::add(ad::matmul(params[2], x), ad::matmul(params[3], s_prev)));
      const ad::Var cand = ad::tanh_(
          ad::add(ad::matmul(params[0], x), ad::matmul(params[1], s_prev)));
      const ad::Var s = ad::add(ad::cmul(ad::sub(ones_r, g), s_prev),
                                ad::cmul(g, cand));
      if (mask_pos[step].sum() + mask_neg[step].sum() > 0) {
        const ad::Var p = ad::sigmoid_(ad::matmul(params[4], s));
        const ad::Var term = ad::add(
            ad::dot(ad::leaf(tape, mask_pos[step]), ad::log_guarded(p, kGuard)),
            ad::dot(ad::leaf(tape, mask_neg[step]),
                    ad::log_guarded(ad::sub(ones_c, p), kGuard)));
        loss = have_loss ? ad::add(loss, term) : term;
        have_loss = true;
      }
      s_prev = s;
    }
    loss = ad::scale(loss, -1.0 / n_labeled);
    model.final_loss = ad::scalar(loss);
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& grad = tape.grad(params[i]);
      if (grad.size() > 0) *tensors[i] -= config.lr * grad;
    }
  }
  return model;
}

Mat refine_bidirectional(const Mat& S_smooth, const Mat& inputs,
                         const TrppModel& fwd, const TrppModel& bwd,
                         const FrameLabelSeq& labels) {
  const int C = static_cast<int>(S_smooth.rows());
  const int m = static_cast<int>(S_smooth.cols());
  if (inputs.cols() != m || labels.C() != C || labels.m() != m)
    throw std::invalid_argument("refine_bidirectional: length mismatch");
  if (fwd.direction != TrppDirection::Forward ||
      bwd.direction != TrppDirection::Backward)
    throw std::invalid_argument("refine_bidirectional: direction mismatch");

  const Mat p_fwd = fwd.probabilities(inputs);
  const Mat p_bwd = bwd.probabilities(inputs).rowwise().reverse();
  Mat refined(C, m);
  for (int c = 0; c < C; ++c) {
    const bool use_trpp = c < static_cast<int>(fwd.trained.size()) &&
                          fwd.trained[c] && bwd.trained[c];
    for (int k = 0; k < m; ++k) {
      const double p_bi =
          use_trpp ? 0.5 * (p_fwd(c, k) + p_bwd(c, k)) : S_smooth(c, k);
      double v = 0.5 * (S_smooth(c, k) + p_bi);
      if (labels.labels[c][k] == FrameLabel::Action)
        v = std::max(v, labels.tau_upper);
      else if (labels.labels[c][k] == FrameLabel::Background)
        v = std::min(v, labels.tau_lower);
      refined(c, k) = v;
    }
  }
  return refined;
}

std::vector<Detection> extract_segments(const Mat& S_refined,
                                        const std::set<int>& predicted_classes,
                                        double tau_seg, int max_gap,
                                        const std::string& video_id,
                                        double fps) {
  if (tau_seg <= 0.0 || tau_seg >= 1.0)
    throw std::invalid_argument("extract_segments: tau_seg outside (0,1)");
  if (max_gap < 0)
    throw std::invalid_argument("extract_segments: negative max_gap");
  const int m = static_cast<int>(S_refined.cols());
  std::vector<Detection> out;
  for (int c : predicted_classes) {
    if (c < 0 || c >= S_refined.rows())
      throw std::invalid_argument("extract_segments: class out of range");
    // Maximal runs of frames >= tau_seg, merging across gaps <= max_gap.
    std::vector<std::pair<int, int>> runs;
    for (int k = 0; k < m; ++k) {
      if (S_refined(c, k) < tau_seg) continue;
      int end = k;
      while (end + 1 < m && S_refined(c, end + 1) >= tau_seg) ++end;
      if (!runs.empty() && k - runs.back().second - 1 <= max_gap)
        runs.back().second = end;
      else
        runs.emplace_back(k, end);
      k = end;
    }
    for (const auto& [lo, hi] : runs) {
      Detection d;
      d.video_id = video_id;
      d.cls = c;
      d.ind_start = lo;
      d.ind_end = hi;
      std::tie(d.t_start, d.t_end) = indices_to_time(lo, hi, fps);
      d.score = S_refined.row(c).segment(lo, hi - lo + 1).mean();
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> detections,
                           double iou_threshold) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0)
    throw std::invalid_argument("nms: iou_threshold outside [0,1]");
  std::stable_sort(detections.begin(), detections.end(), detection_rank_less);
  std::vector<Detection> kept;
  for (auto& det : detections) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.cls != det.cls || k.video_id != det.video_id) continue;
      if (interval_iou({det.t_start, det.t_end}, {k.t_start, k.t_end}) >=
          iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(det));
  }
  return kept;
}

std::pair<double, double> indices_to_time(long ind_start, long ind_end,
                                          double fps) {
  if (ind_start < 0 || ind_end < ind_start || fps <= 0)
    throw std::invalid_argument("indices_to_time: invalid arguments");
  return {ind_start / fps, (ind_end + 1) / fps};
}

void LocalizeConfig::validate() const {
  if (delta < 0 || delta > 1)
    throw std::invalid_argument("localize: delta outside [0,1]");
  if (epsilon < 0 || epsilon > 1)
    throw std::invalid_argument("localize: epsilon outside [0,1]");
  if (tau_upper <= tau_lower)
    throw std::invalid_argument("localize: tau_upper must exceed tau_lower");
  if (tau_seg <= 0 || tau_seg >= 1)
    throw std::invalid_argument("localize: tau_seg outside (0,1)");
  if (max_gap < 0) throw std::invalid_argument("localize: negative max_gap");
  if (smooth_window < 1 || smooth_window % 2 == 0)
    throw std::invalid_argument("localize: smoothing window must be odd");
  if (nms_threshold < 0 || nms_threshold > 1)
    throw std::invalid_argument("localize: nms threshold outside [0,1]");
  if (theta_cls <= 0 || theta_cls >= 1)
    throw std::invalid_argument("localize: theta_cls outside (0,1)");
  if (trpp.r < 1 || trpp.iterations < 0 || trpp.lr <= 0)
    throw std::invalid_argument("localize: invalid trpp config");
}

namespace {

struct StreamCascade {
  Mat F_s, F_p;          // d_f x m view features
  Eigen::VectorXd probs; // classifier output
  TCamStack stack;
};

StreamCascade stream_cascade(const CorpusIndex& corpus,
                             const VideoRecord& video,
                             const StreamParams& params, Stream stream,
                             double delta) {
  StreamCascade sc;
  const FeatureMatrix x = load_features(corpus, video, stream);
  sc.F_s = encode(x, Branch::Shared, params);
  sc.F_p = encode(x, Branch::PrivateUntrimmed, params);
  const auto [a_s, h_s] = attend(sc.F_s, params.attention(Branch::Shared));
  const auto [a_p, h_p] =
      attend(sc.F_p, params.attention(Branch::PrivateUntrimmed));
  sc.probs = classify(h_s, h_p, Domain::Untrimmed, params);
  sc.stack.P_s = tcam(params.classifier.shared_w, sc.F_s);
  sc.stack.P_p = tcam(params.classifier.private_u_w, sc.F_p);
  sc.stack.Q_s = weighted_tcam(a_s, sc.stack.P_s);
  sc.stack.Q_p = weighted_tcam(a_p, sc.stack.P_p);
  sc.stack.R = multiview_tcam(sc.stack.Q_s, sc.stack.Q_p, delta);
  return sc;
}

}  // namespace

LocalizeResult localize_full(const CorpusIndex& corpus,
                             const VideoRecord& video,
                             const ModelParams& params,
                             const LocalizeConfig& config) {
  config.validate();
  if (video.kind != VideoKind::Untrimmed)
    throw std::invalid_argument("localize: video is not untrimmed");

  LocalizeResult res;
  StreamCascade rgb =
      stream_cascade(corpus, video, params.rgb, Stream::RGB, config.delta);
  StreamCascade flow =
      stream_cascade(corpus, video, params.flow, Stream::FLOW, config.delta);

  res.class_probs =
      config.epsilon * rgb.probs + (1.0 - config.epsilon) * flow.probs;
  res.predicted_classes = predict_labels(res.class_probs, config.theta_cls);

  const Mat S = fuse_streams(rgb.stack.R, flow.stack.R, config.epsilon);
  const Mat S_smooth = smooth(S, config.smooth_window);
  const Mat S_norm = minmax_rows(S_smooth);
  res.labels = pseudo_label(S_norm, config.tau_upper, config.tau_lower);

  // Refinement inputs: stream-blended view features plus the class scores.
  const int m = static_cast<int>(S.cols());
  Mat inputs(rgb.F_s.rows() + rgb.F_p.rows() + S.rows(), m);
  inputs << config.epsilon * rgb.F_s + (1.0 - config.epsilon) * flow.F_s,
      config.epsilon * rgb.F_p + (1.0 - config.epsilon) * flow.F_p, S_norm;

  TrppConfig trpp = config.trpp;
  Rng rng(config.seed);
  trpp.seed = rng.fork(1).next_u64();
  const TrppModel fwd = fit_trpp(inputs, res.labels, TrppDirection::Forward,
                                 trpp);
  trpp.seed = rng.fork(2).next_u64();
  const TrppModel bwd = fit_trpp(inputs, res.labels, TrppDirection::Backward,
                                 trpp);
  const Mat S_refined =
      refine_bidirectional(S_norm, inputs, fwd, bwd, res.labels);

  res.detections = nms(
      extract_segments(S_refined, res.predicted_classes, config.tau_seg,
                       config.max_gap, video.id, video.fps),
      config.nms_threshold);

  for (TCamStack* stack : {&rgb.stack, &flow.stack}) {
    stack->S = S;
    stack->S_smooth = S_smooth;
    stack->S_norm = S_norm;
    stack->S_refined = S_refined;
  }
  res.rgb = std::move(rgb.stack);
  res.flow = std::move(flow.stack);
  return res;
}

std::vector<Detection> localize(const CorpusIndex& corpus,
                                const VideoRecord& video,
                                const ModelParams& params,
                                const LocalizeConfig& config) {
  return localize_full(corpus, video, params, config).detections;
}

}  // namespace adapnet
