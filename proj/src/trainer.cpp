#include "adapnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace adapnet {

namespace {

struct FeatureCache {
  std::map<std::pair<std::string, Stream>, Mat> features;

  const Mat& get(const CorpusIndex& corpus, const std::string& id, Stream s) {
    const auto key = std::make_pair(id, s);
    auto it = features.find(key);
    if (it == features.end()) {
      const FeatureMatrix fm = load_features(corpus, corpus.record(id), s);
      it = features.emplace(key, to_double(fm.values)).first;
    }
    return it->second;
  }
};

struct StreamLossVars {
  ad::Var total, cls, adp, dif, rec;
  bool has_adp = false, has_dif = false;
};

StreamLossVars build_loss(StreamGraph& graph, const CorpusIndex& corpus,
                          const PairBatch& batch, const TrainConfig& config,
                          Stream stream, FeatureCache& cache) {
  ad::Tape& tape = graph.tape();
  const int C = corpus.num_classes();
  graph::EmbeddingVars emb;
  emb.omega = batch.omega;
  emb.omega_bar = batch.omega_bar;
  std::vector<ad::Var> probs;
  std::vector<std::set<int>> labels;
  std::vector<std::pair<ad::Var, ad::Var>> rec_t, rec_u;

  for (const auto& [t_id, u_id] : batch.pairs) {
    const ad::Var x_t = ad::leaf(tape, cache.get(corpus, t_id, stream));
    const ad::Var x_u = ad::leaf(tape, cache.get(corpus, u_id, stream));
    const ad::Var f_st = graph.encode(x_t, Branch::Shared);
    const ad::Var f_pt = graph.encode(x_t, Branch::PrivateTrimmed);
    const ad::Var f_su = graph.encode(x_u, Branch::Shared);
    const ad::Var f_pu = graph.encode(x_u, Branch::PrivateUntrimmed);
    const ad::Var h_st = graph.attend(f_st, Branch::Shared).second;
    const ad::Var h_pt = graph.attend(f_pt, Branch::PrivateTrimmed).second;
    const ad::Var h_su = graph.attend(f_su, Branch::Shared).second;
    const ad::Var h_pu = graph.attend(f_pu, Branch::PrivateUntrimmed).second;
    emb.h_st.push_back(h_st);
    emb.h_pt.push_back(h_pt);
    emb.h_su.push_back(h_su);
    emb.h_pu.push_back(h_pu);
    probs.push_back(graph.classify(h_st, h_pt, Domain::Trimmed));
    labels.push_back(corpus.record(t_id).labels);
    probs.push_back(graph.classify(h_su, h_pu, Domain::Untrimmed));
    labels.push_back(corpus.record(u_id).labels);
    rec_t.emplace_back(x_t, graph.decode(f_st, f_pt));
    rec_u.emplace_back(x_u, graph.decode(f_su, f_pu));
  }

  StreamLossVars out;
  out.cls = graph::classification_loss(tape, probs, labels, C);
  out.rec = graph::recovery_loss(tape, rec_t, rec_u);
  out.total = ad::add(out.cls, ad::scale(out.rec, config.gamma));
  if (!config.ablation.count(kAblateAdp)) {
    out.adp = graph::adaptability_loss(tape, emb);
    out.has_adp = true;
    out.total = ad::add(out.total, ad::scale(out.adp, config.alpha));
  }
  if (!config.ablation.count(kAblateDif)) {
    out.dif = graph::difference_loss(tape, emb);
    out.has_dif = true;
    out.total = ad::add(out.total, ad::scale(out.dif, config.beta));
  }
  return out;
}

LossBreakdown breakdown_of(const StreamLossVars& v, const TrainConfig& c) {
  LossBreakdown b;
  b.alpha = c.alpha;
  b.beta = c.beta;
  b.gamma = c.gamma;
  b.L_cls = ad::scalar(v.cls);
  b.L_rec = ad::scalar(v.rec);
  b.L_adp = v.has_adp ? ad::scalar(v.adp) : 0.0;
  b.L_dif = v.has_dif ? ad::scalar(v.dif) : 0.0;
  b.L_total = ad::scalar(v.total);
  return b;
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (xs.size() - 1));
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (n_b < 1) throw std::invalid_argument("train: n_b must be >= 1");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("train: momentum outside [0,1)");
  if (learning_rate <= 0)
    throw std::invalid_argument("train: learning_rate must be positive");
  if (lr_decay_factor <= 0 || lr_decay_interval < 0)
    throw std::invalid_argument("train: invalid lr decay schedule");
  if (max_iterations < 0)
    throw std::invalid_argument("train: negative max_iterations");
  if (alpha < 0 || beta < 0 || gamma < 0)
    throw std::invalid_argument("train: negative loss weight");
  for (const auto& term : ablation)
    if (term != kAblateAdp && term != kAblateDif)
      throw std::invalid_argument("train: unknown ablation term " + term);
}

Rng train_batch_rng(std::uint64_t seed) { return Rng(seed).fork(1); }

std::pair<ModelParams, TrainHistory> train(const CorpusIndex& corpus,
                                           const TrainConfig& config) {
  config.validate();
  if (config.model.d != corpus.d)
    throw std::invalid_argument("train: config.model.d != corpus.d");
  if (config.model.C != corpus.num_classes())
    throw std::invalid_argument("train: config.model.C != corpus classes");
  if (corpus.trimmed_train().empty() || corpus.untrimmed_train().empty())
    throw std::invalid_argument("train: corpus side is empty");

  ModelParams params = init_params(config.model, config.seed);
  TrainHistory history;
  if (config.max_iterations == 0) return {std::move(params), history};

  FeatureCache cache;
  Rng batch_rng = train_batch_rng(config.seed);
  const Stream streams[] = {Stream::RGB, Stream::FLOW};
  std::map<Stream, std::vector<Mat>> velocity;
  for (Stream s : streams)
    for (auto& [name, tensor] : params.stream(s).tensors())
      velocity[s].push_back(Mat::Zero(tensor->rows(), tensor->cols()));

  for (int it = 0; it < config.max_iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    double lr = config.learning_rate;
    if (config.lr_decay_interval > 0)
      lr /= std::pow(config.lr_decay_factor, it / config.lr_decay_interval);

    const PairBatch batch = sample_pair_batch(corpus, config.n_b, batch_rng);
    LossBreakdown mean_loss;
    mean_loss.alpha = config.alpha;
    mean_loss.beta = config.beta;
    mean_loss.gamma = config.gamma;
    mean_loss.L_cls = mean_loss.L_adp = mean_loss.L_dif = mean_loss.L_rec =
        mean_loss.L_total = 0;
    for (Stream s : streams) {
      StreamParams& sp = params.stream(s);
      ad::Tape tape;
      StreamGraph graph(tape, sp);
      const StreamLossVars loss =
          build_loss(graph, corpus, batch, config, s, cache);
      const LossBreakdown b = breakdown_of(loss, config);
      if (!std::isfinite(b.L_total) || b.L_total > 1e6)
        throw std::runtime_error(
            "train: loss diverged at iteration " + std::to_string(it) +
            " (stream " + stream_name(s) +
            ", L_total=" + std::to_string(b.L_total) + ")");
      mean_loss.L_cls += 0.5 * b.L_cls;
      mean_loss.L_adp += 0.5 * b.L_adp;
      mean_loss.L_dif += 0.5 * b.L_dif;
      mean_loss.L_rec += 0.5 * b.L_rec;
      mean_loss.L_total += 0.5 * b.L_total;

      tape.backward(loss.total);
      const auto& tensors = sp.tensors();
      const auto& vars = graph.param_vars();
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        Mat& v = velocity[s][i];
        v *= config.momentum;
        const Mat& g = tape.grad(vars[i]);
        if (g.size() > 0) v -= lr * g;
        *tensors[i].second += v;
      }
      if (!sp.all_finite())
        throw std::runtime_error("train: non-finite parameters at iteration " +
                                 std::to_string(it));
    }
    IterationRecord rec;
    rec.iteration = it;
    rec.loss = mean_loss;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    history.records.push_back(rec);
  }
  return {std::move(params), std::move(history)};
}

BatchGradients compute_batch_gradients(const CorpusIndex& corpus,
                                       const PairBatch& batch,
                                       const ModelParams& params,
                                       const TrainConfig& config) {
  FeatureCache cache;
  BatchGradients out;
  for (Stream s : {Stream::RGB, Stream::FLOW}) {
    const StreamParams& sp = params.stream(s);
    ad::Tape tape;
    StreamGraph graph(tape, sp);
    const StreamLossVars loss =
        build_loss(graph, corpus, batch, config, s, cache);
    const double value = ad::scalar(loss.total);
    tape.backward(loss.total);
    std::vector<Mat>& grads = s == Stream::RGB ? out.rgb : out.flow;
    (s == Stream::RGB ? out.loss_rgb : out.loss_flow) = value;
    const auto tensors = sp.tensors();
    const auto& vars = graph.param_vars();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const Mat& g = tape.grad(vars[i]);
      grads.push_back(g.size() > 0
                          ? g
                          : Mat::Zero(tensors[i].second->rows(),
                                      tensors[i].second->cols()));
      if (!grads.back().allFinite())
        throw std::runtime_error("gradient_check: non-finite gradient in " +
                                 tensors[i].first);
    }
  }
  return out;
}

namespace {

double stream_loss_value(const CorpusIndex& corpus, const PairBatch& batch,
                         const StreamParams& sp, const TrainConfig& config,
                         Stream stream, FeatureCache& cache) {
  ad::Tape tape;
  StreamGraph graph(tape, sp);
  return ad::scalar(build_loss(graph, corpus, batch, config, stream, cache).total);
}

}  // namespace

GradCheckReport gradient_check(const CorpusIndex& corpus,
                               const PairBatch& batch,
                               const ModelParams& params,
                               const TrainConfig& config, double eps) {
  if (eps <= 0) throw std::invalid_argument("gradient_check: eps must be > 0");
  const BatchGradients analytic =
      compute_batch_gradients(corpus, batch, params, config);
  GradCheckReport report;
  FeatureCache cache;
  ModelParams probe = params;
  for (Stream s : {Stream::RGB, Stream::FLOW}) {
    StreamParams& sp = probe.stream(s);
    const auto tensors = sp.tensors();
    const std::vector<Mat>& grads = s == Stream::RGB ? analytic.rgb
                                                     : analytic.flow;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      Mat& theta = *tensors[i].second;
      Mat numeric(theta.rows(), theta.cols());
      for (int c = 0; c < theta.cols(); ++c)
        for (int r = 0; r < theta.rows(); ++r) {
          const double saved = theta(r, c);
          theta(r, c) = saved + eps;
          const double up =
              stream_loss_value(corpus, batch, sp, config, s, cache);
          theta(r, c) = saved - eps;
          const double down =
              stream_loss_value(corpus, batch, sp, config, s, cache);
          theta(r, c) = saved;
          numeric(r, c) = (up - down) / (2 * eps);
        }
      // Block-level relative error; an entrywise ratio would be dominated
      // by finite-difference roundoff wherever a single true gradient
      // entry is far below the loss scale.
      const double a = grads[i].norm();
      const double n = numeric.norm();
      const double rel =
          (grads[i] - numeric).norm() / std::max({a, n, 1e-8});
      const std::string key =
          std::string(s == Stream::RGB ? "rgb/" : "flow/") + tensors[i].first;
      report.block_error[key] = rel;
      report.max_error = std::max(report.max_error, rel);
    }
  }
  return report;
}

EvalReport evaluate_model(const CorpusIndex& corpus, const ModelParams& params,
                          const LocalizeConfig& loc,
                          const std::vector<double>& iou_thresholds,
                          bool with_average) {
  const auto test = corpus.untrimmed_test();
  if (test.empty())
    throw std::invalid_argument("evaluate_model: empty test split");

  std::vector<int> top1;
  std::vector<std::set<int>> gt_labels;
  std::vector<Detection> detections;
  std::vector<GroundTruthInstance> gts;
  for (const VideoRecord* rec : test) {
    const LocalizeResult res = localize_full(corpus, *rec, params, loc);
    int argmax = 0;
    for (int c = 1; c < res.class_probs.size(); ++c)
      if (res.class_probs(c) > res.class_probs(argmax)) argmax = c;
    top1.push_back(argmax);
    gt_labels.push_back(rec->labels);
    detections.insert(detections.end(), res.detections.begin(),
                      res.detections.end());
    if (rec->gt_intervals)
      for (const GtInterval& g : *rec->gt_intervals)
        gts.push_back({rec->id, g.cls, g.t_start, g.t_end});
  }
  EvalReport report =
      map_at_iou(detections, gts, iou_thresholds, with_average);
  report.accuracy = accuracy(top1, gt_labels);
  report.n_videos = static_cast<int>(test.size());
  return report;
}

std::vector<AblationRow> run_ablation(
    const CorpusIndex& corpus, const TrainConfig& base_config,
    const std::vector<std::set<std::string>>& variants,
    const std::vector<std::uint64_t>& seeds, const LocalizeConfig& loc) {
  if (seeds.empty())
    throw std::invalid_argument("run_ablation: need at least one seed");
  std::vector<AblationRow> table;
  for (const auto& variant : variants) {
    AblationRow row;
    row.ablation = variant;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base_config;
      cfg.ablation = variant;
      cfg.seed = seed;
      LocalizeConfig lc = loc;
      lc.seed = seed;
      auto [params, history] = train(corpus, cfg);
      const EvalReport report = evaluate_model(corpus, params, lc, {0.5});
      row.accuracies.push_back(report.accuracy);
      row.maps.push_back(report.map_at.at(0.5));
    }
    auto mean = [](const std::vector<double>& xs) {
      double s = 0;
      for (double x : xs) s += x;
      return s / xs.size();
    };
    row.accuracy_mean = mean(row.accuracies);
    row.map_mean = mean(row.maps);
    row.accuracy_std = sample_std(row.accuracies, row.accuracy_mean);
    row.map_std = sample_std(row.maps, row.map_mean);
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace adapnet
