// Acceptance suite: one pass/fail line per criterion, exit 0 only when
// every criterion holds.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "adapnet/app.hpp"
#include "adapnet/localization.hpp"
#include "adapnet/losses.hpp"
#include "adapnet/trainer.hpp"

using namespace adapnet;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& what, bool ok) {
  std::printf("%d. %-58s %s\n", id, what.c_str(), ok ? "PASS" : "FAIL");
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

CorpusIndex make_corpus(const fs::path& dir, const SynthSpec& spec) {
  fs::remove_all(dir);
  return generate_synthetic_corpus(spec, dir);
}

Vec random_simplex(Rng& rng, int n) {
  Vec p(n);
  for (int i = 0; i < n; ++i) p(i) = rng.uniform(0.01, 1.0);
  return p / p.sum();
}

// ---------------------------------------------------------------- 1
void criterion_gradients() {
  const fs::path dir = fs::temp_directory_path() / "adapnet_acc_grad";
  SynthSpec spec;
  spec.C = 3;
  spec.d = 8;
  spec.background_noise_sigma = 0.3;
  spec.n_trimmed_per_class = 2;
  spec.n_untrimmed = 4;
  spec.untrimmed_length_range = {10, 12};
  spec.segment_length_range = {5, 8};
  spec.seed = 1;
  const CorpusIndex corpus = make_corpus(dir, spec);

  TrainConfig cfg;
  cfg.model.d = 8;
  cfg.model.d_f = 6;
  cfg.model.b = 4;
  cfg.model.C = 3;
  cfg.n_b = 4;
  const ModelParams params = init_params(cfg.model, 7);
  Rng rng = train_batch_rng(7);
  const PairBatch batch = sample_pair_batch(corpus, cfg.n_b, rng);

  const auto t0 = clock_type::now();
  const GradCheckReport gc = gradient_check(corpus, batch, params, cfg, 1e-5);
  const double elapsed = seconds_since(t0);
  char what[128];
  std::snprintf(what, sizeof what,
                "gradient fidelity (max rel err %.2e, %.1fs)", gc.max_error,
                elapsed);
  report(1, what, gc.max_error < 1e-4 && elapsed < 120.0);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- 2
void criterion_losses() {
  Rng rng(2);
  const double ln2 = std::log(2.0);
  bool ok = true;
  for (int it = 0; it < 1000 && ok; ++it) {
    const int n = 2 + static_cast<int>(rng.uniform_below(7));
    const Vec p = random_simplex(rng, n);
    const Vec q = random_simplex(rng, n);
    const double pq = js_divergence(p, q);
    ok = ok && std::abs(pq - js_divergence(q, p)) <= 1e-14;
    ok = ok && pq >= 0.0 && pq <= ln2;
    ok = ok && js_divergence(p, p) <= 1e-10;
  }
  for (int it = 0; it < 1000 && ok; ++it) {
    const int d_f = 3 + static_cast<int>(rng.uniform_below(5));
    const int n_b = 2 + static_cast<int>(rng.uniform_below(5));
    EmbeddingBatch batch;
    for (Mat* h : {&batch.H_st, &batch.H_pt, &batch.H_su, &batch.H_pu}) {
      h->resize(d_f, n_b);
      for (int i = 0; i < d_f; ++i)
        for (int j = 0; j < n_b; ++j) (*h)(i, j) = rng.gaussian() * 2.0;
    }
    for (int j = 0; j < n_b; ++j)
      (j == 0 || (j != 1 && rng.uniform() < 0.5) ? batch.omega
                                                 : batch.omega_bar)
          .push_back(j);
    const double adp = adaptability_loss(batch);
    const double dif = difference_loss(batch);
    ok = ok && adp >= -ln2 / 2 - 1e-12 && adp <= ln2 / 2 + 1e-12;
    ok = ok && dif >= -ln2 - 1e-12 && dif <= 1e-12;
  }
  for (int it = 0; it < 1000 && ok; ++it) {
    const double c = rng.uniform(0, 3), a = rng.uniform(-1, 1);
    const double d = rng.uniform(-1, 0), r = rng.uniform(0, 5);
    const double al = rng.uniform(0, 1), be = rng.uniform(0, 1);
    const double ga = rng.uniform(0, 1);
    const LossBreakdown lb = total_loss(c, a, d, r, al, be, ga);
    ok = ok &&
         std::abs(lb.L_total - (c + al * a + be * d + ga * r)) <= 1e-12;
  }
  report(2, "loss-term properties (1000 random instances each)", ok);
}

// ---------------------------------------------------------------- 3
void criterion_cascade() {
  Rng rng(3);
  bool ok = true;
  for (int it = 0; it < 1000 && ok; ++it) {
    const int C = 2 + static_cast<int>(rng.uniform_below(3));
    const int d_f = 3 + static_cast<int>(rng.uniform_below(4));
    const int m = 4 + static_cast<int>(rng.uniform_below(8));
    const auto randmat = [&](int r, int c) {
      Mat x(r, c);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) x(i, j) = rng.gaussian();
      return x;
    };
    const Mat W1 = randmat(C, d_f), W2 = randmat(C, d_f);
    const Mat F = randmat(d_f, m);
    const double s1 = rng.uniform(-2, 2), s2 = rng.uniform(-2, 2);
    // Linearity of the activation map in its weights.
    ok = ok && (tcam(s1 * W1 + s2 * W2, F) -
                (s1 * tcam(W1, F) + s2 * tcam(W2, F)))
                       .cwiseAbs()
                       .maxCoeff() <= 1e-10;

    const Vec a = random_simplex(rng, m);
    const Mat P = randmat(C, m);
    const Mat Q = weighted_tcam(a, P);
    for (int c = 0; c < C && ok; ++c)
      for (int k = 0; k < m && ok; ++k)
        ok = Q(c, k) > 0.0 && Q(c, k) < a(k);

    const Mat Q_s = weighted_tcam(a, randmat(C, m));
    const Mat Q_p = weighted_tcam(a, randmat(C, m));
    ok = ok && multiview_tcam(Q_s, Q_p, 1.0) == Q_s;
    ok = ok && multiview_tcam(Q_s, Q_p, 0.0) == Q_p;
    ok = ok && fuse_streams(Q_s, Q_p, 1.0) == Q_s;
    ok = ok && fuse_streams(Q_s, Q_p, 0.0) == Q_p;
    const double delta = rng.uniform(0, 1);
    const Mat R = multiview_tcam(Q_s, Q_p, delta);
    const Mat S = fuse_streams(Q_s, Q_p, delta);
    for (int c = 0; c < C && ok; ++c)
      for (int k = 0; k < m && ok; ++k) {
        const double lo = std::min(Q_s(c, k), Q_p(c, k)) - 1e-15;
        const double hi = std::max(Q_s(c, k), Q_p(c, k)) + 1e-15;
        ok = R(c, k) >= lo && R(c, k) <= hi && S(c, k) >= lo && S(c, k) <= hi;
      }
  }
  report(3, "localization-cascade algebra (1000 random instances)", ok);
}

// ---------------------------------------------------------------- 4
std::vector<Detection> nms_reference(const std::vector<Detection>& dets,
                                     double thr) {
  std::vector<int> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].t_start != dets[b].t_start)
      return dets[a].t_start < dets[b].t_start;
    return dets[a].video_id < dets[b].video_id;
  });
  std::vector<bool> kept(dets.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < i && keep; ++j) {
      if (!kept[order[j]]) continue;
      const Detection& a = dets[order[i]];
      const Detection& b = dets[order[j]];
      if (a.cls != b.cls || a.video_id != b.video_id) continue;
      if (interval_iou({a.t_start, a.t_end}, {b.t_start, b.t_end}) >= thr)
        keep = false;
    }
    if (keep) kept[order[i]] = true;
  }
  std::vector<Detection> out;
  for (int i : order)
    if (kept[i]) out.push_back(dets[i]);
  return out;
}

double ap_reference(std::vector<Detection> dets,
                    std::vector<GroundTruthInstance> gts, double thr) {
  if (gts.empty()) return 0.0;
  std::sort(dets.begin(), dets.end(),
            [](const Detection& a, const Detection& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.t_start != b.t_start) return a.t_start < b.t_start;
              return a.video_id < b.video_id;
            });
  std::vector<int> assigned(dets.size(), -1);
  std::vector<bool> used(gts.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    double best_iou = -1.0;
    int best = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].video_id != dets[d].video_id) continue;
      const double iou = interval_iou({dets[d].t_start, dets[d].t_end},
                                      {gts[g].t_start, gts[g].t_end});
      if (iou >= thr && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      assigned[d] = best;
      used[best] = true;
    }
  }
  double ap = 0.0;
  int tp = 0;
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (assigned[d] >= 0) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(d + 1);
    }
  return ap / static_cast<double>(gts.size());
}

bool same_detections(const std::vector<Detection>& a,
                     const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].video_id != b[i].video_id || a[i].cls != b[i].cls ||
        a[i].t_start != b[i].t_start || a[i].t_end != b[i].t_end ||
        a[i].score != b[i].score)
      return false;
  return true;
}

void criterion_oracles() {
  Rng rng(4);
  // Quarter-step quantization forces frequent ties so the declared
  // tie-break rules are actually exercised.
  const auto quarter = [](double v) { return std::round(v * 4.0) / 4.0; };
  bool nms_ok = true;
  for (int it = 0; it < 1000 && nms_ok; ++it) {
    const int n = 1 + static_cast<int>(rng.uniform_below(12));
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      Detection d;
      d.video_id = rng.uniform() < 0.5 ? "v0" : "v1";
      d.cls = static_cast<int>(rng.uniform_below(2));
      d.t_start = quarter(rng.uniform(0, 6));
      d.t_end = d.t_start + quarter(rng.uniform(0.25, 3.0)) + 0.25;
      d.score = quarter(rng.uniform());
      dets.push_back(std::move(d));
    }
    const double thr = 0.1 + 0.8 * rng.uniform();
    nms_ok = same_detections(nms(dets, thr), nms_reference(dets, thr));
  }
  bool ap_ok = true;
  for (int it = 0; it < 500 && ap_ok; ++it) {
    const int nd = 1 + static_cast<int>(rng.uniform_below(5));
    const int ng = 1 + static_cast<int>(rng.uniform_below(3));
    std::vector<Detection> dets;
    std::vector<GroundTruthInstance> gts;
    for (int i = 0; i < nd; ++i) {
      Detection d;
      d.video_id = rng.uniform() < 0.5 ? "v0" : "v1";
      d.cls = 0;
      d.t_start = quarter(rng.uniform(0, 5));
      d.t_end = d.t_start + quarter(rng.uniform(0.25, 2.5)) + 0.25;
      d.score = quarter(rng.uniform());
      dets.push_back(std::move(d));
    }
    for (int g = 0; g < ng; ++g) {
      GroundTruthInstance gt;
      gt.video_id = rng.uniform() < 0.5 ? "v0" : "v1";
      gt.cls = 0;
      gt.t_start = quarter(rng.uniform(0, 5));
      gt.t_end = gt.t_start + quarter(rng.uniform(0.25, 2.5)) + 0.25;
      gts.push_back(std::move(gt));
    }
    const double thr = 0.1 + 0.8 * rng.uniform();
    ap_ok = average_precision(dets, gts, thr) == ap_reference(dets, gts, thr);
  }
  report(4, "NMS (1000) and AP (500) match exhaustive references",
         nms_ok && ap_ok);
}

// ------------------------------------------------------------- 5 & 6
SynthSpec benchmark_spec() {
  SynthSpec spec;
  spec.C = 4;
  spec.d = 32;
  spec.background_noise_sigma = 0.5;
  spec.n_trimmed_per_class = 20;
  spec.n_untrimmed = 40;
  spec.n_untrimmed_test = 20;
  spec.seed = 99;
  return spec;
}

TrainConfig benchmark_config() {
  TrainConfig cfg;
  cfg.model.d = 32;
  cfg.model.d_f = 16;
  cfg.model.b = 8;
  cfg.model.C = 4;
  cfg.n_b = 8;
  cfg.learning_rate = 0.03;
  cfg.max_iterations = 300;
  return cfg;
}

void criterion_end_to_end(const CorpusIndex& corpus,
                          const std::vector<std::uint64_t>& seeds,
                          AblationRow& full_row) {
  const auto t0 = clock_type::now();
  full_row = run_ablation(corpus, benchmark_config(), {{}}, seeds,
                          LocalizeConfig{})[0];
  const double elapsed = seconds_since(t0);
  char what[160];
  std::snprintf(what, sizeof what,
                "end-to-end: accuracy %.3f, mAP@0.5 %.3f (%.0fs)",
                full_row.accuracy_mean, full_row.map_mean, elapsed);
  report(5, what,
         full_row.accuracy_mean >= 0.90 && full_row.map_mean >= 0.50 &&
             elapsed < 900.0);
}

void criterion_ablation(const CorpusIndex& corpus,
                        const std::vector<std::uint64_t>& seeds,
                        const AblationRow& full_row) {
  const std::vector<std::set<std::string>> variants = {
      {kAblateDif}, {kAblateAdp}, {kAblateAdp, kAblateDif}};
  const std::vector<AblationRow> rows =
      run_ablation(corpus, benchmark_config(), variants, seeds,
                   LocalizeConfig{});
  const double full = full_row.accuracy_mean;
  const double wo_dif = rows[0].accuracy_mean;
  const double wo_adp = rows[1].accuracy_mean;
  const double wo_both = rows[2].accuracy_mean;
  char what[180];
  std::snprintf(what, sizeof what,
                "ablation: %.3f > {dif %.3f, adp %.3f > both %.3f}", full,
                wo_dif, wo_adp, wo_both);
  report(6, what,
         full > wo_dif && full > wo_adp && wo_adp > wo_both &&
             full >= wo_both + 0.05);
}

// ---------------------------------------------------------------- 7
std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_determinism() {
  const char* bin = std::getenv("ADAPNET_BIN");
  if (bin == nullptr) {
    report(7, "pipeline determinism (ADAPNET_BIN not set)", false);
    return;
  }
  const fs::path dir = fs::temp_directory_path() / "adapnet_acc_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string corpus = (dir / "corpus").string();
  const std::string flags =
      " --set C=2 --set d=8 --set sigma=0.2 --set n_trimmed_per_class=3"
      " --set n_untrimmed=3 --set n_untrimmed_test=2"
      " --set untrimmed_length_min=20 --set untrimmed_length_max=30"
      " --set segment_length_min=6 --set segment_length_max=10"
      " --set d_f=4 --set b=3 --set n_b=4 --set max_iterations=20"
      " --set trpp_iterations=20 --seed 5";
  bool ok = true;
  const auto run_cli = [&](const std::string& args) {
    const std::string cmd =
        std::string(bin) + " " + args + flags + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    ok = ok && status != -1 && WEXITSTATUS(status) == 0;
  };
  run_cli("synth --out " + corpus);
  for (const std::string tag : {"a", "b"}) {
    const std::string out = (dir / tag).string();
    run_cli("train --corpus " + corpus + " --out " + out);
    run_cli("localize --corpus " + corpus + " --checkpoint " + out +
            "/checkpoint.adpc --out " + out);
    run_cli("eval --corpus " + corpus + " --checkpoint " + out +
            "/checkpoint.adpc --out " + out);
  }
  ok = ok &&
       slurp(dir / "a" / "detections.jsonl") ==
           slurp(dir / "b" / "detections.jsonl") &&
       !slurp(dir / "a" / "detections.jsonl").empty() &&
       slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json") &&
       !slurp(dir / "a" / "report.json").empty();
  report(7, "pipeline determinism (byte-identical reruns)", ok);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- 8
void criterion_map_monotonic(const CorpusIndex& corpus) {
  TrainConfig cfg = benchmark_config();
  cfg.seed = 4;
  LocalizeConfig loc;
  loc.seed = 4;
  auto [params, history] = train(corpus, cfg);
  std::vector<Detection> dets;
  std::vector<GroundTruthInstance> gts;
  for (const VideoRecord* rec : corpus.untrimmed_test()) {
    const std::vector<Detection> d = localize(corpus, *rec, params, loc);
    dets.insert(dets.end(), d.begin(), d.end());
    if (rec->gt_intervals)
      for (const GtInterval& g : *rec->gt_intervals)
        gts.push_back({rec->id, g.cls, g.t_start, g.t_end});
  }
  std::vector<double> thresholds;
  for (int i = 1; i <= 9; ++i) thresholds.push_back(i / 10.0);
  const EvalReport rep = map_at_iou(dets, gts, thresholds);
  bool ok = !dets.empty();
  double prev = 2.0;
  for (double t : thresholds) {
    ok = ok && rep.map_at.at(t) <= prev + 1e-15;
    prev = rep.map_at.at(t);
  }
  report(8, "mAP non-increasing over IoU thresholds 0.1..0.9", ok);
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_losses();
  criterion_cascade();
  criterion_oracles();

  const fs::path bench_dir = fs::temp_directory_path() / "adapnet_acc_bench";
  const CorpusIndex bench = make_corpus(bench_dir, benchmark_spec());
  const std::vector<std::uint64_t> seeds = {4, 5, 7, 8, 10};
  AblationRow full_row;
  criterion_end_to_end(bench, seeds, full_row);
  criterion_ablation(bench, seeds, full_row);
  criterion_determinism();
  criterion_map_monotonic(bench);
  fs::remove_all(bench_dir);

  if (failures == 0) std::printf("all criteria passed\n");
  return failures == 0 ? 0 : 1;
}
