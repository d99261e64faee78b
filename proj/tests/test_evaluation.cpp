#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "adapnet/evaluation.hpp"
#include "adapnet/rng.hpp"

using namespace adapnet;

namespace {

// Independent AP reference: explicit rank table, exhaustive IoU scans,
// explicit precision/recall accumulation.
double ap_reference(std::vector<Detection> dets,
                    std::vector<GroundTruthInstance> gts, double thr) {
  if (gts.empty()) return 0.0;
  std::sort(dets.begin(), dets.end(), [](const Detection& a,
                                         const Detection& b) {
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
      if (used[g]) continue;
      if (gts[g].video_id != dets[d].video_id) continue;
      const double i0 = std::max(dets[d].t_start, gts[g].t_start);
      const double i1 = std::min(dets[d].t_end, gts[g].t_end);
      const double inter = std::max(0.0, i1 - i0);
      const double uni = (dets[d].t_end - dets[d].t_start) +
                         (gts[g].t_end - gts[g].t_start) - inter;
      const double iou = inter / uni;
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
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (assigned[d] >= 0) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(d + 1);
    }
  }
  return ap / gts.size();
}

Detection make_det(std::string vid, int cls, double t0, double t1,
                   double score) {
  Detection d;
  d.video_id = std::move(vid);
  d.cls = cls;
  d.t_start = t0;
  d.t_end = t1;
  d.score = score;
  return d;
}

}  // namespace

TEST_CASE("predict_labels basics") {
  Eigen::VectorXd p(4);
  p << 0.25, 0.25, 0.25, 0.25;
  CHECK(predict_labels(p, 0.1) == std::set<int>{0, 1, 2, 3});
  Eigen::VectorXd q(3);
  q << 0.9, 0.05, 0.05;
  CHECK(predict_labels(q, 0.1) == std::set<int>{0});
  Eigen::VectorXd tie(2);
  tie << 0.5, 0.5;
  CHECK(predict_labels(tie, 0.6) == std::set<int>{0});
  CHECK_THROWS_AS(predict_labels(q, 0.0), std::invalid_argument);
  Eigen::VectorXd bad(2);
  bad << 0.7, 0.7;
  CHECK_THROWS_AS(predict_labels(bad, 0.5), std::invalid_argument);
}

TEST_CASE("predict_labels never empty over random distributions") {
  Rng rng(1);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd v(5);
    for (int i = 0; i < 5; ++i) v(i) = -std::log(1.0 - rng.uniform());
    v /= v.sum();
    CHECK(!predict_labels(v, 0.9).empty());
  }
}

TEST_CASE("accuracy top-1 convention") {
  std::vector<std::set<int>> gt = {{0}, {1, 2}, {3}, {0}};
  CHECK(accuracy({0, 1, 3, 0}, gt) == 1.0);
  CHECK(accuracy({1, 0, 0, 1}, gt) == 0.0);
  CHECK(accuracy({0, 2, 3, 1}, gt) == 0.75);
  CHECK_THROWS_AS(accuracy({0}, gt), std::invalid_argument);
}

TEST_CASE("interval_iou") {
  CHECK(interval_iou({1.0, 3.0}, {1.0, 3.0}) == 1.0);
  CHECK(interval_iou({0.0, 2.0}, {1.0, 3.0}) ==
        doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(interval_iou({0.0, 1.0}, {2.0, 3.0}) == 0.0);
  CHECK_THROWS_AS(interval_iou({1.0, 1.0}, {0.0, 2.0}), std::invalid_argument);
  // symmetry over random intervals
  Rng rng(2);
  for (int it = 0; it < 100; ++it) {
    double a0 = rng.uniform(0, 10), a1 = a0 + rng.uniform(0.1, 5);
    double b0 = rng.uniform(0, 10), b1 = b0 + rng.uniform(0.1, 5);
    const double ab = interval_iou({a0, a1}, {b0, b1});
    CHECK(ab == interval_iou({b0, b1}, {a0, a1}));
    CHECK(ab <= 1.0);
    CHECK(ab >= 0.0);
  }
}

TEST_CASE("average_precision: exact single-detection cases") {
  GroundTruthInstance gt{"v", 0, 1.0, 2.0};
  CHECK(average_precision({make_det("v", 0, 1.0, 2.0, 0.9)}, {gt}, 0.5) == 1.0);
  CHECK(average_precision({}, {gt}, 0.5) == 0.0);
}

TEST_CASE("average_precision equals brute-force matcher on 500 instances") {
  Rng rng(3);
  for (int it = 0; it < 500; ++it) {
    const int nd = static_cast<int>(rng.uniform_below(6));
    const int ng = 1 + static_cast<int>(rng.uniform_below(3));
    std::vector<Detection> dets;
    std::vector<GroundTruthInstance> gts;
    for (int d = 0; d < nd; ++d) {
      const double t0 = rng.uniform(0, 8);
      dets.push_back(make_det(rng.uniform() < 0.7 ? "a" : "b", 0, t0,
                              t0 + rng.uniform(0.5, 4),
                              std::round(rng.uniform() * 4) / 4));  // forces ties
    }
    for (int g = 0; g < ng; ++g) {
      const double t0 = rng.uniform(0, 8);
      gts.push_back({rng.uniform() < 0.7 ? "a" : "b", 0, t0,
                     t0 + rng.uniform(0.5, 4)});
    }
    const double thr = 0.1 + 0.2 * rng.uniform_below(4);
    CHECK(average_precision(dets, gts, thr) == ap_reference(dets, gts, thr));
  }
}

TEST_CASE("duplicate of a matched detection never increases AP") {
  Rng rng(4);
  for (int it = 0; it < 100; ++it) {
    std::vector<Detection> dets;
    std::vector<GroundTruthInstance> gts;
    const double t0 = rng.uniform(0, 5);
    gts.push_back({"v", 0, t0, t0 + 2.0});
    dets.push_back(make_det("v", 0, t0, t0 + 2.0, 0.9));
    const double base = average_precision(dets, gts, 0.5);
    dets.push_back(dets[0]);
    dets.back().score = rng.uniform();
    CHECK(average_precision(dets, gts, 0.5) <= base + 1e-15);
  }
}

TEST_CASE("map_at_iou: perfect detections give 1.0 everywhere") {
  std::vector<GroundTruthInstance> gts = {{"v1", 0, 0.0, 2.0},
                                          {"v2", 1, 1.0, 4.0}};
  std::vector<Detection> dets = {make_det("v1", 0, 0.0, 2.0, 0.9),
                                 make_det("v2", 1, 1.0, 4.0, 0.8)};
  EvalReport r = map_at_iou(dets, gts, {0.1, 0.5, 0.9}, true);
  for (const auto& [thr, v] : r.map_at) CHECK(v == 1.0);
  CHECK(r.average_map == 1.0);
  CHECK(r.has_average);
}

TEST_CASE("map_at_iou: below-threshold overlap scores zero") {
  std::vector<GroundTruthInstance> gts = {{"v", 0, 0.0, 2.0}};
  // IoU = 1/3
  std::vector<Detection> dets = {make_det("v", 0, 1.0, 3.0, 0.9)};
  EvalReport r = map_at_iou(dets, gts, {0.5});
  CHECK(r.map_at.at(0.5) == 0.0);
}

TEST_CASE("map_at_iou equals per-class AP mean oracle") {
  Rng rng(5);
  std::vector<Detection> dets;
  std::vector<GroundTruthInstance> gts;
  for (int i = 0; i < 12; ++i) {
    const double t0 = rng.uniform(0, 10);
    dets.push_back(make_det(rng.uniform() < 0.5 ? "a" : "b",
                            static_cast<int>(rng.uniform_below(3)), t0,
                            t0 + rng.uniform(0.5, 3), rng.uniform()));
  }
  for (int i = 0; i < 6; ++i) {
    const double t0 = rng.uniform(0, 10);
    gts.push_back({rng.uniform() < 0.5 ? "a" : "b",
                   static_cast<int>(rng.uniform_below(3)), t0,
                   t0 + rng.uniform(0.5, 3)});
  }
  EvalReport r = map_at_iou(dets, gts, {0.3});
  double sum = 0.0;
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.cls);
  for (int c : classes) {
    std::vector<Detection> dc;
    std::vector<GroundTruthInstance> gc;
    for (const auto& d : dets)
      if (d.cls == c) dc.push_back(d);
    for (const auto& g : gts)
      if (g.cls == c) gc.push_back(g);
    sum += average_precision(dc, gc, 0.3);
  }
  CHECK(r.map_at.at(0.3) ==
        doctest::Approx(sum / classes.size()).epsilon(1e-10));
}

TEST_CASE("mAP is non-increasing in the IoU threshold") {
  Rng rng(6);
  for (int it = 0; it < 50; ++it) {
    std::vector<Detection> dets;
    std::vector<GroundTruthInstance> gts;
    for (int i = 0; i < 8; ++i) {
      const double t0 = rng.uniform(0, 10);
      dets.push_back(make_det("v", static_cast<int>(rng.uniform_below(2)), t0,
                              t0 + rng.uniform(0.5, 3), rng.uniform()));
    }
    for (int i = 0; i < 4; ++i) {
      const double t0 = rng.uniform(0, 10);
      gts.push_back({"v", static_cast<int>(rng.uniform_below(2)), t0,
                     t0 + rng.uniform(0.5, 3)});
    }
    std::vector<double> thresholds;
    for (double t = 0.1; t < 0.95; t += 0.1) thresholds.push_back(t);
    EvalReport r = map_at_iou(dets, gts, thresholds);
    double prev = 1.0 + 1e-12;
    for (double t : thresholds) {
      CHECK(r.map_at.at(t) <= prev + 1e-12);
      prev = r.map_at.at(t);
    }
  }
}

TEST_CASE("map_at_iou rejects empty threshold list") {
  CHECK_THROWS_AS(map_at_iou({}, {}, {}), std::invalid_argument);
}
