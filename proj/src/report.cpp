#include "adapnet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace adapnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

void write_detections(const fs::path& path,
                      const std::vector<Detection>& detections) {
  std::ofstream os = open_out(path);
  for (const Detection& det : detections) {
    json line;
    line["class"] = det.cls;
    line["score"] = det.score;
    line["t_end"] = det.t_end;
    line["t_start"] = det.t_start;
    line["video_id"] = det.video_id;
    os << line.dump() << '\n';
  }
}

std::vector<Detection> read_detections(const fs::path& path) {
  std::ifstream is = open_in(path);
  std::vector<Detection> detections;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Detection det;
    det.video_id = j.at("video_id").get<std::string>();
    det.cls = j.at("class").get<int>();
    det.t_start = j.at("t_start").get<double>();
    det.t_end = j.at("t_end").get<double>();
    det.score = j.at("score").get<double>();
    detections.push_back(std::move(det));
  }
  return detections;
}

void write_history(const fs::path& path, const TrainHistory& history) {
  std::ofstream os = open_out(path);
  for (const IterationRecord& rec : history.records) {
    json line;
    line["L_adp"] = rec.loss.L_adp;
    line["L_cls"] = rec.loss.L_cls;
    line["L_dif"] = rec.loss.L_dif;
    line["L_rec"] = rec.loss.L_rec;
    line["L_total"] = rec.loss.L_total;
    line["iteration"] = rec.iteration;
    os << line.dump() << '\n';
  }
}

void write_report(const EvalReport& report, const fs::path& out_path) {
  bool any_class = false;
  for (const auto& [thr, per_class] : report.ap)
    if (!per_class.empty()) any_class = true;
  if (!any_class) throw std::invalid_argument("no classes evaluated");

  json doc;
  doc["accuracy"] = report.accuracy;
  doc["n_videos"] = report.n_videos;
  doc["n_detections"] = report.n_detections;
  doc["n_ground_truths"] = report.n_ground_truths;
  doc["has_average"] = report.has_average;
  if (report.has_average) doc["average_map"] = report.average_map;
  json map_rows = json::array();
  for (const auto& [thr, value] : report.map_at)
    map_rows.push_back({{"iou", thr}, {"map", value}});
  doc["map_at"] = map_rows;
  json ap_rows = json::array();
  for (const auto& [thr, per_class] : report.ap)
    for (const auto& [cls, value] : per_class)
      ap_rows.push_back({{"ap", value}, {"class", cls}, {"iou", thr}});
  doc["ap"] = ap_rows;
  open_out(out_path) << doc.dump(2) << '\n';

  // Aligned table: one row per IoU threshold, per-class AP columns, mAP.
  std::vector<int> classes;
  for (const auto& [thr, per_class] : report.ap)
    for (const auto& [cls, value] : per_class)
      if (std::find(classes.begin(), classes.end(), cls) == classes.end())
        classes.push_back(cls);
  std::sort(classes.begin(), classes.end());

  std::ostringstream table;
  table << "accuracy " << fmt3(report.accuracy) << "\n\n";
  table << "  IoU";
  for (int cls : classes) {
    char head[32];
    std::snprintf(head, sizeof head, "  class_%-3d", cls);
    table << head;
  }
  table << "     mAP\n";
  for (const auto& [thr, value] : report.map_at) {
    table << ' ' << fmt3(thr).substr(0, 4);
    const auto& per_class = report.ap.at(thr);
    for (int cls : classes) {
      const auto it = per_class.find(cls);
      table << "      " << (it == per_class.end() ? "  -  " : fmt3(it->second));
    }
    table << "   " << fmt3(value) << '\n';
  }
  if (report.has_average) table << " avg mAP " << fmt3(report.average_map) << '\n';
  fs::path txt = out_path;
  txt.replace_extension(".txt");
  open_out(txt) << table.str();
}

EvalReport read_report(const fs::path& path) {
  json doc;
  open_in(path) >> doc;
  EvalReport report;
  report.accuracy = doc.at("accuracy").get<double>();
  report.n_videos = doc.at("n_videos").get<int>();
  report.n_detections = doc.at("n_detections").get<int>();
  report.n_ground_truths = doc.at("n_ground_truths").get<int>();
  report.has_average = doc.at("has_average").get<bool>();
  if (report.has_average)
    report.average_map = doc.at("average_map").get<double>();
  for (const json& row : doc.at("map_at"))
    report.map_at[row.at("iou").get<double>()] = row.at("map").get<double>();
  for (const json& row : doc.at("ap"))
    report.ap[row.at("iou").get<double>()][row.at("class").get<int>()] =
        row.at("ap").get<double>();
  return report;
}

void write_ablation(const std::vector<AblationRow>& rows,
                    const fs::path& out_path) {
  json doc = json::array();
  for (const AblationRow& row : rows) {
    json r;
    r["ablation"] = std::vector<std::string>(row.ablation.begin(),
                                             row.ablation.end());
    r["accuracies"] = row.accuracies;
    r["accuracy_mean"] = row.accuracy_mean;
    r["accuracy_std"] = row.accuracy_std;
    r["map_mean"] = row.map_mean;
    r["map_std"] = row.map_std;
    r["maps"] = row.maps;
    doc.push_back(std::move(r));
  }
  open_out(out_path) << doc.dump(2) << '\n';

  std::ostringstream table;
  table << " variant            accuracy      mAP@0.5\n";
  for (const AblationRow& row : rows) {
    std::string name = "full";
    if (!row.ablation.empty()) {
      name = "w/o";
      for (const std::string& term : row.ablation) name += ' ' + term;
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, " %-18s %.3f±%.3f  %.3f±%.3f\n",
                  name.c_str(), row.accuracy_mean, row.accuracy_std,
                  row.map_mean, row.map_std);
    table << buf;
  }
  fs::path txt = out_path;
  txt.replace_extension(".txt");
  open_out(txt) << table.str();
}

namespace {

const char* class_color(int cls) {
  static const char* palette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  return palette[cls % 8];
}

}  // namespace

void emit_timeline(const std::string& video_id,
                   const std::vector<GtInterval>& ground_truth,
                   const Eigen::VectorXd& attention, const Mat& S_refined,
                   const std::vector<Detection>& detections, double fps,
                   const fs::path& out_path) {
  const int C = static_cast<int>(S_refined.rows());
  const int m = static_cast<int>(S_refined.cols());
  if (m == 0) throw std::invalid_argument("emit_timeline: empty video");
  if (attention.size() != m)
    throw std::invalid_argument(
        "emit_timeline: attention length does not match frame count");
  if (fps <= 0) throw std::invalid_argument("emit_timeline: fps must be > 0");

  // CSV of the plotted series, one row per frame.
  fs::path csv_path = out_path;
  csv_path.replace_extension(".csv");
  {
    std::ofstream csv = open_out(csv_path);
    csv << "frame,time,attention";
    for (int c = 0; c < C; ++c) csv << ",score_class_" << c;
    csv << '\n';
    for (int k = 0; k < m; ++k) {
      csv << k << ',' << fmt(k / fps) << ',' << fmt(attention(k));
      for (int c = 0; c < C; ++c) csv << ',' << fmt(S_refined(c, k));
      csv << '\n';
    }
  }

  const double duration = m / fps;
  const double left = 60, width = 720;
  const double lane_h = 18, curve_h = 120, att_h = 60, det_h = 18;
  const double gt_top = 40;
  const double curve_top = gt_top + C * lane_h + 20;
  const double att_top = curve_top + curve_h + 20;
  const double det_top = att_top + att_h + 20;
  const double total_h = det_top + det_h + 40;
  const auto x_of = [&](double t) { return left + width * t / duration; };

  std::ofstream svg = open_out(out_path);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"820\" height=\""
      << fmt(total_h) << "\" font-family=\"monospace\" font-size=\"11\">\n";
  svg << "<text x=\"" << fmt(left) << "\" y=\"20\">" << video_id
      << "</text>\n";

  // Time axis with one tick per second.
  const double axis_y = det_top + det_h + 12;
  svg << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(axis_y)
      << "\" x2=\"" << fmt(left + width) << "\" y2=\"" << fmt(axis_y)
      << "\" stroke=\"black\"/>\n";
  for (int s = 0; s <= static_cast<int>(duration); ++s) {
    svg << "<line x1=\"" << fmt(x_of(s)) << "\" y1=\"" << fmt(axis_y - 3)
        << "\" x2=\"" << fmt(x_of(s)) << "\" y2=\"" << fmt(axis_y + 3)
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt(x_of(s) - 3) << "\" y=\"" << fmt(axis_y + 15)
        << "\">" << s << "</text>\n";
  }

  // Ground-truth lanes, one per class.
  for (int c = 0; c < C; ++c) {
    const double y = gt_top + c * lane_h;
    svg << "<text x=\"5\" y=\"" << fmt(y + 12) << "\">gt " << c
        << "</text>\n";
    for (const GtInterval& gt : ground_truth) {
      if (gt.cls != c) continue;
      svg << "<rect x=\"" << fmt(x_of(gt.t_start)) << "\" y=\"" << fmt(y + 2)
          << "\" width=\"" << fmt(x_of(gt.t_end) - x_of(gt.t_start))
          << "\" height=\"" << fmt(lane_h - 4) << "\" fill=\""
          << class_color(c) << "\" fill-opacity=\"0.6\"/>\n";
    }
  }

  // Refined score curves (scores clamped to [0,1] by construction).
  svg << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(curve_top)
      << "\" width=\"" << fmt(width) << "\" height=\"" << fmt(curve_h)
      << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  svg << "<text x=\"5\" y=\"" << fmt(curve_top + 12) << "\">scores</text>\n";
  for (int c = 0; c < C; ++c) {
    svg << "<polyline fill=\"none\" stroke=\"" << class_color(c)
        << "\" points=\"";
    for (int k = 0; k < m; ++k) {
      const double v = std::min(1.0, std::max(0.0, S_refined(c, k)));
      svg << fmt(x_of(k / fps)) << ',' << fmt(curve_top + curve_h * (1 - v))
          << ' ';
    }
    svg << "\"/>\n";
  }

  // Attention curve, scaled to its own maximum.
  svg << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(att_top)
      << "\" width=\"" << fmt(width) << "\" height=\"" << fmt(att_h)
      << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  svg << "<text x=\"5\" y=\"" << fmt(att_top + 12) << "\">attn</text>\n";
  const double att_max = std::max(attention.maxCoeff(), 1e-12);
  svg << "<polyline fill=\"none\" stroke=\"black\" points=\"";
  for (int k = 0; k < m; ++k)
    svg << fmt(x_of(k / fps)) << ','
        << fmt(att_top + att_h * (1 - attention(k) / att_max)) << ' ';
  svg << "\"/>\n";

  // Detection bars.
  svg << "<text x=\"5\" y=\"" << fmt(det_top + 12) << "\">dets</text>\n";
  for (const Detection& det : detections) {
    if (det.video_id != video_id) continue;
    svg << "<rect x=\"" << fmt(x_of(det.t_start)) << "\" y=\""
        << fmt(det_top + 2) << "\" width=\""
        << fmt(x_of(det.t_end) - x_of(det.t_start)) << "\" height=\""
        << fmt(det_h - 4) << "\" fill=\"" << class_color(det.cls)
        << "\" fill-opacity=\"" << fmt(0.3 + 0.7 * std::min(1.0, det.score))
        << "\"/>\n";
  }
  svg << "</svg>\n";
}

}  // namespace adapnet
