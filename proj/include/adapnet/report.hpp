#pragma once
#include <filesystem>
#include <vector>

#include "adapnet/evaluation.hpp"
#include "adapnet/trainer.hpp"

namespace adapnet {

// Detections as JSON lines {class, score, t_end, t_start, video_id};
// byte-identical on reruns with identical inputs.
void write_detections(const std::filesystem::path& path,
                      const std::vector<Detection>& detections);
std::vector<Detection> read_detections(const std::filesystem::path& path);

// Training curve as JSON lines
// {iteration, L_cls, L_adp, L_dif, L_rec, L_total}.
void write_history(const std::filesystem::path& path,
                   const TrainHistory& history);

// JSON document at `out_path` plus an aligned text table next to it
// (extension swapped to .txt). Throws std::invalid_argument when the
// report carries no per-class entries ("no classes evaluated").
void write_report(const EvalReport& report,
                  const std::filesystem::path& out_path);
EvalReport read_report(const std::filesystem::path& path);

// Ablation table as JSON plus an aligned text table (extension .txt).
void write_ablation(const std::vector<AblationRow>& rows,
                    const std::filesystem::path& out_path);

// Qualitative timeline: a self-contained SVG at `out_path` (time axis in
// seconds, one ground-truth lane per class, per-class refined score
// curves, the attention curve, and detection bars) plus a CSV of the
// plotted series next to it (extension swapped to .csv, m+1 rows).
void emit_timeline(const std::string& video_id,
                   const std::vector<GtInterval>& ground_truth,
                   const Eigen::VectorXd& attention, const Mat& S_refined,
                   const std::vector<Detection>& detections, double fps,
                   const std::filesystem::path& out_path);

}  // namespace adapnet
