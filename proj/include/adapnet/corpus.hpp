#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "adapnet/rng.hpp"

namespace adapnet {

enum class Stream : std::uint8_t { RGB = 0, FLOW = 1 };
enum class VideoKind { Trimmed, Untrimmed };

inline const char* stream_name(Stream s) {
  return s == Stream::RGB ? "RGB" : "FLOW";
}

struct GtInterval {
  int cls;
  double t_start;  // seconds
  double t_end;
};

struct VideoRecord {
  std::string id;
  VideoKind kind;
  std::set<int> labels;
  double fps;
  std::map<Stream, std::string> feature_paths;  // relative to corpus root
  std::optional<std::vector<GtInterval>> gt_intervals;
};

// Frame features for one video and one stream. Column k is frame k.
// Stored as float32 to match the on-disk payload bit for bit.
struct FeatureMatrix {
  Stream stream;
  Eigen::MatrixXf values;  // d x m
  int d() const { return static_cast<int>(values.rows()); }
  int m() const { return static_cast<int>(values.cols()); }
};

struct CorpusIndex {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  int d = 0;
  std::vector<VideoRecord> records;
  std::map<std::string, std::vector<std::string>> partition;  // train/test

  int num_classes() const { return static_cast<int>(class_names.size()); }
  const VideoRecord& record(const std::string& id) const;
  std::vector<const VideoRecord*> trimmed_train() const;
  std::vector<const VideoRecord*> untrimmed_train() const;
  std::vector<const VideoRecord*> untrimmed_test() const;
};

struct SynthSpec {
  int C = 2;
  int d = 16;
  double background_noise_sigma = 0.1;
  double prototype_separation = 2.0;
  int n_trimmed_per_class = 4;
  int n_untrimmed = 4;
  int n_untrimmed_test = 0;
  std::pair<int, int> untrimmed_length_range{40, 80};
  std::pair<int, int> segments_per_untrimmed_range{1, 2};
  std::pair<int, int> segment_length_range{8, 16};
  double fps = 25.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct PairBatch {
  // (trimmed id, untrimmed id), both into CorpusIndex record ids
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<int> omega;      // indices of label-matched pairs
  std::vector<int> omega_bar;  // complement
};

// Writes feature files and manifest under out_dir; pure function of
// (spec, spec.seed): reruns produce byte-identical output.
CorpusIndex generate_synthetic_corpus(const SynthSpec& spec,
                                      const std::filesystem::path& out_dir);

CorpusIndex load_manifest(const std::filesystem::path& manifest_path);

FeatureMatrix load_features(const CorpusIndex& corpus, const VideoRecord& rec,
                            Stream stream);
FeatureMatrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path,
                        const FeatureMatrix& fm);

// Uniform sample of n_b distinct pairs from T x U (training split).
PairBatch sample_pair_batch(const CorpusIndex& corpus, int n_b, Rng& rng);

}  // namespace adapnet
