#include "adapnet/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace adapnet {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "feature file format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'D', 'P', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::vector<const VideoRecord*> select(const CorpusIndex& c,
                                       const std::string& split,
                                       VideoKind kind) {
  std::vector<const VideoRecord*> out;
  auto it = c.partition.find(split);
  if (it == c.partition.end()) return out;
  for (const auto& id : it->second) {
    const VideoRecord& r = c.record(id);
    if (r.kind == kind) out.push_back(&r);
  }
  return out;
}

}  // namespace

const VideoRecord& CorpusIndex::record(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return r;
  throw std::invalid_argument("unknown video id: " + id);
}

std::vector<const VideoRecord*> CorpusIndex::trimmed_train() const {
  return select(*this, "train", VideoKind::Trimmed);
}
std::vector<const VideoRecord*> CorpusIndex::untrimmed_train() const {
  return select(*this, "train", VideoKind::Untrimmed);
}
std::vector<const VideoRecord*> CorpusIndex::untrimmed_test() const {
  return select(*this, "test", VideoKind::Untrimmed);
}

void SynthSpec::validate() const {
  if (C < 2) throw std::invalid_argument("SynthSpec: C must be >= 2");
  if (d < 1) throw std::invalid_argument("SynthSpec: d must be positive");
  if (background_noise_sigma < 0)
    throw std::invalid_argument("SynthSpec: negative noise sigma");
  if (prototype_separation <= 0)
    throw std::invalid_argument("SynthSpec: prototype_separation must be > 0");
  if (n_trimmed_per_class < 1 || n_untrimmed < 0 || n_untrimmed_test < 0)
    throw std::invalid_argument("SynthSpec: invalid video counts");
  if (fps <= 0) throw std::invalid_argument("SynthSpec: fps must be > 0");
  auto check_range = [](std::pair<int, int> r, const char* name) {
    if (r.first < 1 || r.first > r.second)
      throw std::invalid_argument(std::string("SynthSpec: bad range ") + name);
  };
  check_range(untrimmed_length_range, "untrimmed_length_range");
  check_range(segments_per_untrimmed_range, "segments_per_untrimmed_range");
  check_range(segment_length_range, "segment_length_range");
}

void write_feature_file(const fs::path& path, const FeatureMatrix& fm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, kFeatureVersion);
  const std::uint8_t s = static_cast<std::uint8_t>(fm.stream);
  os.write(reinterpret_cast<const char*>(&s), 1);
  write_u32(os, static_cast<std::uint32_t>(fm.d()));
  write_u32(os, static_cast<std::uint32_t>(fm.m()));
  // Eigen default storage is column-major, matching the frame-major payload.
  os.write(reinterpret_cast<const char*>(fm.values.data()),
           static_cast<std::streamsize>(sizeof(float)) * fm.values.size());
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

FeatureMatrix read_feature_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature file: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in feature file: " + path.string());
  if (read_u32(is) != kFeatureVersion)
    throw std::runtime_error("unsupported feature file version: " +
                             path.string());
  std::uint8_t s = 0;
  is.read(reinterpret_cast<char*>(&s), 1);
  if (s > 1) throw std::runtime_error("bad stream byte in " + path.string());
  const std::uint32_t d = read_u32(is);
  const std::uint32_t m = read_u32(is);
  if (!is || d == 0 || m == 0)
    throw std::runtime_error("bad header in feature file: " + path.string());
  FeatureMatrix fm;
  fm.stream = static_cast<Stream>(s);
  fm.values.resize(d, m);
  is.read(reinterpret_cast<char*>(fm.values.data()),
          static_cast<std::streamsize>(sizeof(float)) * fm.values.size());
  if (is.gcount() != static_cast<std::streamsize>(sizeof(float)) *
                         static_cast<std::streamsize>(fm.values.size()))
    throw std::runtime_error("payload size mismatch in " + path.string());
  char extra;
  if (is.read(&extra, 1))
    throw std::runtime_error("payload size mismatch in " + path.string());
  if (!fm.values.allFinite())
    throw std::runtime_error("non-finite entries in " + path.string());
  return fm;
}

FeatureMatrix load_features(const CorpusIndex& corpus, const VideoRecord& rec,
                            Stream stream) {
  auto it = rec.feature_paths.find(stream);
  if (it == rec.feature_paths.end())
    throw std::invalid_argument("record " + rec.id + " has no " +
                                stream_name(stream) + " features");
  FeatureMatrix fm = read_feature_file(corpus.root / it->second);
  if (corpus.d != 0 && fm.d() != corpus.d)
    throw std::runtime_error("feature dimension mismatch for " + rec.id);
  return fm;
}

namespace {

json record_to_json(const VideoRecord& r) {
  json j;
  j["id"] = r.id;
  j["kind"] = r.kind == VideoKind::Trimmed ? "trimmed" : "untrimmed";
  j["labels"] = std::vector<int>(r.labels.begin(), r.labels.end());
  j["fps"] = r.fps;
  json paths = json::object();
  for (const auto& [s, p] : r.feature_paths) paths[stream_name(s)] = p;
  j["feature_paths"] = paths;
  if (r.gt_intervals) {
    json gt = json::array();
    for (const auto& g : *r.gt_intervals)
      gt.push_back(json::array({g.cls, g.t_start, g.t_end}));
    j["gt_intervals"] = gt;
  } else {
    j["gt_intervals"] = nullptr;
  }
  return j;
}

VideoRecord record_from_json(const json& j) {
  VideoRecord r;
  r.id = j.at("id").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "trimmed")
    r.kind = VideoKind::Trimmed;
  else if (kind == "untrimmed")
    r.kind = VideoKind::Untrimmed;
  else
    throw std::runtime_error("manifest: bad kind '" + kind + "'");
  for (int c : j.at("labels").get<std::vector<int>>()) r.labels.insert(c);
  r.fps = j.at("fps").get<double>();
  for (const auto& [k, v] : j.at("feature_paths").items()) {
    if (k == "RGB")
      r.feature_paths[Stream::RGB] = v.get<std::string>();
    else if (k == "FLOW")
      r.feature_paths[Stream::FLOW] = v.get<std::string>();
    else
      throw std::runtime_error("manifest: unknown stream '" + k + "'");
  }
  if (!j.at("gt_intervals").is_null()) {
    std::vector<GtInterval> gts;
    for (const auto& g : j.at("gt_intervals"))
      gts.push_back({g.at(0).get<int>(), g.at(1).get<double>(),
                     g.at(2).get<double>()});
    r.gt_intervals = std::move(gts);
  }
  return r;
}

void validate_index(const CorpusIndex& c, bool check_files) {
  const int C = c.num_classes();
  std::unordered_set<std::string> train_ids, ids;
  for (const auto& id : c.partition.count("train")
                            ? c.partition.at("train")
                            : std::vector<std::string>{})
    train_ids.insert(id);
  if (c.partition.count("test"))
    for (const auto& id : c.partition.at("test"))
      if (train_ids.count(id))
        throw std::runtime_error("manifest: train/test overlap at " + id);
  for (const auto& r : c.records) {
    if (!ids.insert(r.id).second)
      throw std::runtime_error("manifest: duplicate id " + r.id);
    if (r.fps <= 0)
      throw std::runtime_error("manifest: non-positive fps for " + r.id);
    for (int l : r.labels)
      if (l < 0 || l >= C)
        throw std::runtime_error("manifest: label index out of range for " +
                                 r.id);
    if (r.kind == VideoKind::Trimmed) {
      if (r.labels.size() != 1)
        throw std::runtime_error("manifest: trimmed multi-label for " + r.id);
      if (r.gt_intervals)
        throw std::runtime_error(
            "manifest: gt_intervals on trimmed record " + r.id);
    }
    if (r.gt_intervals)
      for (const auto& g : *r.gt_intervals) {
        if (g.t_start >= g.t_end)
          throw std::runtime_error("manifest: degenerate gt interval in " +
                                   r.id);
        if (g.cls < 0 || g.cls >= C)
          throw std::runtime_error("manifest: gt class out of range in " +
                                   r.id);
      }
    if (check_files)
      for (const auto& [s, p] : r.feature_paths)
        if (!fs::exists(c.root / p))
          throw std::runtime_error("manifest: missing feature file " + p);
  }
}

}  // namespace

CorpusIndex load_manifest(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is)
    throw std::runtime_error("cannot open manifest: " + manifest_path.string());
  CorpusIndex c;
  c.root = manifest_path.parent_path();
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("empty manifest: " + manifest_path.string());
  json header = json::parse(line);
  c.class_names = header.at("class_names").get<std::vector<std::string>>();
  c.d = header.at("d").get<int>();
  for (const auto& [split, idlist] : header.at("partition").items())
    c.partition[split] = idlist.get<std::vector<std::string>>();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    c.records.push_back(record_from_json(json::parse(line)));
  }
  validate_index(c, /*check_files=*/true);
  return c;
}

namespace {

void save_manifest(const CorpusIndex& c, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);  // binary: stable newlines
  if (!os) throw std::runtime_error("cannot write manifest: " + path.string());
  json header;
  header["class_names"] = c.class_names;
  header["d"] = c.d;
  json part = json::object();
  for (const auto& [split, ids] : c.partition) part[split] = ids;
  header["partition"] = part;
  os << header.dump() << "\n";
  for (const auto& r : c.records) os << record_to_json(r).dump() << "\n";
}

Eigen::MatrixXf draw_prototypes(const SynthSpec& spec, Rng& rng) {
  // One column per class plus a final background column. Pairwise
  // distance must reach prototype_separation; Gaussian draws at scale
  // `separation` satisfy this with overwhelming probability, retry and
  // inflate the scale otherwise.
  const int cols = spec.C + 1;
  double s = spec.prototype_separation;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Eigen::MatrixXf protos(spec.d, cols);
    for (int c = 0; c < cols; ++c)
      for (int i = 0; i < spec.d; ++i)
        protos(i, c) = static_cast<float>(s * rng.gaussian());
    bool ok = true;
    for (int a = 0; a < cols && ok; ++a)
      for (int b = a + 1; b < cols && ok; ++b)
        if ((protos.col(a) - protos.col(b)).norm() <
            spec.prototype_separation)
          ok = false;
    if (ok) return protos;
    s *= 1.5;
  }
  throw std::runtime_error("prototype drawing failed to separate");
}

}  // namespace

CorpusIndex generate_synthetic_corpus(const SynthSpec& spec,
                                      const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec || !fs::is_directory(out_dir / "features"))
    throw std::runtime_error("cannot create output directory: " +
                             out_dir.string());

  Rng rng(spec.seed);
  // protos[stream] has C class columns + 1 background column
  std::map<Stream, Eigen::MatrixXf> protos;
  protos[Stream::RGB] = draw_prototypes(spec, rng);
  protos[Stream::FLOW] = draw_prototypes(spec, rng);

  CorpusIndex index;
  index.root = out_dir;
  index.d = spec.d;
  for (int c = 0; c < spec.C; ++c)
    index.class_names.push_back("class_" + std::to_string(c));

  auto noisy_frame = [&](Stream s, int proto_col, Eigen::MatrixXf& out,
                         int col) {
    for (int i = 0; i < spec.d; ++i)
      out(i, col) =
          protos[s](i, proto_col) +
          static_cast<float>(spec.background_noise_sigma * rng.gaussian());
  };

  auto emit_video = [&](VideoRecord& r, int m,
                        const std::vector<std::pair<int, std::pair<int, int>>>&
                            segments /* (class, [start,end]) frame spans */) {
    for (Stream s : {Stream::RGB, Stream::FLOW}) {
      Eigen::MatrixXf vals(spec.d, m);
      for (int k = 0; k < m; ++k) {
        int proto_col = spec.C;  // background
        for (const auto& [cls, span] : segments)
          if (k >= span.first && k <= span.second) proto_col = cls;
        noisy_frame(s, proto_col, vals, k);
      }
      FeatureMatrix fm{s, std::move(vals)};
      std::string rel =
          "features/" + r.id + "_" + stream_name(s) + ".adpf";
      write_feature_file(out_dir / rel, fm);
      r.feature_paths[s] = rel;
    }
  };

  std::vector<std::string> train_ids, test_ids;

  for (int c = 0; c < spec.C; ++c) {
    for (int i = 0; i < spec.n_trimmed_per_class; ++i) {
      VideoRecord r;
      r.id = "t_c" + std::to_string(c) + "_" + std::to_string(i);
      r.kind = VideoKind::Trimmed;
      r.labels = {c};
      r.fps = spec.fps;
      const int m = static_cast<int>(rng.uniform_int(
          spec.segment_length_range.first, spec.segment_length_range.second));
      emit_video(r, m, {{c, {0, m - 1}}});
      train_ids.push_back(r.id);
      index.records.push_back(std::move(r));
    }
  }

  const int n_untrimmed_total = spec.n_untrimmed + spec.n_untrimmed_test;
  for (int i = 0; i < n_untrimmed_total; ++i) {
    VideoRecord r;
    r.id = "u_" + std::to_string(i);
    r.kind = VideoKind::Untrimmed;
    r.fps = spec.fps;
    const int m = static_cast<int>(
        rng.uniform_int(spec.untrimmed_length_range.first,
                        spec.untrimmed_length_range.second));
    const int k_max = std::min(spec.segments_per_untrimmed_range.second,
                               std::max(1, m / 2));
    const int k_min = std::min(spec.segments_per_untrimmed_range.first, k_max);
    const int n_seg = static_cast<int>(rng.uniform_int(k_min, k_max));
    // One segment per equal chunk keeps segments disjoint by construction.
    std::vector<std::pair<int, std::pair<int, int>>> segments;
    const int chunk = m / n_seg;
    for (int s = 0; s < n_seg; ++s) {
      const int cls = static_cast<int>(rng.uniform_below(spec.C));
      int len = static_cast<int>(rng.uniform_int(
          spec.segment_length_range.first, spec.segment_length_range.second));
      len = std::min(len, chunk);
      const int lo = s * chunk;
      const int start =
          lo + static_cast<int>(rng.uniform_int(0, chunk - len));
      segments.push_back({cls, {start, start + len - 1}});
      r.labels.insert(cls);
    }
    std::vector<GtInterval> gts;
    for (const auto& [cls, span] : segments)
      gts.push_back({cls, span.first / spec.fps, (span.second + 1) / spec.fps});
    r.gt_intervals = std::move(gts);
    emit_video(r, m, segments);
    (i < spec.n_untrimmed ? train_ids : test_ids).push_back(r.id);
    index.records.push_back(std::move(r));
  }

  index.partition["train"] = train_ids;
  index.partition["test"] = test_ids;
  save_manifest(index, out_dir / "manifest.jsonl");
  return index;
}

PairBatch sample_pair_batch(const CorpusIndex& corpus, int n_b, Rng& rng) {
  auto trimmed = corpus.trimmed_train();
  auto untrimmed = corpus.untrimmed_train();
  const std::uint64_t n_t = trimmed.size(), n_u = untrimmed.size();
  if (n_t == 0 || n_u == 0)
    throw std::invalid_argument("sample_pair_batch: empty trimmed or "
                                "untrimmed training set");
  if (n_b < 1 || static_cast<std::uint64_t>(n_b) > n_t * n_u)
    throw std::invalid_argument("sample_pair_batch: n_b exceeds |T x U|");
  std::unordered_set<std::uint64_t> chosen;
  PairBatch batch;
  while (batch.pairs.size() < static_cast<std::size_t>(n_b)) {
    const std::uint64_t flat = rng.uniform_below(n_t * n_u);
    if (!chosen.insert(flat).second) continue;
    const VideoRecord* t = trimmed[flat / n_u];
    const VideoRecord* u = untrimmed[flat % n_u];
    const int idx = static_cast<int>(batch.pairs.size());
    batch.pairs.push_back({t->id, u->id});
    const int y_t = *t->labels.begin();
    if (u->labels.count(y_t))
      batch.omega.push_back(idx);
    else
      batch.omega_bar.push_back(idx);
  }
  return batch;
}

}  // namespace adapnet
