#include "adapnet/app.hpp"

#include <cstdio>
#include <stdexcept>

#include "CLI11.hpp"
#include "adapnet/model.hpp"
#include "adapnet/report.hpp"
#include "json.hpp"

namespace adapnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer())
    throw std::invalid_argument("config: key '" + key + "' expects an integer");
  return v.get<int>();
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number())
    throw std::invalid_argument("config: key '" + key + "' expects a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string())
    throw std::invalid_argument("config: key '" + key + "' expects a string");
  return v.get<std::string>();
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  train.seed = seed;
  loc.seed = seed;
}

void RunConfig::set(const std::string& key, const std::string& json_value) {
  json v;
  try {
    v = json::parse(json_value);
  } catch (const json::parse_error&) {
    v = json_value;  // bare strings are accepted unquoted in overrides
  }
  // Corpus / model geometry (shared between the generator and the model).
  if (key == "C") {
    synth.C = as_int(v, key);
    train.model.C = synth.C;
  } else if (key == "d") {
    synth.d = as_int(v, key);
    train.model.d = synth.d;
  } else if (key == "sigma") {
    synth.background_noise_sigma = as_double(v, key);
  } else if (key == "prototype_separation") {
    synth.prototype_separation = as_double(v, key);
  } else if (key == "n_trimmed_per_class") {
    synth.n_trimmed_per_class = as_int(v, key);
  } else if (key == "n_untrimmed") {
    synth.n_untrimmed = as_int(v, key);
  } else if (key == "n_untrimmed_test") {
    synth.n_untrimmed_test = as_int(v, key);
  } else if (key == "untrimmed_length_min") {
    synth.untrimmed_length_range.first = as_int(v, key);
  } else if (key == "untrimmed_length_max") {
    synth.untrimmed_length_range.second = as_int(v, key);
  } else if (key == "segments_per_untrimmed_min") {
    synth.segments_per_untrimmed_range.first = as_int(v, key);
  } else if (key == "segments_per_untrimmed_max") {
    synth.segments_per_untrimmed_range.second = as_int(v, key);
  } else if (key == "segment_length_min") {
    synth.segment_length_range.first = as_int(v, key);
  } else if (key == "segment_length_max") {
    synth.segment_length_range.second = as_int(v, key);
  } else if (key == "fps") {
    synth.fps = as_double(v, key);
  } else if (key == "d_f") {
    train.model.d_f = as_int(v, key);
  } else if (key == "b") {
    train.model.b = as_int(v, key);
    // Training.
  } else if (key == "n_b") {
    train.n_b = as_int(v, key);
  } else if (key == "momentum") {
    train.momentum = as_double(v, key);
  } else if (key == "learning_rate") {
    train.learning_rate = as_double(v, key);
  } else if (key == "lr_decay_factor") {
    train.lr_decay_factor = as_double(v, key);
  } else if (key == "lr_decay_interval") {
    train.lr_decay_interval = as_int(v, key);
  } else if (key == "max_iterations") {
    train.max_iterations = as_int(v, key);
  } else if (key == "alpha") {
    train.alpha = as_double(v, key);
  } else if (key == "beta") {
    train.beta = as_double(v, key);
  } else if (key == "gamma") {
    train.gamma = as_double(v, key);
  } else if (key == "ablation") {
    if (!v.is_array())
      throw std::invalid_argument("config: 'ablation' expects an array");
    train.ablation.clear();
    for (const json& term : v)
      train.ablation.insert(as_string(term, key));
    // Localization.
  } else if (key == "delta") {
    loc.delta = as_double(v, key);
  } else if (key == "epsilon") {
    loc.epsilon = as_double(v, key);
  } else if (key == "tau_upper") {
    loc.tau_upper = as_double(v, key);
  } else if (key == "tau_lower") {
    loc.tau_lower = as_double(v, key);
  } else if (key == "tau_seg") {
    loc.tau_seg = as_double(v, key);
  } else if (key == "max_gap") {
    loc.max_gap = as_int(v, key);
  } else if (key == "smooth_window") {
    loc.smooth_window = as_int(v, key);
  } else if (key == "nms_threshold") {
    loc.nms_threshold = as_double(v, key);
  } else if (key == "theta_cls") {
    loc.theta_cls = as_double(v, key);
  } else if (key == "trpp_r") {
    loc.trpp.r = as_int(v, key);
  } else if (key == "trpp_iterations") {
    loc.trpp.iterations = as_int(v, key);
  } else if (key == "trpp_lr") {
    loc.trpp.lr = as_double(v, key);
    // Evaluation.
  } else if (key == "iou_thresholds") {
    if (!v.is_array())
      throw std::invalid_argument("config: 'iou_thresholds' expects an array");
    iou_thresholds.clear();
    for (const json& t : v) iou_thresholds.push_back(as_double(t, key));
  } else if (key == "with_average") {
    if (!v.is_boolean())
      throw std::invalid_argument("config: 'with_average' expects a bool");
    with_average = v.get<bool>();
  } else if (key == "ablation_seeds") {
    if (!v.is_array())
      throw std::invalid_argument("config: 'ablation_seeds' expects an array");
    ablation_seeds.clear();
    for (const json& s : v)
      ablation_seeds.push_back(static_cast<std::uint64_t>(as_int(s, key)));
    // Seeds and paths.
  } else if (key == "seed") {
    set_seed(static_cast<std::uint64_t>(as_int(v, key)));
  } else if (key == "corpus_dir") {
    corpus_dir = as_string(v, key);
  } else if (key == "checkpoint") {
    checkpoint = as_string(v, key);
  } else if (key == "out_dir") {
    out_dir = as_string(v, key);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void RunConfig::load_file(const fs::path& config_path) {
  std::ifstream is(config_path, std::ios::binary);
  if (!is)
    throw std::invalid_argument("config: cannot read " + config_path.string());
  json doc;
  try {
    is >> doc;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }
  if (!doc.is_object())
    throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, value] : doc.items()) set(key, value.dump());
}

void RunConfig::validate() const {
  synth.validate();
  train.validate();
  loc.validate();
  if (iou_thresholds.empty())
    throw std::invalid_argument("config: iou_thresholds must be non-empty");
  for (double t : iou_thresholds)
    if (t <= 0 || t > 1)
      throw std::invalid_argument("config: IoU threshold outside (0,1]");
}

namespace {

struct CliArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::uint64_t seed = 0;
  std::string corpus, checkpoint, out, video;
};

void add_common(CLI::App* cmd, CliArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "Override a config key, e.g. --set learning_rate=0.02");
  cmd->add_option("--seed", args.seed, "Master seed for all randomness");
}

RunConfig build_config(const CliArgs& args, const CLI::App* cmd) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (cmd->count("--seed") > 0) cfg.set_seed(args.seed);
  if (!args.corpus.empty()) cfg.corpus_dir = args.corpus;
  if (!args.checkpoint.empty()) cfg.checkpoint = args.checkpoint;
  if (!args.out.empty()) cfg.out_dir = args.out;
  cfg.validate();
  return cfg;
}

fs::path require_path(const fs::path& p, const char* what) {
  if (p.empty())
    throw std::invalid_argument(std::string("missing required path: ") + what);
  return p;
}

CorpusIndex load_corpus(const RunConfig& cfg) {
  return load_manifest(require_path(cfg.corpus_dir, "--corpus") /
                       "manifest.jsonl");
}

// The model's input dimension and class count are corpus properties;
// derive them from the manifest and reject a conflicting config.
void adopt_corpus_dims(RunConfig& cfg, const CorpusIndex& corpus,
                       bool d_set, bool c_set) {
  if (d_set && cfg.train.model.d != corpus.d)
    throw std::invalid_argument("config: d conflicts with the corpus");
  if (c_set && cfg.train.model.C != corpus.num_classes())
    throw std::invalid_argument("config: C conflicts with the corpus");
  cfg.train.model.d = corpus.d;
  cfg.train.model.C = corpus.num_classes();
}

std::vector<GroundTruthInstance> corpus_ground_truth(
    const CorpusIndex& corpus) {
  std::vector<GroundTruthInstance> gt;
  for (const VideoRecord* rec : corpus.untrimmed_test())
    if (rec->gt_intervals)
      for (const GtInterval& g : *rec->gt_intervals)
        gt.push_back({rec->id, g.cls, g.t_start, g.t_end});
  return gt;
}

int cmd_synth(const RunConfig& cfg) {
  const fs::path out = require_path(cfg.out_dir, "--out");
  const CorpusIndex corpus = generate_synthetic_corpus(cfg.synth, out);
  std::printf("wrote corpus with %zu videos, %d classes to %s\n",
              corpus.records.size(), corpus.num_classes(),
              out.string().c_str());
  return 0;
}

int cmd_train(RunConfig cfg, bool d_set, bool c_set) {
  const fs::path out = require_path(cfg.out_dir, "--out");
  const CorpusIndex corpus = load_corpus(cfg);
  adopt_corpus_dims(cfg, corpus, d_set, c_set);
  auto [params, history] = train(corpus, cfg.train);
  fs::create_directories(out);
  save_checkpoint(params, out / "checkpoint.adpc");
  write_history(out / "history.jsonl", history);
  if (!history.records.empty()) {
    const LossBreakdown& last = history.records.back().loss;
    std::printf("iteration %d: L_total=%.6f L_cls=%.6f\n",
                history.records.back().iteration, last.L_total, last.L_cls);
  }
  std::printf("wrote %s\n", (out / "checkpoint.adpc").string().c_str());
  return 0;
}

int cmd_localize(const RunConfig& cfg) {
  const fs::path out = require_path(cfg.out_dir, "--out");
  const CorpusIndex corpus = load_corpus(cfg);
  const ModelParams params =
      load_checkpoint(require_path(cfg.checkpoint, "--checkpoint"));
  std::vector<Detection> detections;
  for (const VideoRecord* rec : corpus.untrimmed_test()) {
    const std::vector<Detection> dets =
        localize(corpus, *rec, params, cfg.loc);
    detections.insert(detections.end(), dets.begin(), dets.end());
  }
  fs::create_directories(out);
  write_detections(out / "detections.jsonl", detections);
  std::printf("wrote %zu detections to %s\n", detections.size(),
              (out / "detections.jsonl").string().c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const fs::path out = require_path(cfg.out_dir, "--out");
  const CorpusIndex corpus = load_corpus(cfg);
  const ModelParams params =
      load_checkpoint(require_path(cfg.checkpoint, "--checkpoint"));
  const EvalReport report = evaluate_model(
      corpus, params, cfg.loc, cfg.iou_thresholds, cfg.with_average);
  fs::create_directories(out);
  write_report(report, out / "report.json");
  std::printf("accuracy %.3f\n", report.accuracy);
  for (const auto& [thr, value] : report.map_at)
    std::printf("mAP@%.2f %.3f\n", thr, value);
  return 0;
}

int cmd_ablate(RunConfig cfg, bool d_set, bool c_set) {
  const fs::path out = require_path(cfg.out_dir, "--out");
  const CorpusIndex corpus = load_corpus(cfg);
  adopt_corpus_dims(cfg, corpus, d_set, c_set);
  const std::vector<std::set<std::string>> variants = {
      {}, {kAblateDif}, {kAblateAdp}, {kAblateAdp, kAblateDif}};
  const std::vector<AblationRow> rows =
      run_ablation(corpus, cfg.train, variants, cfg.ablation_seeds, cfg.loc);
  fs::create_directories(out);
  write_ablation(rows, out / "ablation.json");
  for (const AblationRow& row : rows) {
    std::string name = row.ablation.empty() ? "full" : "w/o";
    for (const std::string& term : row.ablation) name += ' ' + term;
    std::printf("%-18s accuracy %.3f mAP %.3f\n", name.c_str(),
                row.accuracy_mean, row.map_mean);
  }
  return 0;
}

int cmd_gradcheck(RunConfig cfg, bool d_set, bool c_set) {
  const CorpusIndex corpus = load_corpus(cfg);
  adopt_corpus_dims(cfg, corpus, d_set, c_set);
  const ModelParams params = init_params(cfg.train.model, cfg.train.seed);
  Rng rng = train_batch_rng(cfg.train.seed);
  const PairBatch batch = sample_pair_batch(corpus, cfg.train.n_b, rng);
  const GradCheckReport report =
      gradient_check(corpus, batch, params, cfg.train);
  for (const auto& [block, error] : report.block_error)
    std::printf("%-28s %.3e\n", block.c_str(), error);
  std::printf("max relative error %.3e\n", report.max_error);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    json doc;
    doc["block_error"] = report.block_error;
    doc["max_error"] = report.max_error;
    std::ofstream os(cfg.out_dir / "gradcheck.json", std::ios::binary);
    os << doc.dump(2) << '\n';
  }
  return 0;
}

int cmd_plot(const RunConfig& cfg, const std::string& video) {
  const fs::path out = require_path(cfg.out_dir, "--out");
  const CorpusIndex corpus = load_corpus(cfg);
  const ModelParams params =
      load_checkpoint(require_path(cfg.checkpoint, "--checkpoint"));
  const VideoRecord& rec = corpus.record(video);
  const LocalizeResult res = localize_full(corpus, rec, params, cfg.loc);

  // Stream-blended shared-branch attention, the curve shown in the
  // qualitative figures.
  Eigen::VectorXd attention;
  for (Stream s : {Stream::RGB, Stream::FLOW}) {
    const StreamParams& sp = params.stream(s);
    const Mat f = encode(load_features(corpus, rec, s), Branch::Shared, sp);
    const Eigen::VectorXd a = attend(f, sp.attention(Branch::Shared)).first;
    const double w = s == Stream::RGB ? cfg.loc.epsilon : 1 - cfg.loc.epsilon;
    attention = attention.size() == 0 ? (w * a).eval() : (attention + w * a).eval();
  }

  fs::create_directories(out);
  const fs::path svg = out / ("timeline_" + video + ".svg");
  emit_timeline(video, rec.gt_intervals.value_or(std::vector<GtInterval>{}),
                attention, res.rgb.S_refined, res.detections, rec.fps, svg);
  std::printf("wrote %s\n", svg.string().c_str());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"AdapNet: weakly supervised action localization by "
               "adaptability decomposing"};
  app.require_subcommand(1);
  CliArgs args;

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a corpus");
  add_common(synth_cmd, args);
  synth_cmd->add_option("--out", args.out, "Output corpus directory");

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, args);
  train_cmd->add_option("--corpus", args.corpus, "Corpus directory");
  train_cmd->add_option("--out", args.out, "Output directory");

  CLI::App* loc_cmd =
      app.add_subcommand("localize", "Localize actions in the test split");
  add_common(loc_cmd, args);
  loc_cmd->add_option("--corpus", args.corpus, "Corpus directory");
  loc_cmd->add_option("--checkpoint", args.checkpoint, "Model checkpoint");
  loc_cmd->add_option("--out", args.out, "Output directory");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate accuracy and localization mAP");
  add_common(eval_cmd, args);
  eval_cmd->add_option("--corpus", args.corpus, "Corpus directory");
  eval_cmd->add_option("--checkpoint", args.checkpoint, "Model checkpoint");
  eval_cmd->add_option("--out", args.out, "Output directory");

  CLI::App* abl_cmd =
      app.add_subcommand("ablate", "Loss-term ablation study over seeds");
  add_common(abl_cmd, args);
  abl_cmd->add_option("--corpus", args.corpus, "Corpus directory");
  abl_cmd->add_option("--out", args.out, "Output directory");

  CLI::App* gc_cmd = app.add_subcommand(
      "gradcheck", "Compare analytic gradients with finite differences");
  add_common(gc_cmd, args);
  gc_cmd->add_option("--corpus", args.corpus, "Corpus directory");
  gc_cmd->add_option("--out", args.out, "Output directory (optional)");

  CLI::App* plot_cmd =
      app.add_subcommand("plot", "Emit a qualitative timeline figure");
  add_common(plot_cmd, args);
  plot_cmd->add_option("--corpus", args.corpus, "Corpus directory");
  plot_cmd->add_option("--checkpoint", args.checkpoint, "Model checkpoint");
  plot_cmd->add_option("--out", args.out, "Output directory");
  plot_cmd->add_option("--video", args.video, "Video id to plot")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const CLI::App* cmd = app.get_subcommands().front();
  try {
    RunConfig cfg = build_config(args, cmd);
    // Whether the config pinned the corpus-derived dimensions explicitly.
    bool d_set = false, c_set = false;
    for (const std::string& kv : args.overrides) {
      if (kv.rfind("d=", 0) == 0) d_set = true;
      if (kv.rfind("C=", 0) == 0) c_set = true;
    }
    if (!args.config_path.empty()) {
      std::ifstream is(args.config_path, std::ios::binary);
      json doc;
      is >> doc;
      d_set = d_set || doc.contains("d");
      c_set = c_set || doc.contains("C");
    }
    if (cmd == synth_cmd) return cmd_synth(cfg);
    if (cmd == train_cmd) return cmd_train(cfg, d_set, c_set);
    if (cmd == loc_cmd) return cmd_localize(cfg);
    if (cmd == eval_cmd) return cmd_eval(cfg);
    if (cmd == abl_cmd) return cmd_ablate(cfg, d_set, c_set);
    if (cmd == gc_cmd) return cmd_gradcheck(cfg, d_set, c_set);
    if (cmd == plot_cmd) return cmd_plot(cfg, args.video);
    return 1;  // unreachable: require_subcommand(1)
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace adapnet
