#pragma once
#include <filesystem>
#include <string>
#include <vector>

#include "adapnet/corpus.hpp"
#include "adapnet/localization.hpp"
#include "adapnet/trainer.hpp"

namespace adapnet {

// Every knob reachable from the command line: a flat-keyed JSON config
// file plus flag overrides. Unknown keys are rejected at load.
struct RunConfig {
  SynthSpec synth;
  TrainConfig train;
  LocalizeConfig loc;
  std::vector<double> iou_thresholds{0.5};
  bool with_average = false;
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3, 4, 5};
  std::filesystem::path corpus_dir, checkpoint, out_dir;

  // Applies one flat key; throws std::invalid_argument on unknown keys
  // or wrong value types.
  void set(const std::string& key, const std::string& json_value);
  void load_file(const std::filesystem::path& config_path);
  void set_seed(std::uint64_t seed);  // single seed for all modules
  void validate() const;
};

// CLI entry point: synth | train | localize | eval | ablate | gradcheck
// | plot. Exit 0 on success, 1 on validation/usage errors, 2 on runtime
// failures.
int run(int argc, const char* const* argv);

}  // namespace adapnet
