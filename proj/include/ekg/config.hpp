#pragma once

#include <map>
#include <string>

#include "ekg/densenet.hpp"
#include "ekg/hsi.hpp"
#include "ekg/trainer.hpp"

namespace ekg {

// Everything a run needs, resolved from a config file plus flag overrides.
// Unknown keys are hard errors.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string precision = "f32";  // f32 | f64

  ArchConfig arch;      // num_classes and patch extents are filled from data
  TrainConfig train;

  std::string cube_path;       // [data] cube=...
  bool use_synthetic = false;  // [data] synthetic=true
  i64 block_size = 15;
  SplitRatios ratios{6, 1, 3};
  bool normalize_data = true;

  SynthConfig synth;

  void validate() const;
  // Flat echo of every resolved value, for reports and checkpoints.
  std::map<std::string, std::string> echo() const;
};

// key=value lines with [section] headers; '#' starts a comment. Every key
// must belong to the known set of its section.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

// Applies one "section.key=value" override (used for CLI flags).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

SplitRatios parse_ratios(const std::string& text);  // "6:1:3"

}  // namespace ekg
