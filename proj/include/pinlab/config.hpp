#pragma once

#include "pinlab/training.hpp"

#include <stdexcept>
#include <string>
#include <string_view>

namespace pinlab {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// JSON run configuration. Every section and key is optional; unknown keys are
// rejected. Defaults:
//   generator: max_resolution 32, channels {"4":64,"8":64,"16":32,"32":16,"64":8},
//              latent_dim 64, mapping_layers 3, norm "PIN" (a name, or a list
//              with one name per site), noise true, seed 0
//   train:     steps 2000, batch_size 8, learning_rate 1e-3, optimizer "adam"
//              ("sgd" also accepted), seed 0, checkpoint_interval 100
//   dataset:   n_images 512, seed 0 (resolution follows the generator)
//   detect_k:  8
//   out_dir:   "out"
struct RunConfig {
  GeneratorConfig generator;
  TrainConfig train;
  DatasetSpec dataset;
  double detect_k = kDefaultDetectK;
  std::string out_dir = "out";
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& cfg);

// Sorted-key JSON of the generator fields that affect parameter shapes and
// initialization; channel entries above max_resolution are left out.
std::string canonical_generator_json(const GeneratorConfig& gcfg);

}  // namespace pinlab
