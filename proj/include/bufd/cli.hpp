#pragma once

#include <string>
#include <vector>

#include "bufd/models.hpp"
#include "bufd/synth.hpp"
#include "bufd/trainer.hpp"

namespace bufd {

/// Everything a run needs, mirrored from a JSON document. Unknown keys are
/// rejected; absent keys keep these defaults.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& json_text);

/// Command-line entry (args exclude the program name). Returns the process
/// exit code; failures print one "error: ..." line on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace bufd
