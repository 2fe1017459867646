#ifndef MMFA_RUNCONFIG_HPP_
#define MMFA_RUNCONFIG_HPP_

#include <string>

#include "mmfa/data.hpp"
#include "mmfa/eval.hpp"
#include "mmfa/model.hpp"
#include "mmfa/train.hpp"

namespace mmfa {

struct EvalSettings {
  std::size_t trials = 10;
  std::size_t max_rank = 10;
  std::uint64_t seed = 99;
  bool normalize = true;
  double probe_holdout_fraction = 0.3;
};

/// Flat key=value run configuration ('#' starts a comment; keys are
/// namespaced model.*, train.*, data.*, eval.*; unknown keys are rejected).
/// The synthetic generator's mode and dims are taken from the model.* keys
/// so one file drives the whole pipeline.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig data;
  EvalSettings eval;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Canonical serialization: every key in schema order. parse(serialize(c))
/// reproduces c, and serialization is idempotent under reparsing.
std::string serialize_config(const RunConfig& config);

/// One line per key: name, default, description.
std::string config_help();

/// SynthConfig with mode/dims copied from the model section.
SynthConfig effective_synth_config(const RunConfig& config);

/// ModelConfig with the ablation IN toggle applied and identity/domain
/// counts derived from the dataset when left at 0.
ModelConfig effective_model_config(const RunConfig& config, const Dataset& data);

}  // namespace mmfa

#endif  // MMFA_RUNCONFIG_HPP_
