// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: INI text with [dataset], [train], [attack], [eval],
// [output] and [seeds] sections. Every key is optional; unknown sections or
// keys are rejected so a typo cannot silently fall back to a default.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "moapt/eval.hpp"
#include "moapt/trainer.hpp"

namespace moapt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  DatasetSpec data;
  TrainConfig train;  // train.attack is the training attack
  EvalOptions eval;
  std::string recipe = "fig2";
  std::size_t seeds = 5;  // seed count for sweeps
  std::filesystem::path out_dir = "runs/default";

  /// Copies the seed block into the dataset, training and evaluation settings.
  void sync_seeds();
  Benchmark benchmark() const;
};

/// Defaults for single runs (literal gradient descent) or sweeps.
RunConfig default_run_config();
RunConfig default_sweep_config();

/// Applies INI `text` on top of `base`. Throws ConfigError with the offending
/// key on syntax errors, unknown keys or out-of-range values.
RunConfig parse_config(const std::string& text, RunConfig base);
RunConfig load_config(const std::filesystem::path& path, RunConfig base);

/// Canonical INI rendering of every field; parse_config(render_config(c)) == c.
std::string render_config(const RunConfig& cfg);

/// Accepts plain decimals and fractions like "8/255".
double parse_real(const std::string& text);

}  // namespace moapt
