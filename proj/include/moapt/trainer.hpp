// SPDX-License-Identifier: Apache-2.0
//
// Adversarial mixture prompt tuning. Per minibatch: craft adversarial images
// against the current parameters, encode every prompt once, route and mix per
// image, then take one gradient step on the router followed by the prompt
// contexts, both from the same backward pass.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moapt/attacks.hpp"
#include "moapt/objective.hpp"
#include "moapt/synthworld.hpp"

namespace moapt {

enum class LrSchedule { constant, cosine };
enum class Optimizer { sgd, adam };

struct Seeds {
  std::uint64_t data = 0;
  std::uint64_t init = 0;
  std::uint64_t attack = 0;
  bool operator==(const Seeds&) const = default;
};

struct ModelDims {
  std::size_t feature_dim = 32;  // d
  std::size_t token_dim = 16;    // e
  std::size_t hidden_dim = 48;   // h, encoder hidden width
  std::size_t router_hidden = 0; // h_r; 0 means d/2
  bool operator==(const ModelDims&) const = default;

  std::size_t router_width() const {
    return router_hidden ? router_hidden : std::max<std::size_t>(1, feature_dim / 2);
  }
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.5;
  LrSchedule schedule = LrSchedule::constant;
  Optimizer optimizer = Optimizer::sgd;
  double momentum = 0.0;  // sgd only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  AttackConfig attack = AttackConfig::training();
  double tau_w = 0.7;
  std::size_t prompt_count = 8;     // K
  std::size_t context_length = 16;  // M
  RoutingMode routing = RoutingMode::router;
  double logit_scale = kDefaultLogitScale;
  ModelDims dims;
  Seeds seeds;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean L_MoAPT on adversarial minibatches
  double clean_acc = 0.0;   // % on clean training minibatches
  double robust_acc = 0.0;  // % on the training attack's outputs
};

struct TrainState {
  MoaptModel model;
  std::size_t step = 0;
  std::size_t epochs_done = 0;
  std::vector<EpochRecord> history;
  /// Optimizer buffers aligned with model.parameters(); empty until used.
  /// SGD momentum uses `velocity`; Adam uses both as first/second moments.
  std::vector<std::vector<double>> velocity;
  std::vector<std::vector<double>> second_moment;
  /// Number of per-minibatch text-feature precomputations so far.
  std::size_t text_feature_evals = 0;
};

/// NaN or infinite loss during training.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

EncoderSpec encoder_spec(const TrainConfig& cfg, const DatasetSpec& data);

/// Fresh state: backbone weights, prompts and router from derived streams of
/// the init seed; class tokens from the dataset's prototypes.
TrainState init_state(const TrainConfig& cfg, const Dataset& data);

struct EpochResult {
  EpochRecord record;
  std::vector<double> step_losses;
};

/// Per-epoch minibatch order, derived from the data seed.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t data_seed,
                                     std::size_t epoch);

/// Learning rate for a global step.
double learning_rate(const TrainConfig& cfg, std::size_t step,
                     std::size_t steps_per_epoch);

EpochResult train_epoch(TrainState& state, const Dataset& data,
                        const TrainConfig& cfg);

struct FitOptions {
  /// Directory for checkpoint.bin and metrics.jsonl; nothing written if empty.
  std::filesystem::path out_dir;
};

TrainState fit(const TrainConfig& cfg, const Dataset& data,
               const FitOptions& opts = {});

/// Continues `state` until cfg.epochs epochs are done.
void resume(TrainState& state, const TrainConfig& cfg, const Dataset& data,
            const FitOptions& opts = {});

// Checkpoints: versioned binary; every learnable tensor, dims and seeds.

void save_checkpoint(const TrainState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path);

struct Checkpoint {
  TrainState state;
  TrainConfig config;  // fields needed to rebuild the model
  EncoderSpec encoders;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One JSON object per line per epoch.
std::string metrics_line(const EpochRecord& r);

}  // namespace moapt
