// SPDX-License-Identifier: Apache-2.0
//
// Clean and robust accuracy, and the experiment recipes built on them:
// matched-budget length-vs-number sweep, component / K / temperature
// ablations, epsilon-budget sweep, accuracy-robustness trade-off and transfer
// to a foreign synthetic dataset.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "moapt/attacks.hpp"
#include "moapt/synthworld.hpp"
#include "moapt/trainer.hpp"

namespace moapt {

struct EvalOptions {
  AttackConfig pgd = AttackConfig::evaluation();
  bool run_fgsm = true;
  std::uint64_t attack_seed = 0;
  std::size_t batch_size = 64;
};

struct Metrics {
  double clean_acc = 0.0;         // %
  double robust_acc_fgsm = 0.0;   // %
  double robust_acc_pgd = 0.0;    // %
  std::size_t samples = 0;

  /// Reported, not asserted: PGD can legitimately exceed clean accuracy.
  bool pgd_exceeds_clean() const { return robust_acc_pgd > clean_acc; }
};

/// Router is fed the features of whichever input is being classified.
Metrics evaluate(const MoaptModel& model, const LabeledBatch& test,
                 const EvalOptions& opts);

/// Same prompts and router, evaluated on a dataset drawn with `foreign_seed`
/// (new prototypes, new class tokens, same frozen backbone weights).
Metrics transfer_eval(const MoaptModel& model, const DatasetSpec& train_spec,
                      std::uint64_t foreign_seed, const EvalOptions& opts);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one value
};
Summary summarize(const std::vector<double>& values);

/// One configuration evaluated over a seed set.
struct Cell {
  std::string label;
  TrainConfig config;
  std::vector<Metrics> per_seed;

  Summary clean() const;
  Summary fgsm() const;
  Summary pgd() const;
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const;
  std::string text() const;
  /// Writes <dir>/<name>.csv and <dir>/<name>.txt.
  void write(const std::filesystem::path& dir) const;
};

/// Everything a recipe needs: data, training and evaluation settings plus the
/// number of seeds. Seed i offsets each of the three named seeds by i.
/// Training settings for the multi-cell recipes. Plain gradient descent hands
/// each prompt of a K-way mixture 1/K of the single-prompt gradient, so one
/// shared step size cannot be fair across K; Adam's per-coordinate scaling is.
TrainConfig benchmark_training();

struct Benchmark {
  DatasetSpec data;
  TrainConfig train = benchmark_training();
  EvalOptions eval;
  std::size_t seeds = 5;

  Seeds seeds_for(std::size_t i) const;
  /// Dataset for seed i (data spec seed = seeds_for(i).data).
  Dataset dataset(std::size_t i) const;
};

/// Hash of everything that determines a cell's numbers.
std::string fingerprint(const TrainConfig& cfg, const DatasetSpec& data,
                        const EvalOptions& eval);

using ConfigEdit = std::function<void(TrainConfig&)>;

/// Trains and evaluates `edit(base.train)` for every seed.
Cell run_cell(const Benchmark& bench, const std::string& label, const ConfigEdit& edit);

// ---------------------------------------------------------------- length vs number

struct SweepSpec {
  /// Groups of (M, K) pairs; members of a group share K*M*e.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> groups;

  /// Throws std::invalid_argument on any within-group budget mismatch.
  void validate(std::size_t token_dim) const;
  static SweepSpec default_groups();  // {(32,1),(16,2),(8,4)}
};

struct SweepResult {
  std::vector<std::vector<Cell>> groups;
  Table table() const;
};

SweepResult sweep_length_vs_number(const SweepSpec& spec, const Benchmark& bench);

// ---------------------------------------------------------------- ablations

struct AblationReport {
  std::vector<Cell> components;  // baseline K=1, +mixture (uniform), +router
  std::vector<Cell> prompt_counts;  // K in {1,2,4,8}
  std::vector<Cell> temperatures;   // tau_w in {0.3,0.7,1.1,1e6}

  Table components_table() const;
  Table prompt_count_table() const;
  Table temperature_table() const;
};

std::vector<std::size_t> default_prompt_counts();
std::vector<double> default_temperatures();

std::vector<Cell> component_ladder(const Benchmark& bench);
std::vector<Cell> prompt_count_ladder(const Benchmark& bench,
                                      const std::vector<std::size_t>& counts);
std::vector<Cell> temperature_ladder(const Benchmark& bench,
                                     const std::vector<double>& taus);
AblationReport ablation_suite(const Benchmark& bench);

// ---------------------------------------------------------------- epsilon sweep

std::vector<double> default_epsilons();  // {4,8,12,16}/255

struct EpsilonSweep {
  std::vector<double> epsilons;
  /// robust_pgd[s][j]: seed s, epsilon j, same trained model per seed.
  std::vector<std::vector<double>> robust_pgd;
  std::vector<double> clean;
  Table table() const;
};

EpsilonSweep epsilon_sweep(const Benchmark& bench, const std::vector<double>& epsilons);

// ---------------------------------------------------------------- trade-off

struct Tradeoff {
  std::string label;
  double delta_clean = 0.0;
  double delta_robust = 0.0;
};

/// Adversarial minus standard accuracies for one configuration. Both cells
/// must share every setting except the training attack budget.
Tradeoff tradeoff(const Cell& standard, const Cell& adversarial);

struct TradeoffReport {
  std::vector<std::pair<Cell, Cell>> pairs;  // (standard, adversarial)
  std::vector<Tradeoff> deltas;
  Table table() const;
};

std::vector<Tradeoff> tradeoff_report(const std::vector<std::pair<Cell, Cell>>& pairs);
TradeoffReport tradeoff_recipe(const Benchmark& bench);

// ---------------------------------------------------------------- transfer

struct TransferCell {
  std::string label;
  std::vector<Metrics> source;   // on the training seed's test set
  std::vector<Metrics> foreign;  // on the foreign dataset
};

struct TransferReport {
  std::vector<TransferCell> cells;
  Table table() const;
};

/// Foreign dataset seed for training seed i.
std::uint64_t foreign_seed(std::uint64_t data_seed);
TransferReport transfer_recipe(const Benchmark& bench);

// ---------------------------------------------------------------- recipes

class UnknownRecipe : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// fig2, table4, table5, table6, table10, fig3, table3
const std::vector<std::string>& recipe_names();
bool is_recipe(const std::string& name);
Table run_recipe(const std::string& name, const Benchmark& bench);

}  // namespace moapt
