// SPDX-License-Identifier: Apache-2.0
//
// moapt: command-line front end. Every command writes into one run directory
// holding its outputs, the config as given, the resolved config and a
// manifest with content hashes.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "moapt/binio.hpp"
#include "moapt/config.hpp"
#include "moapt/eval.hpp"
#include "moapt/rng.hpp"
#include "moapt/theory.hpp"
#include "moapt/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace moapt;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kBadConfig = 3,
  kUnknownRecipe = 4,
  kMissingFile = 5,
  kBadFile = 6,
  kDiverged = 7,
  kTheoremViolated = 8,
};

struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed_data, seed_init, seed_attack;
  std::optional<std::size_t> pgd_steps;
  std::string epsilon_text;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI config file (all keys optional)");
  cmd->add_option("--out", c.out, "run directory (overrides [output] dir)");
  cmd->add_option("--seed-data", c.seed_data, "data seed");
  cmd->add_option("--seed-init", c.seed_init, "initialisation seed");
  cmd->add_option("--seed-attack", c.seed_attack, "attack seed");
  cmd->add_option("--epsilon", c.epsilon_text,
                  "L-inf budget for training and evaluation, e.g. 0.0157 or 4/255");
  cmd->add_option("--pgd-steps", c.pgd_steps, "PGD steps at evaluation");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << body;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

RunConfig resolve(const Common& c, RunConfig base) {
  RunConfig cfg = base;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw MissingFile("config file not found: " + c.config);
    cfg = load_config(c.config, base);
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.seed_data) cfg.train.seeds.data = *c.seed_data;
  if (c.seed_init) cfg.train.seeds.init = *c.seed_init;
  if (c.seed_attack) cfg.train.seeds.attack = *c.seed_attack;
  if (!c.epsilon_text.empty()) {
    const double eps = parse_real(c.epsilon_text);
    if (eps < 0.0) throw ConfigError("--epsilon must be >= 0");
    const auto train_steps = cfg.train.attack.steps;
    cfg.train.attack = AttackConfig::training(eps);
    cfg.train.attack.steps = train_steps;
    const auto eval_steps = cfg.eval.pgd.steps;
    const bool rs = cfg.eval.pgd.random_start;
    cfg.eval.pgd = AttackConfig::evaluation(eps, eval_steps);
    cfg.eval.pgd.random_start = rs;
  }
  if (c.pgd_steps) cfg.eval.pgd.steps = *c.pgd_steps;
  cfg.sync_seeds();
  // Round-trip through the parser so overrides get the same validation.
  return parse_config(render_config(cfg), cfg);
}

// Echoes the configs and records every produced file with its hash.
void finish_run(const std::string& command, const Common& c, const RunConfig& cfg,
                const std::vector<std::string>& outputs) {
  const auto& dir = cfg.out_dir;
  if (!c.config.empty()) spit(dir / "config.ini", slurp(c.config));
  spit(dir / "resolved.ini", render_config(cfg));

  json m;
  m["format"] = "moapt-manifest-1";
  m["command"] = command;
  m["config_source"] = c.config.empty() ? "defaults" : "config.ini";
  m["resolved_config"] = "resolved.ini";
  m["seeds"] = {{"data", cfg.train.seeds.data},
                {"init", cfg.train.seeds.init},
                {"attack", cfg.train.seeds.attack}};
  json files = json::array();
  for (const auto& name : outputs) {
    const auto body = slurp(dir / name);
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(fnv1a(body)));
    files.push_back({{"name", name}, {"bytes", body.size()}, {"fnv1a64", hash}});
  }
  m["outputs"] = files;
  spit(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset dataset_for(const RunConfig& cfg) { return generate_dataset(cfg.data); }

int cmd_gen_data(const Common& c) {
  auto cfg = resolve(c, default_run_config());
  fs::create_directories(cfg.out_dir);
  const auto data = dataset_for(cfg);
  const auto name = dataset_filename(cfg.data);
  save_dataset(data, cfg.out_dir / name);
  finish_run("gen-data", c, cfg, {name});
  std::cout << (cfg.out_dir / name).string() << "\n";
  return kOk;
}

int cmd_train(const Common& c) {
  auto cfg = resolve(c, default_run_config());
  fs::create_directories(cfg.out_dir);
  const auto data = dataset_for(cfg);
  const auto state = fit(cfg.train, data, {cfg.out_dir});
  finish_run("train", c, cfg, {"metrics.jsonl", "checkpoint.bin"});
  const auto& last = state.history.back();
  std::printf("epochs %zu  loss %.6f  train clean %.2f%%  train robust %.2f%%\n",
              state.epochs_done, last.train_loss, last.clean_acc, last.robust_acc);
  return kOk;
}

json metrics_json(const Metrics& m) {
  return {{"clean_acc", m.clean_acc},
          {"robust_acc_fgsm", m.robust_acc_fgsm},
          {"robust_acc_pgd", m.robust_acc_pgd},
          {"samples", m.samples},
          {"pgd_exceeds_clean", m.pgd_exceeds_clean()}};
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  auto cfg = resolve(c, default_run_config());
  if (!fs::exists(checkpoint)) throw MissingFile("checkpoint not found: " + checkpoint);
  const auto ck = load_checkpoint(checkpoint);
  // The checkpoint decides which dataset the model belongs to.
  auto spec = cfg.data;
  spec.seed = ck.config.seeds.data;
  if (spec.n_classes != ck.encoders.n_classes || spec.image_dim != ck.encoders.image_dim)
    throw ConfigError("dataset shape in config does not match the checkpoint (N=" +
                      std::to_string(ck.encoders.n_classes) +
                      ", p=" + std::to_string(ck.encoders.image_dim) + ")");
  const auto data = generate_dataset(spec);
  const auto m = evaluate(ck.state.model, data.test, cfg.eval);

  fs::create_directories(cfg.out_dir);
  json j = metrics_json(m);
  j["epsilon"] = cfg.eval.pgd.epsilon;
  j["pgd_steps"] = cfg.eval.pgd.steps;
  j["checkpoint_epochs"] = ck.state.epochs_done;
  spit(cfg.out_dir / "eval_metrics.json", j.dump(2) + "\n");
  char row[256];
  std::snprintf(row, sizeof row, "%.17g,%.17g,%.17g,%zu\n", m.clean_acc, m.robust_acc_fgsm,
                m.robust_acc_pgd, m.samples);
  spit(cfg.out_dir / "eval_metrics.csv",
       std::string("clean_acc,robust_acc_fgsm,robust_acc_pgd,samples\n") + row);
  finish_run("eval", c, cfg, {"eval_metrics.json", "eval_metrics.csv"});
  std::printf("clean %.2f%%  fgsm %.2f%%  pgd %.2f%%  (n=%zu)\n", m.clean_acc,
              m.robust_acc_fgsm, m.robust_acc_pgd, m.samples);
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& recipe_flag) {
  auto cfg = resolve(c, default_sweep_config());
  const auto recipe = recipe_flag.empty() ? cfg.recipe : recipe_flag;
  cfg.recipe = recipe;
  const auto table = run_recipe(recipe, cfg.benchmark());
  fs::create_directories(cfg.out_dir);
  table.write(cfg.out_dir);
  finish_run("sweep", c, cfg, {table.name + ".csv", table.name + ".txt"});
  std::cout << table.text();
  return kOk;
}

struct TheoremArgs {
  std::size_t draws = 10000;
  std::size_t k_min = 2, k_max = 10;
  double eta_max = 2.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_verify(const TheoremArgs& a) {
  if (a.k_min < 2 || a.k_max < a.k_min) throw ConfigError("need 2 <= k-min <= k-max");
  if (!(a.eta_max > 0.0)) throw ConfigError("eta-max must be > 0");
  const auto report = theory::monte_carlo({a.draws, a.k_min, a.k_max, a.eta_max, a.seed});
  const auto text = report.text();
  std::cout << text;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    spit(fs::path(a.out) / "theorem_report.txt", text);
  }
  return report.ok() ? kOk : kTheoremViolated;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial mixture prompt tuning lab"};
  app.require_subcommand(1);

  Common gen, train, ev, sw;
  auto* g = app.add_subcommand("gen-data", "generate and save the synthetic dataset");
  add_common(g, gen);
  auto* t = app.add_subcommand("train", "train and write checkpoint.bin + metrics.jsonl");
  add_common(t, train);
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on the clean/FGSM/PGD test set");
  add_common(e, ev);
  std::string checkpoint;
  e->add_option("--checkpoint", checkpoint, "checkpoint.bin to evaluate")->required();
  auto* s = app.add_subcommand("sweep", "run a multi-seed experiment recipe");
  add_common(s, sw);
  std::string recipe;
  s->add_option("--recipe", recipe, "fig2|table4|table5|table6|table10|fig3|table3");

  TheoremArgs th;
  auto* v = app.add_subcommand("verify-theorem", "Monte-Carlo check of the routing inequality");
  v->add_option("--draws", th.draws, "number of random risk vectors");
  v->add_option("--k-min", th.k_min, "smallest K");
  v->add_option("--k-max", th.k_max, "largest K");
  v->add_option("--eta-max", th.eta_max, "eta drawn from (0, eta-max]");
  v->add_option("--seed", th.seed, "sampler seed");
  v->add_option("--out", th.out, "directory for theorem_report.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(ev, checkpoint);
    if (s->parsed()) return cmd_sweep(sw, recipe);
    if (v->parsed()) return cmd_verify(th);
  } catch (const ConfigError& err) {
    std::cerr << "moapt: config error: " << err.what() << "\n";
    return kBadConfig;
  } catch (const UnknownRecipe& err) {
    std::cerr << "moapt: " << err.what() << "\n";
    return kUnknownRecipe;
  } catch (const MissingFile& err) {
    std::cerr << "moapt: " << err.what() << "\n";
    return kMissingFile;
  } catch (const binio::FormatError& err) {
    std::cerr << "moapt: unreadable file: " << err.what() << "\n";
    return kBadFile;
  } catch (const TrainingDiverged& err) {
    std::cerr << "moapt: training diverged: " << err.what() << "\n";
    return kDiverged;
  } catch (const std::exception& err) {
    std::cerr << "moapt: error: " << err.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
