// SPDX-License-Identifier: Apache-2.0

#include "moapt/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "moapt/rng.hpp"

namespace moapt {

namespace {

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_eps(double eps) {
  // Budgets are conventionally quoted in 1/255 units.
  return fmt(eps * 255.0, 0) + "/255";
}

std::size_t correct(const Tensor& logits, const std::vector<int>& labels) {
  const auto pred = predict(logits);
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i];
  return c;
}

std::vector<std::string> summary_columns() {
  return {"clean_mean", "clean_std", "fgsm_mean", "fgsm_std", "pgd_mean", "pgd_std", "seeds"};
}

std::vector<std::string> summary_cells(const Cell& c) {
  const auto cl = c.clean(), fg = c.fgsm(), pg = c.pgd();
  return {fmt(cl.mean), fmt(cl.stddev), fmt(fg.mean), fmt(fg.stddev),
          fmt(pg.mean), fmt(pg.stddev), std::to_string(c.per_seed.size())};
}

Table cell_table(std::string name, std::string key, const std::vector<Cell>& cells,
                 const std::function<std::string(const Cell&)>& key_of) {
  Table t{std::move(name), {"config", std::move(key)}, {}};
  for (auto& c : summary_columns()) t.columns.push_back(c);
  for (const auto& c : cells) {
    std::vector<std::string> row{c.label, key_of(c)};
    for (auto& v : summary_cells(c)) row.push_back(v);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<double> collect(const std::vector<Metrics>& ms, double Metrics::*field) {
  std::vector<double> v;
  for (const auto& m : ms) v.push_back(m.*field);
  return v;
}

}  // namespace

// ---------------------------------------------------------------- accuracy

Metrics evaluate(const MoaptModel& model, const LabeledBatch& test,
                 const EvalOptions& opts) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  if (opts.batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  opts.pgd.validate();
  const auto feats = text_features(model.bank, *model.encoders, false);
  std::size_t clean_ok = 0, fgsm_ok = 0, pgd_ok = 0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < test.size(); start += opts.batch_size, ++batch_index) {
    const auto batch = test.slice(start, std::min(test.size(), start + opts.batch_size));
    const auto y = batch.one_hot();
    const ForwardOptions fo{false, feats};
    clean_ok += correct(forward(model, batch.images, y, fo).out.logits, batch.labels);
    if (opts.run_fgsm) {
      const auto adv = fgsm(model, batch, opts.pgd.epsilon, feats);
      fgsm_ok += correct(forward(model, adv, y, fo).out.logits, batch.labels);
    }
    Rng rng(opts.attack_seed, "eval-pgd", batch_index);
    const auto adv = pgd(model, batch, opts.pgd, rng, feats);
    pgd_ok += correct(forward(model, adv, y, fo).out.logits, batch.labels);
  }
  const double n = static_cast<double>(test.size());
  Metrics m;
  m.samples = test.size();
  m.clean_acc = 100.0 * static_cast<double>(clean_ok) / n;
  m.robust_acc_fgsm = opts.run_fgsm ? 100.0 * static_cast<double>(fgsm_ok) / n : 0.0;
  m.robust_acc_pgd = 100.0 * static_cast<double>(pgd_ok) / n;
  return m;
}

Metrics transfer_eval(const MoaptModel& model, const DatasetSpec& train_spec,
                      std::uint64_t foreign, const EvalOptions& opts) {
  auto spec = train_spec;
  spec.seed = foreign;
  const auto& es = model.encoders->spec();
  if (spec.n_classes != es.n_classes || spec.image_dim != es.image_dim)
    throw ad::ShapeError("transfer_eval: foreign dataset dims differ from the model");
  const auto data = generate_dataset(spec);
  if (foreign == train_spec.seed) return evaluate(model, data.test, opts);
  auto foreign_model = model;
  foreign_model.encoders = std::make_shared<const FrozenEncoders>(es, data.prototypes);
  return evaluate(foreign_model, data.test, opts);
}

// ---------------------------------------------------------------- bookkeeping

Summary summarize(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

Summary Cell::clean() const { return summarize(collect(per_seed, &Metrics::clean_acc)); }
Summary Cell::fgsm() const { return summarize(collect(per_seed, &Metrics::robust_acc_fgsm)); }
Summary Cell::pgd() const { return summarize(collect(per_seed, &Metrics::robust_acc_pgd)); }

std::string Table::csv() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
  os << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
  return os.str();
}

std::string Table::text() const {
  std::vector<std::size_t> width(columns.size(), 0);
  for (std::size_t i = 0; i < columns.size(); ++i) width[i] = columns[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i)
      width[i] = std::max(width[i], r[i].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << "  ";
      os << cells[i] << std::string(width[i] - cells[i].size(), ' ');
    }
    os << '\n';
  };
  os << name << '\n';
  line(columns);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

void Table::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (auto [ext, body] : {std::pair{".csv", csv()}, std::pair{".txt", text()}}) {
    std::ofstream out(dir / (name + ext), std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw std::runtime_error("cannot write " + (dir / (name + ext)).string());
  }
}

TrainConfig benchmark_training() {
  TrainConfig c;
  c.optimizer = Optimizer::adam;
  c.lr = 0.01;
  return c;
}

Seeds Benchmark::seeds_for(std::size_t i) const {
  const auto& s = train.seeds;
  return {s.data + i, s.init + i, s.attack + i};
}

Dataset Benchmark::dataset(std::size_t i) const {
  auto spec = data;
  spec.seed = seeds_for(i).data;
  return generate_dataset(spec);
}

std::string fingerprint(const TrainConfig& c, const DatasetSpec& d, const EvalOptions& e) {
  std::ostringstream os;
  auto bits = [](double v) { return std::bit_cast<std::uint64_t>(v); };
  os << "data:" << d.hash() << ':' << d.seed << ";train:" << c.epochs << ':' << c.batch_size
     << ':' << bits(c.lr) << ':' << static_cast<int>(c.schedule) << ':' << bits(c.momentum)
     << ':' << static_cast<int>(c.optimizer) << ':' << bits(c.adam_beta1) << ':'
     << bits(c.adam_beta2) << ':' << bits(c.adam_eps)
     << ':' << bits(c.tau_w) << ':' << c.prompt_count << ':' << c.context_length << ':'
     << static_cast<int>(c.routing) << ':' << bits(c.logit_scale) << ':' << c.dims.feature_dim
     << ':' << c.dims.token_dim << ':' << c.dims.hidden_dim << ':' << c.dims.router_width()
     << ":attack:" << bits(c.attack.epsilon) << ':' << c.attack.steps << ':'
     << bits(c.attack.step_size) << ':' << c.attack.random_start << ";seeds:" << c.seeds.data
     << ':' << c.seeds.init << ':' << c.seeds.attack << ";eval:" << bits(e.pgd.epsilon) << ':'
     << e.pgd.steps << ':' << bits(e.pgd.step_size) << ':' << e.pgd.random_start << ':'
     << e.run_fgsm << ':' << e.attack_seed << ':' << e.batch_size;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

Cell run_cell(const Benchmark& bench, const std::string& label, const ConfigEdit& edit) {
  Cell cell{label, bench.train, {}};
  if (edit) edit(cell.config);
  for (std::size_t i = 0; i < bench.seeds; ++i) {
    auto cfg = cell.config;
    cfg.seeds = bench.seeds_for(i);
    const auto data = bench.dataset(i);
    const auto state = fit(cfg, data);
    auto eval = bench.eval;
    eval.attack_seed = cfg.seeds.attack;
    cell.per_seed.push_back(evaluate(state.model, data.test, eval));
  }
  return cell;
}

// ---------------------------------------------------------------- length vs number

void SweepSpec::validate(std::size_t token_dim) const {
  if (groups.empty()) throw std::invalid_argument("sweep: no groups");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    if (grp.empty()) throw std::invalid_argument("sweep: empty group " + std::to_string(g));
    const std::size_t budget = grp.front().first * grp.front().second * token_dim;
    for (auto [M, K] : grp) {
      if (M == 0 || K == 0) throw std::invalid_argument("sweep: M and K must be >= 1");
      if (M * K * token_dim != budget)
        throw std::invalid_argument(
            "sweep: group " + std::to_string(g) + " member (M=" + std::to_string(M) +
            ",K=" + std::to_string(K) + ") has budget " + std::to_string(M * K * token_dim) +
            ", expected " + std::to_string(budget));
    }
  }
}

SweepSpec SweepSpec::default_groups() { return {{{{32, 1}, {16, 2}, {8, 4}}}}; }

SweepResult sweep_length_vs_number(const SweepSpec& spec, const Benchmark& bench) {
  spec.validate(bench.train.dims.token_dim);
  auto order = spec.groups;
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.front().first * a.front().second < b.front().first * b.front().second;
  });
  SweepResult out;
  for (const auto& grp : order) {
    std::vector<Cell> cells;
    for (auto [M, K] : grp)
      cells.push_back(run_cell(bench, "L" + std::to_string(M) + "-N" + std::to_string(K),
                               [M, K](TrainConfig& c) {
                                 c.context_length = M;
                                 c.prompt_count = K;
                               }));
    out.groups.push_back(std::move(cells));
  }
  return out;
}

Table SweepResult::table() const {
  Table t{"fig2_sweep", {"config", "M", "K", "budget"}, {}};
  for (auto& c : summary_columns()) t.columns.push_back(c);
  for (const auto& grp : groups)
    for (const auto& c : grp) {
      const auto& cfg = c.config;
      std::vector<std::string> row{
          c.label, std::to_string(cfg.context_length), std::to_string(cfg.prompt_count),
          std::to_string(cfg.context_length * cfg.prompt_count * cfg.dims.token_dim)};
      for (auto& v : summary_cells(c)) row.push_back(v);
      t.rows.push_back(std::move(row));
    }
  return t;
}

// ---------------------------------------------------------------- ablations

std::vector<std::size_t> default_prompt_counts() { return {1, 2, 4, 8}; }
std::vector<double> default_temperatures() { return {0.3, 0.7, 1.1, 1e6}; }

std::vector<Cell> component_ladder(const Benchmark& bench) {
  const auto K = bench.train.prompt_count;
  return {
      run_cell(bench, "baseline",
               [](TrainConfig& c) {
                 c.prompt_count = 1;
                 c.routing = RoutingMode::uniform;
               }),
      run_cell(bench, "+mixture",
               [K](TrainConfig& c) {
                 c.prompt_count = K;
                 c.routing = RoutingMode::uniform;
               }),
      run_cell(bench, "+router",
               [K](TrainConfig& c) {
                 c.prompt_count = K;
                 c.routing = RoutingMode::router;
               }),
  };
}

std::vector<Cell> prompt_count_ladder(const Benchmark& bench,
                                      const std::vector<std::size_t>& counts) {
  std::vector<Cell> cells;
  for (auto K : counts)
    cells.push_back(run_cell(bench, "K=" + std::to_string(K), [K](TrainConfig& c) {
      c.prompt_count = K;
      // A single prompt has nothing to route; it is the baseline configuration.
      c.routing = K == 1 ? RoutingMode::uniform : RoutingMode::router;
    }));
  return cells;
}

std::vector<Cell> temperature_ladder(const Benchmark& bench, const std::vector<double>& taus) {
  std::vector<Cell> cells;
  for (double tau : taus) {
    char label[32];
    std::snprintf(label, sizeof label, "tau=%g", tau);
    cells.push_back(run_cell(bench, label, [tau](TrainConfig& c) {
      c.tau_w = tau;
      c.routing = RoutingMode::router;
    }));
  }
  return cells;
}

AblationReport ablation_suite(const Benchmark& bench) {
  return {component_ladder(bench), prompt_count_ladder(bench, default_prompt_counts()),
          temperature_ladder(bench, default_temperatures())};
}

Table AblationReport::components_table() const {
  return cell_table("table4_components", "K", components,
                    [](const Cell& c) { return std::to_string(c.config.prompt_count); });
}

Table AblationReport::prompt_count_table() const {
  return cell_table("table5_K", "K", prompt_counts,
                    [](const Cell& c) { return std::to_string(c.config.prompt_count); });
}

Table AblationReport::temperature_table() const {
  return cell_table("table6_tau", "tau", temperatures, [](const Cell& c) {
    char b[32];
    std::snprintf(b, sizeof b, "%g", c.config.tau_w);
    return std::string(b);
  });
}

// ---------------------------------------------------------------- epsilon sweep

std::vector<double> default_epsilons() {
  return {4.0 / 255.0, 8.0 / 255.0, 12.0 / 255.0, 16.0 / 255.0};
}

EpsilonSweep epsilon_sweep(const Benchmark& bench, const std::vector<double>& epsilons) {
  EpsilonSweep out{epsilons, {}, {}};
  for (std::size_t i = 0; i < bench.seeds; ++i) {
    auto cfg = bench.train;
    cfg.seeds = bench.seeds_for(i);
    const auto data = bench.dataset(i);
    const auto state = fit(cfg, data);
    std::vector<double> row;
    for (double eps : epsilons) {
      auto ev = bench.eval;
      ev.attack_seed = cfg.seeds.attack;
      ev.run_fgsm = false;
      ev.pgd = AttackConfig::evaluation(eps, bench.eval.pgd.steps);
      const auto m = evaluate(state.model, data.test, ev);
      row.push_back(m.robust_acc_pgd);
      if (row.size() == 1) out.clean.push_back(m.clean_acc);
    }
    out.robust_pgd.push_back(std::move(row));
  }
  return out;
}

Table EpsilonSweep::table() const {
  Table t{"table10_epsilon", {"epsilon", "pgd_mean", "pgd_std", "clean_mean", "seeds"}, {}};
  const auto clean_s = summarize(clean);
  for (std::size_t j = 0; j < epsilons.size(); ++j) {
    std::vector<double> col;
    for (const auto& r : robust_pgd) col.push_back(r[j]);
    const auto s = summarize(col);
    t.rows.push_back({fmt_eps(epsilons[j]), fmt(s.mean), fmt(s.stddev), fmt(clean_s.mean),
                      std::to_string(robust_pgd.size())});
  }
  return t;
}

// ---------------------------------------------------------------- trade-off

Tradeoff tradeoff(const Cell& standard, const Cell& adversarial) {
  auto a = standard.config;
  auto b = adversarial.config;
  a.attack = b.attack;
  const bool same = a.prompt_count == b.prompt_count && a.context_length == b.context_length &&
                    a.routing == b.routing && a.tau_w == b.tau_w && a.epochs == b.epochs &&
                    a.lr == b.lr && a.optimizer == b.optimizer && a.seeds == b.seeds && a.dims == b.dims &&
                    a.logit_scale == b.logit_scale && a.batch_size == b.batch_size &&
                    standard.per_seed.size() == adversarial.per_seed.size();
  if (!same) throw std::invalid_argument("tradeoff: configurations differ beyond the attack");
  return {adversarial.label, adversarial.clean().mean - standard.clean().mean,
          adversarial.pgd().mean - standard.pgd().mean};
}

std::vector<Tradeoff> tradeoff_report(const std::vector<std::pair<Cell, Cell>>& pairs) {
  std::vector<Tradeoff> out;
  for (const auto& [s, a] : pairs) out.push_back(tradeoff(s, a));
  return out;
}

TradeoffReport tradeoff_recipe(const Benchmark& bench) {
  TradeoffReport rep;
  const auto K = bench.train.prompt_count;
  for (auto [label, k] : {std::pair{std::string("APT K=1"), std::size_t{1}},
                          std::pair{"MoAPT K=" + std::to_string(K), K}}) {
    auto edit = [k](double eps) {
      return [k, eps](TrainConfig& c) {
        c.prompt_count = k;
        c.routing = k == 1 ? RoutingMode::uniform : RoutingMode::router;
        c.attack = AttackConfig::training(eps);
        if (eps == 0.0) c.attack.steps = 0;
      };
    };
    rep.pairs.emplace_back(run_cell(bench, label + " standard", edit(0.0)),
                           run_cell(bench, label, edit(bench.train.attack.epsilon)));
  }
  rep.deltas = tradeoff_report(rep.pairs);
  return rep;
}

Table TradeoffReport::table() const {
  Table t{"fig3_tradeoff",
          {"config", "std_clean", "std_pgd", "adv_clean", "adv_pgd", "delta_clean",
           "delta_robust"},
          {}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [s, a] = pairs[i];
    t.rows.push_back({deltas[i].label, fmt(s.clean().mean), fmt(s.pgd().mean),
                      fmt(a.clean().mean), fmt(a.pgd().mean), fmt(deltas[i].delta_clean),
                      fmt(deltas[i].delta_robust)});
  }
  return t;
}

// ---------------------------------------------------------------- transfer

std::uint64_t foreign_seed(std::uint64_t data_seed) { return data_seed + 1000003; }

TransferReport transfer_recipe(const Benchmark& bench) {
  TransferReport rep;
  const auto K = bench.train.prompt_count;
  for (auto k : {std::size_t{1}, K}) {
    TransferCell cell{k == 1 ? "APT K=1" : "MoAPT K=" + std::to_string(k), {}, {}};
    for (std::size_t i = 0; i < bench.seeds; ++i) {
      auto cfg = bench.train;
      cfg.prompt_count = k;
      cfg.routing = k == 1 ? RoutingMode::uniform : RoutingMode::router;
      cfg.seeds = bench.seeds_for(i);
      const auto data = bench.dataset(i);
      const auto state = fit(cfg, data);
      auto ev = bench.eval;
      ev.attack_seed = cfg.seeds.attack;
      cell.source.push_back(evaluate(state.model, data.test, ev));
      cell.foreign.push_back(
          transfer_eval(state.model, data.spec, foreign_seed(cfg.seeds.data), ev));
    }
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

Table TransferReport::table() const {
  Table t{"table3_transfer",
          {"config", "source_clean", "source_pgd", "foreign_clean", "foreign_fgsm",
           "foreign_pgd", "foreign_pgd_std", "seeds"},
          {}};
  for (const auto& c : cells) {
    const auto sc = summarize(collect(c.source, &Metrics::clean_acc));
    const auto sp = summarize(collect(c.source, &Metrics::robust_acc_pgd));
    const auto fc = summarize(collect(c.foreign, &Metrics::clean_acc));
    const auto ff = summarize(collect(c.foreign, &Metrics::robust_acc_fgsm));
    const auto fp = summarize(collect(c.foreign, &Metrics::robust_acc_pgd));
    t.rows.push_back({c.label, fmt(sc.mean), fmt(sp.mean), fmt(fc.mean), fmt(ff.mean),
                      fmt(fp.mean), fmt(fp.stddev), std::to_string(c.foreign.size())});
  }
  return t;
}

// ---------------------------------------------------------------- recipes

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names{"fig2",   "table4", "table5", "table6",
                                              "table10", "fig3",  "table3"};
  return names;
}

bool is_recipe(const std::string& name) {
  const auto& n = recipe_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

Table run_recipe(const std::string& name, const Benchmark& bench) {
  if (name == "fig2") return sweep_length_vs_number(SweepSpec::default_groups(), bench).table();
  if (name == "table4") return AblationReport{component_ladder(bench), {}, {}}.components_table();
  if (name == "table5")
    return AblationReport{{}, prompt_count_ladder(bench, default_prompt_counts()), {}}
        .prompt_count_table();
  if (name == "table6")
    return AblationReport{{}, {}, temperature_ladder(bench, default_temperatures())}
        .temperature_table();
  if (name == "table10") return epsilon_sweep(bench, default_epsilons()).table();
  if (name == "fig3") return tradeoff_recipe(bench).table();
  if (name == "table3") return transfer_recipe(bench).table();
  std::string known;
  for (const auto& n : recipe_names()) known += (known.empty() ? "" : ", ") + n;
  throw UnknownRecipe("unknown recipe '" + name + "' (known: " + known + ")");
}

}  // namespace moapt
