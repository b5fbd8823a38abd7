// SPDX-License-Identifier: Apache-2.0
#include "moapt/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace moapt {

namespace pt = boost::property_tree;

void RunConfig::sync_seeds() {
  data.seed = train.seeds.data;
  eval.attack_seed = train.seeds.attack;
}

Benchmark RunConfig::benchmark() const {
  Benchmark b;
  b.data = data;
  b.train = train;
  b.eval = eval;
  b.seeds = seeds;
  return b;
}

RunConfig default_run_config() {
  RunConfig c;
  c.sync_seeds();
  return c;
}

RunConfig default_sweep_config() {
  RunConfig c;
  c.train = benchmark_training();
  c.sync_seeds();
  return c;
}

double parse_real(const std::string& text) {
  auto whole = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + text + "'");
    }
    if (used != s.size()) throw ConfigError("not a number: '" + text + "'");
    return v;
  };
  const auto slash = text.find('/');
  double v = slash == std::string::npos
                 ? whole(text)
                 : whole(text.substr(0, slash)) / whole(text.substr(slash + 1));
  if (!std::isfinite(v)) throw ConfigError("not a finite number: '" + text + "'");
  return v;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t parse_count(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("not a non-negative integer: '" + text + "'");
  try {
    return static_cast<std::size_t>(std::stoull(text));
  } catch (const std::exception&) {
    throw ConfigError("integer out of range: '" + text + "'");
  }
}

std::uint64_t parse_u64(const std::string& text) { return parse_count(text); }

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("not a boolean: '" + text + "'");
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* name(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }
const char* name(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }
const char* name(RoutingMode r) { return r == RoutingMode::uniform ? "uniform" : "router"; }

using Setter = std::function<void(RunConfig&, const std::string&)>;

// Flags for settings whose defaults follow another key.
struct Touched {
  bool train_step = false;
  bool eval_step = false;
};

std::map<std::string, Setter> setters(Touched& t) {
  std::map<std::string, Setter> m;
  auto count = [](auto member) {
    return [member](RunConfig& c, const std::string& v) { member(c) = parse_count(v); };
  };
  auto number = [](auto member) {
    return [member](RunConfig& c, const std::string& v) { member(c) = parse_real(v); };
  };
  auto flag = [](auto member) {
    return [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); };
  };

  m["dataset.n_classes"] = count([](RunConfig& c) -> auto& { return c.data.n_classes; });
  m["dataset.image_dim"] = count([](RunConfig& c) -> auto& { return c.data.image_dim; });
  m["dataset.train_per_class"] = count([](RunConfig& c) -> auto& { return c.data.train_per_class; });
  m["dataset.test_per_class"] = count([](RunConfig& c) -> auto& { return c.data.test_per_class; });
  m["dataset.sigma"] = number([](RunConfig& c) -> auto& { return c.data.sigma; });

  m["train.epochs"] = count([](RunConfig& c) -> auto& { return c.train.epochs; });
  m["train.batch_size"] = count([](RunConfig& c) -> auto& { return c.train.batch_size; });
  m["train.lr"] = number([](RunConfig& c) -> auto& { return c.train.lr; });
  m["train.schedule"] = [](RunConfig& c, const std::string& v) {
    if (v == "constant") c.train.schedule = LrSchedule::constant;
    else if (v == "cosine") c.train.schedule = LrSchedule::cosine;
    else throw ConfigError("schedule must be constant or cosine, got '" + v + "'");
  };
  m["train.optimizer"] = [](RunConfig& c, const std::string& v) {
    if (v == "sgd") c.train.optimizer = Optimizer::sgd;
    else if (v == "adam") c.train.optimizer = Optimizer::adam;
    else throw ConfigError("optimizer must be sgd or adam, got '" + v + "'");
  };
  m["train.momentum"] = number([](RunConfig& c) -> auto& { return c.train.momentum; });
  m["train.adam_beta1"] = number([](RunConfig& c) -> auto& { return c.train.adam_beta1; });
  m["train.adam_beta2"] = number([](RunConfig& c) -> auto& { return c.train.adam_beta2; });
  m["train.adam_eps"] = number([](RunConfig& c) -> auto& { return c.train.adam_eps; });
  m["train.tau_w"] = number([](RunConfig& c) -> auto& { return c.train.tau_w; });
  m["train.prompt_count"] = count([](RunConfig& c) -> auto& { return c.train.prompt_count; });
  m["train.context_length"] = count([](RunConfig& c) -> auto& { return c.train.context_length; });
  m["train.routing"] = [](RunConfig& c, const std::string& v) {
    if (v == "router") c.train.routing = RoutingMode::router;
    else if (v == "uniform") c.train.routing = RoutingMode::uniform;
    else throw ConfigError("routing must be router or uniform, got '" + v + "'");
  };
  m["train.logit_scale"] = number([](RunConfig& c) -> auto& { return c.train.logit_scale; });
  m["train.feature_dim"] = count([](RunConfig& c) -> auto& { return c.train.dims.feature_dim; });
  m["train.token_dim"] = count([](RunConfig& c) -> auto& { return c.train.dims.token_dim; });
  m["train.hidden_dim"] = count([](RunConfig& c) -> auto& { return c.train.dims.hidden_dim; });
  m["train.router_hidden"] = count([](RunConfig& c) -> auto& { return c.train.dims.router_hidden; });

  m["attack.epsilon"] = number([](RunConfig& c) -> auto& { return c.train.attack.epsilon; });
  m["attack.steps"] = count([](RunConfig& c) -> auto& { return c.train.attack.steps; });
  m["attack.step_size"] = [&t](RunConfig& c, const std::string& v) {
    c.train.attack.step_size = parse_real(v);
    t.train_step = true;
  };
  m["attack.random_start"] = flag([](RunConfig& c) -> auto& { return c.train.attack.random_start; });

  m["eval.recipe"] = [](RunConfig& c, const std::string& v) { c.recipe = v; };
  m["eval.seeds"] = count([](RunConfig& c) -> auto& { return c.seeds; });
  m["eval.epsilon"] = number([](RunConfig& c) -> auto& { return c.eval.pgd.epsilon; });
  m["eval.pgd_steps"] = count([](RunConfig& c) -> auto& { return c.eval.pgd.steps; });
  m["eval.pgd_step_size"] = [&t](RunConfig& c, const std::string& v) {
    c.eval.pgd.step_size = parse_real(v);
    t.eval_step = true;
  };
  m["eval.random_start"] = flag([](RunConfig& c) -> auto& { return c.eval.pgd.random_start; });
  m["eval.fgsm"] = flag([](RunConfig& c) -> auto& { return c.eval.run_fgsm; });
  m["eval.batch_size"] = count([](RunConfig& c) -> auto& { return c.eval.batch_size; });

  m["output.dir"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };

  m["seeds.data"] = [](RunConfig& c, const std::string& v) { c.train.seeds.data = parse_u64(v); };
  m["seeds.init"] = [](RunConfig& c, const std::string& v) { c.train.seeds.init = parse_u64(v); };
  m["seeds.attack"] = [](RunConfig& c, const std::string& v) { c.train.seeds.attack = parse_u64(v); };
  return m;
}

void validate_all(const RunConfig& c) {
  try {
    c.data.validate();
    c.train.validate();
    c.eval.pgd.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.eval.batch_size == 0) throw ConfigError("eval.batch_size must be >= 1");
  if (c.seeds == 0) throw ConfigError("eval.seeds must be >= 1");
}

}  // namespace

RunConfig parse_config(const std::string& text, RunConfig base) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }

  Touched touched;
  const auto table = setters(touched);
  std::set<std::string> sections;
  for (const auto& [k, _] : table) sections.insert(k.substr(0, k.find('.')));

  const double train_eps = base.train.attack.epsilon;
  const double eval_eps = base.eval.pgd.epsilon;
  for (const auto& [section, body] : tree) {
    if (body.empty())
      throw ConfigError("config key '" + section + "' must be inside a section");
    if (!sections.count(section)) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      const auto full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) throw ConfigError("unknown config key '" + full + "'");
      try {
        it->second(base, trim(value.data()));
      } catch (const ConfigError& e) {
        throw ConfigError(full + ": " + e.what());
      }
    }
  }

  // Step sizes default to their usual fraction of a changed budget.
  if (!touched.train_step && base.train.attack.epsilon != train_eps)
    base.train.attack.step_size = 2.0 * base.train.attack.epsilon / 3.0;
  if (!touched.eval_step && base.eval.pgd.epsilon != eval_eps)
    base.eval.pgd.step_size = base.eval.pgd.epsilon / 4.0;

  base.sync_seeds();
  validate_all(base);
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string render_config(const RunConfig& c) {
  std::ostringstream o;
  const auto& t = c.train;
  o << "[dataset]\n"
    << "n_classes = " << c.data.n_classes << "\n"
    << "image_dim = " << c.data.image_dim << "\n"
    << "train_per_class = " << c.data.train_per_class << "\n"
    << "test_per_class = " << c.data.test_per_class << "\n"
    << "sigma = " << real(c.data.sigma) << "\n\n";
  o << "[train]\n"
    << "epochs = " << t.epochs << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "lr = " << real(t.lr) << "\n"
    << "schedule = " << name(t.schedule) << "\n"
    << "optimizer = " << name(t.optimizer) << "\n"
    << "momentum = " << real(t.momentum) << "\n"
    << "adam_beta1 = " << real(t.adam_beta1) << "\n"
    << "adam_beta2 = " << real(t.adam_beta2) << "\n"
    << "adam_eps = " << real(t.adam_eps) << "\n"
    << "tau_w = " << real(t.tau_w) << "\n"
    << "prompt_count = " << t.prompt_count << "\n"
    << "context_length = " << t.context_length << "\n"
    << "routing = " << name(t.routing) << "\n"
    << "logit_scale = " << real(t.logit_scale) << "\n"
    << "feature_dim = " << t.dims.feature_dim << "\n"
    << "token_dim = " << t.dims.token_dim << "\n"
    << "hidden_dim = " << t.dims.hidden_dim << "\n"
    << "router_hidden = " << t.dims.router_hidden << "\n\n";
  o << "[attack]\n"
    << "epsilon = " << real(t.attack.epsilon) << "\n"
    << "steps = " << t.attack.steps << "\n"
    << "step_size = " << real(t.attack.step_size) << "\n"
    << "random_start = " << (t.attack.random_start ? "true" : "false") << "\n\n";
  o << "[eval]\n"
    << "recipe = " << c.recipe << "\n"
    << "seeds = " << c.seeds << "\n"
    << "epsilon = " << real(c.eval.pgd.epsilon) << "\n"
    << "pgd_steps = " << c.eval.pgd.steps << "\n"
    << "pgd_step_size = " << real(c.eval.pgd.step_size) << "\n"
    << "random_start = " << (c.eval.pgd.random_start ? "true" : "false") << "\n"
    << "fgsm = " << (c.eval.run_fgsm ? "true" : "false") << "\n"
    << "batch_size = " << c.eval.batch_size << "\n\n";
  o << "[output]\n"
    << "dir = " << c.out_dir.string() << "\n\n";
  o << "[seeds]\n"
    << "data = " << t.seeds.data << "\n"
    << "init = " << t.seeds.init << "\n"
    << "attack = " << t.seeds.attack << "\n";
  return o.str();
}

}  // namespace moapt
