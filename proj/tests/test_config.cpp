// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "moapt/config.hpp"

using namespace moapt;

TEST_CASE("empty config yields the defaults") {
  const auto c = parse_config("", default_run_config());
  CHECK(c.train.epochs == 30);
  CHECK(c.train.optimizer == Optimizer::sgd);
  CHECK(c.train.attack.epsilon == kDefaultEpsilon);
  CHECK(c.eval.pgd.steps == 20);
  CHECK(default_sweep_config().train.optimizer == Optimizer::adam);
}

TEST_CASE("values from every section are applied") {
  const auto c = parse_config(R"(
[dataset]
sigma = 0.3
n_classes = 4
[train]
lr = 0.25
schedule = cosine
routing = uniform
prompt_count = 2
[attack]
epsilon = 8/255
[eval]
pgd_steps = 7
recipe = table5
[output]
dir = somewhere
[seeds]
data = 3
init = 4
attack = 5
)",
                              default_run_config());
  CHECK(c.data.sigma == 0.3);
  CHECK(c.data.n_classes == 4);
  CHECK(c.train.lr == 0.25);
  CHECK(c.train.schedule == LrSchedule::cosine);
  CHECK(c.train.routing == RoutingMode::uniform);
  CHECK(c.train.attack.epsilon == 8.0 / 255.0);
  CHECK(c.train.attack.step_size == doctest::Approx(2.0 * 8.0 / 255.0 / 3.0));
  CHECK(c.eval.pgd.steps == 7);
  CHECK(c.recipe == "table5");
  CHECK(c.out_dir == "somewhere");
  CHECK(c.data.seed == 3);
  CHECK(c.train.seeds.init == 4);
  CHECK(c.eval.attack_seed == 5);
}

TEST_CASE("unknown keys and sections are errors") {
  CHECK_THROWS_AS(parse_config("[train]\nepoch = 3\n", default_run_config()), ConfigError);
  CHECK_THROWS_AS(parse_config("[trian]\nepochs = 3\n", default_run_config()), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = 3\n", default_run_config()), ConfigError);
}

TEST_CASE("malformed values are errors naming the key") {
  try {
    parse_config("[train]\ntau_w = fast\n", default_run_config());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.tau_w") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[train]\nepochs = -1\n", default_run_config()), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\ntau_w = 0\n", default_run_config()), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\noptimizer = rmsprop\n", default_run_config()),
                  ConfigError);
  CHECK_THROWS_AS(parse_config("[train\n", default_run_config()), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nlr = 1\nlr = 2\n", default_run_config()), ConfigError);
}

TEST_CASE("render/parse round-trip is exact") {
  auto c = default_sweep_config();
  c.train.lr = 0.1 + 0.2;
  c.train.attack = AttackConfig::training(3.0 / 255.0);
  c.eval.pgd.epsilon = 1.0 / 3.0;
  const auto text = render_config(c);
  const auto back = parse_config(text, default_run_config());
  CHECK(render_config(back) == text);
  CHECK(back.train.lr == c.train.lr);
  CHECK(back.eval.pgd.epsilon == c.eval.pgd.epsilon);
}

TEST_CASE("parse_real accepts fractions") {
  CHECK(parse_real("4/255") == 4.0 / 255.0);
  CHECK(parse_real("0.5") == 0.5);
  CHECK_THROWS_AS(parse_real("1/0"), ConfigError);
  CHECK_THROWS_AS(parse_real("abc"), ConfigError);
}
