// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "moapt/attacks.hpp"

using namespace moapt;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double model_loss(const MoaptModel& m, const LabeledBatch& b, const Tensor& x) {
  return forward(m, x, b.one_hot(), {false, {}}).out.loss.item();
}

}  // namespace

TEST_CASE("zero budget returns the input bit-exactly") {
  Rng rng(1);
  const auto m = fixture::random_model(rng, {});
  const auto b = fixture::random_batch(rng, 4, 3, 5);
  Rng arng(2);
  auto cfg = AttackConfig::evaluation(0.0);
  CHECK(same_bits(pgd(m, b, cfg, arng), b.images));
  CHECK(same_bits(fgsm(m, b, 0.0), b.images));
}

TEST_CASE("linear surrogate: one step moves by eps * sign(w), then clamps") {
  const auto w = Tensor::from({1, 4}, {0.5, -2.0, 0.0, 3.0});
  const auto x = Tensor::from({1, 4}, {0.5, 0.5, 0.5, 0.99});
  const double eps = 0.05;
  AttackConfig cfg{eps, 1, eps, false, 0.0, 1.0};
  Rng rng(0);
  const auto adv = pgd([&](const Tensor& img) { return ad::sum(ad::mul(img, w)); }, x, cfg, rng);
  CHECK(adv[0] == 0.5 + eps);
  CHECK(adv[1] == 0.5 - eps);
  CHECK(adv[2] == 0.5);
  CHECK(adv[3] == 1.0);
}

TEST_CASE("projected sign ascent does not decrease the loss") {
  Rng rng(3);
  int violations = 0;
  for (int t = 0; t < 100; ++t) {
    const auto m = fixture::random_model(rng, {});
    const auto b = fixture::random_batch(rng, 4, 3, 5);
    AttackConfig cfg = AttackConfig::training(8.0 / 255.0);
    cfg.steps = 1 + rng.below(4);
    Rng arng(t);
    const auto adv = pgd(m, b, cfg, arng);
    if (model_loss(m, b, adv) < model_loss(m, b, b.images)) ++violations;
  }
  CHECK(violations <= 2);
}

TEST_CASE("fgsm equals single-step pgd and moves by exactly eps before clamping") {
  Rng rng(4);
  const auto m = fixture::random_model(rng, {});
  const auto b = fixture::random_batch(rng, 4, 3, 5);
  const double eps = 4.0 / 255.0;
  Rng unused(0);
  const auto a = fgsm(m, b, eps);
  const auto p = pgd(m, b, {eps, 1, eps, false, 0.0, 1.0}, unused);
  CHECK(same_bits(a, p));
  const auto x = b.images.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double delta = a[i] - x[i];
    const bool interior = a[i] > 0.0 && a[i] < 1.0;
    if (interior) CHECK((delta == 0.0 || std::abs(std::abs(delta) - eps) < 1e-15));
  }
}

TEST_CASE("budget, box, parameter immutability and determinism") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto m = fixture::random_model(rng, {});
    const auto b = fixture::random_batch(rng, 4, 3, 5);
    const auto before = m.parameter_checksum();
    const auto enc = m.encoders->checksum();
    const double eps = (1 + rng.below(16)) / 255.0;
    auto cfg = AttackConfig::evaluation(eps, 1 + rng.below(10));
    Rng r1(t), r2(t);
    const auto a1 = pgd(m, b, cfg, r1);
    const auto a2 = pgd(m, b, cfg, r2);
    CHECK(same_bits(a1, a2));
    CHECK_NOTHROW(check_budget(b.images, a1, cfg));
    for (std::size_t i = 0; i < a1.size(); ++i) {
      CHECK(std::abs(a1[i] - b.images[i]) <= eps + 1e-9);
      CHECK(a1[i] >= 0.0);
      CHECK(a1[i] <= 1.0);
    }
    CHECK(m.parameter_checksum() == before);
    CHECK(m.encoders->checksum() == enc);
    for (const auto& p : m.parameters()) CHECK_FALSE(p.has_grad());
  }
}

TEST_CASE("check_budget rejects violations") {
  const auto x = Tensor::from({1, 2}, {0.5, 0.5});
  AttackConfig cfg = AttackConfig::training(0.01);
  CHECK_THROWS_AS(check_budget(x, Tensor::from({1, 2}, {0.52, 0.5}), cfg), std::logic_error);
  CHECK_THROWS_AS(check_budget(x, Tensor::from({1, 2}, {0.5, 1.5}), cfg), std::logic_error);
  CHECK_NOTHROW(check_budget(x, Tensor::from({1, 2}, {0.51, 0.49}), cfg));
}

TEST_CASE("invalid attack configs") {
  AttackConfig cfg = AttackConfig::training();
  cfg.epsilon = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = AttackConfig::training();
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(AttackConfig::training(0.0).validate());
}
