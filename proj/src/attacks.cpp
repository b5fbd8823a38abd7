// SPDX-License-Identifier: Apache-2.0

#include "moapt/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace moapt {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("attack: epsilon must be >= 0");
  if (steps > 0 && epsilon > 0.0 && !(step_size > 0.0))
    throw std::invalid_argument("attack: step_size must be > 0 when steps > 0");
  if (!(step_size >= 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("attack: step_size must be finite and >= 0");
  if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("attack: empty clamp range");
}

AttackConfig AttackConfig::training(double epsilon) {
  return {epsilon, 3, 2.0 * epsilon / 3.0, false, 0.0, 1.0};
}

AttackConfig AttackConfig::evaluation(double epsilon, std::size_t steps) {
  return {epsilon, steps, epsilon / 4.0, true, 0.0, 1.0};
}

void check_budget(const Tensor& clean, const Tensor& adv, const AttackConfig& cfg) {
  const auto x = clean.data();
  const auto a = adv.data();
  if (x.size() != a.size()) throw std::logic_error("attack: shape changed");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(a[i] - x[i]) > cfg.epsilon + 1e-9 || a[i] < cfg.clamp_lo ||
        a[i] > cfg.clamp_hi || std::isnan(a[i]))
      throw std::logic_error("attack: element " + std::to_string(i) +
                             " violates the epsilon ball or pixel box");
  }
}

Tensor pgd(const ImageLoss& loss, const Tensor& images, const AttackConfig& cfg,
           Rng& rng) {
  cfg.validate();
  const auto x = images.data();
  const std::size_t n = x.size();
  std::vector<double> adv(x.begin(), x.end());
  auto project = [&](std::size_t i, double v) {
    v = std::clamp(v, x[i] - cfg.epsilon, x[i] + cfg.epsilon);
    return std::clamp(v, cfg.clamp_lo, cfg.clamp_hi);
  };
  if (cfg.epsilon > 0.0) {
    if (cfg.random_start)
      for (std::size_t i = 0; i < n; ++i)
        adv[i] = project(i, x[i] + rng.uniform(-cfg.epsilon, cfg.epsilon));
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      auto probe = Tensor::from(images.shape(), adv, true);
      loss(probe).backward();
      const auto g = probe.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        adv[i] = project(i, adv[i] + cfg.step_size * s);
      }
    }
  }
  auto out = Tensor::from(images.shape(), std::move(adv));
  check_budget(images, out, cfg);
  return out;
}

Tensor pgd(const MoaptModel& model, const LabeledBatch& batch,
           const AttackConfig& cfg, Rng& rng, const Tensor& text_features_in) {
  const auto y = batch.one_hot();
  ForwardOptions opts{false, text_features_in.defined()
                                 ? text_features_in.detach()
                                 : text_features(model.bank, *model.encoders, false)};
  return pgd(
      [&](const Tensor& imgs) { return forward(model, imgs, y, opts).out.loss; },
      batch.images, cfg, rng);
}

Tensor fgsm(const MoaptModel& model, const LabeledBatch& batch, double epsilon,
            const Tensor& text_features) {
  AttackConfig cfg{epsilon, 1, epsilon, false, 0.0, 1.0};
  if (epsilon == 0.0) cfg.steps = 0;
  Rng unused(0);
  return pgd(model, batch, cfg, unused, text_features);
}

}  // namespace moapt
