// SPDX-License-Identifier: Apache-2.0
//
// White-box L-infinity attacks on the full MoAPT loss. The attacker sees every
// parameter (encoders, prompts, router) but only perturbs the image:
//
//   x' <- clip_[0,1]( clip_[x-eps, x+eps]( x' + step * sign(grad_x' L) ) )

#pragma once

#include <functional>

#include "moapt/diffcore.hpp"
#include "moapt/objective.hpp"
#include "moapt/rng.hpp"
#include "moapt/synthworld.hpp"

namespace moapt {

inline constexpr double kDefaultEpsilon = 4.0 / 255.0;

struct AttackConfig {
  double epsilon = kDefaultEpsilon;
  std::size_t steps = 3;
  double step_size = 2.0 * kDefaultEpsilon / 3.0;
  bool random_start = false;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const;

  /// 3 steps of 2*eps/3 without random start.
  static AttackConfig training(double epsilon = kDefaultEpsilon);
  /// `steps` steps of eps/4 from a uniform random start.
  static AttackConfig evaluation(double epsilon = kDefaultEpsilon, std::size_t steps = 20);
};

/// Scalar loss of a batch of images; the attack ascends it.
using ImageLoss = std::function<Tensor(const Tensor& images)>;

/// Projected sign-gradient ascent on an arbitrary loss.
Tensor pgd(const ImageLoss& loss, const Tensor& images, const AttackConfig& cfg,
           Rng& rng);

/// PGD on L_MoAPT of `model`. Parameters are read but never written; the
/// optional text features let a caller reuse a per-minibatch precompute.
Tensor pgd(const MoaptModel& model, const LabeledBatch& batch,
           const AttackConfig& cfg, Rng& rng, const Tensor& text_features = {});

/// Single sign step of size epsilon, no random start.
Tensor fgsm(const MoaptModel& model, const LabeledBatch& batch, double epsilon,
            const Tensor& text_features = {});

/// Throws std::logic_error if any element leaves the epsilon ball or the box.
void check_budget(const Tensor& clean, const Tensor& adversarial,
                  const AttackConfig& cfg);

}  // namespace moapt
