// SPDX-License-Identifier: Apache-2.0
//
// Cosine-similarity cross-entropy objective and the full MoAPT forward pass
// (encode image -> route -> mix text features -> cosine logits -> loss).

#pragma once

#include <memory>

#include "moapt/diffcore.hpp"
#include "moapt/prompts.hpp"
#include "moapt/synthworld.hpp"

namespace moapt {

inline constexpr double kDefaultLogitScale = 10.0;

struct LossOutput {
  Tensor loss;           // scalar
  Tensor logits;         // [B,N] cosines, unscaled
  Tensor probabilities;  // [B,N] softmax(scale * logits), constant
};

/// (i,n) = cos(z_v^i, z_t^{n,i}); z_v [B,d], z_t [B,N,d].
Tensor cosine_logits(const Tensor& image_features, const Tensor& text_features);

/// Mean over the batch of -sum_n y_in log softmax(scale * logits_i)_n.
LossOutput moapt_loss(const Tensor& logits, const Tensor& y_onehot,
                      double logit_scale = kDefaultLogitScale);

/// Throws unless every row holds exactly one 1 and zeros elsewhere.
void validate_one_hot(const Tensor& y);

enum class RoutingMode {
  router,   // learned conditional weights
  uniform,  // fixed 1/K mixture; also the router-bypassed single prompt at K=1
};

/// Everything the forward pass reads. Encoders are shared and immutable.
struct MoaptModel {
  std::shared_ptr<const FrozenEncoders> encoders;
  PromptBank bank;
  WeightRouter router;
  RoutingMode routing = RoutingMode::router;
  double logit_scale = kDefaultLogitScale;

  /// Learnable tensors in a fixed order: router (w1,b1,w2,b2), then contexts.
  std::vector<Tensor> parameters() const;
  std::uint64_t parameter_checksum() const;
  /// Deep copy of the learnable tensors; encoders stay shared.
  MoaptModel clone() const;
};

struct ForwardPass {
  LossOutput out;
  Tensor image_features;  // [B,d]
  Tensor weights;         // [B,K]
};

struct ForwardOptions {
  /// Differentiate into prompts and router. Attacks turn this off.
  bool track_params = true;
  /// Precomputed [K,N,d] text features; computed on the fly when undefined.
  Tensor text_features;
};

ForwardPass forward(const MoaptModel& model, const Tensor& images,
                    const Tensor& y_onehot, const ForwardOptions& opts = {});

/// Argmax class per row.
std::vector<int> predict(const Tensor& logits);

}  // namespace moapt
