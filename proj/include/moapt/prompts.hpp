// SPDX-License-Identifier: Apache-2.0
//
// Mixture prompt bank, conditional prompt weight router and the per-image
// mixture of text features.
//
// Prompt k for class n is the token sequence [V]^k_1 .. [V]^k_M followed by
// the frozen class token C_n (class token at the end). The router maps an
// image feature to K weights, softmax(F_w(z_v) / tau_w), shared across all
// classes of that image.

#pragma once

#include <cstdint>
#include <vector>

#include "moapt/diffcore.hpp"
#include "moapt/synthworld.hpp"

namespace moapt {

/// Initial standard deviation of context tokens.
inline constexpr double kContextInitStd = 0.02;

struct PromptBank {
  std::size_t count = 0;           // K
  std::size_t context_length = 0;  // M
  std::size_t token_dim = 0;       // e
  std::vector<Tensor> contexts;    // K tensors of shape [M,e], requires_grad

  static PromptBank init(std::size_t K, std::size_t M, std::size_t e,
                         std::uint64_t seed);

  std::size_t parameter_count() const { return count * context_length * token_dim; }
  std::vector<Tensor> parameters() const { return contexts; }
  /// Full token sequence for class n under prompt k: [(M+1),e].
  Tensor prompt_tokens(std::size_t k, std::size_t n,
                       const FrozenEncoders& enc) const;
};

struct WeightRouter {
  Tensor w1, b1;  // [d,h_r], [h_r]
  Tensor w2, b2;  // [h_r,K], [K]
  double tau = 0.7;

  /// Weights ~ N(0, 1/fan_in), zero biases.
  static WeightRouter init(std::size_t feature_dim, std::size_t hidden,
                           std::size_t K, double tau, std::uint64_t seed);

  std::size_t prompt_count() const { return w2.dim(1); }
  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

/// F_t(t^k_n) for every (k,n): [K,N,d]. With track_params=false the contexts
/// enter as constants and the result carries no gradient path.
Tensor text_features(const PromptBank& bank, const FrozenEncoders& enc,
                     bool track_params = true);

/// Router logits before the temperature: [B,K].
Tensor router_logits(const WeightRouter& router, const Tensor& image_features,
                     bool track_params = true);

/// Per-image prompt weights: [B,K], rows on the probability simplex.
Tensor route(const WeightRouter& router, const Tensor& image_features,
             bool track_params = true);

/// Constant 1/K weights: [B,K].
Tensor uniform_weights(std::size_t batch, std::size_t K);

/// z_t^{n,i} = sum_k w_k^i F_t(t^k_n): features [K,N,d], weights [B,K] -> [B,N,d].
Tensor mix(const Tensor& features, const Tensor& weights);

}  // namespace moapt
