// SPDX-License-Identifier: Apache-2.0

#include "moapt/prompts.hpp"

#include <cmath>

#include "moapt/rng.hpp"

namespace moapt {

namespace {

Tensor maybe_detach(const Tensor& t, bool track) { return track ? t : t.detach(); }

}  // namespace

PromptBank PromptBank::init(std::size_t K, std::size_t M, std::size_t e,
                            std::uint64_t seed) {
  if (K == 0 || M == 0 || e == 0)
    throw std::invalid_argument("prompt bank: K, M and e must be >= 1");
  PromptBank bank{K, M, e, {}};
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng(seed, "prompt-context", k);
    std::vector<double> v(M * e);
    for (auto& x : v) x = rng.normal(0.0, kContextInitStd);
    bank.contexts.push_back(Tensor::from({M, e}, std::move(v), true));
  }
  return bank;
}

Tensor PromptBank::prompt_tokens(std::size_t k, std::size_t n,
                                 const FrozenEncoders& enc) const {
  const auto cls = enc.class_embeddings().data();
  std::vector<double> cls_row(cls.begin() + static_cast<std::ptrdiff_t>(n * token_dim),
                              cls.begin() + static_cast<std::ptrdiff_t>((n + 1) * token_dim));
  return ad::concat_rows(
      {contexts.at(k), Tensor::from({1, token_dim}, std::move(cls_row))});
}

WeightRouter WeightRouter::init(std::size_t feature_dim, std::size_t hidden,
                                std::size_t K, double tau, std::uint64_t seed) {
  if (!(tau > 0.0)) throw std::invalid_argument("router: tau_w must be positive");
  if (feature_dim == 0 || hidden == 0 || K == 0)
    throw std::invalid_argument("router: dimensions must be positive");
  Rng rng(seed, "router");
  auto draw = [&rng](std::size_t fan_in, std::size_t fan_out) {
    std::vector<double> v(fan_in * fan_out);
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return Tensor::from({fan_in, fan_out}, std::move(v), true);
  };
  WeightRouter r;
  r.w1 = draw(feature_dim, hidden);
  r.b1 = Tensor::zeros({hidden}, true);
  r.w2 = draw(hidden, K);
  r.b2 = Tensor::zeros({K}, true);
  r.tau = tau;
  return r;
}

Tensor text_features(const PromptBank& bank, const FrozenEncoders& enc,
                     bool track_params) {
  const auto& es = enc.spec();
  if (bank.token_dim != es.token_dim || bank.context_length != es.context_length)
    throw ad::ShapeError("text_features: bank (M=" + std::to_string(bank.context_length) +
                         ", e=" + std::to_string(bank.token_dim) +
                         ") does not match encoder (M=" + std::to_string(es.context_length) +
                         ", e=" + std::to_string(es.token_dim) + ")");
  const std::size_t N = es.n_classes, flat = bank.context_length * bank.token_dim;
  const auto& classes = enc.class_embeddings();
  std::vector<Tensor> per_prompt;
  per_prompt.reserve(bank.count);
  for (const auto& ctx : bank.contexts) {
    auto row = ad::reshape(maybe_detach(ctx, track_params), {flat});
    per_prompt.push_back(ad::concat_cols(ad::repeat_rows(row, N), classes));
  }
  auto feats = enc.encode_text_rows(ad::concat_rows(per_prompt));
  return ad::reshape(feats, {bank.count, N, es.feature_dim});
}

Tensor router_logits(const WeightRouter& router, const Tensor& z,
                     bool track_params) {
  if (z.rank() != 2 || z.dim(1) != router.w1.dim(0))
    throw ad::ShapeError("route: expected [B," + std::to_string(router.w1.dim(0)) +
                         "] image features, got " + ad::to_string(z.shape()));
  auto h = ad::tanh(ad::add_row(ad::matmul(z, maybe_detach(router.w1, track_params)),
                                maybe_detach(router.b1, track_params)));
  return ad::add_row(ad::matmul(h, maybe_detach(router.w2, track_params)),
                     maybe_detach(router.b2, track_params));
}

Tensor route(const WeightRouter& router, const Tensor& z, bool track_params) {
  if (!(router.tau > 0.0))
    throw std::invalid_argument("route: tau_w must be positive");
  return ad::softmax(router_logits(router, z, track_params), router.tau);
}

Tensor uniform_weights(std::size_t batch, std::size_t K) {
  return Tensor::filled({batch, K}, 1.0 / static_cast<double>(K));
}

Tensor mix(const Tensor& features, const Tensor& weights) {
  if (features.rank() != 3 || weights.rank() != 2 ||
      features.dim(0) != weights.dim(1))
    throw ad::ShapeError("mix: incompatible shapes " + ad::to_string(features.shape()) +
                         " and " + ad::to_string(weights.shape()));
  const std::size_t K = features.dim(0), N = features.dim(1), d = features.dim(2),
                    B = weights.dim(0);
  auto flat = ad::reshape(features, {K, N * d});
  return ad::reshape(ad::matmul(weights, flat), {B, N, d});
}

}  // namespace moapt
