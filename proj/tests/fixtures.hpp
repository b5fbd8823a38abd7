// SPDX-License-Identifier: Apache-2.0
//
// Small models and datasets shared by the tests.

#pragma once

#include <memory>

#include "moapt/objective.hpp"
#include "moapt/rng.hpp"
#include "moapt/synthworld.hpp"
#include "moapt/trainer.hpp"

namespace fixture {

using namespace moapt;

struct Dims {
  std::size_t B = 4, N = 3, K = 3, M = 2, d = 6, p = 5, e = 3, h = 6;
};

inline MoaptModel random_model(Rng& rng, const Dims& dm, bool uniform = false,
                               double tau = 0.7, double context_sd = 1.0) {
  EncoderSpec es;
  es.n_classes = dm.N;
  es.image_dim = dm.p;
  es.feature_dim = dm.d;
  es.token_dim = dm.e;
  es.hidden_dim = dm.h;
  es.context_length = dm.M;
  es.weight_seed = rng.below(1u << 30);
  std::vector<double> protos(dm.N * dm.p);
  for (auto& x : protos) x = rng.uniform();
  MoaptModel m;
  m.encoders = std::make_shared<FrozenEncoders>(es, protos);
  m.bank = PromptBank::init(dm.K, dm.M, dm.e, rng.below(1u << 30));
  for (auto& c : m.bank.contexts)
    for (auto& v : c.mutable_data()) v = rng.normal(0.0, context_sd);
  m.router = WeightRouter::init(dm.d, std::max<std::size_t>(1, dm.d / 2), dm.K, tau,
                                rng.below(1u << 30));
  for (auto& b : {m.router.b1, m.router.b2})
    for (auto& v : Tensor(b).mutable_data()) v = rng.normal(0.0, 0.3);
  m.routing = uniform ? RoutingMode::uniform : RoutingMode::router;
  return m;
}

inline LabeledBatch random_batch(Rng& rng, std::size_t B, std::size_t N, std::size_t p) {
  LabeledBatch b;
  std::vector<double> x(B * p);
  for (auto& v : x) v = rng.uniform();
  b.images = Tensor::from({B, p}, x);
  for (std::size_t i = 0; i < B; ++i) b.labels.push_back(static_cast<int>(rng.below(N)));
  b.n_classes = N;
  return b;
}

// A reduced benchmark that keeps unit tests quick.
inline DatasetSpec small_data(std::uint64_t seed = 0) {
  DatasetSpec s;
  s.train_per_class = 8;
  s.test_per_class = 8;
  s.seed = seed;
  return s;
}

inline TrainConfig small_train(std::uint64_t seed = 0) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.prompt_count = 3;
  c.context_length = 4;
  c.seeds = {seed, seed, seed};
  return c;
}

}  // namespace fixture
