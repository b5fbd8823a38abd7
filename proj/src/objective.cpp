// SPDX-License-Identifier: Apache-2.0

#include "moapt/objective.hpp"

#include <algorithm>
#include <cmath>

namespace moapt {

Tensor cosine_logits(const Tensor& image_features, const Tensor& text_features) {
  return ad::cosine_rows(image_features, text_features);
}

void validate_one_hot(const Tensor& y) {
  if (y.rank() != 2) throw std::invalid_argument("one-hot labels must be [B,N]");
  const std::size_t B = y.dim(0), N = y.dim(1);
  const auto v = y.data();
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t ones = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const double x = v[i * N + n];
      if (x == 1.0) ++ones;
      else if (x != 0.0) ones = 2;
    }
    if (ones != 1)
      throw std::invalid_argument("invalid one-hot row " + std::to_string(i));
  }
}

LossOutput moapt_loss(const Tensor& logits, const Tensor& y_onehot,
                      double logit_scale) {
  if (!(logit_scale > 0.0)) throw std::invalid_argument("logit_scale must be positive");
  if (y_onehot.shape() != logits.shape())
    throw ad::ShapeError("moapt_loss: logits " + ad::to_string(logits.shape()) +
                         " vs labels " + ad::to_string(y_onehot.shape()));
  validate_one_hot(y_onehot);
  auto scaled = logit_scale == 1.0 ? logits : ad::scale(logits, logit_scale);
  auto loss = ad::cross_entropy(scaled, y_onehot);
  return {loss, logits, ad::softmax(scaled.detach())};
}

std::vector<Tensor> MoaptModel::parameters() const {
  auto ps = router.parameters();
  for (const auto& c : bank.contexts) ps.push_back(c);
  return ps;
}

std::uint64_t MoaptModel::parameter_checksum() const {
  return checksum(parameters());
}

MoaptModel MoaptModel::clone() const {
  auto copy_param = [](const Tensor& t) {
    return Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad());
  };
  MoaptModel m = *this;
  for (auto& c : m.bank.contexts) c = copy_param(c);
  m.router.w1 = copy_param(router.w1);
  m.router.b1 = copy_param(router.b1);
  m.router.w2 = copy_param(router.w2);
  m.router.b2 = copy_param(router.b2);
  return m;
}

ForwardPass forward(const MoaptModel& model, const Tensor& images,
                    const Tensor& y_onehot, const ForwardOptions& opts) {
  const auto& enc = *model.encoders;
  auto feats = opts.text_features.defined()
                   ? opts.text_features
                   : text_features(model.bank, enc, opts.track_params);
  auto zv = enc.encode_image(images);
  auto w = model.routing == RoutingMode::router
               ? route(model.router, zv, opts.track_params)
               : uniform_weights(images.dim(0), model.bank.count);
  auto zt = mix(feats, w);
  auto out = moapt_loss(cosine_logits(zv, zt), y_onehot, model.logit_scale);
  return {std::move(out), std::move(zv), std::move(w)};
}

std::vector<int> predict(const Tensor& logits) {
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  const auto v = logits.data();
  std::vector<int> out(B);
  for (std::size_t i = 0; i < B; ++i) {
    const auto row = v.subspan(i * N, N);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace moapt
