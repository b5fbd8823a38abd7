// SPDX-License-Identifier: Apache-2.0

#include "moapt/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "moapt/binio.hpp"
#include "moapt/rng.hpp"

namespace moapt {

namespace {

constexpr const char* kCheckpointMagic = "MOAPTCK\x01";
constexpr std::uint64_t kCheckpointVersion = 1;

double percent(std::size_t correct, std::size_t total) {
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const auto pred = predict(logits);
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i];
  return c;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw std::invalid_argument("train: lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("train: momentum must lie in [0,1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_eps > 0.0))
    throw std::invalid_argument("train: invalid adam hyper-parameters");
  if (!(tau_w > 0.0)) throw std::invalid_argument("train: tau_w must be positive");
  if (prompt_count < 1 || context_length < 1)
    throw std::invalid_argument("train: K and M must be >= 1");
  if (!(logit_scale > 0.0)) throw std::invalid_argument("train: logit_scale must be positive");
  attack.validate();
}

EncoderSpec encoder_spec(const TrainConfig& cfg, const DatasetSpec& data) {
  EncoderSpec s;
  s.n_classes = data.n_classes;
  s.image_dim = data.image_dim;
  s.feature_dim = cfg.dims.feature_dim;
  s.token_dim = cfg.dims.token_dim;
  s.hidden_dim = cfg.dims.hidden_dim;
  s.context_length = cfg.context_length;
  s.weight_seed = derive_seed(cfg.seeds.init, "backbone");
  return s;
}

TrainState init_state(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  TrainState st;
  st.model.encoders =
      std::make_shared<const FrozenEncoders>(encoder_spec(cfg, data.spec), data.prototypes);
  st.model.bank = PromptBank::init(cfg.prompt_count, cfg.context_length,
                                   cfg.dims.token_dim, derive_seed(cfg.seeds.init, "prompts"));
  st.model.router =
      WeightRouter::init(cfg.dims.feature_dim, cfg.dims.router_width(), cfg.prompt_count,
                         cfg.tau_w, derive_seed(cfg.seeds.init, "router-init"));
  st.model.routing = cfg.routing;
  st.model.logit_scale = cfg.logit_scale;
  return st;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t data_seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(data_seed, "minibatch-order", epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

double learning_rate(const TrainConfig& cfg, std::size_t step,
                     std::size_t steps_per_epoch) {
  if (cfg.schedule == LrSchedule::constant) return cfg.lr;
  const double total = static_cast<double>(cfg.epochs * steps_per_epoch);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
}

EpochResult train_epoch(TrainState& state, const Dataset& data,
                        const TrainConfig& cfg) {
  cfg.validate();
  auto& model = state.model;
  if (data.spec.n_classes != model.encoders->spec().n_classes ||
      data.spec.image_dim != model.encoders->spec().image_dim)
    throw std::invalid_argument("train_epoch: dataset dims do not match the model");

  const std::size_t n = data.train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const auto order = epoch_order(n, cfg.seeds.data, state.epochs_done);
  auto params = model.parameters();
  const bool adam = cfg.optimizer == Optimizer::adam;
  if ((adam || cfg.momentum > 0.0) && state.velocity.empty())
    for (const auto& p : params) state.velocity.emplace_back(p.size(), 0.0);
  if (adam && state.second_moment.empty())
    for (const auto& p : params) state.second_moment.emplace_back(p.size(), 0.0);

  EpochResult result;
  double loss_sum = 0.0;
  std::size_t clean_ok = 0, robust_ok = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    const std::vector<std::size_t> rows(
        order.begin() + static_cast<std::ptrdiff_t>(start),
        order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
    const auto batch = data.train.gather(rows);
    const auto y = batch.one_hot();

    // One text-feature evaluation per minibatch, shared by attack and update.
    auto feats = text_features(model.bank, *model.encoders, true);
    ++state.text_feature_evals;

    auto diverged = [&](const std::string& why) {
      return TrainingDiverged(why + " at step " + std::to_string(state.step) +
                              ", parameter checksum " + hex(model.parameter_checksum()));
    };
    Tensor adv;
    ForwardPass fp;
    try {
      Rng attack_rng(cfg.seeds.attack, "train-attack", state.step);
      adv = pgd(model, batch, cfg.attack, attack_rng, feats);
      for (auto& p : params) p.zero_grad();
      fp = forward(model, adv, y, {true, feats});
    } catch (const ad::GradError& e) {
      // NaN guards inside the primitives fire before the loss exists.
      throw diverged(e.what());
    }
    const double loss = fp.out.loss.item();
    if (!std::isfinite(loss)) throw diverged("non-finite loss");
    fp.out.loss.backward();

    // Router first, then contexts; parameters() lists them in that order.
    const double lr = learning_rate(cfg, state.step, steps_per_epoch);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      const auto g = p.grad();
      if (adam) {
        auto& m1 = state.velocity[i];
        auto& m2 = state.second_moment[i];
        const double t = static_cast<double>(state.step + 1);
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
        for (std::size_t j = 0; j < w.size(); ++j) {
          m1[j] = cfg.adam_beta1 * m1[j] + (1.0 - cfg.adam_beta1) * g[j];
          m2[j] = cfg.adam_beta2 * m2[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
          w[j] -= lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + cfg.adam_eps);
        }
      } else if (cfg.momentum > 0.0) {
        auto& v = state.velocity[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = cfg.momentum * v[j] + g[j];
          w[j] -= lr * v[j];
        }
      } else {
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
      }
    }

    robust_ok += count_correct(fp.out.logits, batch.labels);
    auto clean = forward(model, batch.images, y, {false, Tensor{}});
    clean_ok += count_correct(clean.out.logits, batch.labels);
    loss_sum += loss;
    result.step_losses.push_back(loss);
    ++state.step;
  }
  for (auto& p : params) p.zero_grad();

  ++state.epochs_done;
  result.record = {state.epochs_done, loss_sum / static_cast<double>(result.step_losses.size()),
                   percent(clean_ok, n), percent(robust_ok, n)};
  state.history.push_back(result.record);
  return result;
}

std::string metrics_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["clean_acc"] = r.clean_acc;
  j["robust_acc"] = r.robust_acc;
  return j.dump();
}

void resume(TrainState& state, const TrainConfig& cfg, const Dataset& data,
            const FitOptions& opts) {
  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    auto mode = state.epochs_done == 0 ? std::ios::trunc : std::ios::app;
    log.open(opts.out_dir / "metrics.jsonl", std::ios::out | mode);
    if (!log) throw std::runtime_error("cannot open metrics log in " + opts.out_dir.string());
  }
  while (state.epochs_done < cfg.epochs) {
    const auto res = train_epoch(state, data, cfg);
    if (log) log << metrics_line(res.record) << '\n' << std::flush;
  }
  if (!opts.out_dir.empty()) save_checkpoint(state, cfg, opts.out_dir / "checkpoint.bin");
}

TrainState fit(const TrainConfig& cfg, const Dataset& data, const FitOptions& opts) {
  auto state = init_state(cfg, data);
  resume(state, cfg, data, opts);
  return state;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const TrainState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  const auto& m = state.model;
  const auto& es = m.encoders->spec();
  binio::Writer w(path);
  w.bytes(kCheckpointMagic);
  w.u64(kCheckpointVersion);
  for (auto v : {es.n_classes, es.image_dim, es.feature_dim, es.token_dim,
                 es.hidden_dim, es.context_length})
    w.u64(v);
  w.u64(es.weight_seed);
  w.f64s(m.encoders->class_embeddings().data());
  w.u64(m.bank.count);
  w.u64(m.router.w1.dim(1));
  w.f64(m.router.tau);
  w.f64(m.logit_scale);
  w.u64(m.routing == RoutingMode::router ? 0 : 1);
  w.u64(cfg.seeds.data);
  w.u64(cfg.seeds.init);
  w.u64(cfg.seeds.attack);
  w.u64(state.step);
  w.u64(state.epochs_done);
  w.u64(state.text_feature_evals);
  for (const auto& p : m.parameters()) w.f64s(p.data());
  w.u64(state.velocity.size());
  for (const auto& v : state.velocity) w.f64s(v);
  w.u64(state.second_moment.size());
  for (const auto& v : state.second_moment) w.f64s(v);
  w.u64(state.history.size());
  for (const auto& r : state.history) {
    w.u64(r.epoch);
    w.f64(r.train_loss);
    w.f64(r.clean_acc);
    w.f64(r.robust_acc);
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect(kCheckpointMagic);
  if (const auto v = r.u64(); v != kCheckpointVersion)
    throw binio::FormatError(path.string() + ": unsupported checkpoint version " +
                             std::to_string(v));
  Checkpoint ck;
  auto& es = ck.encoders;
  es.n_classes = r.u64();
  es.image_dim = r.u64();
  es.feature_dim = r.u64();
  es.token_dim = r.u64();
  es.hidden_dim = r.u64();
  es.context_length = r.u64();
  es.weight_seed = r.u64();
  es.validate();
  auto class_tokens = Tensor::from({es.n_classes, es.token_dim},
                                   r.f64s(es.n_classes * es.token_dim));

  auto& cfg = ck.config;
  cfg.prompt_count = r.u64();
  cfg.context_length = es.context_length;
  cfg.dims = {es.feature_dim, es.token_dim, es.hidden_dim, r.u64()};
  cfg.tau_w = r.f64();
  cfg.logit_scale = r.f64();
  const auto routing = r.u64();
  if (routing > 1) throw binio::FormatError(path.string() + ": bad routing mode");
  cfg.routing = routing == 0 ? RoutingMode::router : RoutingMode::uniform;
  cfg.seeds.data = r.u64();
  cfg.seeds.init = r.u64();
  cfg.seeds.attack = r.u64();

  auto& st = ck.state;
  st.step = r.u64();
  st.epochs_done = r.u64();
  st.text_feature_evals = r.u64();
  const std::size_t K = cfg.prompt_count, M = es.context_length, e = es.token_dim,
                    d = es.feature_dim, hr = cfg.dims.router_hidden;
  if (K == 0 || hr == 0) throw binio::FormatError(path.string() + ": zero dimension");
  auto param = [&r](ad::Shape shape) {
    const auto n = ad::numel(shape);
    return Tensor::from(std::move(shape), r.f64s(n), true);
  };
  auto& m = st.model;
  m.encoders = std::make_shared<const FrozenEncoders>(es, class_tokens);
  m.router.w1 = param({d, hr});
  m.router.b1 = param({hr});
  m.router.w2 = param({hr, K});
  m.router.b2 = param({K});
  m.router.tau = cfg.tau_w;
  m.bank = {K, M, e, {}};
  for (std::size_t k = 0; k < K; ++k) m.bank.contexts.push_back(param({M, e}));
  m.routing = cfg.routing;
  m.logit_scale = cfg.logit_scale;

  const auto nvel = r.u64();
  const auto params = m.parameters();
  if (nvel != 0 && nvel != params.size())
    throw binio::FormatError(path.string() + ": velocity buffer count mismatch");
  for (std::size_t i = 0; i < nvel; ++i) st.velocity.push_back(r.f64s(params[i].size()));
  const auto nsec = r.u64();
  if (nsec != 0 && nsec != params.size())
    throw binio::FormatError(path.string() + ": moment buffer count mismatch");
  for (std::size_t i = 0; i < nsec; ++i) st.second_moment.push_back(r.f64s(params[i].size()));
  const auto nhist = r.u64();
  for (std::size_t i = 0; i < nhist; ++i) {
    EpochRecord rec;
    rec.epoch = r.u64();
    rec.train_loss = r.f64();
    rec.clean_acc = r.f64();
    rec.robust_acc = r.f64();
    st.history.push_back(rec);
  }
  r.expect_end();
  return ck;
}

}  // namespace moapt
