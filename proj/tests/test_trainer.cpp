// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "moapt/binio.hpp"
#include "moapt/trainer.hpp"

using namespace moapt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "moapt_test_trainer" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_params(const MoaptModel& a, const MoaptModel& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].size() != pb[i].size() ||
        std::memcmp(pa[i].data().data(), pb[i].data().data(), pa[i].size() * 8) != 0)
      return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const auto data = generate_dataset(fixture::small_data());
  auto cfg = fixture::small_train();
  cfg.lr = 0.0;
  auto st = init_state(cfg, data);
  const auto before = st.model.clone();
  train_epoch(st, data, cfg);
  CHECK(same_params(st.model, before));
  CHECK(st.step == 4);
}

TEST_CASE("text features are computed once per minibatch") {
  const auto data = generate_dataset(fixture::small_data());
  auto cfg = fixture::small_train();
  cfg.batch_size = 5;  // 64 samples -> 13 minibatches, last one short
  auto st = init_state(cfg, data);
  const auto res = train_epoch(st, data, cfg);
  CHECK(res.step_losses.size() == 13);
  CHECK(st.text_feature_evals == 13);
}

TEST_CASE("encoders are untouched by training") {
  const auto data = generate_dataset(fixture::small_data());
  const auto cfg = fixture::small_train();
  auto st = init_state(cfg, data);
  const auto before = st.model.encoders->checksum();
  resume(st, cfg, data);
  CHECK(st.model.encoders->checksum() == before);
  for (const auto& t : st.model.encoders->text_weights()) CHECK_FALSE(t.has_grad());
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK(a != epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 4, 0));
}

TEST_CASE("learning-rate schedules") {
  TrainConfig cfg;
  cfg.lr = 0.8;
  cfg.epochs = 2;
  CHECK(learning_rate(cfg, 5, 10) == 0.8);
  cfg.schedule = LrSchedule::cosine;
  CHECK(learning_rate(cfg, 0, 10) == doctest::Approx(0.8));
  CHECK(learning_rate(cfg, 10, 10) == doctest::Approx(0.4));
  CHECK(learning_rate(cfg, 20, 10) == doctest::Approx(0.0));
}

TEST_CASE("same config and seeds give identical histories and files") {
  const auto data = generate_dataset(fixture::small_data(1));
  const auto cfg = fixture::small_train(1);
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  const auto a = fit(cfg, data, {d1});
  const auto b = fit(cfg, data, {d2});
  CHECK(same_params(a.model, b.model));
  CHECK(slurp(d1 / "metrics.jsonl") == slurp(d2 / "metrics.jsonl"));
  CHECK(slurp(d1 / "checkpoint.bin") == slurp(d2 / "checkpoint.bin"));
  const auto log = slurp(d1 / "metrics.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
}

TEST_CASE("checkpoint round-trip then resume equals an uninterrupted run") {
  for (auto opt : {Optimizer::sgd, Optimizer::adam}) {
    CAPTURE(static_cast<int>(opt));
    const auto data = generate_dataset(fixture::small_data(2));
    auto cfg = fixture::small_train(2);
    cfg.optimizer = opt;
    if (opt == Optimizer::adam) cfg.lr = 0.01;
    else cfg.momentum = 0.5;

    const auto full = fit(cfg, data);

    auto short_cfg = cfg;
    short_cfg.epochs = 2;
    const auto dir = scratch("resume");
    fit(short_cfg, data, {dir});
    auto ck = load_checkpoint(dir / "checkpoint.bin");
    CHECK(ck.state.epochs_done == 2);
    CHECK(ck.config.seeds == cfg.seeds);
    resume(ck.state, cfg, data, {dir});
    CHECK(same_params(ck.state.model, full.model));
    CHECK(ck.state.step == full.step);
    CHECK(ck.state.history.size() == 3);
    CHECK(ck.state.history.back().train_loss == full.history.back().train_loss);
    CHECK(ck.state.model.encoders->checksum() == full.model.encoders->checksum());
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto data = generate_dataset(fixture::small_data());
  auto cfg = fixture::small_train();
  cfg.epochs = 1;
  const auto dir = scratch("corrupt");
  fit(cfg, data, {dir});
  const auto path = dir / "checkpoint.bin";
  fs::resize_file(path, fs::file_size(path) - 3);
  CHECK_THROWS_AS(load_checkpoint(path), binio::FormatError);
  CHECK_THROWS(load_checkpoint(dir / "missing.bin"));
}

TEST_CASE("non-finite loss aborts with the step and a checksum") {
  const auto data = generate_dataset(fixture::small_data());
  const auto cfg = fixture::small_train();
  auto st = init_state(cfg, data);
  st.model.bank.contexts[0].mutable_data()[0] = std::nan("");
  try {
    resume(st, cfg, data);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("invalid training configs") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.tau_w = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("without an attack, training loss falls over 5 epochs (5 seeds)") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    CAPTURE(s);
    DatasetSpec spec;
    spec.seed = s;
    const auto data = generate_dataset(spec);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.attack = AttackConfig::training(0.0);
    cfg.seeds = {s, s, s};
    const auto st = fit(cfg, data);
    CHECK(st.history.back().train_loss < st.history.front().train_loss);
  }
}

TEST_CASE("default adversarial training lowers the robust loss (5 seeds)") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    CAPTURE(s);
    DatasetSpec spec;
    spec.seed = s;
    const auto data = generate_dataset(spec);
    TrainConfig cfg;
    cfg.seeds = {s, s, s};
    const auto st = fit(cfg, data);
    CHECK(st.history.size() == 30);
    CHECK(st.history.back().train_loss < st.history.front().train_loss);
  }
}
