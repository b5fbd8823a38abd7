// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "moapt/attacks.hpp"
#include "moapt/eval.hpp"
#include "moapt/rng.hpp"
#include "moapt/theory.hpp"
#include "moapt/trainer.hpp"
#include "oracles.hpp"

using namespace moapt;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s -- %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// ------------------------------------------------------------------ 1

void gradient_correctness() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int g = 0; g < 100; ++g) {
    fixture::Dims dm;
    dm.B = 1 + rng.below(4);
    dm.N = 2 + rng.below(3);
    dm.K = 1 + rng.below(4);
    dm.M = 1 + rng.below(4);
    dm.d = 2 + rng.below(7);
    dm.p = 2 + rng.below(5);
    dm.e = 1 + rng.below(3);
    dm.h = 2 + rng.below(5);
    const bool uniform = rng.below(5) == 0;
    const double tau = 0.3 + 1.5 * rng.uniform();
    auto model = fixture::random_model(rng, dm, uniform, tau);
    model.logit_scale = 1.0 + 9.0 * rng.uniform();
    const auto batch = fixture::random_batch(rng, dm.B, dm.N, dm.p);
    auto images = Tensor::from(batch.images.shape(),
                               {batch.images.data().begin(), batch.images.data().end()}, true);
    const auto y = batch.one_hot();
    auto leaves = model.parameters();
    leaves.push_back(images);
    const auto rep = oracle::fd_check(leaves, [&] { return forward(model, images, y).out.loss; });
    worst = std::max(worst, rep.max_rel);
    checked += rep.checked;
  }
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", worst < 1e-4 && secs < 60.0,
         format("100 graphs, %zu partials, max rel err %.3e (< 1e-4), %.1f s (< 60 s)", checked,
                worst, secs));
}

// ------------------------------------------------------------------ 2

void theorem_suite() {
  const auto t0 = Clock::now();
  const auto rep = theory::monte_carlo({});
  const auto k2 = theory::verify_theorem1({{0.2, 0.8}, 1.0});
  const double secs = seconds_since(t0);
  const bool ok = rep.draws == 10000 && rep.ok() && std::abs(k2.weighted - 0.41259) <= 1e-5 &&
                  secs < 5.0;
  report(2, "theorem suite", ok,
         format("%zu draws, %zu violations, %zu/%zu strict failures, %zu lemma disagreements, "
                "K=2 weighted %.6f, %.2f s",
                rep.draws, rep.violations, rep.strict_failures, rep.strict_expected,
                rep.lemma_disagreements, k2.weighted, secs));
}

// ------------------------------------------------------------------ 3

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

void attack_contracts() {
  Rng rng(303);
  std::size_t batches = 0, budget_bad = 0, identity_bad = 0, checksum_bad = 0, nondet = 0,
              zero_cases = 0;
  while (batches < 1000) {
    fixture::Dims dm;
    dm.B = 1 + rng.below(6);
    dm.N = 2 + rng.below(3);
    dm.K = 1 + rng.below(3);
    const auto model = fixture::random_model(rng, dm, rng.below(3) == 0);
    const auto batch = fixture::random_batch(rng, dm.B, dm.N, dm.p);
    const auto params = model.parameter_checksum();
    const auto frozen = model.encoders->checksum();
    const bool zero = rng.below(10) == 0;
    const double eps = zero ? 0.0 : (1 + rng.below(16)) / 255.0;
    AttackConfig cfg = rng.below(2) ? AttackConfig::training(eps)
                                    : AttackConfig::evaluation(eps, 1 + rng.below(10));
    const std::uint64_t seed = rng.below(1u << 20);
    for (int kind = 0; kind < 2 && batches < 1000; ++kind, ++batches) {
      Rng r1(seed), r2(seed);
      const auto a = kind == 0 ? pgd(model, batch, cfg, r1) : fgsm(model, batch, eps);
      const auto b = kind == 0 ? pgd(model, batch, cfg, r2) : fgsm(model, batch, eps);
      if (!same_bits(a, b)) ++nondet;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i] - batch.images[i]) > eps + 1e-9 || a[i] < 0.0 || a[i] > 1.0) {
          ++budget_bad;
          break;
        }
      if (zero) {
        ++zero_cases;
        if (!same_bits(a, batch.images)) ++identity_bad;
      }
      if (model.parameter_checksum() != params || model.encoders->checksum() != frozen)
        ++checksum_bad;
    }
  }
  report(3, "attack contracts", budget_bad + identity_bad + checksum_bad + nondet == 0,
         format("%zu batches: %zu budget/box violations, %zu/%zu eps=0 mismatches, %zu "
                "checksum changes, %zu nondeterministic",
                batches, budget_bad, identity_bad, zero_cases, checksum_bad, nondet));
}

// ------------------------------------------------------------------ 4

// Single-prompt adversarial prompt tuning written directly against the
// frozen encoders and the differentiation primitives, with its own prompt
// assembly, loss, attack and update loop.
std::vector<double> reference_apt_losses(const Dataset& data, const TrainConfig& cfg,
                                         std::size_t steps) {
  EncoderSpec es;
  es.n_classes = data.spec.n_classes;
  es.image_dim = data.spec.image_dim;
  es.feature_dim = cfg.dims.feature_dim;
  es.token_dim = cfg.dims.token_dim;
  es.hidden_dim = cfg.dims.hidden_dim;
  es.context_length = cfg.context_length;
  es.weight_seed = derive_seed(cfg.seeds.init, "backbone");
  const FrozenEncoders enc(es, data.prototypes);
  const std::size_t N = es.n_classes, M = es.context_length, e = es.token_dim,
                    d = es.feature_dim;

  std::vector<double> ctx(M * e);
  Rng init(derive_seed(cfg.seeds.init, "prompts"), "prompt-context", 0);
  for (auto& v : ctx) v = init.normal(0.0, kContextInitStd);

  const auto cls = enc.class_embeddings().data();
  auto class_features = [&](const Tensor& context) {
    std::vector<Tensor> rows;
    for (std::size_t n = 0; n < N; ++n) {
      auto tok = Tensor::from({1, e}, {cls.begin() + n * e, cls.begin() + (n + 1) * e});
      rows.push_back(ad::reshape(enc.encode_text(ad::concat_rows({context, tok})), {1, d}));
    }
    return ad::concat_rows(rows);  // [N,d]
  };
  auto loss_of = [&](const Tensor& images, const Tensor& feats, const Tensor& y) {
    const std::size_t B = images.dim(0);
    auto zv = enc.encode_image(images);
    auto zt = ad::reshape(ad::repeat_rows(ad::reshape(feats, {N * d}), B), {B, N, d});
    auto s = ad::scale(ad::cosine_rows(zv, zt), cfg.logit_scale);
    auto lse = ad::log(ad::matmul(ad::exp(s), Tensor::filled({N, 1}, 1.0)));
    auto nll = ad::sub(ad::sum(lse), ad::sum(ad::mul(s, y)));
    return ad::scale(nll, 1.0 / static_cast<double>(B));
  };

  const std::size_t n = data.train.size();
  std::vector<double> losses;
  std::size_t step = 0;
  for (std::size_t epoch = 0; losses.size() < steps; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle(cfg.seeds.data, "minibatch-order", epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < n && losses.size() < steps; start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, n - start);
      std::vector<double> x, y(B * N, 0.0);
      for (std::size_t i = 0; i < B; ++i) {
        const auto row = order[start + i];
        const auto img = data.train.images.data().subspan(row * es.image_dim, es.image_dim);
        x.insert(x.end(), img.begin(), img.end());
        y[i * N + static_cast<std::size_t>(data.train.labels[row])] = 1.0;
      }
      const auto Y = Tensor::from({B, N}, y);

      // Attack against the frozen current context.
      const auto fixed = class_features(Tensor::from({M, e}, ctx));
      const double eps = cfg.attack.epsilon;
      std::vector<double> adv = x;
      for (std::size_t s = 0; s < cfg.attack.steps && eps > 0.0; ++s) {
        auto probe = Tensor::from({B, es.image_dim}, adv, true);
        loss_of(probe, fixed, Y).backward();
        const auto g = probe.grad();
        for (std::size_t i = 0; i < adv.size(); ++i) {
          const double sg = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
          double v = adv[i] + cfg.attack.step_size * sg;
          v = std::min(std::max(v, x[i] - eps), x[i] + eps);
          adv[i] = std::min(std::max(v, 0.0), 1.0);
        }
      }

      auto context = Tensor::from({M, e}, ctx, true);
      auto loss = loss_of(Tensor::from({B, es.image_dim}, adv), class_features(context), Y);
      losses.push_back(loss.item());
      loss.backward();
      const auto g = context.grad();
      for (std::size_t i = 0; i < ctx.size(); ++i) ctx[i] -= cfg.lr * g[i];
      ++step;
    }
  }
  return losses;
}

void apt_reduction() {
  const auto data = generate_dataset(DatasetSpec{});
  TrainConfig cfg;
  cfg.prompt_count = 1;
  cfg.routing = RoutingMode::uniform;
  cfg.seeds = {7, 8, 9};
  const std::size_t steps = 100;

  auto st = init_state(cfg, data);
  std::vector<double> impl;
  while (impl.size() < steps) {
    const auto r = train_epoch(st, data, cfg);
    impl.insert(impl.end(), r.step_losses.begin(), r.step_losses.end());
  }
  impl.resize(steps);
  const auto ref = reference_apt_losses(data, cfg, steps);
  double worst = 0.0;
  for (std::size_t i = 0; i < steps; ++i) worst = std::max(worst, std::abs(impl[i] - ref[i]));
  report(4, "APT reduction oracle", worst <= 1e-9 && ref.size() == steps,
         format("%zu steps, max |loss - reference| = %.3e (<= 1e-9), first loss %.6f, last %.6f",
                steps, worst, impl.front(), impl.back()));
}

// ------------------------------------------------------------------ 5

void degeneration() {
  const Benchmark bench;
  const auto data = bench.dataset(0);
  auto cfg = bench.train;
  cfg.seeds = bench.seeds_for(0);
  const auto dir = fs::temp_directory_path() / "moapt_acceptance" / "degeneration";
  fs::remove_all(dir);
  fit(cfg, data, {dir});

  auto hot = load_checkpoint(dir / "checkpoint.bin").state.model;
  auto flat = load_checkpoint(dir / "checkpoint.bin").state.model;
  hot.router.tau = 1e6;
  flat.routing = RoutingMode::uniform;
  auto opts = bench.eval;
  opts.attack_seed = cfg.seeds.attack;
  const auto a = evaluate(hot, data.test, opts);
  const auto b = evaluate(flat, data.test, opts);
  const double gap = std::max({std::abs(a.clean_acc - b.clean_acc),
                               std::abs(a.robust_acc_fgsm - b.robust_acc_fgsm),
                               std::abs(a.robust_acc_pgd - b.robust_acc_pgd)});
  report(5, "degeneration tau=1e6 vs uniform", gap <= 1e-6,
         format("clean %.4f/%.4f, fgsm %.4f/%.4f, pgd %.4f/%.4f, max gap %.2e", a.clean_acc,
                b.clean_acc, a.robust_acc_fgsm, b.robust_acc_fgsm, a.robust_acc_pgd,
                b.robust_acc_pgd, gap));
}

// ------------------------------------------------------------------ 6-8

void length_vs_number() {
  const auto t0 = Clock::now();
  const auto res = sweep_length_vs_number(SweepSpec::default_groups(), Benchmark{});
  const double secs = seconds_since(t0);
  const auto& g = res.groups.at(0);
  const double base = g[0].pgd().mean, two = g[1].pgd().mean, four = g[2].pgd().mean;
  const bool ok = two >= base - 0.5 && four >= base - 0.5 && secs < 900.0;
  report(6, "length vs number (M,K) = (32,1),(16,2),(8,4)", ok,
         format("pgd %.2f / %.2f / %.2f, need (16,2),(8,4) >= %.2f; %.1f s", base, two, four,
                base - 0.5, secs));
}

void component_ladder_check() {
  const auto cells = component_ladder(Benchmark{});
  const double a = cells[0].pgd().mean, b = cells[1].pgd().mean, c = cells[2].pgd().mean;
  report(7, "component ladder baseline -> +mixture -> +router", b >= a - 0.5 && c >= b - 0.5,
         format("pgd %.2f -> %.2f -> %.2f (0.5 slack)", a, b, c));
}

void epsilon_monotonicity() {
  const auto sweep = epsilon_sweep(Benchmark{}, default_epsilons());
  bool ok = true;
  std::string means;
  std::vector<double> mean(sweep.epsilons.size(), 0.0);
  for (const auto& per_seed : sweep.robust_pgd) {
    for (std::size_t j = 0; j < per_seed.size(); ++j) {
      mean[j] += per_seed[j] / static_cast<double>(sweep.robust_pgd.size());
      if (j > 0 && per_seed[j] > per_seed[j - 1] + 1.0) ok = false;
    }
  }
  for (std::size_t j = 0; j < mean.size(); ++j) {
    if (j > 0 && mean[j] > mean[j - 1] + 1.0) ok = false;
    means += format("%s%.2f", j ? " / " : "", mean[j]);
  }
  report(8, "epsilon monotonicity 4,8,12,16 /255", ok && sweep.robust_pgd.size() == 5,
         "pgd " + means + " (every seed and the mean non-increasing, 1% slack)");
}

// ------------------------------------------------------------------ 9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void full_run(const fs::path& dir) {
  fs::remove_all(dir);
  const Benchmark bench;
  const auto data = bench.dataset(0);
  auto cfg = bench.train;
  cfg.seeds = bench.seeds_for(0);
  const auto st = fit(cfg, data, {dir});
  auto opts = bench.eval;
  opts.attack_seed = cfg.seeds.attack;
  const auto m = evaluate(st.model, data.test, opts);
  std::ofstream(dir / "eval.csv", std::ios::binary)
      << format("%.17g,%.17g,%.17g,%zu\n", m.clean_acc, m.robust_acc_fgsm, m.robust_acc_pgd,
                m.samples);
}

void reproducibility() {
  const auto root = fs::temp_directory_path() / "moapt_acceptance";
  full_run(root / "run_a");
  full_run(root / "run_b");
  bool ok = true;
  std::string detail;
  for (const char* f : {"metrics.jsonl", "eval.csv", "checkpoint.bin"}) {
    const auto a = slurp(root / "run_a" / f), b = slurp(root / "run_b" / f);
    const bool same = !a.empty() && a == b;
    ok &= same;
    detail += format("%s%s %s (%zu bytes)", detail.empty() ? "" : ", ", f,
                     same ? "identical" : "DIFFERENT", a.size());
  }
  report(9, "reproducibility", ok, detail);
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria = {
      gradient_correctness, theorem_suite,          attack_contracts,
      apt_reduction,        degeneration,           length_vs_number,
      component_ladder_check, epsilon_monotonicity, reproducibility};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), "exception", false, e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
