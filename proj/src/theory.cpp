// SPDX-License-Identifier: Apache-2.0

#include "moapt/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "moapt/rng.hpp"

namespace moapt::theory {

void RiskVector::validate() const {
  if (risks.size() < 2) throw std::invalid_argument("risk vector: K must be >= 2");
  for (double r : risks)
    if (!(r >= 0.0) || !std::isfinite(r))
      throw std::invalid_argument("risk vector: risks must be finite and >= 0");
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw std::invalid_argument("risk vector: eta must be positive");
}

std::vector<double> routed_weights(const RiskVector& rv) {
  rv.validate();
  // The common 1/K offset of the pre-softmax weights cancels; shift by the
  // minimum risk instead so the largest exponent is 0.
  const double rmin = *std::min_element(rv.risks.begin(), rv.risks.end());
  std::vector<double> w(rv.risks.size());
  double z = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = std::exp(-rv.eta * (rv.risks[k] - rmin));
    z += w[k];
  }
  for (auto& x : w) x /= z;
  return w;
}

TheoremCheck verify_theorem1(const RiskVector& rv) {
  const auto w = routed_weights(rv);
  TheoremCheck c;
  for (std::size_t k = 0; k < w.size(); ++k) c.weighted += w[k] * rv.risks[k];
  c.uniform = std::accumulate(rv.risks.begin(), rv.risks.end(), 0.0) /
              static_cast<double>(rv.risks.size());
  c.holds = c.weighted <= c.uniform + kTolerance;
  c.strict = c.weighted < c.uniform - kTolerance;
  return c;
}

double key_lemma_lhs(const std::vector<double>& risks, double eta) {
  std::vector<double> e(risks.size());
  for (std::size_t k = 0; k < risks.size(); ++k) e[k] = std::exp(-eta * risks[k]);
  const double mean_e =
      std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  double lhs = 0.0;
  for (std::size_t k = 0; k < risks.size(); ++k) lhs += (e[k] - mean_e) * risks[k];
  return lhs;
}

bool verify_key_lemma(const std::vector<double>& risks, double eta) {
  RiskVector{risks, eta}.validate();
  auto ordered = risks;
  std::sort(ordered.begin(), ordered.end());
  return key_lemma_lhs(ordered, eta) <= kTolerance;
}

SweepReport monte_carlo(const SweepOptions& opts) {
  if (opts.k_min < 2 || opts.k_max < opts.k_min)
    throw std::invalid_argument("theorem sweep: need 2 <= k_min <= k_max");
  if (!(opts.eta_max > 0.0)) throw std::invalid_argument("theorem sweep: eta_max must be > 0");
  Rng rng(opts.seed, "theorem-sweep");
  SweepReport rep;
  rep.draws = opts.draws;
  rep.worst_margin = -INFINITY;
  for (std::size_t i = 0; i < opts.draws; ++i) {
    const std::size_t K = opts.k_min + rng.below(opts.k_max - opts.k_min + 1);
    RiskVector rv;
    rv.risks.resize(K);
    for (auto& r : rv.risks) r = rng.uniform();
    // (0, eta_max]: 1 - U[0,1) lies in (0,1].
    rv.eta = opts.eta_max * (1.0 - rng.uniform());
    const auto chk = verify_theorem1(rv);
    const bool lemma = verify_key_lemma(rv.risks, rv.eta);
    rep.worst_margin = std::max(rep.worst_margin, chk.weighted - chk.uniform);
    if (!chk.holds) ++rep.violations;
    if (!lemma) ++rep.lemma_violations;
    if (lemma != chk.holds) ++rep.lemma_disagreements;
    const auto [lo, hi] = std::minmax_element(rv.risks.begin(), rv.risks.end());
    if (*hi - *lo > 1e-9) {
      ++rep.strict_expected;
      if (!chk.strict) ++rep.strict_failures;
    }
  }
  return rep;
}

std::string SweepReport::text() const {
  std::ostringstream os;
  os.precision(6);
  os << "draws               " << draws << '\n'
     << "violations          " << violations << '\n'
     << "strict expected     " << strict_expected << '\n'
     << "strict failures     " << strict_failures << '\n'
     << "lemma violations    " << lemma_violations << '\n'
     << "lemma disagreements " << lemma_disagreements << '\n'
     << "worst margin        " << std::scientific << worst_margin << '\n'
     << "result              " << (ok() ? "PASS" : "FAIL") << '\n';
  return os.str();
}

}  // namespace moapt::theory
