// SPDX-License-Identifier: Apache-2.0
//
// Numerical check of the weighted-risk inequality behind the router: weights
// obtained by one gradient step from the uniform 1/K and a softmax,
//
//   w_k = exp(-eta R_k) / sum_j exp(-eta R_j),
//
// never give a larger expected risk than uniform averaging, and give a
// strictly smaller one as soon as two risks differ.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace moapt::theory {

inline constexpr double kTolerance = 1e-12;

struct RiskVector {
  std::vector<double> risks;  // R_k >= 0, K >= 2
  double eta = 1.0;

  void validate() const;
};

std::vector<double> routed_weights(const RiskVector& rv);

struct TheoremCheck {
  double weighted = 0.0;  // sum_k w_k R_k
  double uniform = 0.0;   // mean_k R_k
  bool holds = false;     // weighted <= uniform + tol
  bool strict = false;    // weighted < uniform - tol
};

TheoremCheck verify_theorem1(const RiskVector& rv);

/// sum_k (exp(-eta R_k) - mean_j exp(-eta R_j)) * R_k.
double key_lemma_lhs(const std::vector<double>& risks, double eta);
/// Evaluates the lemma on the risks reordered with the minimum first and the
/// rest ascending; true when the left side is <= tolerance.
bool verify_key_lemma(const std::vector<double>& risks, double eta);

struct SweepOptions {
  std::size_t draws = 10000;
  std::size_t k_min = 2;
  std::size_t k_max = 10;
  double eta_max = 2.0;  // eta ~ U(0, eta_max]
  std::uint64_t seed = 0;
};

struct SweepReport {
  std::size_t draws = 0;
  std::size_t violations = 0;          // theorem inequality failed
  std::size_t strict_expected = 0;     // draws with max-min risk > 1e-9
  std::size_t strict_failures = 0;     // of those, not strictly better
  std::size_t lemma_disagreements = 0; // lemma verdict != theorem verdict
  std::size_t lemma_violations = 0;
  double worst_margin = 0.0;           // max of (weighted - uniform)

  bool ok() const {
    return violations == 0 && strict_failures == 0 && lemma_disagreements == 0 &&
           lemma_violations == 0;
  }
  std::string text() const;
};

SweepReport monte_carlo(const SweepOptions& opts);

}  // namespace moapt::theory
