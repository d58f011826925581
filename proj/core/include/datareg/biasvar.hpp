// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace datareg {

// Gaussian gradient populations for the training and target distributions.
// Covariances are dense d x d row-major matrices.
struct PopulationSpec {
  std::size_t dim = 0;
  std::vector<double> target_mean;
  std::vector<double> train_mean;
  std::vector<double> target_cov;
  std::vector<double> train_cov;
  double clip = std::numeric_limits<double>::infinity();
  double beta = 1.0;  // smoothness constant; step size 1/beta

  static PopulationSpec isotropic(std::vector<double> target_mean, std::vector<double> train_mean,
                                  double target_var, double train_var);
  // Throws ConfigError on shape errors, non-PSD covariances or clip <= 0.
  void validate() const;
  // sqrt of the largest eigenvalue of the target covariance.
  double sigma() const;
  double train_trace() const;
  double target_trace() const;
};

enum class SimMethod { target_only, full_training, global, groupwise };

std::string to_string(SimMethod m);
SimMethod parse_sim_method(const std::string& s);

// Group-wise methods split the coordinates into `groups` contiguous blocks of
// near-equal size.
struct SimMethodSpec {
  SimMethod kind = SimMethod::global;
  std::size_t k = 1;
  std::size_t groups = 1;

  std::string label() const;
};

struct SimOptions {
  std::size_t n = 8;
  std::size_t m = 1;
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Reject training draws with norm above spec.clip.
  bool clip = false;
};

struct SimResult {
  SimMethodSpec method;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  double mse = 0.0;
  double mse_se = 0.0;
  double bias = 0.0;
  double bias_se = 0.0;
  double var = 0.0;
  double var_se = 0.0;
  std::optional<double> bound;
};

// Every method sees the same draws in each trial; trial t uses a stream
// derived from (seed, t), so results do not depend on the thread count.
std::vector<SimResult> estimate_all(const PopulationSpec& spec, const std::vector<SimMethodSpec>& methods,
                                    const SimOptions& opts);
SimResult estimate_mse(const PopulationSpec& spec, const SimMethodSpec& method, const SimOptions& opts);

// 4 C sigma P / sqrt(m) * sqrt(2 log(2 C(n, k))) with P = 1 for the global
// rule; nullopt for methods without a subset choice.
std::optional<double> variance_bound(double clip, double sigma, const SimMethodSpec& method, std::size_t n,
                                     std::size_t m);

struct RegimeRow {
  double mismatch = 0.0;
  std::size_t m = 0;
  std::string winner;
  std::vector<SimResult> results;
};

// For each m the method with the smallest estimated MSE.
std::vector<RegimeRow> sweep_m(const PopulationSpec& spec, const std::vector<SimMethodSpec>& methods,
                               const std::vector<std::size_t>& m_values, const SimOptions& opts,
                               double mismatch = 0.0);

// Consecutive distinct winners of a sweep, e.g. {full_training, groupwise, target_only}.
std::vector<std::string> regime_sequence(const std::vector<RegimeRow>& rows);

// Quadratic target loss L(theta) = 0.5 (theta - opt)^T H (theta - opt) with
// diagonal H, largest entry beta. One update step theta - eta u from theta0,
// where u is the method's update on gradients drawn around grad L(theta0).
struct DescentResult {
  double loss_before = 0.0;
  double loss_after = 0.0;     // Monte Carlo mean
  double loss_after_se = 0.0;
  double mse = 0.0;            // E||u - grad||^2
  double bound = 0.0;          // L0 - eta/2 ||grad||^2 + eta/2 MSE
  bool holds = false;          // loss_after <= bound + 3 se
};

DescentResult descent_check(const std::vector<double>& hessian_diag, const std::vector<double>& theta0,
                            const std::vector<double>& optimum, const std::vector<double>& train_shift,
                            const PopulationSpec& noise, const SimMethodSpec& method, double eta,
                            const SimOptions& opts);

}  // namespace datareg
