// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/biasvar.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <thread>

#include "datareg/errors.hpp"
#include "datareg/rng.hpp"

namespace datareg {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_matrix(const std::vector<double>& v, std::size_t d) {
  Mat m(d, d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) m(r, c) = v[r * d + c];
  return m;
}

// Factor F with F F^T = cov, from the symmetric eigendecomposition so that
// singular covariances are fine.
Mat sampling_factor(const std::vector<double>& cov, std::size_t d) {
  Eigen::SelfAdjointEigenSolver<Mat> es(to_matrix(cov, d));
  Vec s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal();
}

struct Sampler {
  Vec mean;
  Mat factor;
  double clip;

  Vec draw(Rng& rng) const {
    const Eigen::Index d = mean.size();
    for (int attempt = 0; attempt < 1000000; ++attempt) {
      Vec z(d);
      for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.normal();
      Vec g = mean + factor * z;
      if (!(g.norm() > clip)) return g;
    }
    throw ConfigError("norm clip rejects essentially every draw; raise clip");
  }
};

std::vector<std::vector<std::size_t>> subsets(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(k);
  std::iota(cur.begin(), cur.end(), 0);
  while (true) {
    out.push_back(cur);
    std::size_t pos = k;
    while (pos > 0 && cur[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) break;
    ++cur[pos - 1];
    for (std::size_t j = pos; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> blocks(std::size_t d, std::size_t groups) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t p = 0; p < groups; ++p) out.push_back({p * d / groups, (p + 1) * d / groups});
  return out;
}

struct TrialValues {
  double mse;
  double bias;
};

// Per-block exact projection: the subset chosen against the estimate ghat and
// the best achievable subset against the true gradient.
TrialValues project_blocks(const std::vector<Vec>& train, const Vec& ghat, const Vec& gstar,
                           const std::vector<std::vector<std::size_t>>& sets, std::size_t k,
                           const std::vector<std::pair<std::size_t, std::size_t>>& blks) {
  const std::size_t n = train.size();
  TrialValues tv{0.0, 0.0};
  const double kk = double(k);
  for (auto [b, e] : blks) {
    const Eigen::Index len = static_cast<Eigen::Index>(e - b);
    std::vector<double> gram(n * n), lin_hat(n), lin_true(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto gi = train[i].segment(b, len);
      for (std::size_t j = 0; j <= i; ++j) gram[i * n + j] = gram[j * n + i] = gi.dot(train[j].segment(b, len));
      lin_hat[i] = gi.dot(ghat.segment(b, len));
      lin_true[i] = gi.dot(gstar.segment(b, len));
    }
    const double star_sq = gstar.segment(b, len).squaredNorm();
    double best_hat = 0.0, best_true = 0.0;
    std::size_t arg_hat = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
      double quad = 0.0, lh = 0.0, lt = 0.0;
      for (std::size_t a : sets[s]) {
        lh += lin_hat[a];
        lt += lin_true[a];
        for (std::size_t c : sets[s]) quad += gram[a * n + c];
      }
      const double oh = quad / (kk * kk) - 2.0 * lh / kk;
      const double ot = quad / (kk * kk) - 2.0 * lt / kk;
      if (s == 0 || oh < best_hat) {
        best_hat = oh;
        arg_hat = s;
      }
      if (s == 0 || ot < best_true) best_true = ot;
    }
    Vec u = Vec::Zero(len);
    for (std::size_t a : sets[arg_hat]) u += train[a].segment(b, len);
    u /= kk;
    tv.mse += (u - gstar.segment(b, len)).squaredNorm();
    tv.bias += std::max(0.0, best_true + star_sq);
  }
  return tv;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe summarize(const std::vector<double>& x) {
  MeanSe r;
  if (x.empty()) return r;
  double s = 0.0;
  for (double v : x) s += v;
  r.mean = s / double(x.size());
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - r.mean) * (v - r.mean);
    r.se = std::sqrt(ss / double(x.size() - 1) / double(x.size()));
  }
  return r;
}

}  // namespace

PopulationSpec PopulationSpec::isotropic(std::vector<double> target_mean, std::vector<double> train_mean,
                                         double target_var, double train_var) {
  PopulationSpec s;
  s.dim = target_mean.size();
  s.target_mean = std::move(target_mean);
  s.train_mean = std::move(train_mean);
  s.target_cov.assign(s.dim * s.dim, 0.0);
  s.train_cov.assign(s.dim * s.dim, 0.0);
  for (std::size_t i = 0; i < s.dim; ++i) {
    s.target_cov[i * s.dim + i] = target_var;
    s.train_cov[i * s.dim + i] = train_var;
  }
  return s;
}

void PopulationSpec::validate() const {
  if (dim == 0) throw ConfigError("population dimension must be positive");
  if (target_mean.size() != dim || train_mean.size() != dim) throw ConfigError("population means must have length d");
  if (target_cov.size() != dim * dim || train_cov.size() != dim * dim) {
    throw ConfigError("population covariances must be d x d");
  }
  if (!(clip > 0.0)) throw ConfigError("gradient clip C must be positive");
  if (!(beta > 0.0)) throw ConfigError("smoothness constant must be positive");
  for (const auto* cov : {&target_cov, &train_cov}) {
    const Mat m = to_matrix(*cov, dim);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigError("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    if (es.eigenvalues().minCoeff() < -1e-10) throw ConfigError("covariance is not positive semidefinite");
  }
}

double PopulationSpec::sigma() const {
  Eigen::SelfAdjointEigenSolver<Mat> es(to_matrix(target_cov, dim));
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

double PopulationSpec::train_trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < dim; ++i) t += train_cov[i * dim + i];
  return t;
}

double PopulationSpec::target_trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < dim; ++i) t += target_cov[i * dim + i];
  return t;
}

std::string to_string(SimMethod m) {
  switch (m) {
    case SimMethod::target_only: return "target_only";
    case SimMethod::full_training: return "full_training";
    case SimMethod::global: return "global";
    case SimMethod::groupwise: return "groupwise";
  }
  return "?";
}

SimMethod parse_sim_method(const std::string& s) {
  if (s == "target_only") return SimMethod::target_only;
  if (s == "full_training") return SimMethod::full_training;
  if (s == "global") return SimMethod::global;
  if (s == "groupwise") return SimMethod::groupwise;
  throw ConfigError("unknown simulation method '" + s + "'");
}

std::string SimMethodSpec::label() const {
  switch (kind) {
    case SimMethod::global: return "global(k=" + std::to_string(k) + ")";
    case SimMethod::groupwise: return "groupwise(k=" + std::to_string(k) + ",P=" + std::to_string(groups) + ")";
    default: return to_string(kind);
  }
}

std::optional<double> variance_bound(double clip, double sigma, const SimMethodSpec& method, std::size_t n,
                                     std::size_t m) {
  if (method.kind != SimMethod::global && method.kind != SimMethod::groupwise) return std::nullopt;
  if (method.k < 1 || method.k > n || m == 0) throw ConfigError("variance bound needs 1 <= k <= n and m >= 1");
  const double log_binom = std::lgamma(double(n) + 1) - std::lgamma(double(method.k) + 1) -
                           std::lgamma(double(n - method.k) + 1);
  const double p = method.kind == SimMethod::groupwise ? double(method.groups) : 1.0;
  return 4.0 * clip * p * sigma / std::sqrt(double(m)) * std::sqrt(2.0 * (std::log(2.0) + log_binom));
}

std::vector<SimResult> estimate_all(const PopulationSpec& spec, const std::vector<SimMethodSpec>& methods,
                                    const SimOptions& opts) {
  spec.validate();
  if (opts.trials == 0) throw ConfigError("simulation needs at least one trial");
  if (opts.n == 0 || opts.m == 0) throw ConfigError("simulation needs n >= 1 and m >= 1");
  const std::size_t d = spec.dim, n = opts.n, m = opts.m, trials = opts.trials;
  for (const SimMethodSpec& mt : methods) {
    if ((mt.kind == SimMethod::global || mt.kind == SimMethod::groupwise) && (mt.k < 1 || mt.k > n)) {
      throw ConfigError(mt.label() + ": k must lie in [1, n]");
    }
    if (mt.kind == SimMethod::groupwise && (mt.groups < 1 || mt.groups > d)) {
      throw ConfigError(mt.label() + ": group count must lie in [1, d]");
    }
  }
  Vec gstar(d), gtr(d);
  for (std::size_t i = 0; i < d; ++i) {
    gstar(i) = spec.target_mean[i];
    gtr(i) = spec.train_mean[i];
  }
  const double inf = std::numeric_limits<double>::infinity();
  const Sampler train_s{gtr, sampling_factor(spec.train_cov, d), opts.clip ? spec.clip : inf};
  const Sampler target_s{gstar, sampling_factor(spec.target_cov, d), inf};
  std::map<std::size_t, std::vector<std::vector<std::size_t>>> sets;
  for (const SimMethodSpec& mt : methods)
    if (mt.kind == SimMethod::global || mt.kind == SimMethod::groupwise) sets.emplace(mt.k, subsets(n, mt.k));

  const std::size_t nm = methods.size();
  std::vector<double> mse(nm * trials), bias(nm * trials);
  auto run = [&](std::size_t t0, std::size_t t1) {
    std::vector<Vec> train(n);
    for (std::size_t t = t0; t < t1; ++t) {
      Rng rng(derive_seed(opts.seed, {t}));
      for (std::size_t i = 0; i < n; ++i) train[i] = train_s.draw(rng);
      Vec ghat = Vec::Zero(d);
      for (std::size_t j = 0; j < m; ++j) ghat += target_s.draw(rng);
      ghat /= double(m);
      Vec gbar = Vec::Zero(d);
      for (const Vec& g : train) gbar += g;
      gbar /= double(n);
      for (std::size_t q = 0; q < nm; ++q) {
        const SimMethodSpec& mt = methods[q];
        TrialValues tv{0.0, 0.0};
        switch (mt.kind) {
          case SimMethod::target_only: tv = {(ghat - gstar).squaredNorm(), 0.0}; break;
          case SimMethod::full_training: {
            const double r = (gbar - gstar).squaredNorm();
            tv = {r, r};
            break;
          }
          case SimMethod::global:
            tv = project_blocks(train, ghat, gstar, sets.at(mt.k), mt.k, blocks(d, 1));
            break;
          case SimMethod::groupwise:
            tv = project_blocks(train, ghat, gstar, sets.at(mt.k), mt.k, blocks(d, mt.groups));
            break;
        }
        mse[q * trials + t] = tv.mse;
        bias[q * trials + t] = tv.bias;
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, trials));
  if (threads == 1) {
    run(0, trials);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(run, w * trials / threads, (w + 1) * trials / threads);
    for (auto& th : pool) th.join();
  }
  const double sigma = spec.sigma();
  std::vector<SimResult> out;
  for (std::size_t q = 0; q < nm; ++q) {
    std::vector<double> ms(mse.begin() + q * trials, mse.begin() + (q + 1) * trials);
    std::vector<double> bs(bias.begin() + q * trials, bias.begin() + (q + 1) * trials);
    std::vector<double> vs(trials);
    for (std::size_t t = 0; t < trials; ++t) vs[t] = ms[t] - bs[t];
    SimResult r;
    r.method = methods[q];
    r.n = n;
    r.m = m;
    r.trials = trials;
    const MeanSe a = summarize(ms), b = summarize(bs), v = summarize(vs);
    r.mse = a.mean;
    r.mse_se = a.se;
    r.bias = b.mean;
    r.bias_se = b.se;
    r.var = v.mean;
    r.var_se = v.se;
    if (std::isfinite(spec.clip)) r.bound = variance_bound(spec.clip, sigma, methods[q], n, m);
    out.push_back(r);
  }
  return out;
}

SimResult estimate_mse(const PopulationSpec& spec, const SimMethodSpec& method, const SimOptions& opts) {
  return estimate_all(spec, {method}, opts).front();
}

std::vector<RegimeRow> sweep_m(const PopulationSpec& spec, const std::vector<SimMethodSpec>& methods,
                               const std::vector<std::size_t>& m_values, const SimOptions& opts, double mismatch) {
  if (methods.empty()) throw ConfigError("regime sweep needs at least one method");
  std::vector<RegimeRow> rows;
  for (std::size_t m : m_values) {
    SimOptions o = opts;
    o.m = m;
    RegimeRow row;
    row.mismatch = mismatch;
    row.m = m;
    row.results = estimate_all(spec, methods, o);
    const auto best = std::min_element(row.results.begin(), row.results.end(),
                                       [](const SimResult& a, const SimResult& b) { return a.mse < b.mse; });
    row.winner = to_string(best->method.kind);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> regime_sequence(const std::vector<RegimeRow>& rows) {
  std::vector<std::string> seq;
  for (const RegimeRow& r : rows)
    if (seq.empty() || seq.back() != r.winner) seq.push_back(r.winner);
  return seq;
}

DescentResult descent_check(const std::vector<double>& hessian_diag, const std::vector<double>& theta0,
                            const std::vector<double>& optimum, const std::vector<double>& train_shift,
                            const PopulationSpec& noise, const SimMethodSpec& method, double eta,
                            const SimOptions& opts) {
  const std::size_t d = hessian_diag.size();
  if (theta0.size() != d || optimum.size() != d || train_shift.size() != d || noise.dim != d) {
    throw ConfigError("descent check vectors must share the dimension");
  }
  auto loss = [&](const Vec& th) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += 0.5 * hessian_diag[i] * (th(i) - optimum[i]) * (th(i) - optimum[i]);
    return s;
  };
  Vec th0(d), grad(d);
  for (std::size_t i = 0; i < d; ++i) {
    th0(i) = theta0[i];
    grad(i) = hessian_diag[i] * (theta0[i] - optimum[i]);
  }
  PopulationSpec pop = noise;
  pop.target_mean.assign(grad.data(), grad.data() + d);
  pop.train_mean.resize(d);
  for (std::size_t i = 0; i < d; ++i) pop.train_mean[i] = grad(i) + train_shift[i];
  pop.validate();

  // Recreate the method's update per trial with the same streams as estimate_all.
  const Sampler train_s{Vec::Map(pop.train_mean.data(), d), sampling_factor(pop.train_cov, d),
                        opts.clip ? pop.clip : std::numeric_limits<double>::infinity()};
  const Sampler target_s{grad, sampling_factor(pop.target_cov, d), std::numeric_limits<double>::infinity()};
  std::vector<std::vector<std::size_t>> sets;
  if (method.kind == SimMethod::global || method.kind == SimMethod::groupwise) sets = subsets(opts.n, method.k);
  const auto blks = blocks(d, method.kind == SimMethod::groupwise ? method.groups : 1);
  std::vector<double> after(opts.trials), err(opts.trials);
  std::vector<Vec> train(opts.n);
  for (std::size_t t = 0; t < opts.trials; ++t) {
    Rng rng(derive_seed(opts.seed, {t}));
    for (auto& g : train) g = train_s.draw(rng);
    Vec ghat = Vec::Zero(d);
    for (std::size_t j = 0; j < opts.m; ++j) ghat += target_s.draw(rng);
    ghat /= double(opts.m);
    Vec u(d);
    switch (method.kind) {
      case SimMethod::target_only: u = ghat; break;
      case SimMethod::full_training: {
        u = Vec::Zero(d);
        for (const Vec& g : train) u += g;
        u /= double(opts.n);
        break;
      }
      case SimMethod::global:
      case SimMethod::groupwise: {
        u = Vec::Zero(d);
        const double kk = double(method.k);
        for (auto [b, e] : blks) {
          const Eigen::Index len = static_cast<Eigen::Index>(e - b);
          double best = 0.0;
          std::size_t arg = 0;
          for (std::size_t s = 0; s < sets.size(); ++s) {
            Vec mean = Vec::Zero(len);
            for (std::size_t a : sets[s]) mean += train[a].segment(b, len);
            mean /= kk;
            const double o = (mean - ghat.segment(b, len)).squaredNorm();
            if (s == 0 || o < best) {
              best = o;
              arg = s;
            }
          }
          for (std::size_t a : sets[arg]) u.segment(b, len) += train[a].segment(b, len);
          u.segment(b, len) /= kk;
        }
        break;
      }
    }
    after[t] = loss(th0 - eta * u);
    err[t] = (u - grad).squaredNorm();
  }
  const MeanSe a = summarize(after), e = summarize(err);
  DescentResult r;
  r.loss_before = loss(th0);
  r.loss_after = a.mean;
  r.loss_after_se = a.se;
  r.mse = e.mean;
  r.bound = r.loss_before - 0.5 * eta * grad.squaredNorm() + 0.5 * eta * e.mean;
  r.holds = r.loss_after <= r.bound + 3.0 * a.se + 1e-12 * std::max(1.0, std::abs(r.bound));
  return r;
}

}  // namespace datareg
