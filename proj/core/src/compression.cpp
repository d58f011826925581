// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/compression.hpp"

#include <cmath>

#include "datareg/errors.hpp"

namespace datareg {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

// y = P x for a k x w factor; k(2w - 1) flops.
void apply_factor(const Tensor& p, const double* x, std::size_t stride, double* y) {
  const std::size_t w = p.cols();
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double* pr = p.row(r);
    double s = pr[0] * x[0];
    for (std::size_t c = 1; c < w; ++c) s = s + pr[c] * x[c * stride];
    y[r] = s;
  }
}

std::uint64_t factor_flops(const Tensor& p) { return p.rows() * (2 * p.cols() - 1); }

std::vector<double> apply_final(const Tensor& pf, const std::vector<double>& x, CostMeter* meter) {
  std::vector<double> out(pf.rows());
  apply_factor(pf, x.data(), 1, out.data());
  if (meter) meter->add_flops(factor_flops(pf));
  return out;
}

}  // namespace

Projector::Projector(Tensor p_in, Tensor p_out, std::optional<Tensor> p_final)
    : p_in_(std::move(p_in)), p_out_(std::move(p_out)), p_final_(std::move(p_final)) {
  require(p_in_.size() > 0 && p_out_.size() > 0, "projector factors must be non-empty");
  if (p_final_) require(p_final_->cols() == p_in_.rows() * p_out_.rows(), "P_final width must be k_in * k_out");
}

Projector Projector::gaussian(std::size_t w_out, std::size_t w_in, ProjectorDims dims, std::uint64_t seed,
                              std::uint64_t layer, std::uint64_t epoch) {
  if (dims.k_in == 0 || dims.k_out == 0) throw ConfigError("projector factor sizes must be positive");
  Rng rng(derive_seed(seed, {layer, epoch}));
  Tensor p_in = Tensor::randn(dims.k_in, w_in, rng, 1.0 / std::sqrt(double(dims.k_in)));
  Tensor p_out = Tensor::randn(dims.k_out, w_out, rng, 1.0 / std::sqrt(double(dims.k_out)));
  std::optional<Tensor> p_final;
  if (dims.k_final) p_final = Tensor::randn(dims.k_final, dims.stage1(), rng, 1.0 / std::sqrt(double(dims.k_final)));
  return Projector(std::move(p_in), std::move(p_out), std::move(p_final));
}

Projector Projector::identity(std::size_t w_out, std::size_t w_in) {
  return Projector(Tensor::identity(w_in), Tensor::identity(w_out));
}

ProjectorDims Projector::dims() const noexcept {
  return {p_in_.rows(), p_out_.rows(), p_final_ ? p_final_->rows() : 0};
}

std::vector<double> project_outer_sum(const Projector& proj, const Tensor& b, const Tensor& a,
                                      std::span<const std::size_t> columns, CostMeter* meter,
                                      ExecContext* scratch) {
  require(b.rows() == proj.w_out() && a.rows() == proj.w_in(), "factor widths do not match the projector");
  require(a.cols() == b.cols(), "factor token counts differ");
  const std::size_t ki = proj.dims().k_in, ko = proj.dims().k_out, k1 = ki * ko;
  std::vector<double> acc(k1, 0.0);
  Tensor stage1;
  if (scratch && proj.has_final()) {
    stage1 = Tensor(k1, 1);
    scratch->track(stage1, "compress/stage1");
  }
  Tensor pa(ki, 1), pb(ko, 1);
  bool first = true;
  for (std::size_t col : columns) {
    if (scratch) {
      pa.renew_id();
      pb.renew_id();
      scratch->track(pa, "compress/in");
      scratch->track(pb, "compress/out");
    }
    apply_factor(proj.p_in(), a.data().data() + col, a.cols(), pa.data().data());
    apply_factor(proj.p_out(), b.data().data() + col, b.cols(), pb.data().data());
    for (std::size_t c = 0; c < ki; ++c) {
      const double x = pa(c, 0);
      double* dst = acc.data() + c * ko;
      if (first) {
        for (std::size_t r = 0; r < ko; ++r) dst[r] = pb(r, 0) * x;
      } else {
        for (std::size_t r = 0; r < ko; ++r) dst[r] = dst[r] + pb(r, 0) * x;
      }
    }
    first = false;
    if (scratch) {
      scratch->release(pa);
      scratch->release(pb);
    }
  }
  if (meter && !columns.empty()) {
    meter->add_flops(columns.size() * (factor_flops(proj.p_in()) + factor_flops(proj.p_out())) +
                     (2 * columns.size() - 1) * k1);
  }
  std::vector<double> out = proj.has_final() ? apply_final(*proj.p_final(), acc, meter) : std::move(acc);
  if (stage1.size() > 0) scratch->release(stage1);
  return out;
}

std::vector<double> project_matrix(const Projector& proj, const Tensor& g, CostMeter* meter) {
  require(g.rows() == proj.w_out() && g.cols() == proj.w_in(), "matrix shape does not match the projector");
  const Tensor x = matmul(matmul(proj.p_out(), g, meter), proj.p_in().transpose(), meter);
  std::vector<double> v(x.size());
  for (std::size_t c = 0; c < x.cols(); ++c)
    for (std::size_t r = 0; r < x.rows(); ++r) v[c * x.rows() + r] = x(r, c);
  return proj.has_final() ? apply_final(*proj.p_final(), v, meter) : v;
}

Tensor project_back(const Projector& proj, std::span<const double> x, CostMeter* meter) {
  require(x.size() == proj.kappa(), "compressed vector length does not match the projector");
  const std::size_t ki = proj.dims().k_in, ko = proj.dims().k_out;
  std::vector<double> y(x.begin(), x.end());
  if (proj.has_final()) y = matmul_tn(*proj.p_final(), Tensor::column(x), meter).storage();
  Tensor xp(ko, ki);
  for (std::size_t c = 0; c < ki; ++c)
    for (std::size_t r = 0; r < ko; ++r) xp(r, c) = y[c * ko + r];
  return matmul(matmul_tn(proj.p_out(), xp, meter), proj.p_in(), meter);
}

std::vector<double> project_general(const Projector& to, const Projector& from, std::span<const double> x,
                                    CostMeter* meter) {
  require(to.w_in() == from.w_in() && to.w_out() == from.w_out(), "projectors bind different layer shapes");
  return project_matrix(to, project_back(from, x, meter), meter);
}

Tensor dense_projector(const Projector& proj) {
  const std::size_t wo = proj.w_out(), wi = proj.w_in();
  Tensor d(proj.kappa(), wo * wi);
  Tensor e(wo, wi);
  for (std::size_t c = 0; c < wi; ++c) {
    for (std::size_t r = 0; r < wo; ++r) {
      e(r, c) = 1.0;
      const auto col = project_matrix(proj, e);
      for (std::size_t k = 0; k < col.size(); ++k) d(k, c * wo + r) = col[k];
      e(r, c) = 0.0;
    }
  }
  return d;
}

std::vector<double> refresh_first_moment(std::span<const double> m_old, const Projector& from, const Projector& to) {
  return project_general(to, from, m_old);
}

std::vector<double> refresh_second_moment(std::span<const double> v_old, const Projector& from,
                                          const Projector& to, const SecondMomentOptions& opts, Rng& rng) {
  require(v_old.size() == from.kappa(), "second moment length does not match the old projector");
  for (double v : v_old)
    if (v < 0.0) throw DimensionError("second moment has a negative entry");
  const std::size_t k_old = from.kappa(), k_new = to.kappa();
  std::vector<double> out(k_new, 0.0);
  const bool exact = opts.mode == SecondMomentMode::exact && k_old * k_new <= opts.exact_limit;
  if (exact) {
    std::vector<double> e(k_old, 0.0);
    for (std::size_t j = 0; j < k_old; ++j) {
      e[j] = 1.0;
      const auto col = project_general(to, from, e);
      e[j] = 0.0;
      for (std::size_t r = 0; r < k_new; ++r) out[r] += col[r] * col[r] * v_old[j];
    }
    return out;
  }
  if (opts.probes == 0) throw ConfigError("Hutchinson estimation needs at least one probe");
  std::vector<double> probe(k_new);
  for (std::size_t p = 0; p < opts.probes; ++p) {
    for (double& r : probe) r = rng.rademacher();
    auto y = project_general(from, to, probe);
    for (std::size_t j = 0; j < k_old; ++j) y[j] *= v_old[j];
    const auto z = project_general(to, from, y);
    for (std::size_t r = 0; r < k_new; ++r) out[r] += probe[r] * z[r];
  }
  const double inv = 1.0 / double(opts.probes);
  for (double& v : out) v *= inv;
  return out;
}

MomentState MomentState::zeros(std::size_t kappa, AdamWConfig config) {
  MomentState s;
  s.m.assign(kappa, 0.0);
  s.v.assign(kappa, 0.0);
  s.config = config;
  return s;
}

std::vector<double> adamw_compressed_step(MomentState& state, std::span<const double> u, double lr) {
  require(u.size() == state.m.size() && u.size() == state.v.size(), "compressed update length mismatch");
  const AdamWConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
  std::vector<double> delta(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * u[k];
    state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * u[k] * u[k];
    const double mhat = state.m[k] / bc1;
    const double vhat = state.v[k] / bc2;
    delta[k] = -lr * mhat / (std::sqrt(vhat) + c.eps);
  }
  return delta;
}

}  // namespace datareg
