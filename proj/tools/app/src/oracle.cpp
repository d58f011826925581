// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "oracle.hpp"

#include <algorithm>
#include <cmath>

namespace datareg::app::oracle {

SampleSet random_samples(const ModelSpec& spec, std::size_t count, Rng& rng) {
  SampleSet s;
  s.count = count;
  const std::size_t cols = count * spec.tokens;
  if (spec.token_input()) {
    s.inputs = Tensor(1, cols);
    for (std::size_t c = 0; c < cols; ++c) s.inputs(0, c) = double(rng.below(spec.layers[0].w_in));
  } else {
    s.inputs = Tensor::randn(spec.input_width(), cols, rng);
  }
  if (spec.loss == LossKind::softmax_xent) {
    s.targets = Tensor(1, cols);
    for (std::size_t c = 0; c < cols; ++c) s.targets(0, c) = double(rng.below(spec.output_width()));
  } else {
    s.targets = Tensor::randn(spec.output_width(), cols, rng);
  }
  return s;
}

Batch random_batch(const ModelSpec& spec, std::size_t n, std::size_t m, Rng& rng) {
  Batch b;
  b.tokens = spec.tokens;
  b.train = random_samples(spec, n, rng);
  b.target = random_samples(spec, m, rng);
  return b;
}

double scalar_loss(const Model& model, const SampleSet& s, std::size_t i) {
  const ModelSpec& spec = model.spec();
  const std::size_t T = spec.tokens;
  double total = 0.0;
  for (std::size_t tau = 0; tau < T; ++tau) {
    const std::size_t col = i * T + tau;
    Vec h;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const LayerSpec& ls = spec.layers[l];
      const LayerParams& p = model.params(l);
      Vec e(ls.w_out, 0.0);
      if (ls.kind == LayerKind::embedding) {
        const auto x = static_cast<std::size_t>(s.inputs(0, col));
        for (std::size_t r = 0; r < ls.w_out; ++r) e[r] = p.w(x, r);
      } else {
        Vec in(ls.w_in);
        for (std::size_t c = 0; c < ls.w_in; ++c) in[c] = l == 0 ? s.inputs(c, col) : h[c];
        for (std::size_t r = 0; r < ls.w_out; ++r)
          for (std::size_t c = 0; c < ls.w_in; ++c) e[r] += p.w(r, c) * in[c];
        if (ls.kind == LayerKind::lora) {
          Vec mid(ls.rank, 0.0);
          for (std::size_t q = 0; q < ls.rank; ++q)
            for (std::size_t c = 0; c < ls.w_in; ++c) mid[q] += p.a(q, c) * in[c];
          for (std::size_t r = 0; r < ls.w_out; ++r)
            for (std::size_t q = 0; q < ls.rank; ++q) e[r] += p.b(r, q) * mid[q];
        }
      }
      if (l + 1 == spec.num_layers()) {
        h = e;
        continue;
      }
      h.resize(e.size());
      for (std::size_t r = 0; r < e.size(); ++r) {
        switch (spec.activation) {
          case Activation::identity: h[r] = e[r]; break;
          case Activation::tanh: h[r] = std::tanh(e[r]); break;
          case Activation::relu: h[r] = e[r] > 0 ? e[r] : 0.0; break;
        }
      }
    }
    if (spec.loss == LossKind::squared) {
      for (std::size_t r = 0; r < h.size(); ++r) total += 0.5 * (h[r] - s.targets(r, col)) * (h[r] - s.targets(r, col));
    } else {
      const double mx = *std::max_element(h.begin(), h.end());
      double z = 0.0;
      for (double v : h) z += std::exp(v - mx);
      total += mx + std::log(z) - h[static_cast<std::size_t>(s.targets(0, col))];
    }
  }
  return total;
}

Vec fd_grad(const Model& model, const SampleSet& s, std::size_t i, std::size_t l, double h) {
  Model probe = model;
  Vec g(model.spec().trainable_size(l));
  for (std::size_t q = 0; q < g.size(); ++q) {
    const double v = probe.get(l, q);
    probe.set(l, q, v + h);
    const double up = scalar_loss(probe, s, i);
    probe.set(l, q, v - h);
    const double dn = scalar_loss(probe, s, i);
    probe.set(l, q, v);
    g[q] = (up - dn) / (2 * h);
  }
  return g;
}

Grads library_grads(const Model& model, const Batch& batch) {
  ExecContext ctx;
  ForwardResult fwd = forward(model, batch, ctx);
  Backward bw(model, batch, fwd, ctx);
  const std::size_t L = model.num_layers();
  Grads out;
  out.train.resize(L);
  out.target_mean.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    bw.step(l);
    const LayerCache& c = fwd.caches[l];
    for (std::size_t i = 0; i < batch.n(); ++i) out.train[l].push_back(per_sample_grad(model, c, c.train, i));
    Vec t(model.spec().trainable_size(l), 0.0);
    for (std::size_t j = 0; j < batch.m(); ++j) {
      const Vec g = per_sample_grad(model, c, c.target, j);
      for (std::size_t q = 0; q < t.size(); ++q) t[q] += g[q];
    }
    for (double& v : t) v /= double(batch.m() ? batch.m() : 1);
    out.target_mean[l] = t;
  }
  return out;
}

Mat kron_matrix(const Projector& p) {
  const Tensor &pin = p.p_in(), &pout = p.p_out();
  const std::size_t ki = pin.rows(), ko = pout.rows(), wi = pin.cols(), wo = pout.cols();
  Mat s1(ki * ko, Vec(wi * wo, 0.0));
  for (std::size_t j = 0; j < ki; ++j)
    for (std::size_t i = 0; i < ko; ++i)
      for (std::size_t c = 0; c < wi; ++c)
        for (std::size_t r = 0; r < wo; ++r) s1[j * ko + i][c * wo + r] = pout(i, r) * pin(j, c);
  if (!p.has_final()) return s1;
  const Tensor& f = *p.p_final();
  Mat out(f.rows(), Vec(wi * wo, 0.0));
  for (std::size_t a = 0; a < f.rows(); ++a)
    for (std::size_t b = 0; b < f.cols(); ++b)
      for (std::size_t q = 0; q < wi * wo; ++q) out[a][q] += f(a, b) * s1[b][q];
  return out;
}

Vec mul(const Mat& m, const Vec& x) {
  Vec y(m.size(), 0.0);
  for (std::size_t a = 0; a < m.size(); ++a)
    for (std::size_t q = 0; q < x.size(); ++q) y[a] += m[a][q] * x[q];
  return y;
}

Vec mul_t(const Mat& m, const Vec& x) {
  Vec y(m.front().size(), 0.0);
  for (std::size_t a = 0; a < m.size(); ++a)
    for (std::size_t q = 0; q < y.size(); ++q) y[q] += m[a][q] * x[a];
  return y;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  Mat out(a.size(), Vec(b.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i][j] = dot(a[i], b[j]);
  return out;
}

Vec vec_colmajor(const Tensor& g) {
  Vec v(g.size());
  for (std::size_t c = 0; c < g.cols(); ++c)
    for (std::size_t r = 0; r < g.rows(); ++r) v[c * g.rows() + r] = g(r, c);
  return v;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sqdist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double rel_err(const Vec& a, const Vec& b) {
  return std::sqrt(sqdist(a, b)) / std::max(std::sqrt(dot(b, b)), 1e-12);
}

double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace datareg::app::oracle
