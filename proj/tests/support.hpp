// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared builders and independent oracles for the test suites. The oracles
// here never call into the scoring, selection or update code they check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "datareg/exec.hpp"
#include "datareg/net.hpp"
#include "datareg/rng.hpp"
#include "datareg/tensor.hpp"

namespace dt {

using namespace datareg;

inline ModelSpec dense_spec(std::vector<std::size_t> widths, std::size_t tokens,
                            Activation act = Activation::tanh) {
  ModelSpec s;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) s.layers.push_back({LayerKind::dense, widths[l], widths[l + 1], 0});
  s.activation = act;
  s.tokens = tokens;
  return s;
}

inline SampleSet random_samples(const ModelSpec& spec, std::size_t count, Rng& rng) {
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

inline Batch random_batch(const ModelSpec& spec, std::size_t n, std::size_t m, Rng& rng) {
  Batch b;
  b.tokens = spec.tokens;
  b.train = random_samples(spec, n, rng);
  b.target = random_samples(spec, m, rng);
  return b;
}

inline SampleSet one_sample(const SampleSet& s, std::size_t i, std::size_t tokens) {
  const std::size_t idx[1] = {i};
  return s.subset(idx, tokens);
}

// Straight-line scalar loss of one sample, written without the library's
// forward code.
inline double scalar_loss(const Model& model, const SampleSet& s, std::size_t i) {
  const ModelSpec& spec = model.spec();
  const std::size_t T = spec.tokens;
  double total = 0.0;
  for (std::size_t tau = 0; tau < T; ++tau) {
    const std::size_t col = i * T + tau;
    std::vector<double> h;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const LayerSpec& ls = spec.layers[l];
      const LayerParams& p = model.params(l);
      std::vector<double> e(ls.w_out, 0.0);
      if (ls.kind == LayerKind::embedding) {
        const auto x = static_cast<std::size_t>(s.inputs(0, col));
        for (std::size_t r = 0; r < ls.w_out; ++r) e[r] = p.w(x, r);
      } else {
        std::vector<double> in(ls.w_in);
        for (std::size_t c = 0; c < ls.w_in; ++c) in[c] = l == 0 ? s.inputs(c, col) : h[c];
        for (std::size_t r = 0; r < ls.w_out; ++r)
          for (std::size_t c = 0; c < ls.w_in; ++c) e[r] += p.w(r, c) * in[c];
        if (ls.kind == LayerKind::lora) {
          std::vector<double> mid(ls.rank, 0.0);
          for (std::size_t q = 0; q < ls.rank; ++q)
            for (std::size_t c = 0; c < ls.w_in; ++c) mid[q] += p.a(q, c) * in[c];
          for (std::size_t r = 0; r < ls.w_out; ++r)
            for (std::size_t q = 0; q < ls.rank; ++q) e[r] += p.b(r, q) * mid[q];
        }
      }
      if (l + 1 == spec.num_layers()) {
        h = e;
      } else {
        h.resize(e.size());
        for (std::size_t r = 0; r < e.size(); ++r) {
          switch (spec.activation) {
            case Activation::identity: h[r] = e[r]; break;
            case Activation::tanh: h[r] = std::tanh(e[r]); break;
            case Activation::relu: h[r] = e[r] > 0 ? e[r] : 0.0; break;
          }
        }
      }
    }
    if (spec.loss == LossKind::squared) {
      for (std::size_t r = 0; r < h.size(); ++r) total += 0.5 * (h[r] - s.targets(r, col)) * (h[r] - s.targets(r, col));
    } else {
      double mx = h[0];
      for (double v : h) mx = std::max(mx, v);
      double z = 0.0;
      for (double v : h) z += std::exp(v - mx);
      total += mx + std::log(z) - h[static_cast<std::size_t>(s.targets(0, col))];
    }
  }
  return total;
}

// Central finite differences of sample i's loss over every trainable
// coordinate of layer l.
inline std::vector<double> fd_grad(const Model& model, const SampleSet& s, std::size_t i, std::size_t l,
                                   double h = 1e-5) {
  Model probe = model;
  const std::size_t d = model.spec().trainable_size(l);
  std::vector<double> g(d);
  for (std::size_t q = 0; q < d; ++q) {
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

inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace dt

namespace dt {

// Per-sample training gradients [layer][sample] and the mean target gradient
// [layer], from one merged pass through the library's backward sweep.
struct LibraryGrads {
  std::vector<std::vector<std::vector<double>>> train;
  std::vector<std::vector<double>> target_mean;
};

inline LibraryGrads library_grads(const Model& model, const Batch& batch) {
  ExecContext ctx;
  ForwardResult fwd = forward(model, batch, ctx);
  Backward bw(model, batch, fwd, ctx);
  const std::size_t L = model.num_layers();
  LibraryGrads out;
  out.train.resize(L);
  out.target_mean.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    bw.step(l);
    const LayerCache& c = fwd.caches[l];
    for (std::size_t i = 0; i < batch.n(); ++i) out.train[l].push_back(per_sample_grad(model, c, c.train, i));
    std::vector<double> t(model.spec().trainable_size(l), 0.0);
    for (std::size_t j = 0; j < batch.m(); ++j) {
      const auto g = per_sample_grad(model, c, c.target, j);
      for (std::size_t q = 0; q < t.size(); ++q) t[q] += g[q];
    }
    for (double& v : t) v /= double(batch.m() ? batch.m() : 1);
    out.target_mean[l] = t;
  }
  return out;
}

}  // namespace dt
