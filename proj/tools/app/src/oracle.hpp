// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference computations for the verification suites. Nothing
// here calls the scoring, selection, projection or update code under check.

#include <cstddef>
#include <vector>

#include "datareg/compression.hpp"
#include "datareg/net.hpp"
#include "datareg/rng.hpp"

namespace datareg::app::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

SampleSet random_samples(const ModelSpec& spec, std::size_t count, Rng& rng);
Batch random_batch(const ModelSpec& spec, std::size_t n, std::size_t m, Rng& rng);

// Loss of sample i evaluated with plain loops.
double scalar_loss(const Model& model, const SampleSet& s, std::size_t i);
// Central differences of scalar_loss over every trainable coordinate of layer l.
Vec fd_grad(const Model& model, const SampleSet& s, std::size_t i, std::size_t l, double h = 1e-5);

// Per-sample training gradients [layer][sample] and the mean target gradient
// [layer] read off the library's backward sweep.
struct Grads {
  std::vector<std::vector<Vec>> train;
  std::vector<Vec> target_mean;
};
Grads library_grads(const Model& model, const Batch& batch);

// Explicit kappa x (w_in*w_out) matrix of a factorized projector. Column
// c*w_out + r addresses gradient entry (r, c).
Mat kron_matrix(const Projector& p);
Vec mul(const Mat& m, const Vec& x);
Vec mul_t(const Mat& m, const Vec& x);
Mat matmul_nt(const Mat& a, const Mat& b);  // a * b^T
Vec vec_colmajor(const Tensor& g);

double dot(const Vec& a, const Vec& b);
double sqdist(const Vec& a, const Vec& b);
double rel_err(const Vec& a, const Vec& b);
double max_abs_diff(const Vec& a, const Vec& b);

}  // namespace datareg::app::oracle
