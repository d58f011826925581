// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "datareg/exec.hpp"
#include "datareg/rng.hpp"
#include "datareg/tensor.hpp"

namespace datareg {

// Factor sizes of a two-stage projector. k_final == 0 means the second stage
// is the identity, so the compressed size is k_in * k_out.
struct ProjectorDims {
  std::size_t k_in = 0;
  std::size_t k_out = 0;
  std::size_t k_final = 0;

  std::size_t stage1() const noexcept { return k_in * k_out; }
  std::size_t kappa() const noexcept { return k_final ? k_final : stage1(); }
  bool operator==(const ProjectorDims&) const = default;
};

// Compresses a w_out x w_in gradient G to
//   P_final * vec(P_out G P_in^T)
// where vec stacks columns. Equivalent to P_final (P_in kron P_out) vec(G).
class Projector {
 public:
  Projector() = default;
  Projector(Tensor p_in, Tensor p_out, std::optional<Tensor> p_final = std::nullopt);

  // i.i.d. N(0, 1/k) entries in each factor, drawn from a stream derived
  // from (seed, layer, epoch).
  static Projector gaussian(std::size_t w_out, std::size_t w_in, ProjectorDims dims, std::uint64_t seed,
                            std::uint64_t layer = 0, std::uint64_t epoch = 0);
  static Projector identity(std::size_t w_out, std::size_t w_in);

  std::size_t w_in() const noexcept { return p_in_.cols(); }
  std::size_t w_out() const noexcept { return p_out_.cols(); }
  ProjectorDims dims() const noexcept;
  std::size_t kappa() const noexcept { return dims().kappa(); }
  bool has_final() const noexcept { return p_final_.has_value(); }
  const Tensor& p_in() const noexcept { return p_in_; }
  const Tensor& p_out() const noexcept { return p_out_; }
  const Tensor* p_final() const noexcept { return p_final_ ? &*p_final_ : nullptr; }

 private:
  Tensor p_in_;
  Tensor p_out_;
  std::optional<Tensor> p_final_;
};

// Pi vec(sum_{c in columns} b_c a_c^T) without forming the gradient.
// Exact flops: |C| * (k_in(2 w_in - 1) + k_out(2 w_out - 1)) + (2|C| - 1) k_in k_out,
// plus k_final (2 k_in k_out - 1) with a second stage. When `scratch` is given
// the per-token projections (and the stage-one accumulator under a second
// stage) are tracked on its ledger.
std::vector<double> project_outer_sum(const Projector& proj, const Tensor& b, const Tensor& a,
                                      std::span<const std::size_t> columns, CostMeter* meter = nullptr,
                                      ExecContext* scratch = nullptr);
// Pi vec(G) for an explicit w_out x w_in matrix.
std::vector<double> project_matrix(const Projector& proj, const Tensor& g, CostMeter* meter = nullptr);
// Mat(Pi^T x) = P_out^T X' P_in with X' the unstacked P_final^T x.
Tensor project_back(const Projector& proj, std::span<const double> x, CostMeter* meter = nullptr);
// Pi_to Pi_from^T x, through one w_out x w_in intermediate.
std::vector<double> project_general(const Projector& to, const Projector& from, std::span<const double> x,
                                    CostMeter* meter = nullptr);

// Dense kappa x (w_in * w_out) matrix of the projector, column-stacked vec.
Tensor dense_projector(const Projector& proj);

std::vector<double> refresh_first_moment(std::span<const double> m_old, const Projector& from, const Projector& to);

enum class SecondMomentMode { exact, hutchinson };

struct SecondMomentOptions {
  SecondMomentMode mode = SecondMomentMode::exact;
  std::size_t probes = 1024;
  // Exact transfer builds M column by column; above this many entries the
  // estimator is used instead.
  std::size_t exact_limit = std::size_t{1} << 24;
};

// (M .* M) v_old with M = Pi_to Pi_from^T, or its Rademacher-probe estimate
// (1/N) sum_j r_j .* (M diag(v_old) M^T r_j). Throws DimensionError on a
// negative entry of v_old.
std::vector<double> refresh_second_moment(std::span<const double> v_old, const Projector& from,
                                          const Projector& to, const SecondMomentOptions& opts, Rng& rng);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct MomentState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  AdamWConfig config;

  static MomentState zeros(std::size_t kappa, AdamWConfig config = {});
};

// One bias-corrected adaptive-moment step in compressed coordinates; returns
// the compressed parameter delta -lr * mhat / (sqrt(vhat) + eps). Decoupled
// weight decay acts on the full parameters and is left to the caller.
std::vector<double> adamw_compressed_step(MomentState& state, std::span<const double> u, double lr);

}  // namespace datareg
