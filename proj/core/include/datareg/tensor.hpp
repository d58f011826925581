// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "datareg/meter.hpp"
#include "datareg/rng.hpp"

namespace datareg {

using TensorId = std::uint64_t;

enum class Precision { f64, f32 };

// Dense row-major matrix. Vectors are r x 1. Every construction or copy
// receives a fresh process-unique id; moves carry the id along.
class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor(const Tensor& other);
  Tensor& operator=(const Tensor& other);
  Tensor(Tensor&& other) noexcept;
  Tensor& operator=(Tensor&& other) noexcept;
  ~Tensor() = default;

  static Tensor identity(std::size_t n);
  static Tensor randn(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
  static Tensor column(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
  TensorId id() const noexcept { return id_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double* row(std::size_t r) noexcept { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const noexcept { return data_.data() + r * cols_; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  // Gives the buffer a new handle; the old id is then dead.
  void renew_id() noexcept;
  void fill(double v) noexcept;
  Tensor transpose() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  TensorId id_ = 0;
};

TensorId next_tensor_id() noexcept;

bool bit_equal(const Tensor& a, const Tensor& b) noexcept;
double max_abs_diff(const Tensor& a, const Tensor& b);
double frob_norm(const Tensor& x);

// All metered ops add their exact scalar add+multiply count to `meter` when
// it is non-null.

// A[p x q] * B[q x r]; p*r*(2q-1) flops.
Tensor matmul(const Tensor& a, const Tensor& b, CostMeter* meter = nullptr);
// A^T * B for A[q x p], B[q x r]; p*r*(2q-1) flops.
Tensor matmul_tn(const Tensor& a, const Tensor& b, CostMeter* meter = nullptr);
// sum_t b_t a_t^T for B[w_out x T], A[w_in x T]; (2T-1)*w_out*w_in flops.
Tensor outer_sum(const Tensor& b, const Tensor& a, CostMeter* meter = nullptr);
// acc += sum over listed columns of b_c a_c^T, in list order, entry by entry.
// Starting from a zero accumulator this reproduces outer_sum bit for bit.
// 2*|columns|*w_out*w_in flops.
void outer_sum_accumulate(Tensor& acc, const Tensor& b, const Tensor& a,
                          std::span<const std::size_t> columns, CostMeter* meter = nullptr);
// Sum of elementwise products; 2*size-1 flops.
double frob_inner(const Tensor& x, const Tensor& y, CostMeter* meter = nullptr);
double dot(std::span<const double> x, std::span<const double> y, CostMeter* meter = nullptr);

// y += x; size flops.
void add_inplace(Tensor& y, const Tensor& x, CostMeter* meter = nullptr);
// x *= alpha; size flops.
void scale_inplace(Tensor& x, double alpha, CostMeter* meter = nullptr);

Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_columns(const Tensor& x, std::span<const std::size_t> columns);
// Concatenate along columns; rows must agree.
Tensor hcat(const Tensor& left, const Tensor& right);

// Columns [i*T, (i+1)*T) for each listed sample i.
std::vector<std::size_t> sample_columns(std::span<const std::size_t> samples, std::size_t tokens);

// Round every entry to the nearest float when precision is f32.
void round_to(Tensor& x, Precision precision) noexcept;

}  // namespace datareg
