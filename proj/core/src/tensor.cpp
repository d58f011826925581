// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "datareg/errors.hpp"

namespace datareg {

namespace {

std::atomic<TensorId> g_next_id{1};

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require(bool ok, const char* op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + dims(a) + " and " + dims(b));
  }
}

}  // namespace

TensorId next_tensor_id() noexcept { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

void CostMeter::on_alloc(std::int64_t entries) noexcept {
  live_ += entries;
  if (live_ > peak_) peak_ = live_;
}

void CostMeter::on_release(std::int64_t entries) {
  if (entries > live_) {
    throw LifetimeError("release of " + std::to_string(entries) + " entries exceeds live count " +
                        std::to_string(live_));
  }
  live_ -= entries;
}

Tensor::Tensor() : id_(next_tensor_id()) {}

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0), id_(next_tensor_id()) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)), id_(next_tensor_id()) {
  if (data_.size() != rows * cols) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor::Tensor(const Tensor& other)
    : rows_(other.rows_), cols_(other.cols_), data_(other.data_), id_(next_tensor_id()) {}

Tensor& Tensor::operator=(const Tensor& other) {
  if (this != &other) {
    rows_ = other.rows_;
    cols_ = other.cols_;
    data_ = other.data_;
    id_ = next_tensor_id();
  }
  return *this;
}

Tensor::Tensor(Tensor&& other) noexcept
    : rows_(other.rows_), cols_(other.cols_), data_(std::move(other.data_)), id_(other.id_) {
  other.rows_ = 0;
  other.cols_ = 0;
  other.data_.clear();
  other.id_ = 0;
}

Tensor& Tensor::operator=(Tensor&& other) noexcept {
  if (this != &other) {
    rows_ = other.rows_;
    cols_ = other.cols_;
    data_ = std::move(other.data_);
    id_ = other.id_;
    other.rows_ = 0;
    other.cols_ = 0;
    other.data_.clear();
    other.id_ = 0;
  }
  return *this;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::randn(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Tensor t(rows, cols);
  for (double& v : t.data_) v = scale * rng.normal();
  return t;
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

void Tensor::renew_id() noexcept { id_ = next_tensor_id(); }

void Tensor::fill(double v) noexcept {
  for (double& x : data_) x = v;
}

Tensor Tensor::transpose() const {
  Tensor t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != y[i]) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff", a, b);
  double m = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

double frob_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return std::sqrt(s);
}

Tensor matmul(const Tensor& a, const Tensor& b, CostMeter* meter) {
  require(a.cols() == b.rows(), "matmul", a, b);
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  Tensor c(p, r);
  if (q > 0) {
    for (std::size_t i = 0; i < p; ++i) {
      double* ci = c.row(i);
      const double* ai = a.row(i);
      const double* b0 = b.row(0);
      for (std::size_t j = 0; j < r; ++j) ci[j] = ai[0] * b0[j];
      for (std::size_t k = 1; k < q; ++k) {
        const double aik = ai[k];
        const double* bk = b.row(k);
        for (std::size_t j = 0; j < r; ++j) ci[j] = ci[j] + aik * bk[j];
      }
    }
  }
  if (meter && q > 0) meter->add_flops(p * r * (2 * q - 1));
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b, CostMeter* meter) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  const std::size_t q = a.rows(), p = a.cols(), r = b.cols();
  Tensor c(p, r);
  if (q > 0) {
    const double* a0 = a.row(0);
    const double* b0 = b.row(0);
    for (std::size_t i = 0; i < p; ++i) {
      double* ci = c.row(i);
      for (std::size_t j = 0; j < r; ++j) ci[j] = a0[i] * b0[j];
    }
    for (std::size_t k = 1; k < q; ++k) {
      const double* ak = a.row(k);
      const double* bk = b.row(k);
      for (std::size_t i = 0; i < p; ++i) {
        double* ci = c.row(i);
        const double aki = ak[i];
        for (std::size_t j = 0; j < r; ++j) ci[j] = ci[j] + aki * bk[j];
      }
    }
  }
  if (meter && q > 0) meter->add_flops(p * r * (2 * q - 1));
  return c;
}

Tensor outer_sum(const Tensor& b, const Tensor& a, CostMeter* meter) {
  if (a.cols() != b.cols()) {
    throw DimensionError("outer_sum: token counts differ (" + std::to_string(b.cols()) + " vs " +
                         std::to_string(a.cols()) + ")");
  }
  const std::size_t wo = b.rows(), wi = a.rows(), t = a.cols();
  Tensor g(wo, wi);
  if (t == 0) return g;
  for (std::size_t r = 0; r < wo; ++r) {
    const double* br = b.row(r);
    double* gr = g.row(r);
    for (std::size_t c = 0; c < wi; ++c) {
      const double* ac = a.row(c);
      double s = br[0] * ac[0];
      for (std::size_t k = 1; k < t; ++k) s = s + br[k] * ac[k];
      gr[c] = s;
    }
  }
  if (meter) meter->add_flops((2 * t - 1) * wo * wi);
  return g;
}

void outer_sum_accumulate(Tensor& acc, const Tensor& b, const Tensor& a,
                          std::span<const std::size_t> columns, CostMeter* meter) {
  if (a.cols() != b.cols()) throw DimensionError("outer_sum_accumulate: token counts differ");
  if (acc.rows() != b.rows() || acc.cols() != a.rows()) {
    throw DimensionError("outer_sum_accumulate: accumulator is " + dims(acc) + ", factors give " +
                         std::to_string(b.rows()) + "x" + std::to_string(a.rows()));
  }
  for (std::size_t col : columns) {
    if (col >= a.cols()) throw DimensionError("outer_sum_accumulate: column out of range");
  }
  const std::size_t wo = b.rows(), wi = a.rows();
  for (std::size_t r = 0; r < wo; ++r) {
    const double* br = b.row(r);
    double* gr = acc.row(r);
    for (std::size_t c = 0; c < wi; ++c) {
      const double* ac = a.row(c);
      double s = gr[c];
      for (std::size_t col : columns) s = s + br[col] * ac[col];
      gr[c] = s;
    }
  }
  if (meter) meter->add_flops(2 * columns.size() * wo * wi);
}

double dot(std::span<const double> x, std::span<const double> y, CostMeter* meter) {
  if (x.size() != y.size()) throw DimensionError("dot: length mismatch");
  if (x.empty()) return 0.0;
  double s = x[0] * y[0];
  for (std::size_t i = 1; i < x.size(); ++i) s = s + x[i] * y[i];
  if (meter) meter->add_flops(2 * x.size() - 1);
  return s;
}

double frob_inner(const Tensor& x, const Tensor& y, CostMeter* meter) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), "frob_inner", x, y);
  return dot(x.data(), y.data(), meter);
}

void add_inplace(Tensor& y, const Tensor& x, CostMeter* meter) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), "add_inplace", y, x);
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = yd[i] + xd[i];
  if (meter) meter->add_flops(yd.size());
}

void scale_inplace(Tensor& x, double alpha, CostMeter* meter) {
  for (double& v : x.data()) v = v * alpha;
  if (meter) meter->add_flops(x.size());
}

Tensor slice_columns(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols()) throw DimensionError("slice_columns: range out of bounds");
  Tensor out(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  return out;
}

Tensor gather_columns(const Tensor& x, std::span<const std::size_t> columns) {
  Tensor out(x.rows(), columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] >= x.cols()) throw DimensionError("gather_columns: column out of range");
  }
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < columns.size(); ++j) out(r, j) = x(r, columns[j]);
  return out;
}

Tensor hcat(const Tensor& left, const Tensor& right) {
  require(left.rows() == right.rows() || left.cols() == 0 || right.cols() == 0, "hcat", left, right);
  if (left.cols() == 0) return right;
  if (right.cols() == 0) return left;
  Tensor out(left.rows(), left.cols() + right.cols());
  for (std::size_t r = 0; r < left.rows(); ++r) {
    for (std::size_t c = 0; c < left.cols(); ++c) out(r, c) = left(r, c);
    for (std::size_t c = 0; c < right.cols(); ++c) out(r, left.cols() + c) = right(r, c);
  }
  return out;
}

std::vector<std::size_t> sample_columns(std::span<const std::size_t> samples, std::size_t tokens) {
  std::vector<std::size_t> cols;
  cols.reserve(samples.size() * tokens);
  for (std::size_t i : samples)
    for (std::size_t t = 0; t < tokens; ++t) cols.push_back(i * tokens + t);
  return cols;
}

void round_to(Tensor& x, Precision precision) noexcept {
  if (precision != Precision::f32) return;
  for (double& v : x.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace datareg
