// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "datareg/errors.hpp"
#include "datareg/exec.hpp"
#include "datareg/ledger.hpp"
#include "datareg/rng.hpp"
#include "datareg/tensor.hpp"

using namespace datareg;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Rng, PublishedVectors) {
  Rng r0(0), r42(42);
  EXPECT_EQ(r0.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(r0.next_u64(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(r0.next_u64(), 0x06c45d188009454fULL);
  EXPECT_EQ(r42.next_u64(), 0xbdd732262feb6e95ULL);
  EXPECT_EQ(r42.next_u64(), 0x28efe333b266f103ULL);
  EXPECT_EQ(r42.next_u64(), 0x47526757130f9f52ULL);
}

TEST(Rng, CounterAccessMatchesStream) {
  Rng r(7);
  for (std::uint64_t c = 0; c < 16; ++c) {
    const std::uint64_t expect = r.at(c);
    EXPECT_EQ(r.next_u64(), expect);
  }
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
}

TEST(Rng, BelowStaysInRange) {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(Tensor, IdsAreFresh) {
  Tensor a(2, 2), b(2, 2);
  EXPECT_NE(a.id(), b.id());
  Tensor c = a;
  EXPECT_NE(c.id(), a.id());
  const TensorId before = c.id();
  Tensor d = std::move(c);
  EXPECT_EQ(d.id(), before);
  d.renew_id();
  EXPECT_NE(d.id(), before);
}

TEST(Matmul, IdentityLeft) {
  Rng rng(1);
  Tensor b = Tensor::randn(2, 3, rng);
  EXPECT_TRUE(bit_equal(matmul(Tensor::identity(2), b), b));
}

TEST(Matmul, TwoByTwoFlops) {
  Tensor a(2, 2, {1, 2, 3, 4});
  CostMeter m;
  Tensor c = matmul(a, Tensor::identity(2), &m);
  EXPECT_TRUE(bit_equal(c, a));
  EXPECT_EQ(m.flops(), 12u);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(2);
  Tensor a = Tensor::randn(3, 4, rng), b = Tensor::randn(4, 5, rng);
  CostMeter m;
  EXPECT_TRUE(bit_equal(matmul(a, b, &m), naive_matmul(a, b)));
  EXPECT_EQ(m.flops(), 3u * 5u * 7u);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor(2, 3), Tensor(2, 3)), DimensionError);
}

TEST(Matmul, TransposedVariant) {
  Rng rng(3);
  Tensor a = Tensor::randn(4, 3, rng), b = Tensor::randn(4, 2, rng);
  CostMeter m;
  EXPECT_LT(max_abs_diff(matmul_tn(a, b, &m), naive_matmul(a.transpose(), b)), 1e-14);
  EXPECT_EQ(m.flops(), 3u * 2u * 7u);
}

TEST(OuterSum, SingleTokenIsOuterProduct) {
  Tensor b(3, 1, {1, 2, 3}), a(2, 1, {4, 5});
  CostMeter m;
  Tensor g = outer_sum(b, a, &m);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(g(r, c), b(r, 0) * a(c, 0));
  EXPECT_EQ(m.flops(), 6u);
}

TEST(OuterSum, ZeroFactors) {
  Tensor g = outer_sum(Tensor(3, 4), Tensor(2, 4));
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(OuterSum, MatchesMatmulOracle) {
  Rng rng(4);
  Tensor b = Tensor::randn(3, 4, rng), a = Tensor::randn(3, 4, rng);
  CostMeter m;
  EXPECT_LT(max_abs_diff(outer_sum(b, a, &m), naive_matmul(b, a.transpose())), 1e-14);
  EXPECT_EQ(m.flops(), 7u * 9u);
}

TEST(OuterSum, TokenMismatchThrows) { EXPECT_THROW(outer_sum(Tensor(2, 3), Tensor(2, 4)), DimensionError); }

TEST(OuterSum, AccumulateFromZeroIsBitExact) {
  Rng rng(5);
  Tensor b = Tensor::randn(3, 6, rng), a = Tensor::randn(4, 6, rng);
  Tensor acc(3, 4);
  const std::vector<std::size_t> cols{0, 1, 2, 3, 4, 5};
  CostMeter m;
  outer_sum_accumulate(acc, b, a, cols, &m);
  EXPECT_TRUE(bit_equal(acc, outer_sum(b, a)));
  EXPECT_EQ(m.flops(), 2u * 6u * 12u);
}

TEST(FrobInner, Basics) {
  CostMeter m;
  EXPECT_EQ(frob_inner(Tensor::identity(2), Tensor(2, 2)), 0.0);
  EXPECT_EQ(frob_inner(Tensor::identity(2), Tensor::identity(2), &m), 2.0);
  EXPECT_EQ(m.flops(), 7u);
}

TEST(FrobInner, MatchesScalarLoop) {
  Rng rng(6);
  Tensor x = Tensor::randn(4, 4, rng), y = Tensor::randn(4, 4, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < 16; ++i) s += x.data()[i] * y.data()[i];
  EXPECT_EQ(frob_inner(x, y), s);
  EXPECT_THROW(frob_inner(x, Tensor(4, 3)), DimensionError);
}

TEST(Meter, AllocReleaseBalances) {
  ExecContext ctx;
  Tensor pre(1, 4);
  ctx.track(pre);
  const auto before = ctx.meter().live();
  Tensor t(2, 3);
  ctx.track(t);
  ctx.release(t);
  EXPECT_EQ(ctx.meter().live(), before);
  EXPECT_GE(ctx.meter().peak(), before + 6);
}

TEST(Meter, UnknownAndDoubleReleaseThrow) {
  ExecContext ctx;
  Tensor t(2, 3);
  EXPECT_THROW(ctx.release(t), LifetimeError);
  ctx.track(t);
  ctx.release(t);
  EXPECT_THROW(ctx.release(t), LifetimeError);
}

TEST(Meter, ReleasedIdIsNotReused) {
  ExecContext ctx;
  Tensor t(2, 2);
  ctx.track(t);
  ctx.release(t);
  t.renew_id();
  ctx.track(t);
  EXPECT_TRUE(ctx.is_live(t.id()));
}

TEST(Precision, RoundToFloat) {
  Tensor x(1, 1, {0.1});
  round_to(x, Precision::f32);
  EXPECT_EQ(x(0, 0), double(0.1f));
}

TEST(Determinism, SameSeedSameOpsSameMeter) {
  auto run = [] {
    Rng rng(9);
    CostMeter m;
    Tensor a = Tensor::randn(5, 6, rng), b = Tensor::randn(6, 7, rng);
    Tensor c = matmul(a, b, &m);
    Tensor g = outer_sum(c, c, &m);
    return std::make_pair(g, m.flops());
  };
  auto [g1, f1] = run();
  auto [g2, f2] = run();
  EXPECT_TRUE(bit_equal(g1, g2));
  EXPECT_EQ(f1, f2);
}
