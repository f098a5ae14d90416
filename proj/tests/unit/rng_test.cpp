#include "pricelab/rng.hpp"

#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

namespace pricelab {
namespace {

TEST(RngStreamTest, SameKeySameSequence) {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
  }
  EXPECT_EQ(a, b);
}

TEST(RngStreamTest, DifferentKeysDiffer) {
  RngStream a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(RngStreamTest, UniformRange) {
  RngStream r(7);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = r.uniform_open_low();
    ASSERT_GT(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(RngStreamTest, NormalMoments) {
  RngStream r(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(RngStreamTest, NormalConsumesTwoUniforms) {
  RngStream a(5), b(5);
  a.normal();
  b.uniform();
  b.uniform();
  EXPECT_EQ(a, b);
}

TEST(RngStreamTest, UniformIndexCoversRangeEvenly) {
  RngStream r(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[r.uniform_index(7)]++;
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5.0 * std::sqrt(n / 7.0));
}

TEST(RngStreamTest, SubstreamIgnoresDrawCount) {
  RngStream a(9), b(9);
  for (int i = 0; i < 10; ++i) b.next_u64();
  RngStream ca = a.substream(4), cb = b.substream(4);
  EXPECT_EQ(ca.next_u64(), cb.next_u64());
  EXPECT_NE(a.substream(4).key(), a.substream(5).key());
}

TEST(RngKeyTest, DeriveKeyIsOrderSensitive) {
  EXPECT_NE(derive_key(1, {2, 3}), derive_key(1, {3, 2}));
  EXPECT_EQ(derive_key(1, {2, 3}), derive_key(1, {2, 3}));
  EXPECT_NE(hash_string("eval"), hash_string("evam"));
}

}  // namespace
}  // namespace pricelab
