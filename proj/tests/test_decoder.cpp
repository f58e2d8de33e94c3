#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"

using namespace tfrd;
using T = double;

namespace {

Tensor<T> random_tokens(Rng& rng, std::size_t n, std::size_t c, double lo = -1, double hi = 1) {
  return Tensor<T>::from({n, c}, rng.uniform_vector<T>(n * c, lo, hi));
}

Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(x.data().begin() + perm[i] * c, c, out.begin() + i * c);
  return Tensor<T>::from(x.shape(), std::move(out));
}

double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i] - b.data()[i])));
  return m;
}

struct BlockFixture {
  Rng rng{21};
  ParamStore<T> store;
  DecoderBlockParams<T> block = make_decoder_block(store, "td", 8, 2, rng);
};

}  // namespace

TEST(SineEncoding, EntriesWithinUnitRange) {
  auto pe = sine_positional_encoding<T>(5, 7, 16);
  for (T v : pe.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(SineEncoding, SingleCellIsDeterministic) {
  auto a = sine_positional_encoding<T>(1, 1, 8);
  auto b = sine_positional_encoding<T>(1, 1, 8);
  EXPECT_EQ(a.values(), b.values());
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(a.data()[j], static_cast<T>(oracle::sine_entry(1, 1, 0, 0, j, 8)), 1e-14);
}

TEST(SineEncoding, TwoByTwoMatchesFormula) {
  auto pe = sine_positional_encoding<T>(2, 2, 8);
  ASSERT_EQ(pe.shape(), (Shape{4, 8}));
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t j = 0; j < 8; ++j)
        EXPECT_NEAR(pe.data()[(y * 2 + x) * 8 + j], static_cast<T>(oracle::sine_entry(2, 2, y, x, j, 8)), 1e-14);
}

TEST(SineEncoding, DistinctPositionsDistinctRows) {
  auto pe = sine_positional_encoding<T>(4, 4, 16);
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b) {
      double d = 0;
      for (std::size_t j = 0; j < 16; ++j) d += std::abs(pe.data()[a * 16 + j] - pe.data()[b * 16 + j]);
      EXPECT_GT(d, 1e-6) << a << " vs " << b;
    }
}

TEST(SineEncoding, ChannelsNotDivisibleByFourRejected) {
  EXPECT_THROW(sine_positional_encoding<T>(2, 2, 6), ConfigError);
}

TEST(TdBlock, OutputShapeFollowsQuery) {
  BlockFixture f;
  for (auto [nx, ny] : {std::pair{1, 1}, std::pair{2, 9}, std::pair{7, 3}}) {
    auto x = random_tokens(f.rng, nx, 8);
    auto y = random_tokens(f.rng, ny, 8);
    auto out = td_block(x, y, random_tokens(f.rng, nx, 8), random_tokens(f.rng, ny, 8), f.block);
    EXPECT_EQ(out.shape(), x.shape());
  }
}

TEST(TdBlock, MatchesStraightLineReference) {
  BlockFixture f;
  // Non-trivial norms so the affine part is exercised too.
  for (auto* n : {&f.block.norm_sa, &f.block.norm_ca, &f.block.norm_ff}) {
    for (auto& g : n->gain.data()) g = f.rng.uniform(0.5, 1.5);
    for (auto& b : n->bias.data()) b = f.rng.uniform(-0.2, 0.2);
  }
  auto x = random_tokens(f.rng, 2, 8);
  auto y = random_tokens(f.rng, 3, 8);
  auto px = random_tokens(f.rng, 2, 8);
  auto py = random_tokens(f.rng, 3, 8);
  auto got = td_block(x, y, px, py, f.block);
  auto expect = oracle::td_block(oracle::of(x), oracle::of(y), oracle::of(px), oracle::of(py), f.block);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got.data()[i], static_cast<T>(expect.v[i]), 1e-10);
}

TEST(TdBlock, MemoryPermutedWithEncodingIsInvariant) {
  BlockFixture f;
  auto x = random_tokens(f.rng, 4, 8);
  auto y = random_tokens(f.rng, 6, 8);
  auto px = random_tokens(f.rng, 4, 8);
  auto py = random_tokens(f.rng, 6, 8);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto base = td_block(x, y, px, py, f.block);
  auto moved = td_block(x, permute_rows(y, perm), px, permute_rows(py, perm), f.block);
  EXPECT_LT(max_abs_diff(base, moved), 1e-5);
}

TEST(TdBlock, EncodingsReachQueriesAndKeys) {
  BlockFixture f;
  auto x = random_tokens(f.rng, 4, 8);
  auto y = random_tokens(f.rng, 6, 8);
  auto px = random_tokens(f.rng, 4, 8);
  auto py = random_tokens(f.rng, 6, 8);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto base = td_block(x, y, px, py, f.block);
  auto moved = td_block(x, permute_rows(y, perm), px, py, f.block);
  EXPECT_GT(max_abs_diff(base, moved), 1e-4);
}

TEST(TdBlock, EncodingsNeverEnterValues) {
  BlockFixture f;
  auto x = random_tokens(f.rng, 3, 8);
  auto y = random_tokens(f.rng, 1, 8);
  auto px = random_tokens(f.rng, 3, 8);
  auto small = td_block(x, y, px, Tensor<T>::zeros({1, 8}), f.block);
  auto huge = td_block(x, y, px, random_tokens(f.rng, 1, 8, -50, 50), f.block);
  EXPECT_LT(max_abs_diff(small, huge), 1e-12);
}

TEST(TdBlock, MismatchedEncodingIsShapeError) {
  BlockFixture f;
  auto x = random_tokens(f.rng, 3, 8);
  auto y = random_tokens(f.rng, 4, 8);
  EXPECT_THROW(td_block(x, y, random_tokens(f.rng, 3, 8), random_tokens(f.rng, 5, 8), f.block), ShapeError);
  EXPECT_THROW(td_block(x, random_tokens(f.rng, 4, 4), random_tokens(f.rng, 3, 8), random_tokens(f.rng, 4, 4), f.block),
               ShapeError);
}

TEST(TdBlock, FeedforwardIsTwiceWidth) {
  BlockFixture f;
  EXPECT_EQ(f.block.ffn_in.out_features(), 16u);
  EXPECT_EQ(f.block.ffn_out.in_features(), 16u);
  EXPECT_EQ(f.block.channels(), 8u);
}
