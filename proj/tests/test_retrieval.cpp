#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "sre/retrieval.hpp"

using namespace sre;

namespace {

EncodedPool scalar_pool(const std::vector<double>& values) {
  return pool_from_encodings(Tensor::matrix(values.size(), 1, values));
}

std::vector<std::size_t> ids(const std::vector<RetrievalHit>& hits) {
  std::vector<std::size_t> out;
  for (const auto& h : hits) out.push_back(h.id);
  return out;
}

const MixingMap& world() {
  static const MixingMap w = MixingMap::from_seed({8, 32, 32, 4});
  return w;
}

Tensor images(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  NoGradGuard g;
  return generate(Tensor::matrix(n, 8, rng.normals(n * 8)), world());
}

}  // namespace

TEST(EncodePool, SingleImage) {
  const auto p = init_sre(1, 1024, 4);
  const auto pool = encode_pool(images(1, 2), p);
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_EQ(pool.dims, 4u);
  EXPECT_EQ(pool.entries[0].id, 0u);
}

TEST(EncodePool, EmptyPoolRejected) {
  const auto p = init_sre(1, 1024, 4);
  EXPECT_THROW(encode_pool(Tensor::zeros({0, 1024}), p), std::invalid_argument);
}

TEST(EncodePool, MatchesOneByOneEncoding) {
  const auto p = init_sre(1, 1024, 4);
  const Tensor imgs = images(6, 3);
  const auto pool = encode_pool(imgs, p);
  for (std::size_t n = 0; n < 6; ++n) {
    const auto row = imgs.data().subspan(n * 1024, 1024);
    const Tensor single = sre_forward(Tensor::matrix(1, 1024, {row.begin(), row.end()}), p);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(pool.entries[n].scales[c], single[c], 1e-13);
  }
}

TEST(EncodePool, IndependentOfPoolOrder) {
  const auto p = init_sre(1, 1024, 4);
  const Tensor imgs = images(4, 5);
  std::vector<double> reversed;
  for (std::size_t n = 4; n-- > 0;) {
    const auto row = imgs.data().subspan(n * 1024, 1024);
    reversed.insert(reversed.end(), row.begin(), row.end());
  }
  const auto a = encode_pool(imgs, p), b = encode_pool(Tensor::matrix(4, 1024, reversed), p);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a.entries[n].scales[c], b.entries[3 - n].scales[c], 1e-13);
}

TEST(Retrieve, NearestScalars) {
  const auto pool = scalar_pool({0.1, 0.29, 0.31, 0.9});
  const std::vector<double> query = {0.3};
  auto got = ids(retrieve(query, 0, 2, pool));
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, (std::vector<std::size_t>{1, 2}));
}

TEST(Retrieve, QueryInPoolRanksFirst) {
  const auto p = init_sre(2, 1024, 4);
  const Tensor imgs = images(20, 6);
  const auto pool = encode_pool(imgs, p);
  const auto row = imgs.data().subspan(7 * 1024, 1024);
  const auto hits = retrieve(Tensor::matrix(1, 1024, {row.begin(), row.end()}), 2, 3, pool, p);
  EXPECT_EQ(hits[0].id, 7u);
  EXPECT_LE(hits[0].distance, 1e-12);  // batched vs single GEMM rounding
  EXPECT_EQ(hits[0].rank, 1u);
}

TEST(Retrieve, TiesBrokenByAscendingId) {
  const auto pool = scalar_pool({0.75, 0.25, 0.75, 1.5, 0.25});
  const std::vector<double> query = {0.5};
  EXPECT_EQ(ids(retrieve(query, 0, 5, pool)), (std::vector<std::size_t>{0, 1, 2, 4, 3}));
}

TEST(Retrieve, FullRankingIsSortedPermutation) {
  Rng rng(9);
  const auto values = rng.normals(50);
  const auto pool = scalar_pool(values);
  const std::vector<double> query = {0.2};
  const auto hits = retrieve(query, 0, 50, pool);
  auto got = ids(hits);
  std::vector<std::size_t> all(50);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> sorted = got;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, all);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_LE(hits[i - 1].distance, hits[i].distance);
  // full sort oracle
  std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(values[a] - 0.2) < std::abs(values[b] - 0.2);
  });
  EXPECT_EQ(got, all);
}

TEST(Retrieve, SmallerKIsPrefix) {
  Rng rng(10);
  const auto pool = scalar_pool(rng.normals(40));
  const std::vector<double> query = {-0.4};
  const auto big = ids(retrieve(query, 0, 20, pool));
  const auto small = ids(retrieve(query, 0, 7, pool));
  EXPECT_TRUE(std::equal(small.begin(), small.end(), big.begin()));
}

TEST(Retrieve, TranslationInvariant) {
  Rng rng(11);
  auto values = rng.normals(30);
  const auto a = ids(retrieve(std::vector<double>{0.1}, 0, 30, scalar_pool(values)));
  for (double& v : values) v += 5.5;
  const auto b = ids(retrieve(std::vector<double>{5.6}, 0, 30, scalar_pool(values)));
  EXPECT_EQ(a, b);
}

TEST(Retrieve, BadArguments) {
  const auto pool = scalar_pool({0.1, 0.2});
  EXPECT_THROW(retrieve(std::vector<double>{0.1}, 1, 1, pool), std::out_of_range);
  EXPECT_THROW(retrieve(std::vector<double>{0.1}, 0, 3, pool), std::invalid_argument);
}

TEST(RetrievalQuality, OracleEncodingsAreExact) {
  std::vector<Match> identity;
  for (std::size_t j = 0; j < 4; ++j) identity.push_back({j, j, 1.0});
  EXPECT_EQ(retrieval_quality(world(), factor_encoder(world()), identity, 5, 5, 200, 1), 1.0);
}

TEST(RetrievalQuality, UntrainedNetworkNearChance) {
  const auto p = init_sre(3, 1024, 4);
  const double q = retrieval_quality(world(), p, init_random_orthonormal(8, 4, 3), 25, 5, 200, 2);
  EXPECT_LT(q, 0.1);
}
