#pragma once

// Attribute-based retrieval: rank pool images by the scalar distance between
// their network output at one index and the query's.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sre/directions.hpp"
#include "sre/metrics.hpp"
#include "sre/rng.hpp"
#include "sre/sre_net.hpp"
#include "sre/synth_world.hpp"
#include "sre/tensor.hpp"

namespace sre {

struct EncodedEntry {
  std::size_t id;
  std::vector<double> scales;
};

struct EncodedPool {
  std::vector<EncodedEntry> entries;
  std::size_t dims = 0;

  std::size_t size() const { return entries.size(); }
};

// Rows of an [n, d] encoding tensor, ids 0..n-1.
inline EncodedPool pool_from_encodings(const Tensor& encodings) {
  if (encodings.rank() != 2) throw ShapeError("encode_pool: expected [n,d] encodings, got " + shape_str(encodings.shape()));
  if (encodings.dim(0) == 0) throw std::invalid_argument("encode_pool: empty pool");
  EncodedPool pool;
  pool.dims = encodings.dim(1);
  for (std::size_t i = 0; i < encodings.dim(0); ++i) {
    const auto row = encodings.data().subspan(i * pool.dims, pool.dims);
    pool.entries.push_back({i, std::vector<double>(row.begin(), row.end())});
  }
  return pool;
}

// images: [n, H*W]; entry i gets id i.
inline EncodedPool encode_pool(const Tensor& images, const SREParams& params) {
  if (images.rank() == 0 || images.size() == 0 || images.dim(0) == 0) {
    throw std::invalid_argument("encode_pool: empty pool");
  }
  NoGradGuard no_grad;
  return pool_from_encodings(sre_forward(images, params));
}

struct RetrievalHit {
  std::size_t rank;  // 1-based
  std::size_t id;
  double distance;
};

inline std::vector<RetrievalHit> retrieve(std::span<const double> query_scales, std::size_t attribute, std::size_t k,
                                          const EncodedPool& pool) {
  if (attribute >= pool.dims || attribute >= query_scales.size()) {
    throw std::out_of_range("retrieve: attribute index " + std::to_string(attribute) + " out of range for " +
                            std::to_string(pool.dims) + " directions");
  }
  if (k > pool.size()) {
    throw std::invalid_argument("retrieve: K=" + std::to_string(k) + " exceeds pool size " +
                                std::to_string(pool.size()));
  }
  const double q = query_scales[attribute];
  std::vector<RetrievalHit> all;
  all.reserve(pool.size());
  for (const auto& e : pool.entries) all.push_back({0, e.id, std::abs(e.scales[attribute] - q)});
  std::stable_sort(all.begin(), all.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  });
  all.resize(k);
  for (std::size_t r = 0; r < all.size(); ++r) all[r].rank = r + 1;
  return all;
}

inline std::vector<RetrievalHit> retrieve(const Tensor& query_image, std::size_t attribute, std::size_t k,
                                          const EncodedPool& pool, const SREParams& params) {
  NoGradGuard no_grad;
  const Tensor scales = sre_forward(query_image, params);
  return retrieve(scales.data(), attribute, k, pool);
}

// Mean top-K overlap between encoder-based and oracle-factor rankings, over
// trials and the supplied (index i, factor j) pairs.
inline double retrieval_quality(const MixingMap& world, const Encoder& encoder, const std::vector<Match>& pairs,
                                std::size_t trials, std::size_t k = 5, std::size_t pool_size = 200,
                                std::uint64_t seed = 0) {
  if (pairs.empty() || trials == 0) return 0.0;
  const std::size_t dim = world.latent_dim();
  Rng rng(derive_seed(seed, "retrieval-quality"));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor latents = Tensor::matrix(pool_size + 1, dim, rng.normals((pool_size + 1) * dim));
    const Tensor encodings = encoder(latents);
    Tensor factors;
    {
      NoGradGuard no_grad;
      factors = factors_of(latents, world);
    }
    // Row 0 is the query; rows 1..pool_size the pool (ids 0..pool_size-1).
    std::vector<double> pool_codes(encodings.data().begin() + encodings.dim(1), encodings.data().end());
    const EncodedPool pool = pool_from_encodings(Tensor::matrix(pool_size, encodings.dim(1), std::move(pool_codes)));
    const auto query = encodings.data().first(encodings.dim(1));
    for (const auto& pair : pairs) {
      const auto hits = retrieve(query, pair.direction, k, pool);
      std::vector<std::size_t> oracle(pool_size);
      std::iota(oracle.begin(), oracle.end(), std::size_t{0});
      const double fq = factors.at(0, pair.factor);
      auto dist = [&](std::size_t id) { return std::abs(factors.at(id + 1, pair.factor) - fq); };
      std::stable_sort(oracle.begin(), oracle.end(), [&](std::size_t a, std::size_t b) {
        return dist(a) < dist(b) || (dist(a) == dist(b) && a < b);
      });
      oracle.resize(k);
      std::size_t overlap = 0;
      for (const auto& h : hits) overlap += std::count(oracle.begin(), oracle.end(), h.id);
      total += static_cast<double>(overlap) / static_cast<double>(k);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Network encodings, directions matched to the true factor axes.
inline double retrieval_quality(const MixingMap& world, const SREParams& params, const DirectionMatrix& directions,
                                std::size_t trials, std::size_t k = 5, std::size_t pool_size = 200,
                                std::uint64_t seed = 0) {
  return retrieval_quality(world, network_encoder(world, params),
                           greedy_match(directions, ground_truth_directions(world)), trials, k, pool_size, seed);
}

}  // namespace sre
