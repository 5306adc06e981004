#pragma once

// A differentiable stand-in for a pretrained generator. Latents z in R^k are
// mixed by a row-orthonormal Q (m x k), squashed into per-factor ranges, and
// rendered as a single Gaussian blob:
//
//   u = Q z,  f_j = lo_j + (hi_j - lo_j) (tanh(u_j) + 1) / 2
//   pixel(r, c) = brightness * exp(-((r - cx)^2 + (c - cy)^2) / (2 radius^2))
//
// The factor map is an evaluation oracle; training never reads it.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sre/rng.hpp"
#include "sre/tensor.hpp"

namespace sre {

inline constexpr std::size_t kFactorCount = 4;
enum Factor : std::size_t { kCenterX = 0, kCenterY = 1, kRadius = 2, kBrightness = 3 };

struct FactorRange {
  double lo;
  double hi;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
};

struct WorldConfig {
  std::size_t latent_dim = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
};

class MixingMap {
 public:
  MixingMap(const WorldConfig& config, std::vector<double> q_row_major)
      : config_(config), q_(Tensor::matrix(kFactorCount, config.latent_dim, std::move(q_row_major))) {
    if (config.latent_dim < kFactorCount) {
      throw std::invalid_argument("MixingMap: latent dimension " + std::to_string(config.latent_dim) +
                                  " is smaller than the factor count");
    }
    if (config.height < 13 || config.width < 13) {
      throw std::invalid_argument("MixingMap: image must be at least 13x13 to hold the blob centre range");
    }
    ranges_ = {FactorRange{6.0, static_cast<double>(config.height) - 6.0},
               FactorRange{6.0, static_cast<double>(config.width) - 6.0}, FactorRange{2.0, 8.0},
               FactorRange{0.3, 1.0}};
  }

  // Q from the seeded Gaussian matrix's orthonormal factor.
  static MixingMap from_seed(const WorldConfig& config) {
    Rng rng(derive_seed(config.seed, "mixing-map"));
    Eigen::MatrixXd g(config.latent_dim, kFactorCount);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
    const Eigen::MatrixXd r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < basis.cols(); ++j) {
      if (r(j, j) < 0) basis.col(j) *= -1.0;
    }
    std::vector<double> q(kFactorCount * config.latent_dim);
    for (std::size_t j = 0; j < kFactorCount; ++j)
      for (std::size_t i = 0; i < config.latent_dim; ++i) q[j * config.latent_dim + i] = basis(i, j);
    return MixingMap(config, std::move(q));
  }

  const WorldConfig& config() const { return config_; }
  std::size_t latent_dim() const { return config_.latent_dim; }
  std::size_t factor_count() const { return kFactorCount; }
  std::size_t pixels() const { return config_.height * config_.width; }
  const Tensor& q() const { return q_; }
  const std::array<FactorRange, kFactorCount>& ranges() const { return ranges_; }

 private:
  WorldConfig config_;
  Tensor q_;
  std::array<FactorRange, kFactorCount> ranges_{};
};

// ---------------------------------------------------------------------------
// Differentiable pieces

// u: [n, m] mixed coordinates -> factors [n, m].
inline Tensor squash_to_ranges(const Tensor& u, const std::array<FactorRange, kFactorCount>& ranges) {
  if (u.rank() != 2 || u.dim(1) != kFactorCount) {
    throw ShapeError("squash_to_ranges: expected [n," + std::to_string(kFactorCount) + "], got " +
                     shape_str(u.shape()));
  }
  const std::size_t n = u.dim(0);
  std::vector<double> out(u.size());
  std::vector<double> slope(u.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < kFactorCount; ++j) {
      const std::size_t i = r * kFactorCount + j;
      const double t = std::tanh(u[i]);
      out[i] = ranges[j].lo + ranges[j].width() * (t + 1.0) / 2.0;
      slope[i] = ranges[j].width() * (1.0 - t * t) / 2.0;
    }
  }
  Tensor f(u.shape(), std::move(out));
  if (should_record({&u})) {
    auto un = u.node(), fn = f.node();
    record_op("squash_to_ranges", {u}, f, [un, fn, slope = std::move(slope)] {
      auto g = un->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += fn->grad[i] * slope[i];
    });
  }
  return f;
}

// factors: [n, 4] -> images [n, height * width], row-major rasters.
inline Tensor render(const Tensor& factors, std::size_t height, std::size_t width) {
  if (factors.rank() != 2 || factors.dim(1) != kFactorCount) {
    throw ShapeError("render: expected [n,4] factors, got " + shape_str(factors.shape()));
  }
  const std::size_t n = factors.dim(0);
  const std::size_t pixels = height * width;
  std::vector<double> out(n * pixels);
  for (std::size_t s = 0; s < n; ++s) {
    const double cx = factors[s * 4 + kCenterX], cy = factors[s * 4 + kCenterY];
    const double radius = factors[s * 4 + kRadius], brightness = factors[s * 4 + kBrightness];
    const double inv = 1.0 / (2.0 * radius * radius);
    double* img = out.data() + s * pixels;
    for (std::size_t r = 0; r < height; ++r) {
      const double dr = static_cast<double>(r) - cx;
      for (std::size_t c = 0; c < width; ++c) {
        const double dc = static_cast<double>(c) - cy;
        img[r * width + c] = brightness * std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
  }
  Tensor images({n, pixels}, std::move(out));
  if (should_record({&factors})) {
    auto fn = factors.node(), in = images.node();
    record_op("render", {factors}, images, [fn, in, n, height, width] {
      const std::size_t pixels = height * width;
      for (std::size_t s = 0; s < n; ++s) {
        const double cx = fn->data[s * 4 + kCenterX], cy = fn->data[s * 4 + kCenterY];
        const double radius = fn->data[s * 4 + kRadius], brightness = fn->data[s * 4 + kBrightness];
        const double r2 = radius * radius;
        double g_cx = 0, g_cy = 0, g_radius = 0, g_brightness = 0;
        const double* img = in->data.data() + s * pixels;
        const double* up = in->grad.data() + s * pixels;
        for (std::size_t r = 0; r < height; ++r) {
          const double dr = static_cast<double>(r) - cx;
          for (std::size_t c = 0; c < width; ++c) {
            const double dc = static_cast<double>(c) - cy;
            const std::size_t i = r * width + c;
            const double gp = up[i] * img[i];
            g_cx += gp * dr / r2;
            g_cy += gp * dc / r2;
            g_radius += gp * (dr * dr + dc * dc) / (r2 * radius);
            if (brightness != 0.0) g_brightness += gp / brightness;
          }
        }
        fn->accumulate(s * 4 + kCenterX, g_cx);
        fn->accumulate(s * 4 + kCenterY, g_cy);
        fn->accumulate(s * 4 + kRadius, g_radius);
        fn->accumulate(s * 4 + kBrightness, g_brightness);
      }
    });
  }
  return images;
}

// ---------------------------------------------------------------------------
// Generator and oracle

// z: [n, k] -> factors [n, 4]; recorded on the tape.
inline Tensor factors_of(const Tensor& z, const MixingMap& map) {
  if (z.rank() != 2 || z.dim(1) != map.latent_dim()) {
    throw ShapeError("factors_of: expected [n," + std::to_string(map.latent_dim()) + "] latents, got " +
                     shape_str(z.shape()));
  }
  return squash_to_ranges(matmul(z, transpose(map.q())), map.ranges());
}

// Single latent vector -> 4 factors, plain doubles.
inline std::array<double, kFactorCount> factors_of(std::span<const double> z, const MixingMap& map) {
  if (z.size() != map.latent_dim()) {
    throw ShapeError("factors_of: latent has " + std::to_string(z.size()) + " entries, expected " +
                     std::to_string(map.latent_dim()));
  }
  std::array<double, kFactorCount> f{};
  const auto q = map.q().data();
  for (std::size_t j = 0; j < kFactorCount; ++j) {
    double u = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) u += q[j * z.size() + i] * z[i];
    const auto& range = map.ranges()[j];
    f[j] = range.lo + range.width() * (std::tanh(u) + 1.0) / 2.0;
  }
  return f;
}

// G(z): [n, k] latents -> [n, H*W] images.
inline Tensor generate(const Tensor& z, const MixingMap& map) {
  return render(factors_of(z, map), map.config().height, map.config().width);
}

// Single latent -> one [H, W] image.
inline Tensor generate_image(std::span<const double> z, const MixingMap& map) {
  Tensor batch = generate(Tensor::matrix(1, z.size(), std::vector<double>(z.begin(), z.end())), map);
  return reshape(batch, {map.config().height, map.config().width});
}

// Mixed coordinates u = Q z for one latent.
inline std::array<double, kFactorCount> mixed_coordinates(std::span<const double> z, const MixingMap& map) {
  std::array<double, kFactorCount> u{};
  const auto q = map.q().data();
  for (std::size_t j = 0; j < kFactorCount; ++j)
    for (std::size_t i = 0; i < z.size(); ++i) u[j] += q[j * z.size() + i] * z[i];
  return u;
}

// Moves z along Q^T e_j so that its j-th mixed coordinate becomes `value`,
// leaving the other mixed coordinates (and the null-space part) unchanged.
inline void set_mixed_coordinate(std::span<double> z, std::size_t j, double value, const MixingMap& map) {
  const auto q = map.q().data();
  const std::size_t k = z.size();
  double current = 0.0;
  for (std::size_t i = 0; i < k; ++i) current += q[j * k + i] * z[i];
  const double delta = value - current;
  for (std::size_t i = 0; i < k; ++i) z[i] += delta * q[j * k + i];
}

}  // namespace sre
