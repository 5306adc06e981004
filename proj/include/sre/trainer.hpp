#pragma once

// Self-supervised training of the direction matrix D and the scale ranking
// network. Each iteration runs two phases on freshly sampled pairs:
//   1. D frozen, network trainable: Adam step on the network.
//   2. Network frozen, D trainable: Adam step on D, then QR re-projection.
// The loss is the ranking BCE between sigmoid(ε̂¹ᵢ − ε̂²ᵢ) and 1[ε¹ᵢ > ε²ᵢ],
// summed over directions and averaged over the batch.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sre/adam.hpp"
#include "sre/checkpoint.hpp"
#include "sre/directions.hpp"
#include "sre/rng.hpp"
#include "sre/sre_net.hpp"
#include "sre/synth_world.hpp"
#include "sre/tensor.hpp"

namespace sre {

enum class InitMode { kRandom, kSefa };

inline std::string to_string(InitMode mode) { return mode == InitMode::kRandom ? "random" : "sefa"; }

struct TrainConfig {
  double e = 1.0;
  std::size_t iterations = 3000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double direction_learning_rate = 1e-2;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> world_seed;  // defaults to seed
  std::size_t latent_dim = 8;
  std::size_t directions = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  InitMode init = InitMode::kSefa;
  bool reuse_batch = false;
  std::size_t log_every = 50;

  std::uint64_t resolved_world_seed() const { return world_seed.value_or(seed); }

  WorldConfig world() const { return {latent_dim, height, width, resolved_world_seed()}; }

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw std::invalid_argument(key + ": " + why);
    };
    if (!(e > 0.0) || !std::isfinite(e)) fail("e", "must be a positive finite number");
    if (batch_size < 1) fail("batch_size", "must be at least 1");
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
    if (!(direction_learning_rate > 0.0)) fail("direction_learning_rate", "must be positive");
    if (latent_dim < kFactorCount) fail("k", "must be at least " + std::to_string(kFactorCount));
    if (directions < 1 || directions > latent_dim) fail("d", "must be in [1, k]");
    if (height < 13 || width < 13) fail("height/width", "must be at least 13");
    if (log_every < 1) fail("log_every", "must be at least 1");
  }

  // Canonical key=value text, one line per key in fixed order.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "batch_size=" << batch_size << '\n'
       << "d=" << directions << '\n'
       << "direction_learning_rate=" << direction_learning_rate << '\n'
       << "e=" << e << '\n'
       << "height=" << height << '\n'
       << "init=" << to_string(init) << '\n'
       << "iterations=" << iterations << '\n'
       << "k=" << latent_dim << '\n'
       << "learning_rate=" << learning_rate << '\n'
       << "log_every=" << log_every << '\n'
       << "reuse_batch=" << (reuse_batch ? "true" : "false") << '\n'
       << "seed=" << seed << '\n'
       << "width=" << width << '\n'
       << "world_seed=" << resolved_world_seed() << '\n';
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PairBatch {
  Tensor z;       // [n, k]
  Tensor eps1;    // [n, d]
  Tensor eps2;    // [n, d]
  Tensor labels;  // [n, d], 1 where eps1 > eps2
};

// y = 1 where eps1 > eps2, else 0 (ties included).
inline Tensor pseudo_labels(const Tensor& eps1, const Tensor& eps2) {
  if (eps1.shape() != eps2.shape()) {
    throw ShapeError("pseudo_labels: shapes " + shape_str(eps1.shape()) + " and " + shape_str(eps2.shape()));
  }
  std::vector<double> y(eps1.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = eps1[i] > eps2[i] ? 1.0 : 0.0;
  return Tensor(eps1.shape(), std::move(y));
}

inline PairBatch sample_pair_batch(Rng& rng, std::size_t batch_size, std::size_t latent_dim, std::size_t directions,
                                   double e) {
  PairBatch b;
  b.z = Tensor::matrix(batch_size, latent_dim, rng.normals(batch_size * latent_dim));
  b.eps1 = Tensor::matrix(batch_size, directions, rng.uniforms_open(batch_size * directions, -e, e));
  b.eps2 = Tensor::matrix(batch_size, directions, rng.uniforms_open(batch_size * directions, -e, e));
  b.labels = pseudo_labels(b.eps1, b.eps2);
  return b;
}

// Ranking logits ε̂¹ − ε̂² for a batch, through G and the network.
inline Tensor pair_logits(const PairBatch& batch, const DirectionMatrix& directions, const MixingMap& world,
                          const SREParams& params) {
  const Tensor images1 = generate(shift(batch.z, directions, batch.eps1), world);
  const Tensor images2 = generate(shift(batch.z, directions, batch.eps2), world);
  return sub(sre_forward(images1, params), sre_forward(images2, params));
}

// Mean over the batch of the per-direction BCE sum.
inline Tensor pair_loss_from_logits(const Tensor& logits, const Tensor& labels) {
  return scale(bce_with_logits(logits, labels), static_cast<double>(logits.dim(1)));
}

inline Tensor pair_loss(const PairBatch& batch, const DirectionMatrix& directions, const MixingMap& world,
                        const SREParams& params) {
  return pair_loss_from_logits(pair_logits(batch, directions, world, params), batch.labels);
}

struct StepLosses {
  double sre_phase = 0.0;
  double direction_phase = 0.0;
};

struct LogRow {
  std::size_t iter = 0;
  double loss_sre = 0.0;
  double loss_d = 0.0;
  double alignment = 0.0;
};

inline constexpr double kOrthonormalityTolerance = 1e-6;

class Trainer {
 public:
  explicit Trainer(TrainConfig config)
      : config_((config.validate(), std::move(config))),
        world_(MixingMap::from_seed(config_.world())),
        truth_(ground_truth_directions(world_)),
        directions_(config_.init == InitMode::kSefa
                        ? init_sefa_analog(world_, config_.directions)
                        : init_random_orthonormal(config_.latent_dim, config_.directions, config_.seed)),
        sre_(init_sre(config_.seed, config_.height * config_.width, config_.directions)),
        rng_(derive_seed(config_.seed, "train-sampling")) {
    sre_optimizer_ = AdamState(sre_.tensors(), AdamOptions{config_.learning_rate});
    direction_optimizer_ = AdamState({directions_.tensor()}, AdamOptions{config_.direction_learning_rate});
  }

  StepLosses step() {
    StepLosses losses;
    PairBatch batch = sample();
    losses.sre_phase = sre_phase(batch);
    if (!config_.reuse_batch) batch = sample();
    losses.direction_phase = direction_phase(batch);
    ++iteration_;
    return losses;
  }

  PairBatch sample() {
    return sample_pair_batch(rng_, config_.batch_size, config_.latent_dim, config_.directions, config_.e);
  }

  // Network update with D frozen.
  double sre_phase(const PairBatch& batch) {
    active_tape().clear();
    directions_.set_requires_grad(false);
    sre_.set_requires_grad(true);
    Tensor loss = pair_loss(batch, directions_, world_, sre_);
    const double value = loss.item();
    guard_finite(value, "network");
    backward(loss);
    adam_step(sre_optimizer_);
    sre_.set_requires_grad(false);
    return value;
  }

  // D update with the network frozen, then QR re-projection.
  double direction_phase(const PairBatch& batch) {
    active_tape().clear();
    sre_.set_requires_grad(false);
    directions_.set_requires_grad(true);
    Tensor loss = pair_loss(batch, directions_, world_, sre_);
    const double value = loss.item();
    guard_finite(value, "direction");
    backward(loss);
    adam_step(direction_optimizer_);
    directions_.set_requires_grad(false);
    orthonormalize(directions_);
    const double err = directions_.orthonormality_error();
    max_orthonormality_error_ = std::max(max_orthonormality_error_, err);
    if (err > kOrthonormalityTolerance) {
      throw std::logic_error("orthonormality invariant violated at iteration " + std::to_string(iteration_) +
                             ": max|D^T D - I| = " + std::to_string(err));
    }
    return value;
  }

  double alignment() const { return alignment_score(directions_, truth_); }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.latent_dim = static_cast<std::uint32_t>(config_.latent_dim);
    c.directions = static_cast<std::uint32_t>(config_.directions);
    c.factors = static_cast<std::uint32_t>(kFactorCount);
    c.height = static_cast<std::uint32_t>(config_.height);
    c.width = static_cast<std::uint32_t>(config_.width);
    c.config_hash = config_.hash();
    c.seed = config_.seed;
    c.q = world_.q().clone();
    c.direction_matrix = DirectionMatrix(directions_.tensor().clone());
    c.sre = sre_.clone();
    return c;
  }

  const TrainConfig& config() const { return config_; }
  const MixingMap& world() const { return world_; }
  const DirectionMatrix& truth() const { return truth_; }
  DirectionMatrix& directions() { return directions_; }
  const DirectionMatrix& directions() const { return directions_; }
  SREParams& sre() { return sre_; }
  const SREParams& sre() const { return sre_; }
  std::size_t iteration() const { return iteration_; }
  double max_orthonormality_error() const { return max_orthonormality_error_; }

 private:
  void guard_finite(double loss, const char* phase) const {
    if (std::isfinite(loss)) return;
    std::ostringstream os;
    os.precision(10);
    os << "training diverged at iteration " << iteration_ << " (" << phase << " phase): loss = " << loss
       << "\n  D column norms:";
    for (std::size_t c = 0; c < directions_.count(); ++c) {
      double n2 = 0;
      for (std::size_t r = 0; r < directions_.latent_dim(); ++r) n2 += directions_(r, c) * directions_(r, c);
      os << ' ' << std::sqrt(n2);
    }
    os << "\n  network layer max |w|:";
    for (const auto& l : sre_.layers) {
      double mx = 0;
      for (double v : l.weight.data()) mx = std::max(mx, std::abs(v));
      os << ' ' << mx;
    }
    throw DivergenceError(os.str());
  }

  TrainConfig config_;
  MixingMap world_;
  DirectionMatrix truth_;
  DirectionMatrix directions_;
  SREParams sre_;
  AdamState sre_optimizer_;
  AdamState direction_optimizer_;
  Rng rng_;
  std::size_t iteration_ = 0;
  double max_orthonormality_error_ = 0.0;
};

struct TrainResult {
  Checkpoint initial;
  Checkpoint final;
  std::vector<LogRow> log;
  std::vector<StepLosses> losses;  // every iteration
  std::vector<double> alignment;   // after every iteration
  double max_orthonormality_error = 0.0;
};

inline TrainResult train(const TrainConfig& config, const std::function<void(const LogRow&)>& on_log = {}) {
  Trainer trainer(config);
  TrainResult result;
  result.initial = trainer.checkpoint();
  result.losses.reserve(config.iterations);
  result.alignment.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const StepLosses losses = trainer.step();
    const double alignment = trainer.alignment();
    result.losses.push_back(losses);
    result.alignment.push_back(alignment);
    if (it % config.log_every == 0 || it + 1 == config.iterations) {
      LogRow row{it, losses.sre_phase, losses.direction_phase, alignment};
      result.log.push_back(row);
      if (on_log) on_log(row);
    }
  }
  result.max_orthonormality_error = trainer.max_orthonormality_error();
  result.final = trainer.checkpoint();
  return result;
}

// First iteration (1-based count of completed steps) whose alignment reaches
// `threshold`, or nullopt.
inline std::optional<std::size_t> first_crossing(const std::vector<double>& alignment, double threshold) {
  for (std::size_t i = 0; i < alignment.size(); ++i) {
    if (alignment[i] >= threshold) return i + 1;
  }
  return std::nullopt;
}

}  // namespace sre
