#pragma once

// Disentanglement metrics over a representation r(z) and the oracle factors
// f(z) of the synthetic world: MIG, Factor-VAE, DCI disentanglement, β-VAE,
// plus the rescoring matrix and its diagonal-ratio summary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "sre/directions.hpp"
#include "sre/rng.hpp"
#include "sre/sre_net.hpp"
#include "sre/synth_world.hpp"
#include "sre/tensor.hpp"

namespace sre {

// Batch of latents [n, k] -> representations [n, d].
using Encoder = std::function<Tensor(const Tensor& latents)>;

struct MetricSettings {
  std::size_t bins = 20;
  std::size_t votes = 800;
  std::size_t probe = 64;
  std::size_t logistic_epochs = 200;
  double logistic_learning_rate = 0.01;
  std::uint64_t seed = 0;
};

struct EvalDataset {
  Tensor latents;          // [n, k]
  Tensor representations;  // [n, d]
  Tensor factors;          // [n, m]

  std::size_t size() const { return latents.dim(0); }
  std::size_t rep_dim() const { return representations.dim(1); }
  std::size_t factor_dim() const { return factors.dim(1); }
};

// Encoder r(z) = network(G(z)), evaluated in chunks without recording.
inline Encoder network_encoder(const MixingMap& world, const SREParams& params) {
  return [&world, &params](const Tensor& latents) {
    NoGradGuard no_grad;
    constexpr std::size_t kChunk = 256;
    const std::size_t n = latents.dim(0), k = latents.dim(1);
    std::vector<double> out;
    out.reserve(n * params.output_dim());
    for (std::size_t start = 0; start < n; start += kChunk) {
      const std::size_t rows = std::min(kChunk, n - start);
      std::vector<double> chunk(latents.data().begin() + start * k, latents.data().begin() + (start + rows) * k);
      const Tensor reps = sre_forward(generate(Tensor::matrix(rows, k, std::move(chunk)), world), params);
      out.insert(out.end(), reps.data().begin(), reps.data().end());
    }
    return Tensor::matrix(n, params.output_dim(), std::move(out));
  };
}

// Perfect representation r = f.
inline Encoder factor_encoder(const MixingMap& world) {
  return [&world](const Tensor& latents) {
    NoGradGuard no_grad;
    return factors_of(latents, world);
  };
}

// Representation independent of the input: fresh Gaussian noise every call.
inline Encoder noise_encoder(std::size_t dims, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(derive_seed(seed, "noise-encoder"));
  return [rng, dims](const Tensor& latents) {
    return Tensor::matrix(latents.dim(0), dims, rng->normals(latents.dim(0) * dims));
  };
}

inline EvalDataset build_eval_dataset(const MixingMap& world, const Encoder& encoder, std::size_t n,
                                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, "eval-dataset"));
  EvalDataset ds;
  ds.latents = Tensor::matrix(n, world.latent_dim(), rng.normals(n * world.latent_dim()));
  {
    NoGradGuard no_grad;
    ds.factors = factors_of(ds.latents, world);
  }
  ds.representations = encoder(ds.latents);
  return ds;
}

// ---------------------------------------------------------------------------
// Histogram mutual information

namespace detail {

inline std::vector<double> column(const Tensor& m, std::size_t c) {
  std::vector<double> out(m.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = m.at(r, c);
  return out;
}

}  // namespace detail

// Equal-width bins over the observed range; a constant column maps to bin 0.
inline std::vector<std::size_t> discretize_equal_width(std::span<const double> xs, std::size_t bins) {
  std::vector<std::size_t> out(xs.size(), 0);
  if (xs.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double t = (xs[i] - lo) / (hi - lo) * static_cast<double>(bins);
    out[i] = std::min(static_cast<std::size_t>(std::max(t, 0.0)), bins - 1);
  }
  return out;
}

// Plug-in entropy (nats) of a discrete sample.
inline double discrete_entropy(std::span<const std::size_t> a, std::size_t bins) {
  std::vector<double> counts(bins, 0.0);
  for (std::size_t v : a) counts[v] += 1.0;
  const double n = static_cast<double>(a.size());
  double h = 0.0;
  for (double c : counts) {
    if (c > 0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

// Plug-in mutual information (nats) from the joint histogram.
inline double mutual_information(std::span<const std::size_t> a, std::size_t bins_a, std::span<const std::size_t> b,
                                 std::size_t bins_b) {
  if (a.size() != b.size()) throw std::invalid_argument("mutual_information: sample sizes differ");
  if (a.empty()) return 0.0;
  std::vector<double> joint(bins_a * bins_b, 0.0), pa(bins_a, 0.0), pb(bins_b, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[a[i] * bins_b + b[i]] += 1.0;
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (std::size_t x = 0; x < bins_a; ++x) {
    for (std::size_t y = 0; y < bins_b; ++y) {
      const double c = joint[x * bins_b + y];
      if (c > 0) mi += (c / n) * std::log(c * n / (pa[x] * pb[y]));
    }
  }
  return std::max(mi, 0.0);
}

struct MutualInformationTable {
  std::vector<double> mi;                // [d, m], row-major
  std::vector<double> factor_entropy;    // [m]
  std::vector<double> significance;      // [d, m] threshold for chance-level MI
  std::size_t rep_dim = 0;
  std::size_t factor_dim = 0;

  double at(std::size_t i, std::size_t j) const { return mi[i * factor_dim + j]; }
};

inline MutualInformationTable mutual_information_table(const EvalDataset& ds, std::size_t bins) {
  MutualInformationTable t;
  t.rep_dim = ds.rep_dim();
  t.factor_dim = ds.factor_dim();
  std::vector<std::vector<std::size_t>> rb(t.rep_dim), fb(t.factor_dim);
  auto occupied = [bins](const std::vector<std::size_t>& v) {
    std::vector<bool> seen(bins, false);
    for (auto x : v) seen[x] = true;
    return static_cast<double>(std::count(seen.begin(), seen.end(), true));
  };
  std::vector<double> rocc(t.rep_dim), focc(t.factor_dim);
  for (std::size_t i = 0; i < t.rep_dim; ++i) {
    rb[i] = discretize_equal_width(detail::column(ds.representations, i), bins);
    rocc[i] = occupied(rb[i]);
  }
  for (std::size_t j = 0; j < t.factor_dim; ++j) {
    fb[j] = discretize_equal_width(detail::column(ds.factors, j), bins);
    focc[j] = occupied(fb[j]);
    t.factor_entropy.push_back(discrete_entropy(fb[j], bins));
  }
  const double n = static_cast<double>(ds.size());
  for (std::size_t i = 0; i < t.rep_dim; ++i) {
    for (std::size_t j = 0; j < t.factor_dim; ++j) {
      t.mi.push_back(mutual_information(rb[i], bins, fb[j], bins));
      // Under independence 2N * MI ~ chi^2 with (Br-1)(Bf-1) degrees of freedom.
      const double dof = std::max(rocc[i] - 1.0, 0.0) * std::max(focc[j] - 1.0, 0.0);
      t.significance.push_back((dof + 4.0 * std::sqrt(2.0 * dof)) / (2.0 * n));
    }
  }
  return t;
}

// Mean over factors of (top MI - second MI) / H(factor).
inline double mig(const EvalDataset& ds, const MetricSettings& settings = {}) {
  const auto t = mutual_information_table(ds, settings.bins);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t j = 0; j < t.factor_dim; ++j) {
    if (!(t.factor_entropy[j] > 0)) continue;
    std::vector<double> col(t.rep_dim);
    for (std::size_t i = 0; i < t.rep_dim; ++i) col[i] = t.at(i, j);
    std::sort(col.begin(), col.end(), std::greater<>());
    const double second = col.size() > 1 ? col[1] : 0.0;
    total += (col[0] - second) / t.factor_entropy[j];
    ++counted;
  }
  return counted ? std::clamp(total / static_cast<double>(counted), 0.0, 1.0) : 0.0;
}

// DCI disentanglement from a nonnegative importance matrix [d, m].
// Rows with zero total importance carry zero weight.
inline double dci_from_importance(std::span<const double> importance, std::size_t d, std::size_t m) {
  if (importance.size() != d * m) throw std::invalid_argument("dci: importance matrix size mismatch");
  double grand = 0.0;
  for (double v : importance) grand += v;
  if (!(grand > 0)) return 0.0;
  double score = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += importance[i * m + j];
    if (!(row > 0)) continue;
    double h = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double p = importance[i * m + j] / row;
      if (p > 0) h -= p * std::log(p);
    }
    const double disentanglement = m > 1 ? 1.0 - h / std::log(static_cast<double>(m)) : 1.0;
    score += (row / grand) * disentanglement;
  }
  return std::clamp(score, 0.0, 1.0);
}

// Importance = MI above its chance-level threshold, normalised by H(factor).
inline double dci_disentanglement(const EvalDataset& ds, const MetricSettings& settings = {}) {
  const auto t = mutual_information_table(ds, settings.bins);
  std::vector<double> importance(t.rep_dim * t.factor_dim, 0.0);
  for (std::size_t i = 0; i < t.rep_dim; ++i) {
    for (std::size_t j = 0; j < t.factor_dim; ++j) {
      const std::size_t idx = i * t.factor_dim + j;
      const double excess = t.mi[idx] - t.significance[idx];
      if (excess > 0 && t.factor_entropy[j] > 0) importance[idx] = excess / t.factor_entropy[j];
    }
  }
  return dci_from_importance(importance, t.rep_dim, t.factor_dim);
}

// ---------------------------------------------------------------------------
// Vote-based metrics

namespace detail {

// Latents sharing one mixed coordinate: each row gets u_j = value.
inline Tensor latents_with_fixed_factor(Rng& rng, const MixingMap& world, std::size_t count, std::size_t j,
                                        double value) {
  const std::size_t k = world.latent_dim();
  std::vector<double> z = rng.normals(count * k);
  for (std::size_t r = 0; r < count; ++r) set_mixed_coordinate(std::span<double>(z).subspan(r * k, k), j, value, world);
  return Tensor::matrix(count, k, std::move(z));
}

inline double sample_mixed_value(Rng& rng) { return rng.normal(); }

}  // namespace detail

inline double factor_vae_score(const EvalDataset& ds, const MixingMap& world, const Encoder& encoder,
                               const MetricSettings& settings = {}) {
  const std::size_t d = ds.rep_dim(), m = ds.factor_dim();
  std::vector<double> scale(d);
  std::vector<bool> usable(d, true);
  for (std::size_t i = 0; i < d; ++i) {
    const auto col = detail::column(ds.representations, i);
    const double mu = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    double var = 0.0;
    for (double v : col) var += (v - mu) * (v - mu);
    scale[i] = std::sqrt(var / static_cast<double>(col.size()));
    if (!(scale[i] > 1e-12)) {
      usable[i] = false;
      std::cerr << "warning: factor_vae_score: representation dim " << i << " has zero variance; excluded\n";
    }
  }
  if (std::none_of(usable.begin(), usable.end(), [](bool b) { return b; })) return 0.0;

  Rng rng(derive_seed(settings.seed, "factor-vae"));
  std::vector<std::pair<std::size_t, std::size_t>> votes;  // (argmin dim, factor)
  for (std::size_t v = 0; v < settings.votes; ++v) {
    const std::size_t j = rng.index(m);
    const double value = detail::sample_mixed_value(rng);
    const Tensor reps = encoder(detail::latents_with_fixed_factor(rng, world, settings.probe, j, value));
    std::size_t best = d;
    double best_var = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      if (!usable[i]) continue;
      double mu = 0.0;
      for (std::size_t r = 0; r < settings.probe; ++r) mu += reps.at(r, i) / scale[i];
      mu /= static_cast<double>(settings.probe);
      double var = 0.0;
      for (std::size_t r = 0; r < settings.probe; ++r) {
        const double x = reps.at(r, i) / scale[i] - mu;
        var += x * x;
      }
      if (var < best_var) {
        best_var = var;
        best = i;
      }
    }
    votes.emplace_back(best, j);
  }

  const std::size_t train = votes.size() / 2;
  std::vector<std::vector<std::size_t>> counts(d, std::vector<std::size_t>(m, 0));
  for (std::size_t v = 0; v < train; ++v) ++counts[votes[v].first][votes[v].second];
  std::vector<std::size_t> predict(d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    predict[i] = static_cast<std::size_t>(std::max_element(counts[i].begin(), counts[i].end()) - counts[i].begin());
  }
  std::size_t correct = 0;
  for (std::size_t v = train; v < votes.size(); ++v) correct += predict[votes[v].first] == votes[v].second;
  const std::size_t held_out = votes.size() - train;
  return held_out ? static_cast<double>(correct) / static_cast<double>(held_out) : 0.0;
}

inline double beta_vae_score(const EvalDataset& ds, const MixingMap& world, const Encoder& encoder,
                             const MetricSettings& settings = {}) {
  const std::size_t d = ds.rep_dim(), m = ds.factor_dim();
  if (m == 1) return 1.0;
  Rng rng(derive_seed(settings.seed, "beta-vae"));
  const std::size_t k = world.latent_dim();

  std::vector<std::vector<double>> features;
  std::vector<std::size_t> labels;
  for (std::size_t v = 0; v < settings.votes; ++v) {
    const std::size_t j = rng.index(m);
    std::vector<double> first = rng.normals(settings.probe * k);
    std::vector<double> second = rng.normals(settings.probe * k);
    for (std::size_t p = 0; p < settings.probe; ++p) {
      const auto a = std::span<double>(first).subspan(p * k, k);
      const auto b = std::span<double>(second).subspan(p * k, k);
      set_mixed_coordinate(b, j, mixed_coordinates(a, world)[j], world);
    }
    const Tensor ra = encoder(Tensor::matrix(settings.probe, k, std::move(first)));
    const Tensor rb = encoder(Tensor::matrix(settings.probe, k, std::move(second)));
    std::vector<double> feature(d, 0.0);
    for (std::size_t p = 0; p < settings.probe; ++p)
      for (std::size_t i = 0; i < d; ++i) feature[i] += std::abs(ra.at(p, i) - rb.at(p, i));
    for (double& f : feature) f /= static_cast<double>(settings.probe);
    features.push_back(std::move(feature));
    labels.push_back(j);
  }

  const std::size_t train = features.size() / 2;
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t v = 0; v < train; ++v)
    for (std::size_t i = 0; i < d; ++i) mu[i] += features[v][i] / static_cast<double>(train);
  for (std::size_t v = 0; v < train; ++v)
    for (std::size_t i = 0; i < d; ++i) sd[i] += (features[v][i] - mu[i]) * (features[v][i] - mu[i]) / static_cast<double>(train);
  for (double& s : sd) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  for (auto& f : features)
    for (std::size_t i = 0; i < d; ++i) f[i] = (f[i] - mu[i]) / sd[i];

  // Multinomial logistic regression, per-sample SGD.
  std::vector<double> w(m * d, 0.0), b(m, 0.0), logits(m), prob(m);
  std::vector<std::size_t> order(train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto scores = [&](const std::vector<double>& x) {
    for (std::size_t c = 0; c < m; ++c) {
      logits[c] = b[c];
      for (std::size_t i = 0; i < d; ++i) logits[c] += w[c * d + i] * x[i];
    }
  };
  for (std::size_t epoch = 0; epoch < settings.logistic_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t v : order) {
      scores(features[v]);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (std::size_t c = 0; c < m; ++c) z += (prob[c] = std::exp(logits[c] - mx));
      for (std::size_t c = 0; c < m; ++c) {
        const double g = prob[c] / z - (c == labels[v] ? 1.0 : 0.0);
        b[c] -= settings.logistic_learning_rate * g;
        for (std::size_t i = 0; i < d; ++i) w[c * d + i] -= settings.logistic_learning_rate * g * features[v][i];
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t v = train; v < features.size(); ++v) {
    scores(features[v]);
    correct += static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == labels[v];
  }
  const std::size_t held_out = features.size() - train;
  return held_out ? static_cast<double>(correct) / static_cast<double>(held_out) : 0.0;
}

// ---------------------------------------------------------------------------
// Rescoring

struct RescoringMatrix {
  std::size_t rows = 0;  // directions
  std::size_t cols = 0;  // factors
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

// R_ij = mean |f_j(z + magnitude * D_i) - f_j(z)| / (hi_j - lo_j).
inline RescoringMatrix rescoring_matrix(const MixingMap& world, const DirectionMatrix& directions,
                                        double shift_magnitude = 3.0, std::size_t samples = 2000,
                                        std::uint64_t seed = 0) {
  const std::size_t d = directions.count(), m = world.factor_count(), k = world.latent_dim();
  if (directions.latent_dim() != k) throw ShapeError("rescoring_matrix: direction matrix does not match the world");
  Rng rng(derive_seed(seed, "rescoring"));
  RescoringMatrix out{d, m, std::vector<double>(d * m, 0.0)};
  std::vector<double> moved(k);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::vector<double> z = rng.normals(k);
    const auto base = factors_of(z, world);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t r = 0; r < k; ++r) moved[r] = z[r] + shift_magnitude * directions(r, i);
      const auto f = factors_of(moved, world);
      for (std::size_t j = 0; j < m; ++j) out.values[i * m + j] += std::abs(f[j] - base[j]);
    }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.values[i * m + j] /= static_cast<double>(samples) * world.ranges()[j].width();
  return out;
}

inline constexpr double kDiagonalRatioCap = 1e9;

// Sum of squared matched entries over the sum of squares of everything else.
inline double diagonal_ratio(const RescoringMatrix& r, const std::vector<Match>& matches) {
  std::vector<bool> diagonal(r.values.size(), false);
  for (const auto& m : matches) diagonal[m.direction * r.cols + m.factor] = true;
  double on = 0.0, off = 0.0;
  for (std::size_t i = 0; i < r.values.size(); ++i) (diagonal[i] ? on : off) += r.values[i] * r.values[i];
  if (!(off > 0)) return kDiagonalRatioCap;
  return std::min(on / off, kDiagonalRatioCap);
}

// Row i paired with factor i.
inline double diagonal_ratio(const RescoringMatrix& r) {
  std::vector<Match> identity;
  for (std::size_t i = 0; i < std::min(r.rows, r.cols); ++i) identity.push_back({i, i, 1.0});
  return diagonal_ratio(r, identity);
}

}  // namespace sre
