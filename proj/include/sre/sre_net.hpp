#pragma once

// Scale Ranking Estimator: a fully connected tanh network from a flattened
// image to one unbounded scale estimate per direction.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sre/rng.hpp"
#include "sre/tensor.hpp"

namespace sre {

struct DenseLayer {
  Tensor weight;  // [fan_in, fan_out]
  Tensor bias;    // [fan_out]
};

struct SREParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().weight.dim(0); }
  std::size_t output_dim() const { return layers.back().weight.dim(1); }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& l : layers) {
      l.weight.set_requires_grad(on);
      l.bias.set_requires_grad(on);
    }
  }

  SREParams clone() const {
    SREParams copy;
    for (const auto& l : layers) copy.layers.push_back({l.weight.clone(), l.bias.clone()});
    return copy;
  }
};

inline constexpr std::size_t kHidden1 = 256;
inline constexpr std::size_t kHidden2 = 128;

// Weights ~ N(0, 1/fan_in), biases zero.
inline SREParams init_sre(std::uint64_t seed, std::size_t input_dim, std::size_t output_dim,
                          std::vector<std::size_t> hidden = {kHidden1, kHidden2}) {
  Rng rng(derive_seed(seed, "sre-init"));
  SREParams params;
  std::size_t fan_in = input_dim;
  hidden.push_back(output_dim);
  for (std::size_t fan_out : hidden) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = scale * rng.normal();
    params.layers.push_back({Tensor::matrix(fan_in, fan_out, std::move(w)), Tensor::zeros({fan_out})});
    fan_in = fan_out;
  }
  return params;
}

// images: [n, H*W] (or one [H, W] image) -> [n, d] predicted scales.
inline Tensor sre_forward(const Tensor& images, const SREParams& params) {
  if (params.layers.empty()) throw std::invalid_argument("sre_forward: network has no layers");
  const std::size_t input = params.input_dim();
  Tensor x;
  if (images.rank() == 2 && images.dim(1) == input) {
    x = images;
  } else if (images.size() == input) {
    x = reshape(images, {1, input});
  } else if (images.rank() == 3) {
    x = flatten(images);
  } else {
    x = images;
  }
  if (x.rank() != 2 || x.dim(1) != input) {
    throw ShapeError("sre_forward: image of shape " + shape_str(images.shape()) + " does not match input size " +
                     std::to_string(params.input_dim()));
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = add_bias(matmul(x, params.layers[i].weight), params.layers[i].bias);
    if (i + 1 < params.layers.size()) x = tanh(x);
  }
  return x;
}

}  // namespace sre
