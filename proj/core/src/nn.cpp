#include "vardlab/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vardlab {

Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "linear";
}

Mlp Mlp::make(std::size_t input, const std::vector<std::size_t>& hidden,
              std::size_t output, Activation hidden_act, Rng& rng,
              const std::string& name_prefix) {
  if (input == 0 || output == 0)
    throw std::invalid_argument("Mlp::make: zero dimension");
  Mlp mlp;
  mlp.input_dim = input;
  mlp.output_dim = output;
  std::vector<std::size_t> dims;
  dims.push_back(input);
  for (auto h : hidden) dims.push_back(h);
  dims.push_back(output);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor W = Tensor::zeros({fan_in, fan_out});
    for (auto& v : W.data) v = rng.uniform(-bound, bound);
    Tensor b = Tensor::zeros({fan_out});
    const bool last = (l + 2 == dims.size());
    Layer layer;
    layer.weight = Param(name_prefix + ".layer" + std::to_string(l) + ".weight",
                         std::move(W));
    layer.bias = Param(name_prefix + ".layer" + std::to_string(l) + ".bias",
                       std::move(b));
    layer.act = last ? Activation::Linear : hidden_act;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

Var Mlp::forward(Tape& tape, Var input, ParamBinding* bind) const {
  const Tensor& x = tape.value(input);
  if (x.shape.size() != 2 || x.shape[1] != input_dim)
    throw std::invalid_argument("Mlp::forward: input dim mismatch");
  Var h = input;
  for (const Layer& layer : layers) {
    // Params are shared model state; binding lets the caller route tape
    // gradients back into them. const_cast is confined to the binding.
    Var w = tape.leaf(layer.weight.value);
    Var b = tape.leaf(layer.bias.value);
    if (bind) {
      bind->bind(const_cast<Param&>(layer.weight), w);
      bind->bind(const_cast<Param&>(layer.bias), b);
    }
    h = tape.add_rowvec(tape.matmul(h, w), b);
    switch (layer.act) {
      case Activation::Linear: break;
      case Activation::Tanh: h = tape.tanh_op(h); break;
      case Activation::Relu: h = tape.relu_op(h); break;
    }
  }
  return h;
}

Tensor Mlp::apply(const Tensor& input) const {
  if (input.shape.size() != 2 || input.shape[1] != input_dim)
    throw std::invalid_argument("Mlp::apply: input dim mismatch");
  Tensor h = input;
  for (const Layer& layer : layers) {
    const std::size_t m = h.shape[0], k = h.shape[1],
                      p = layer.weight.value.shape[1];
    Tensor out = Tensor::zeros({m, p});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const double hv = h.data[i * k + l];
        if (hv == 0.0) continue;
        for (std::size_t j = 0; j < p; ++j)
          out.data[i * p + j] += hv * layer.weight.value.data[l * p + j];
      }
      for (std::size_t j = 0; j < p; ++j)
        out.data[i * p + j] += layer.bias.value.data[j];
    }
    switch (layer.act) {
      case Activation::Linear: break;
      case Activation::Tanh:
        for (auto& v : out.data) v = std::tanh(v);
        break;
      case Activation::Relu:
        for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
        break;
    }
    h = std::move(out);
  }
  return h;
}

std::vector<Param*> Mlp::parameters() {
  std::vector<Param*> ps;
  for (auto& layer : layers) {
    ps.push_back(&layer.weight);
    ps.push_back(&layer.bias);
  }
  return ps;
}

std::vector<const Param*> Mlp::parameters() const {
  std::vector<const Param*> ps;
  for (const auto& layer : layers) {
    ps.push_back(&layer.weight);
    ps.push_back(&layer.bias);
  }
  return ps;
}

Tensor sinusoidal_time_embedding(long t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_time_embedding: dim must be even");
  if (t < 0)
    throw std::invalid_argument("sinusoidal_time_embedding: t must be >= 0");
  Tensor e = Tensor::zeros({dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) /
                              static_cast<double>(dim));
    e.data[2 * i] = std::sin(static_cast<double>(t) * freq);
    e.data[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

Tensor fourier_time_features(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0)
    throw std::invalid_argument("fourier_time_features: dim must be even");
  Tensor e = Tensor::zeros({dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = 2.0 * M_PI * std::pow(2.0, static_cast<double>(i));
    e.data[2 * i] = std::sin(t * freq);
    e.data[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

}  // namespace vardlab
