#pragma once

#include <string>
#include <vector>

#include "vardlab/rng.hpp"
#include "vardlab/tape.hpp"
#include "vardlab/tensor.hpp"

namespace vardlab {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;  // accumulated across tapes, zeroed by the optimizer step

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() { grad = Tensor::zeros(value.shape); }
};

enum class Activation { Linear, Tanh, Relu };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

// Bindings between a model's Params and the leaves pushed onto a tape
// during one forward pass.
struct ParamBinding {
  std::vector<Param*> params;
  std::vector<Var> vars;

  void bind(Param& p, Var v) {
    params.push_back(&p);
    vars.push_back(v);
  }
  // Add tape gradients into each bound Param's grad accumulator.
  void accumulate(const Tape& tape) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& g = tape.grad(vars[i]);
      for (std::size_t j = 0; j < g.size(); ++j)
        params[i]->grad.data[j] += g.data[j];
    }
  }
};

struct Mlp {
  struct Layer {
    Param weight;  // (in, out)
    Param bias;    // (out,)
    Activation act;
  };
  std::vector<Layer> layers;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;

  // Hidden layers use `hidden_act`, the output layer is linear.
  // Init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static Mlp make(std::size_t input, const std::vector<std::size_t>& hidden,
                  std::size_t output, Activation hidden_act, Rng& rng,
                  const std::string& name_prefix = "mlp");

  // input: (batch, input_dim). Records the whole pass on the tape; if
  // `bind` is given, parameter leaves are registered there for gradient
  // accumulation after backward().
  Var forward(Tape& tape, Var input, ParamBinding* bind = nullptr) const;

  // Straight-line evaluation without a tape (sampling hot path).
  Tensor apply(const Tensor& input) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
};

// Transformer-style embedding of an integer timestep; dim must be even.
// Layout: (sin(t*f_0), cos(t*f_0), sin(t*f_1), cos(t*f_1), ...).
Tensor sinusoidal_time_embedding(long t, std::size_t dim);

// Fourier features of a continuous time in [0,1]; used by the flow model.
Tensor fourier_time_features(double t, std::size_t dim);

}  // namespace vardlab
