#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mofelab {

// Dense MLP: rectifier on hidden layers, identity on the output layer.
// Weights are row-major (out x in). All arithmetic is IEEE-754 double.
struct Mlp {
  std::vector<std::size_t> dims;             // input -> hidden... -> output
  std::vector<std::vector<double>> weights;  // one matrix per layer
  std::vector<std::vector<double>> biases;   // one vector per layer

  std::size_t layers() const { return weights.size(); }
  std::size_t in_dim() const { return dims.front(); }
  std::size_t out_dim() const { return dims.back(); }
  std::size_t param_count() const;
};

// Gradients (or any other shape-congruent accumulator) for an Mlp.
struct GradientSet {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  void add_scaled(const GradientSet& other, double alpha);
  void scale(double alpha);
};

// Per-layer intermediate values kept for the backward pass.
struct MlpTrace {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;  // z_l = W_l a_l + b_l
  std::vector<std::vector<double>> act;  // a_l; act[0] == input, act[l] = relu(z_{l-1})
  std::vector<double> out;               // == pre.back()
};

struct AdamState {
  std::vector<std::vector<double>> m_w, v_w;
  std::vector<std::vector<double>> m_b, v_b;
  long step = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Weights uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)], biases zero.
// Deterministic given (dims, seed). Throws ConfigError on an empty or
// non-positive dim list.
Mlp mlp_init(const std::vector<std::size_t>& dims, std::uint64_t seed);

// Throws ShapeError on input length mismatch, NumericError if a layer
// produces a non-finite value.
std::vector<double> mlp_forward(const Mlp& m, std::span<const double> x);
MlpTrace mlp_forward_trace(const Mlp& m, std::span<const double> x);

// Accumulates d(loss)/d(params) into g given d(loss)/d(output); returns
// d(loss)/d(input). The rectifier's subgradient at exactly 0 is 0.
std::vector<double> mlp_backward(const Mlp& m, const MlpTrace& t,
                                 std::span<const double> dout, GradientSet& g);

GradientSet zero_grads(const Mlp& m);

AdamState make_adam(const Mlp& m, double lr);

// Bias-corrected Adam update in place; step counter +1. Throws ShapeError if
// grads or state do not match the model.
void adam_step(Mlp& m, const GradientSet& g, AdamState& s);

// Central differences (f(p+h) - f(p-h)) / 2h for every parameter of a model
// under an arbitrary scalar probe. Throws ConfigError unless h > 0.
GradientSet finite_diff_grad(Mlp& m, const std::function<double(const Mlp&)>& f,
                             double h);

// Flat row-major parameter order: layer 0 weights, layer 0 biases, layer 1
// weights, ... Used by the checkpoint container and finite differences.
std::vector<double> flatten_params(const Mlp& m);
void unflatten_params(Mlp& m, std::span<const double> flat);

}  // namespace mofelab
