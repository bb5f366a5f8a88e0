#include "mofelab/nn.hpp"

#include <cmath>
#include <random>
#include <string>

#include "mofelab/error.hpp"
#include "mofelab/kernels/kernels.hpp"
#include "mofelab/rng.hpp"

namespace mofelab {

namespace {

constexpr std::uint64_t kInitStreamTag = 0x6d6c705f696e6974;  // "mlp_init"

void check_dims(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) {
    throw ConfigError("mlp: need at least an input and an output dim, got " +
                      std::to_string(dims.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("mlp: layer dims must be positive");
  }
}

void check_layer_finite(const std::vector<double>& z, std::size_t layer) {
  for (double v : z) {
    if (!std::isfinite(v)) {
      throw NumericError("mlp: non-finite value in layer " +
                         std::to_string(layer));
    }
  }
}

// z = W a + b for one layer.
std::vector<double> layer_affine(const Mlp& m, std::size_t l,
                                 const std::vector<double>& a) {
  const std::size_t rows = m.dims[l + 1];
  const std::size_t cols = m.dims[l];
  std::vector<double> z(rows);
  kernels::matvec(m.weights[l].data(), a.data(), z.data(), rows, cols);
  kernels::axpy(1.0, m.biases[l].data(), z.data(), rows);
  return z;
}

void check_congruent(const Mlp& m, const GradientSet& g) {
  if (g.weights.size() != m.layers() || g.biases.size() != m.layers()) {
    throw ShapeError("gradients: layer count mismatch");
  }
  for (std::size_t l = 0; l < m.layers(); ++l) {
    if (g.weights[l].size() != m.weights[l].size() ||
        g.biases[l].size() != m.biases[l].size()) {
      throw ShapeError("gradients: shape mismatch at layer " +
                       std::to_string(l));
    }
  }
}

}  // namespace

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

void GradientSet::add_scaled(const GradientSet& other, double alpha) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    kernels::axpy(alpha, other.weights[l].data(), weights[l].data(),
                  weights[l].size());
    kernels::axpy(alpha, other.biases[l].data(), biases[l].data(),
                  biases[l].size());
  }
}

void GradientSet::scale(double alpha) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    kernels::scale(alpha, weights[l].data(), weights[l].size());
    kernels::scale(alpha, biases[l].data(), biases[l].size());
  }
}

Mlp mlp_init(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  check_dims(dims);
  Mlp m;
  m.dims = dims;
  Rng rng = make_rng(seed, kInitStreamTag);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(fan_out * fan_in);
    for (double& x : w) x = dist(rng);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(fan_out, 0.0);
  }
  return m;
}

std::vector<double> mlp_forward(const Mlp& m, std::span<const double> x) {
  return mlp_forward_trace(m, x).out;
}

MlpTrace mlp_forward_trace(const Mlp& m, std::span<const double> x) {
  if (x.size() != m.in_dim()) {
    throw ShapeError("mlp_forward: input length " + std::to_string(x.size()) +
                     ", expected " + std::to_string(m.in_dim()));
  }
  MlpTrace t;
  t.input.assign(x.begin(), x.end());
  t.act.push_back(t.input);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    std::vector<double> z = layer_affine(m, l, t.act.back());
    check_layer_finite(z, l);
    if (l + 1 < m.layers()) {
      std::vector<double> a(z.size());
      kernels::relu_forward(z.data(), a.data(), z.size());
      t.act.push_back(std::move(a));
    }
    t.pre.push_back(std::move(z));
  }
  t.out = t.pre.back();
  return t;
}

std::vector<double> mlp_backward(const Mlp& m, const MlpTrace& t,
                                 std::span<const double> dout,
                                 GradientSet& g) {
  check_congruent(m, g);
  if (dout.size() != m.out_dim()) {
    throw ShapeError("mlp_backward: dout length mismatch");
  }
  std::vector<double> delta(dout.begin(), dout.end());
  for (std::size_t li = m.layers(); li-- > 0;) {
    const std::size_t rows = m.dims[li + 1];
    const std::size_t cols = m.dims[li];
    kernels::axpy(1.0, delta.data(), g.biases[li].data(), rows);
    kernels::ger_acc(delta.data(), t.act[li].data(), g.weights[li].data(),
                     rows, cols);
    std::vector<double> da(cols, 0.0);
    kernels::matvec_t_acc(m.weights[li].data(), delta.data(), da.data(), rows,
                          cols);
    if (li > 0) {
      std::vector<double> dz(cols);
      kernels::relu_backward(t.pre[li - 1].data(), da.data(), dz.data(), cols);
      delta = std::move(dz);
    } else {
      delta = std::move(da);
    }
  }
  return delta;
}

GradientSet zero_grads(const Mlp& m) {
  GradientSet g;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    g.weights.emplace_back(m.weights[l].size(), 0.0);
    g.biases.emplace_back(m.biases[l].size(), 0.0);
  }
  return g;
}

AdamState make_adam(const Mlp& m, double lr) {
  if (lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
  AdamState s;
  s.lr = lr;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    s.m_w.emplace_back(m.weights[l].size(), 0.0);
    s.v_w.emplace_back(m.weights[l].size(), 0.0);
    s.m_b.emplace_back(m.biases[l].size(), 0.0);
    s.v_b.emplace_back(m.biases[l].size(), 0.0);
  }
  return s;
}

void adam_step(Mlp& m, const GradientSet& g, AdamState& s) {
  check_congruent(m, g);
  if (s.m_w.size() != m.layers()) {
    throw ShapeError("adam: state does not match model");
  }
  s.step += 1;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    if (s.m_w[l].size() != m.weights[l].size() ||
        s.m_b[l].size() != m.biases[l].size()) {
      throw ShapeError("adam: state shape mismatch at layer " +
                       std::to_string(l));
    }
    kernels::adam_update(m.weights[l].data(), g.weights[l].data(),
                         s.m_w[l].data(), s.v_w[l].data(), m.weights[l].size(),
                         s.lr, s.beta1, s.beta2, s.eps, s.step);
    kernels::adam_update(m.biases[l].data(), g.biases[l].data(),
                         s.m_b[l].data(), s.v_b[l].data(), m.biases[l].size(),
                         s.lr, s.beta1, s.beta2, s.eps, s.step);
  }
}

GradientSet finite_diff_grad(Mlp& m, const std::function<double(const Mlp&)>& f,
                             double h) {
  if (!(h > 0.0)) throw ConfigError("finite differences: step must be > 0");
  GradientSet g = zero_grads(m);
  auto probe = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = f(m);
    slot = saved - h;
    const double down = f(m);
    slot = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t l = 0; l < m.layers(); ++l) {
    for (std::size_t i = 0; i < m.weights[l].size(); ++i) {
      g.weights[l][i] = probe(m.weights[l][i]);
    }
    for (std::size_t i = 0; i < m.biases[l].size(); ++i) {
      g.biases[l][i] = probe(m.biases[l][i]);
    }
  }
  return g;
}

std::vector<double> flatten_params(const Mlp& m) {
  std::vector<double> flat;
  flat.reserve(m.param_count());
  for (std::size_t l = 0; l < m.layers(); ++l) {
    flat.insert(flat.end(), m.weights[l].begin(), m.weights[l].end());
    flat.insert(flat.end(), m.biases[l].begin(), m.biases[l].end());
  }
  return flat;
}

void unflatten_params(Mlp& m, std::span<const double> flat) {
  if (flat.size() != m.param_count()) {
    throw ShapeError("unflatten: got " + std::to_string(flat.size()) +
                     " params, model holds " + std::to_string(m.param_count()));
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l < m.layers(); ++l) {
    std::copy_n(flat.begin() + off, m.weights[l].size(),
                m.weights[l].begin());
    off += m.weights[l].size();
    std::copy_n(flat.begin() + off, m.biases[l].size(), m.biases[l].begin());
    off += m.biases[l].size();
  }
}

}  // namespace mofelab
