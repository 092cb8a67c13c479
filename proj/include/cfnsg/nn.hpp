#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cfnsg/tape.hpp"

namespace cfnsg {

using Rng = std::mt19937_64;

// Uniform(-sqrt(6/(fan_in+fan_out)), +...) weight init; zero biases.
inline void init_glorot(Parameter& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / (w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : w.value) x = dist(rng);
}

struct DenseLayer {
  Parameter w, b;

  DenseLayer() = default;
  DenseLayer(const std::string& name, int out, int in, Rng& rng)
      : w(name + ".w", out, in), b(name + ".b", out) {
    init_glorot(w, rng);
  }

  int out_dim() const { return w.rows(); }
  int in_dim() const { return w.cols(); }

  Vec forward(const Vec& x) const {
    if (static_cast<int>(x.size()) != w.cols())
      throw std::invalid_argument("dense: shape mismatch: " + w.name);
    Vec out(w.rows());
    gemv(out.data(), w.value.data(), x.data(), w.rows(), w.cols());
    for (int r = 0; r < w.rows(); ++r) out[r] += b.value[r];
    return out;
  }

  Var forward(Tape& tape, Var x) {
    return tape.linear(w, b, x);
  }
};

// Plain MLP trunk: hidden dense layers with ReLU after every layer. Output
// heads hang off the trunk as separate DenseLayers owned by the caller.
struct Mlp {
  std::vector<DenseLayer> layers;

  Mlp() = default;
  Mlp(const std::string& name, int in, int width, int depth, Rng& rng) {
    int cur = in;
    for (int i = 0; i < depth; ++i) {
      layers.emplace_back(name + ".l" + std::to_string(i), width, cur, rng);
      cur = width;
    }
  }

  Vec forward(const Vec& x) const {
    Vec h = x;
    for (const DenseLayer& l : layers) {
      h = l.forward(h);
      for (double& v : h) v = v > 0.0 ? v : 0.0;
    }
    return h;
  }

  Var forward(Tape& tape, Var x) {
    Var h = x;
    for (DenseLayer& l : layers) h = tape.relu(l.forward(tape, h));
    return h;
  }

  void collect(std::vector<Parameter*>& out) {
    for (DenseLayer& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace cfnsg
