#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnsg/volume.hpp"

namespace cfnsg {

using Vec = std::vector<double>;

// A named, trainable tensor (rank 1 or 2, row-major). Gradients accumulate
// additively across backward passes until zero_grad() is called.
//
// Thread-safety contract: gradient accumulation is not synchronized. Parallel
// query evaluation must either serialize backward passes or accumulate into
// private buffers and reduce.
struct Parameter {
  std::string name;
  std::vector<int> shape;  // {len} or {rows, cols}
  Vec value;
  Vec grad;

  Parameter() = default;
  Parameter(std::string n, int len)
      : name(std::move(n)), shape{len}, value(len, 0.0), grad(len, 0.0) {}
  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)),
        shape{rows, cols},
        value(static_cast<std::size_t>(rows) * cols, 0.0),
        grad(static_cast<std::size_t>(rows) * cols, 0.0) {}

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline void gemv(double* out, const double* w, const double* x, int rows,
                 int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w + static_cast<std::size_t>(r) * cols;
    // Four accumulators break the serial dependency; summation order is
    // fixed, so results stay bit-reproducible.
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    int c = 0;
    for (; c + 4 <= cols; c += 4) {
      a0 += wr[c] * x[c];
      a1 += wr[c + 1] * x[c + 1];
      a2 += wr[c + 2] * x[c + 2];
      a3 += wr[c + 3] * x[c + 3];
    }
    double acc = (a0 + a1) + (a2 + a3);
    for (; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

// Reverse-mode tape over dense vectors. Each recorded node is a whole vector
// op (a dense layer, an activation, a compositing step, ...), so the forward
// and backward sweeps spend their time in tight loops rather than graph
// bookkeeping. Nodes are appended in evaluation order, which makes the node
// list a topological order; backward() is a single reverse sweep that visits
// each node exactly once.
//
// Tapes are single-owner: build, run backward, discard (or reuse via reset()).
class Tape {
 public:
  struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  // ---- leaves ----

  Var input(Vec v) { return push(Op::kLeaf, {}, std::move(v)); }
  Var input(std::initializer_list<double> v) { return input(Vec(v)); }
  // Semantically a non-trainable leaf; gradients are still computed but
  // carry no meaning for constants.
  Var constant(Vec v) { return input(std::move(v)); }

  // Leaf bound to a rank-1 parameter; backward accumulates into p.grad.
  Var param(Parameter& p) {
    if (p.shape.size() != 1)
      throw std::invalid_argument("tape: param leaf requires rank-1 parameter");
    Var v = push(Op::kParam, {}, p.value);
    nodes_.back().w = &p;
    return v;
  }

  // ---- dense layer: out = W x + b ----

  Var linear(Parameter& w, Parameter& b, Var x) {
    const Vec& xv = val(x);
    if (w.shape.size() != 2)
      throw std::invalid_argument("tape: linear weight must be rank-2");
    if (w.cols() != static_cast<int>(xv.size()))
      throw std::invalid_argument("tape: linear shape mismatch: " + w.name +
                                  " cols=" + std::to_string(w.cols()) +
                                  " input=" + std::to_string(xv.size()));
    if (b.size() != static_cast<std::size_t>(w.rows()))
      throw std::invalid_argument("tape: bias length mismatch: " + b.name);
    Vec out(w.rows());
    gemv(out.data(), w.value.data(), xv.data(), w.rows(), w.cols());
    for (int r = 0; r < w.rows(); ++r) out[r] += b.value[r];
    Var v = push(Op::kLinear, {x}, std::move(out));
    nodes_.back().w = &w;
    nodes_.back().b = &b;
    return v;
  }

  // ---- activations ----

  Var relu(Var a) {
    Vec out = val(a);
    for (double& x : out) x = x > 0.0 ? x : 0.0;
    return push(Op::kRelu, {a}, std::move(out));
  }

  Var sigmoid(Var a) {
    Vec out = val(a);
    for (double& x : out) x = sigmoid_scalar(x);
    return push(Op::kSigmoid, {a}, std::move(out));
  }

  Var softplus(Var a) {
    Vec out = val(a);
    for (double& x : out) x = softplus_scalar(x);
    return push(Op::kSoftplus, {a}, std::move(out));
  }

  // ---- shaping / arithmetic ----

  // out_i = (a_i - center_i) * scale_i  (componentwise normalization)
  Var affine_map(Var a, const Vec& center, const Vec& scale) {
    const Vec& av = val(a);
    if (center.size() != av.size() || scale.size() != av.size())
      throw std::invalid_argument("tape: affine_map size mismatch");
    Vec out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i)
      out[i] = (av[i] - center[i]) * scale[i];
    Var v = push(Op::kAffine, {a}, std::move(out));
    nodes_.back().aux_begin = push_aux(center);
    push_aux(scale);
    nodes_.back().aux_len = static_cast<int32_t>(2 * av.size());
    return v;
  }

  // Frequency encoding with layout [x | sin block | cos block]; within each
  // block the frequency index is the outer loop, the input dimension the
  // inner one: sin(2^k pi x_i) at offset d + k*d + i, cos at d + L*d + k*d + i.
  Var posenc(Var a, int freqs) {
    if (freqs < 0) throw std::invalid_argument("tape: posenc freqs < 0");
    const Vec& av = val(a);
    const std::size_t d = av.size();
    Vec out(d * (1 + 2 * static_cast<std::size_t>(freqs)));
    posenc_raw(av.data(), d, freqs, out.data());
    Var v = push(Op::kPosEnc, {a}, std::move(out));
    nodes_.back().iarg = freqs;
    return v;
  }

  Var concat(std::span<const Var> parts) {
    std::size_t total = 0;
    for (Var p : parts) total += val(p).size();
    Vec out;
    out.reserve(total);
    for (Var p : parts) {
      const Vec& pv = val(p);
      out.insert(out.end(), pv.begin(), pv.end());
    }
    Var v = push(Op::kConcat, {}, std::move(out));
    nodes_.back().extra_begin = push_extra(parts);
    nodes_.back().extra_len = static_cast<int32_t>(parts.size());
    return v;
  }
  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }

  // Row-major flattened outer product: out[i*len(b)+j] = a_i * b_j.
  Var outer(Var a, Var b) {
    const Vec& av = val(a);
    const Vec& bv = val(b);
    Vec out(av.size() * bv.size());
    for (std::size_t i = 0; i < av.size(); ++i)
      for (std::size_t j = 0; j < bv.size(); ++j)
        out[i * bv.size() + j] = av[i] * bv[j];
    return push(Op::kOuter, {a, b}, std::move(out));
  }

  Var slice(Var a, int lo, int len) {
    const Vec& av = val(a);
    if (lo < 0 || len < 0 || lo + len > static_cast<int>(av.size()))
      throw std::invalid_argument("tape: slice out of range");
    Vec out(av.begin() + lo, av.begin() + lo + len);
    Var v = push(Op::kSlice, {a}, std::move(out));
    nodes_.back().iarg = lo;
    return v;
  }

  Var add(Var a, Var b) {
    const Vec& av = val(a);
    const Vec& bv = val(b);
    if (av.size() != bv.size())
      throw std::invalid_argument("tape: add size mismatch");
    Vec out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return push(Op::kAdd, {a, b}, std::move(out));
  }

  Var sub(Var a, Var b) {
    const Vec& av = val(a);
    const Vec& bv = val(b);
    if (av.size() != bv.size())
      throw std::invalid_argument("tape: sub size mismatch");
    Vec out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return push(Op::kSub, {a, b}, std::move(out));
  }

  Var scale(Var a, double k) {
    Vec out = val(a);
    for (double& x : out) x *= k;
    Var v = push(Op::kScale, {a}, std::move(out));
    nodes_.back().darg = k;
    return v;
  }

  // Convex combination out = s*a + (1-s)*b with a scalar (1-vector) weight.
  Var blend(Var s, Var a, Var b) {
    const Vec& sv = val(s);
    if (sv.size() != 1) throw std::invalid_argument("tape: blend weight not scalar");
    const Vec& av = val(a);
    const Vec& bv = val(b);
    if (av.size() != bv.size())
      throw std::invalid_argument("tape: blend size mismatch");
    Vec out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i)
      out[i] = sv[0] * av[i] + (1.0 - sv[0]) * bv[i];
    return push(Op::kBlend, {s, a, b}, std::move(out));
  }

  // Volume compositing over per-sample colors (3-vectors) and densities
  // (1-vectors) with constant segment lengths delta. Output is the pixel.
  Var composite(std::span<const Var> rgb, std::span<const Var> sigma,
                std::span<const double> delta) {
    const std::size_t n = rgb.size();
    if (sigma.size() != n || delta.size() != n)
      throw std::invalid_argument("tape: composite arity mismatch");
    Vec crgb(3 * n), csig(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec& c = val(rgb[i]);
      if (c.size() != 3) throw std::invalid_argument("tape: composite rgb not 3-vec");
      crgb[3 * i] = c[0];
      crgb[3 * i + 1] = c[1];
      crgb[3 * i + 2] = c[2];
      const Vec& s = val(sigma[i]);
      if (s.size() != 1) throw std::invalid_argument("tape: composite sigma not scalar");
      csig[i] = s[0];
    }
    Vec out(3);
    composite_raw(crgb.data(), csig.data(), delta.data(), n, out.data());
    Var v = push(Op::kComposite, {}, std::move(out));
    Node& node = nodes_.back();
    node.extra_begin = push_extra(rgb);
    push_extra(sigma);
    node.extra_len = static_cast<int32_t>(2 * n);
    node.aux_begin = push_aux(delta);
    node.aux_len = static_cast<int32_t>(n);
    return v;
  }

  // out = sum_i a_i^2 (1-vector)
  Var sq_norm(Var a) {
    const Vec& av = val(a);
    double acc = 0.0;
    for (double x : av) acc += x * x;
    return push(Op::kSqNorm, {a}, Vec{acc});
  }

  // out = 1 / max(s, floor)^2 for a scalar s; the clamp keeps the score
  // regularizer bounded as s -> 0.
  Var score_reg(Var s, double floor) {
    const Vec& sv = val(s);
    if (sv.size() != 1) throw std::invalid_argument("tape: score_reg input not scalar");
    const double v = sv[0] > floor ? sv[0] : floor;
    Var out = push(Op::kScoreReg, {s}, Vec{1.0 / (v * v)});
    nodes_.back().darg = floor;
    return out;
  }

  Var sum(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("tape: empty sum");
    Vec out = val(parts[0]);
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const Vec& pv = val(parts[p]);
      if (pv.size() != out.size())
        throw std::invalid_argument("tape: sum size mismatch");
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i];
    }
    Var v = push(Op::kSum, {}, std::move(out));
    nodes_.back().extra_begin = push_extra(parts);
    nodes_.back().extra_len = static_cast<int32_t>(parts.size());
    return v;
  }
  Var sum(std::initializer_list<Var> parts) {
    return sum(std::span<const Var>(parts.begin(), parts.size()));
  }

  // ---- access ----

  const Vec& value(Var v) const { return val_[check(v)]; }
  const Vec& grad(Var v) const {
    if (grad_.size() != val_.size())
      throw std::logic_error("tape: grad read before backward");
    return grad_[check(v)];
  }
  std::size_t size() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    val_.clear();
    grad_.clear();
    extra_.clear();
    aux_.clear();
  }

  void zero_grads() {
    for (Vec& g : grad_) std::fill(g.begin(), g.end(), 0.0);
  }

  // Reverse sweep from `out` seeded with the given cotangent. Node gradients
  // are reset at entry (each sweep stands alone); parameter gradients
  // accumulate into Parameter::grad across sweeps until Parameter::zero_grad.
  // Input/param leaf gradients of this sweep are retrievable via grad().
  void backward(Var out, const Vec& seed) {
    const int32_t root = check(out);
    if (seed.size() != val_[root].size())
      throw std::invalid_argument("tape: backward seed shape mismatch");
    if (grad_.size() != val_.size()) {
      grad_.resize(val_.size());
      for (std::size_t i = 0; i < val_.size(); ++i)
        grad_[i].assign(val_[i].size(), 0.0);
    } else {
      zero_grads();
    }
    for (std::size_t i = 0; i < seed.size(); ++i) grad_[root][i] += seed[i];
    for (int32_t id = root; id >= 0; --id) backprop(id);
  }

 private:
  enum class Op : uint8_t {
    kLeaf,
    kParam,
    kLinear,
    kRelu,
    kSigmoid,
    kSoftplus,
    kAffine,
    kPosEnc,
    kConcat,
    kSlice,
    kOuter,
    kAdd,
    kSub,
    kScale,
    kBlend,
    kComposite,
    kSqNorm,
    kScoreReg,
    kSum,
  };

  struct Node {
    Op op;
    std::array<int32_t, 3> in{-1, -1, -1};
    int32_t extra_begin = 0, extra_len = 0;  // pooled input ids (n-ary ops)
    int32_t aux_begin = 0, aux_len = 0;      // pooled constants
    int32_t iarg = 0;
    double darg = 0.0;
    Parameter* w = nullptr;
    Parameter* b = nullptr;
  };

  static double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }

 public:
  static void posenc_raw(const double* x, std::size_t d, int freqs,
                         double* out) {
    for (std::size_t i = 0; i < d; ++i) out[i] = x[i];
    for (int k = 0; k < freqs; ++k) {
      const double f = std::ldexp(std::numbers::pi, k);  // 2^k * pi
      for (std::size_t i = 0; i < d; ++i) {
        out[d + k * d + i] = std::sin(f * x[i]);
        out[d + static_cast<std::size_t>(freqs) * d + k * d + i] =
            std::cos(f * x[i]);
      }
    }
  }

 private:
  Var push(Op op, std::initializer_list<Var> in, Vec value) {
    Node n;
    n.op = op;
    int slot = 0;
    for (Var v : in) n.in[slot++] = check(v);
    nodes_.push_back(n);
    val_.push_back(std::move(value));
    if (!grad_.empty()) grad_.clear();  // stale after new nodes
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  int32_t push_extra(std::span<const Var> vs) {
    const int32_t begin = static_cast<int32_t>(extra_.size());
    for (Var v : vs) extra_.push_back(check(v));
    return begin;
  }
  int32_t push_aux(std::span<const double> ds) {
    const int32_t begin = static_cast<int32_t>(aux_.size());
    aux_.insert(aux_.end(), ds.begin(), ds.end());
    return begin;
  }

  int32_t check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
      throw std::invalid_argument("tape: invalid var");
    return v.id;
  }

  const Vec& val(Var v) const { return val_[check(v)]; }

  void backprop(int32_t id) {
    const Node& n = nodes_[id];
    const Vec& g = grad_[id];
    const Vec& out = val_[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kParam: {
        for (std::size_t i = 0; i < g.size(); ++i) n.w->grad[i] += g[i];
        break;
      }
      case Op::kLinear: {
        const Vec& x = val_[n.in[0]];
        Vec& gx = grad_[n.in[0]];
        const int rows = n.w->rows(), cols = n.w->cols();
        for (int r = 0; r < rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          const double* wr = n.w->value.data() + static_cast<std::size_t>(r) * cols;
          double* gwr = n.w->grad.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) {
            gx[c] += wr[c] * gr;
            gwr[c] += x[c] * gr;
          }
          n.b->grad[r] += gr;
        }
        break;
      }
      case Op::kRelu: {
        const Vec& x = val_[n.in[0]];
        Vec& gx = grad_[n.in[0]];
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) gx[i] += g[i];
        break;
      }
      case Op::kSigmoid: {
        Vec& gx = grad_[n.in[0]];
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * out[i] * (1.0 - out[i]);
        break;
      }
      case Op::kSoftplus: {
        const Vec& x = val_[n.in[0]];
        Vec& gx = grad_[n.in[0]];
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * sigmoid_scalar(x[i]);
        break;
      }
      case Op::kAffine: {
        Vec& gx = grad_[n.in[0]];
        const double* scl = aux_.data() + n.aux_begin + g.size();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * scl[i];
        break;
      }
      case Op::kPosEnc: {
        const Vec& x = val_[n.in[0]];
        Vec& gx = grad_[n.in[0]];
        const std::size_t d = x.size();
        const int L = n.iarg;
        for (std::size_t i = 0; i < d; ++i) gx[i] += g[i];
        for (int k = 0; k < L; ++k) {
          const double f = std::ldexp(std::numbers::pi, k);
          for (std::size_t i = 0; i < d; ++i) {
            const double sin_v = out[d + k * d + i];
            const double cos_v = out[d + static_cast<std::size_t>(L) * d + k * d + i];
            gx[i] += f * (cos_v * g[d + k * d + i] -
                          sin_v * g[d + static_cast<std::size_t>(L) * d + k * d + i]);
          }
        }
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (int32_t p = 0; p < n.extra_len; ++p) {
          const int32_t src = extra_[n.extra_begin + p];
          Vec& gs = grad_[src];
          for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g[off + i];
          off += gs.size();
        }
        break;
      }
      case Op::kSlice: {
        Vec& gx = grad_[n.in[0]];
        for (std::size_t i = 0; i < g.size(); ++i) gx[n.iarg + i] += g[i];
        break;
      }
      case Op::kOuter: {
        const Vec& a = val_[n.in[0]];
        const Vec& b = val_[n.in[1]];
        Vec& ga = grad_[n.in[0]];
        Vec& gb = grad_[n.in[1]];
        for (std::size_t i = 0; i < a.size(); ++i)
          for (std::size_t j = 0; j < b.size(); ++j) {
            const double gij = g[i * b.size() + j];
            ga[i] += gij * b[j];
            gb[j] += gij * a[i];
          }
        break;
      }
      case Op::kAdd: {
        Vec& ga = grad_[n.in[0]];
        Vec& gb = grad_[n.in[1]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        Vec& ga = grad_[n.in[0]];
        Vec& gb = grad_[n.in[1]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::kScale: {
        Vec& ga = grad_[n.in[0]];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.darg;
        break;
      }
      case Op::kBlend: {
        const double s = val_[n.in[0]][0];
        const Vec& a = val_[n.in[1]];
        const Vec& b = val_[n.in[2]];
        Vec& gs = grad_[n.in[0]];
        Vec& ga = grad_[n.in[1]];
        Vec& gb = grad_[n.in[2]];
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += s * g[i];
          gb[i] += (1.0 - s) * g[i];
          acc += g[i] * (a[i] - b[i]);
        }
        gs[0] += acc;
        break;
      }
      case Op::kComposite: {
        const std::size_t cnt = static_cast<std::size_t>(n.extra_len) / 2;
        const int32_t* rgb_ids = extra_.data() + n.extra_begin;
        const int32_t* sig_ids = rgb_ids + cnt;
        const double* delta = aux_.data() + n.aux_begin;
        // Suffix accumulator: S_i = sum_{k>i} w_k (g . c_k); then
        // d/dsigma_i = delta_i * (T_i e^{-sigma_i delta_i} (g . c_i) - S_i).
        double transmittance = 1.0;
        std::vector<double> trans(cnt), att(cnt), gdotc(cnt);
        for (std::size_t i = 0; i < cnt; ++i) {
          const Vec& c = val_[rgb_ids[i]];
          const double s = val_[sig_ids[i]][0];
          trans[i] = transmittance;
          att[i] = std::exp(-s * delta[i]);
          gdotc[i] = g[0] * c[0] + g[1] * c[1] + g[2] * c[2];
          transmittance *= att[i];
        }
        double suffix = 0.0;
        for (std::size_t ii = cnt; ii-- > 0;) {
          const double weight = trans[ii] * (1.0 - att[ii]);
          Vec& gc = grad_[rgb_ids[ii]];
          gc[0] += weight * g[0];
          gc[1] += weight * g[1];
          gc[2] += weight * g[2];
          grad_[sig_ids[ii]][0] +=
              delta[ii] * (trans[ii] * att[ii] * gdotc[ii] - suffix);
          suffix += weight * gdotc[ii];
        }
        break;
      }
      case Op::kSqNorm: {
        const Vec& x = val_[n.in[0]];
        Vec& gx = grad_[n.in[0]];
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += 2.0 * x[i] * g[0];
        break;
      }
      case Op::kScoreReg: {
        const double s = val_[n.in[0]][0];
        if (s > n.darg) grad_[n.in[0]][0] += g[0] * (-2.0 / (s * s * s));
        break;
      }
      case Op::kSum: {
        for (int32_t p = 0; p < n.extra_len; ++p) {
          Vec& gs = grad_[extra_[n.extra_begin + p]];
          for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Vec> val_;
  std::vector<Vec> grad_;
  std::vector<int32_t> extra_;
  std::vector<double> aux_;
};

using Var = Tape::Var;

// Plain (non-recording) positional encoding with the same layout as
// Tape::posenc.
inline Vec positional_encode(const Vec& x, int freqs) {
  if (freqs < 0) throw std::invalid_argument("positional_encode: freqs < 0");
  Vec out(x.size() * (1 + 2 * static_cast<std::size_t>(freqs)));
  Tape::posenc_raw(x.data(), x.size(), freqs, out.data());
  return out;
}

}  // namespace cfnsg
