#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <vector>
#include <string>
#include <string_view>

#include "cal/errors.hpp"
#include "cal/rng.hpp"
#include "cal/types.hpp"

namespace cal {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormalizeGuard = 1e-12;
inline constexpr int kDefaultHidden = 1024;

/// (d*h + h) + 2(h*h + h) + (h*d + d) + 3*2h + 2d + 1
constexpr std::int64_t parameter_count(std::int64_t d, std::int64_t hidden) {
  return (d * hidden + hidden) + 2 * (hidden * hidden + hidden) + (hidden * d + d) +
         3 * 2 * hidden + 2 * d + 1;
}

/// Exact GELU, x * Phi(x).
template <typename Derived>
auto gelu(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  return (Scalar(0.5) * x * (Scalar(1) + (x * inv_sqrt2).erf())).eval();
}

/// d/dx GELU = Phi(x) + x * phi(x).
template <typename Derived>
auto gelu_grad(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  const Scalar inv_sqrt_2pi = Scalar(0.39894228040143267794);
  return (Scalar(0.5) * (Scalar(1) + (x * inv_sqrt2).erf()) +
          x * inv_sqrt_2pi * (Scalar(-0.5) * x.square()).exp())
      .eval();
}

/// Parameters of the residual association MLP
///
///   g(x) = LN4(W4 GELU(LN3(W3 GELU(LN2(W2 GELU(LN1(W1 x + b1))) + b2)) + b3) + b4)
///   f(x) = normalize(alpha x + (1 - alpha) g(x)),  alpha = sigmoid(alpha_logit)
///
/// Weight matrices are stored (out x in). The same struct doubles as the
/// gradient buffer, so gradients always mirror the parameter shapes.
template <typename Scalar>
struct CalModel {
  using Matrix = RowMatrix<Scalar>;
  using Row = RowVector<Scalar>;

  int d = 0;
  int hidden = 0;

  Matrix w1, w2, w3, w4;
  Row b1, b2, b3, b4;
  Row ln1_scale, ln2_scale, ln3_scale, ln4_scale;
  Row ln1_shift, ln2_shift, ln3_shift, ln4_shift;
  Scalar alpha_logit = 0;

  CalModel() = default;
  CalModel(int d_, int hidden_) { resize(d_, hidden_); }

  void resize(int d_, int hidden_) {
    d = d_;
    hidden = hidden_;
    w1 = Matrix::Zero(hidden, d);
    w2 = Matrix::Zero(hidden, hidden);
    w3 = Matrix::Zero(hidden, hidden);
    w4 = Matrix::Zero(d, hidden);
    b1 = Row::Zero(hidden);
    b2 = Row::Zero(hidden);
    b3 = Row::Zero(hidden);
    b4 = Row::Zero(d);
    ln1_scale = Row::Zero(hidden);
    ln2_scale = Row::Zero(hidden);
    ln3_scale = Row::Zero(hidden);
    ln4_scale = Row::Zero(d);
    ln1_shift = Row::Zero(hidden);
    ln2_shift = Row::Zero(hidden);
    ln3_shift = Row::Zero(hidden);
    ln4_shift = Row::Zero(d);
    alpha_logit = 0;
  }

  static CalModel zeros_like(const CalModel& other) { return CalModel(other.d, other.hidden); }

  Scalar alpha() const { return Scalar(1) / (Scalar(1) + std::exp(-alpha_logit)); }

  std::int64_t parameter_count() const { return cal::parameter_count(d, hidden); }

  /// Visits every tensor in declaration order:
  /// fn(name, data pointer, element count, weight_decay_applies).
  /// alpha_logit is visited last as a one-element tensor.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("w1", w1.data(), w1.size(), true);
    fn("b1", b1.data(), b1.size(), true);
    fn("ln1_scale", ln1_scale.data(), ln1_scale.size(), false);
    fn("ln1_shift", ln1_shift.data(), ln1_shift.size(), false);
    fn("w2", w2.data(), w2.size(), true);
    fn("b2", b2.data(), b2.size(), true);
    fn("ln2_scale", ln2_scale.data(), ln2_scale.size(), false);
    fn("ln2_shift", ln2_shift.data(), ln2_shift.size(), false);
    fn("w3", w3.data(), w3.size(), true);
    fn("b3", b3.data(), b3.size(), true);
    fn("ln3_scale", ln3_scale.data(), ln3_scale.size(), false);
    fn("ln3_shift", ln3_shift.data(), ln3_shift.size(), false);
    fn("w4", w4.data(), w4.size(), true);
    fn("b4", b4.data(), b4.size(), true);
    fn("ln4_scale", ln4_scale.data(), ln4_scale.size(), false);
    fn("ln4_shift", ln4_shift.data(), ln4_shift.size(), false);
    fn("alpha_logit", &alpha_logit, Eigen::Index{1}, false);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<CalModel*>(this)->for_each_tensor(
        [&](std::string_view name, Scalar* data, Eigen::Index size, bool decay) {
          fn(name, static_cast<const Scalar*>(data), size, decay);
        });
  }

  template <typename NewScalar>
  CalModel<NewScalar> cast() const {
    CalModel<NewScalar> out(d, hidden);
    out.w1 = w1.template cast<NewScalar>();
    out.w2 = w2.template cast<NewScalar>();
    out.w3 = w3.template cast<NewScalar>();
    out.w4 = w4.template cast<NewScalar>();
    out.b1 = b1.template cast<NewScalar>();
    out.b2 = b2.template cast<NewScalar>();
    out.b3 = b3.template cast<NewScalar>();
    out.b4 = b4.template cast<NewScalar>();
    out.ln1_scale = ln1_scale.template cast<NewScalar>();
    out.ln2_scale = ln2_scale.template cast<NewScalar>();
    out.ln3_scale = ln3_scale.template cast<NewScalar>();
    out.ln4_scale = ln4_scale.template cast<NewScalar>();
    out.ln1_shift = ln1_shift.template cast<NewScalar>();
    out.ln2_shift = ln2_shift.template cast<NewScalar>();
    out.ln3_shift = ln3_shift.template cast<NewScalar>();
    out.ln4_shift = ln4_shift.template cast<NewScalar>();
    out.alpha_logit = static_cast<NewScalar>(alpha_logit);
    return out;
  }

  void set_zero() {
    for_each_tensor([](std::string_view, Scalar* p, Eigen::Index n, bool) {
      std::fill(p, p + n, Scalar(0));
    });
  }

  bool bitwise_equal(const CalModel& other) const;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in declaration
/// order, row-major; biases and shifts 0; LayerNorm scales 1; alpha_logit 0.
template <typename Scalar>
CalModel<Scalar> init_model(int d, int hidden, SeededRng& rng) {
  if (d < 1 || hidden < 1) throw ConfigError("model dimensions must be positive");
  CalModel<Scalar> m(d, hidden);
  auto fill = [&rng](RowMatrix<Scalar>& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
  };
  fill(m.w1);
  fill(m.w2);
  fill(m.w3);
  fill(m.w4);
  m.ln1_scale.setOnes();
  m.ln2_scale.setOnes();
  m.ln3_scale.setOnes();
  m.ln4_scale.setOnes();
  return m;
}

/// Intermediates kept by forward() for the backward pass.
template <typename Scalar>
struct ForwardCache {
  RowMatrix<Scalar> x;                  // input, B x d
  RowMatrix<Scalar> hidden_in[3];       // LN outputs fed to GELU
  RowMatrix<Scalar> activation[3];      // GELU outputs
  RowMatrix<Scalar> xhat[4];            // normalized LN inputs
  Vector<Scalar> inv_std[4];
  RowMatrix<Scalar> g;                  // MLP branch output, B x d
  RowMatrix<Scalar> y;                  // final unit rows
  Vector<Scalar> blend_norm;            // ||alpha x + (1 - alpha) g||
  Scalar alpha = 0;

  Eigen::Index batch() const { return x.rows(); }
};

namespace detail {

template <typename Scalar>
RowMatrix<Scalar> layer_norm_forward(const RowMatrix<Scalar>& z, const RowVector<Scalar>& scale,
                                     const RowVector<Scalar>& shift, RowMatrix<Scalar>& xhat,
                                     Vector<Scalar>& inv_std) {
  const Vector<Scalar> mean = z.rowwise().mean();
  xhat = z.colwise() - mean;
  inv_std = (xhat.array().square().rowwise().mean() + Scalar(kLayerNormEps)).rsqrt().matrix();
  xhat.array().colwise() *= inv_std.array();
  RowMatrix<Scalar> out = xhat.array().rowwise() * scale.array();
  out.rowwise() += shift;
  return out;
}

// dz = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), per row.
template <typename Scalar>
RowMatrix<Scalar> layer_norm_backward(const RowMatrix<Scalar>& dout, const RowMatrix<Scalar>& xhat,
                                      const Vector<Scalar>& inv_std,
                                      const RowVector<Scalar>& scale, RowVector<Scalar>& dscale,
                                      RowVector<Scalar>& dshift) {
  dscale.noalias() += (dout.array() * xhat.array()).colwise().sum().matrix();
  dshift.noalias() += dout.colwise().sum();
  RowMatrix<Scalar> dxhat = dout.array().rowwise() * scale.array();
  const Vector<Scalar> mean_d = dxhat.rowwise().mean();
  const Vector<Scalar> mean_dx = (dxhat.array() * xhat.array()).rowwise().mean().matrix();
  dxhat.colwise() -= mean_d;
  dxhat.array() -= xhat.array().colwise() * mean_dx.array();
  dxhat.array().colwise() *= inv_std.array();
  return dxhat;
}

}  // namespace detail

/// Row-wise f(x). Returns the unit-norm output and fills `cache`.
template <typename Scalar>
const RowMatrix<Scalar>& forward(const CalModel<Scalar>& m, const RowMatrix<Scalar>& x,
                                 ForwardCache<Scalar>& cache) {
  if (x.cols() != m.d) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(m.d));
  }
  if (!x.allFinite()) throw NumericsError("non-finite input to forward");

  cache.x = x;
  const RowMatrix<Scalar>* input = &cache.x;
  const RowMatrix<Scalar>* weights[3] = {&m.w1, &m.w2, &m.w3};
  const RowVector<Scalar>* biases[3] = {&m.b1, &m.b2, &m.b3};
  const RowVector<Scalar>* scales[3] = {&m.ln1_scale, &m.ln2_scale, &m.ln3_scale};
  const RowVector<Scalar>* shifts[3] = {&m.ln1_shift, &m.ln2_shift, &m.ln3_shift};

  RowMatrix<Scalar> z;
  for (int l = 0; l < 3; ++l) {
    z.noalias() = *input * weights[l]->transpose();
    z.rowwise() += *biases[l];
    cache.hidden_in[l] =
        detail::layer_norm_forward(z, *scales[l], *shifts[l], cache.xhat[l], cache.inv_std[l]);
    cache.activation[l] = gelu(cache.hidden_in[l].array()).matrix();
    input = &cache.activation[l];
  }
  z.noalias() = *input * m.w4.transpose();
  z.rowwise() += m.b4;
  cache.g = detail::layer_norm_forward(z, m.ln4_scale, m.ln4_shift, cache.xhat[3], cache.inv_std[3]);

  cache.alpha = m.alpha();
  cache.y = cache.alpha * cache.x + (Scalar(1) - cache.alpha) * cache.g;
  cache.blend_norm = cache.y.rowwise().norm();
  for (Eigen::Index r = 0; r < cache.y.rows(); ++r) {
    const Scalar n = cache.blend_norm(r);
    if (n > Scalar(kNormalizeGuard)) cache.y.row(r) /= n;
  }
  return cache.y;
}

template <typename Scalar>
RowMatrix<Scalar> forward(const CalModel<Scalar>& m, const RowMatrix<Scalar>& x) {
  ForwardCache<Scalar> cache;
  forward(m, x, cache);
  return std::move(cache.y);
}

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/dY.
/// Returns the number of rows whose pre-normalization norm was below the
/// guard; their gradient is zeroed.
template <typename Scalar>
std::size_t backward(const CalModel<Scalar>& m, const ForwardCache<Scalar>& cache,
                     const RowMatrix<Scalar>& dy, CalModel<Scalar>& grad) {
  if (dy.rows() != cache.batch() || dy.cols() != m.d) {
    throw ShapeError("gradient shape does not match the cached forward batch");
  }
  if (grad.d != m.d || grad.hidden != m.hidden) throw ShapeError("gradient buffer shape mismatch");

  // Through y = u / ||u||: du = (dy - y (y . dy)) / ||u||.
  std::size_t degenerate = 0;
  RowMatrix<Scalar> du(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar n = cache.blend_norm(r);
    if (!(n > Scalar(kNormalizeGuard))) {
      du.row(r).setZero();
      ++degenerate;
      continue;
    }
    const Scalar proj = cache.y.row(r).dot(dy.row(r));
    du.row(r) = (dy.row(r) - proj * cache.y.row(r)) / n;
  }

  const Scalar alpha = cache.alpha;
  grad.alpha_logit += (du.array() * (cache.x - cache.g).array()).sum() * alpha * (Scalar(1) - alpha);

  RowMatrix<Scalar> dz = detail::layer_norm_backward<Scalar>(
      (Scalar(1) - alpha) * du, cache.xhat[3], cache.inv_std[3], m.ln4_scale, grad.ln4_scale,
      grad.ln4_shift);

  const RowMatrix<Scalar>* weights[4] = {&m.w1, &m.w2, &m.w3, &m.w4};
  RowMatrix<Scalar>* dweights[4] = {&grad.w1, &grad.w2, &grad.w3, &grad.w4};
  RowVector<Scalar>* dbiases[4] = {&grad.b1, &grad.b2, &grad.b3, &grad.b4};
  const RowVector<Scalar>* scales[3] = {&m.ln1_scale, &m.ln2_scale, &m.ln3_scale};
  RowVector<Scalar>* dscales[3] = {&grad.ln1_scale, &grad.ln2_scale, &grad.ln3_scale};
  RowVector<Scalar>* dshifts[3] = {&grad.ln1_shift, &grad.ln2_shift, &grad.ln3_shift};

  for (int l = 3; l >= 0; --l) {
    const RowMatrix<Scalar>& layer_input = l == 0 ? cache.x : cache.activation[l - 1];
    dweights[l]->noalias() += dz.transpose() * layer_input;
    dbiases[l]->noalias() += dz.colwise().sum();
    if (l == 0) break;
    RowMatrix<Scalar> dact;
    dact.noalias() = dz * *weights[l];
    dact.array() *= gelu_grad(cache.hidden_in[l - 1].array());
    dz = detail::layer_norm_backward<Scalar>(dact, cache.xhat[l - 1], cache.inv_std[l - 1],
                                             *scales[l - 1], *dscales[l - 1], *dshifts[l - 1]);
  }
  return degenerate;
}

template <typename Scalar>
bool CalModel<Scalar>::bitwise_equal(const CalModel& other) const {
  if (d != other.d || hidden != other.hidden) return false;
  bool equal = true;
  std::vector<const Scalar*> mine;
  std::vector<Eigen::Index> sizes;
  for_each_tensor([&](std::string_view, const Scalar* p, Eigen::Index n, bool) {
    mine.push_back(p);
    sizes.push_back(n);
  });
  std::size_t i = 0;
  other.for_each_tensor([&](std::string_view, const Scalar* p, Eigen::Index n, bool) {
    if (n != sizes[i] || std::memcmp(p, mine[i], sizeof(Scalar) * n) != 0) equal = false;
    ++i;
  });
  return equal;
}

using CalModelF = CalModel<float>;

/// Checkpoint layout: "CALCKPT1\n", u32 version, u32 d, u32 hidden,
/// f32 alpha_logit, then each tensor in declaration order as a u32 element
/// count followed by little-endian f32 row-major data.
void save_checkpoint(const CalModelF& model, const std::string& path);
CalModelF load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Exact byte size of a checkpoint for the given shape.
constexpr std::int64_t checkpoint_size(std::int64_t d, std::int64_t hidden) {
  return 9 + 3 * 4 + 4 + 16 * 4 + 4 * (parameter_count(d, hidden) - 1);
}

}  // namespace cal
