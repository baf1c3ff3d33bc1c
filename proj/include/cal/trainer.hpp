#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cal/errors.hpp"
#include "cal/model.hpp"
#include "cal/sampler.hpp"
#include "cal/types.hpp"

namespace cal {

struct TrainConfig {
  std::size_t batch_size = 512;
  double temperature = 0.05;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  int epochs = 100;
  int anneal_t_max = 100;
  std::uint64_t seed = 42;
  NegativeMode negative_mode;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int hidden = kDefaultHidden;
  double divergence_factor = 3.0;
  int divergence_patience = 5;
  std::string checkpoint_dir;  // last-good checkpoint lands here on divergence

  void validate() const;
  std::size_t negatives_per_step() const {
    return negative_mode.k > 0 ? negative_mode.k : batch_size - 1;
  }
};

/// Cosine annealing from `lr` to 0 over `t_max` epochs.
double cosine_lr(double lr, int epoch, int t_max);

template <typename Scalar>
struct NceTerms {
  double loss = 0;
  double accuracy = 0;
  RowMatrix<Scalar> d_fa;     // dL/d f(a)
  RowMatrix<Scalar> d_fpool;  // dL/d f(pool), pooled mode only
};

namespace detail {

/// Softmax cross-entropy over one row of logits with target column `target`.
/// Masked entries are excluded. Writes d(loss)/d(logits) * weight into `grad`.
template <typename Row, typename MaskRow, typename GradRow>
double softmax_xent_row(const Row& logits, const MaskRow& keep, Eigen::Index target, double weight,
                        GradRow&& grad) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (keep(j)) mx = std::max(mx, static_cast<double>(logits(j)));
  }
  double z = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (keep(j)) z += std::exp(static_cast<double>(logits(j)) - mx);
  }
  const double lse = mx + std::log(z);
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    const double p = keep(j) ? std::exp(static_cast<double>(logits(j)) - lse) : 0.0;
    grad(j) += static_cast<typename std::decay_t<GradRow>::Scalar>(
        weight * (p - (j == target ? 1.0 : 0.0)));
  }
  return lse - static_cast<double>(logits(target));
}

struct AllTrue {
  bool operator()(Eigen::Index) const { return true; }
};

}  // namespace detail

/// Symmetric in-batch InfoNCE on transformed anchors `fa` against raw
/// partners `b`: S = fa b^T / tau, loss = (CE(S, diag) + CE(S^T, diag)) / 2.
template <typename Scalar>
NceTerms<Scalar> info_nce_in_batch(const RowMatrix<Scalar>& fa, const RowMatrix<Scalar>& b,
                                   double tau) {
  const Eigen::Index n = fa.rows();
  if (n < 2) throw ConfigError("InfoNCE needs a batch of at least 2");
  if (b.rows() != n || b.cols() != fa.cols()) throw ShapeError("anchor/partner batch mismatch");
  const RowMatrix<Scalar> s = (fa * b.transpose()) / static_cast<Scalar>(tau);
  RowMatrix<Scalar> ds = RowMatrix<Scalar>::Zero(n, n);
  const double w = 0.5 / static_cast<double>(n);
  NceTerms<Scalar> out;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.loss += w * detail::softmax_xent_row(s.row(i), detail::AllTrue{}, i, w, ds.row(i));
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < n; ++j) {
      if (s(i, j) > s(i, best)) best = j;
    }
    correct += best == i;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    out.loss += w * detail::softmax_xent_row(s.col(j), detail::AllTrue{}, j, w, ds.col(j));
  }
  out.d_fa = (ds * b) / static_cast<Scalar>(tau);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

/// Symmetric InfoNCE with sampled negatives. Anchor f(a_i) is scored against
/// b_i and the raw pool; anchor b_i against f(a_i) and f(pool). `keep(i, p)`
/// is false where pool entry p must not act as a negative for row i.
template <typename Scalar>
NceTerms<Scalar> info_nce_pooled(const RowMatrix<Scalar>& fa, const RowMatrix<Scalar>& b,
                                 const RowMatrix<Scalar>& pool, const RowMatrix<Scalar>& fpool,
                                 const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic,
                                                    Eigen::RowMajor>& keep,
                                 double tau) {
  const Eigen::Index n = fa.rows(), k = pool.rows();
  if (n < 2) throw ConfigError("InfoNCE needs a batch of at least 2");
  if (b.rows() != n || fpool.rows() != k || keep.rows() != n || keep.cols() != k) {
    throw ShapeError("pooled InfoNCE inputs disagree in shape");
  }
  const auto inv_tau = static_cast<Scalar>(1.0 / tau);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pos = (fa.cwiseProduct(b)).rowwise().sum() * inv_tau;
  const RowMatrix<Scalar> fwd = (fa * pool.transpose()) * inv_tau;
  const RowMatrix<Scalar> rev = (b * fpool.transpose()) * inv_tau;

  const double w = 0.5 / static_cast<double>(n);
  NceTerms<Scalar> out;
  out.d_fa = RowMatrix<Scalar>::Zero(n, fa.cols());
  out.d_fpool = RowMatrix<Scalar>::Zero(k, fa.cols());
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> logits(k + 1), grad(k + 1);
  Eigen::Array<bool, 1, Eigen::Dynamic> mask(k + 1);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    mask(0) = true;
    mask.tail(k) = keep.row(i);

    logits(0) = pos(i);
    logits.tail(k) = fwd.row(i);
    grad.setZero();
    out.loss += w * detail::softmax_xent_row(logits, mask, 0, w, grad);
    out.d_fa.row(i) += grad(0) * inv_tau * b.row(i) + (grad.tail(k) * pool) * inv_tau;
    bool best = true;
    for (Eigen::Index p = 0; p < k && best; ++p) {
      if (keep(i, p) && fwd(i, p) > pos(i)) best = false;
    }
    correct += best;

    logits.tail(k) = rev.row(i);
    grad.setZero();
    out.loss += w * detail::softmax_xent_row(logits, mask, 0, w, grad);
    out.d_fa.row(i) += grad(0) * inv_tau * b.row(i);
    out.d_fpool += (grad.tail(k).transpose() * b.row(i)) * inv_tau;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

/// In-batch loss through the model; accumulates parameter gradients.
template <typename Scalar>
NceTerms<Scalar> info_nce_loss(const CalModel<Scalar>& model, const RowMatrix<Scalar>& a,
                               const RowMatrix<Scalar>& b, double tau, CalModel<Scalar>& grad) {
  ForwardCache<Scalar> cache;
  const RowMatrix<Scalar> fa = forward(model, a, cache);
  auto terms = info_nce_in_batch<Scalar>(fa, b, tau);
  backward(model, cache, terms.d_fa, grad);
  return terms;
}

/// Sampled-negative loss through the model; accumulates parameter gradients.
template <typename Scalar>
NceTerms<Scalar> info_nce_loss(const CalModel<Scalar>& model, const RowMatrix<Scalar>& a,
                               const RowMatrix<Scalar>& b, const RowMatrix<Scalar>& pool,
                               const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>& keep,
                               double tau, CalModel<Scalar>& grad) {
  ForwardCache<Scalar> cache_a, cache_p;
  const RowMatrix<Scalar> fa = forward(model, a, cache_a);
  const RowMatrix<Scalar> fp = forward(model, pool, cache_p);
  auto terms = info_nce_pooled<Scalar>(fa, b, pool, fp, keep, tau);
  backward(model, cache_a, terms.d_fa, grad);
  backward(model, cache_p, terms.d_fpool, grad);
  return terms;
}

/// Decoupled-weight-decay Adam with bias correction.
class AdamW {
 public:
  AdamW(const CalModelF& model, const TrainConfig& config);
  void step(CalModelF& model, const CalModelF& grad, double lr);
  std::int64_t steps() const noexcept { return t_; }

 private:
  CalModelF m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double accuracy = 0;
  double lr = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double initial_loss = 0;  // first step
  double final_alpha = 0;
  double wall_seconds = 0;
  std::int64_t steps = 0;
  double adam_beta1 = 0, adam_beta2 = 0, adam_eps = 0;
  std::string negative_mode;
};

void write_train_log(const std::string& path, const TrainLog& log);

struct TrainResult {
  CalModelF model;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains a freshly initialised model (seeded from config.seed).
TrainResult train(const EmbeddingSet& embeddings, const PairSet& positives,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Continues training from `model`.
TrainResult train(CalModelF model, const EmbeddingSet& embeddings, const PairSet& positives,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace cal
