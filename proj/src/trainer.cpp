#include "cal/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace cal {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kNegativeStream = 2;
constexpr std::uint64_t kEpochStreamBase = 1000;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TensorRef {
  float* data;
  Eigen::Index size;
  bool decay;
};

std::vector<TensorRef> tensors(CalModelF& m) {
  std::vector<TensorRef> out;
  m.for_each_tensor([&](std::string_view, float* p, Eigen::Index n, bool decay) {
    out.push_back({p, n, decay});
  });
  return out;
}

std::vector<const float*> tensors(const CalModelF& m) {
  std::vector<const float*> out;
  m.for_each_tensor([&](std::string_view, const float* p, Eigen::Index, bool) { out.push_back(p); });
  return out;
}

RowMatrixF gather(const RowMatrixF& x, const std::vector<std::size_t>& rows) {
  RowMatrixF out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

std::string save_last_good(const CalModelF& model, const TrainConfig& config) {
  const std::filesystem::path dir = config.checkpoint_dir.empty()
                                        ? std::filesystem::temp_directory_path()
                                        : std::filesystem::path(config.checkpoint_dir);
  std::filesystem::create_directories(dir);
  const auto path = (dir / "last_good.ckpt").string();
  save_checkpoint(model, path);
  return path;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (anneal_t_max < 1) throw ConfigError("anneal_t_max must be at least 1");
  if (hidden < 1) throw ConfigError("hidden must be at least 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (divergence_patience < 1) throw ConfigError("divergence_patience must be at least 1");
}

double cosine_lr(double lr, int epoch, int t_max) {
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / t_max));
}

AdamW::AdamW(const CalModelF& model, const TrainConfig& config)
    : m_(CalModelF::zeros_like(model)),
      v_(CalModelF::zeros_like(model)),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay) {}

void AdamW::step(CalModelF& model, const CalModelF& grad, double lr) {
  ++t_;
  const auto p = tensors(model);
  const auto g = tensors(grad);
  const auto m = tensors(m_);
  const auto v = tensors(v_);
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto step_size = static_cast<float>(lr / bias1);
  const auto sqrt_bias2 = static_cast<float>(std::sqrt(bias2));
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t t = 0; t < p.size(); ++t) {
    Eigen::Map<Eigen::ArrayXf> pt(p[t].data, p[t].size);
    Eigen::Map<const Eigen::ArrayXf> gt(g[t], p[t].size);
    Eigen::Map<Eigen::ArrayXf> mt(m[t].data, m[t].size);
    Eigen::Map<Eigen::ArrayXf> vt(v[t].data, v[t].size);
    if (p[t].decay && weight_decay_ > 0) pt *= static_cast<float>(1.0 - lr * weight_decay_);
    mt = b1 * mt + (1.0f - b1) * gt;
    vt = b2 * vt + (1.0f - b2) * gt.square();
    pt -= step_size * mt / (vt.sqrt() / sqrt_bias2 + eps);
  }
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(9);
  for (const auto& e : log.epochs) {
    out << e.epoch << '\t' << e.loss << '\t' << e.accuracy << '\t' << e.lr << '\n';
  }
  out << "summary\tinitial_loss=" << log.initial_loss << "\tfinal_alpha=" << log.final_alpha
      << "\twall_seconds=" << log.wall_seconds << "\tsteps=" << log.steps
      << "\tnegative_mode=" << log.negative_mode << "\tadam_beta1=" << log.adam_beta1
      << "\tadam_beta2=" << log.adam_beta2 << "\tadam_eps=" << log.adam_eps << '\n';
  if (!out) throw IoError("write failed for " + path);
}

TrainResult train(const EmbeddingSet& embeddings, const PairSet& positives,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  SeededRng init_rng(derive_seed(config.seed, kInitStream));
  return train(init_model<float>(embeddings.dim(), config.hidden, init_rng), embeddings, positives,
               config, on_epoch);
}

TrainResult train(CalModelF model, const EmbeddingSet& embeddings, const PairSet& positives,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n = embeddings.size();
  positives.validate(n);
  if (positives.size() < 2) throw ConfigError("training needs at least 2 positive pairs");
  if (model.d != embeddings.dim()) {
    throw DimensionError("model expects dim " + std::to_string(model.d) + ", embeddings have " +
                         std::to_string(embeddings.dim()));
  }
  const auto start = std::chrono::steady_clock::now();
  const RowMatrixF& x = embeddings.vectors();
  const NegativeKind mode = config.negative_mode.kind;
  const auto keys = positives.key_set();
  const auto degrees = pair_degrees(positives, n);
  const DegreeBins bins(degrees);
  SeededRng neg_rng(derive_seed(config.seed, kNegativeStream));

  AdamW opt(model, config);
  auto grad = CalModelF::zeros_like(model);
  CalModelF last_good = model;
  TrainLog log;
  log.adam_beta1 = config.adam_beta1;
  log.adam_beta2 = config.adam_beta2;
  log.adam_eps = config.adam_eps;
  log.negative_mode = to_string(mode);
  int over_limit = 0;
  bool first_step = true;

  std::vector<std::size_t> ia, ib, pool;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(config.lr, epoch, config.anneal_t_max);
    const auto batches = make_batches(positives, config.batch_size,
                                      derive_seed(config.seed, kEpochStreamBase + epoch));
    double loss_sum = 0, acc_sum = 0;
    for (const auto& batch : batches) {
      ia.clear();
      ib.clear();
      for (const auto idx : batch) {
        ia.push_back(positives.pairs[idx].a);
        ib.push_back(positives.pairs[idx].b);
      }
      const RowMatrixF a = gather(x, ia), b = gather(x, ib);
      grad.set_zero();
      NceTerms<float> terms;
      if (mode == NegativeKind::in_batch) {
        terms = info_nce_loss<float>(model, a, b, config.temperature, grad);
      } else {
        pool.clear();
        if (mode == NegativeKind::random_k) {
          const std::size_t k = config.negatives_per_step();
          for (std::size_t p = 0; p < k; ++p) pool.push_back(neg_rng.uniform_index(n));
        } else {
          for (const auto j : ib) pool.push_back(bins.sample(bins.bin_of(j), neg_rng));
        }
        Mask keep(static_cast<Eigen::Index>(ia.size()), static_cast<Eigen::Index>(pool.size()));
        for (std::size_t i = 0; i < ia.size(); ++i) {
          for (std::size_t p = 0; p < pool.size(); ++p) {
            const std::size_t c = pool[p];
            keep(i, p) = c != ia[i] && c != ib[i] && !keys.count(pair_key(ia[i], c)) &&
                         !keys.count(pair_key(ib[i], c));
          }
        }
        terms = info_nce_loss<float>(model, a, b, gather(x, pool), keep, config.temperature, grad);
      }
      if (!std::isfinite(terms.loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch),
                              save_last_good(last_good, config));
      }
      if (first_step) {
        log.initial_loss = terms.loss;
        first_step = false;
      }
      opt.step(model, grad, lr);
      loss_sum += terms.loss;
      acc_sum += terms.accuracy;
    }
    const double nb = static_cast<double>(batches.size());
    EpochRecord record{epoch, loss_sum / nb, acc_sum / nb, lr};
    log.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
    over_limit = record.loss > config.divergence_factor * log.initial_loss ? over_limit + 1 : 0;
    if (over_limit >= config.divergence_patience) {
      throw DivergenceError("loss above " + std::to_string(config.divergence_factor) +
                                "x initial for " + std::to_string(over_limit) + " epochs",
                            save_last_good(last_good, config));
    }
    last_good = model;
  }
  log.steps = opt.steps();
  log.final_alpha = model.alpha();
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(model), std::move(log)};
}

}  // namespace cal
