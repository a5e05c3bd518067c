#include "vle/linear.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vle/errors.hpp"
#include "vle/gradcheck.hpp"
#include "vle/metrics.hpp"
#include "vle/rng.hpp"

namespace vle::linear {

namespace {

constexpr std::uint64_t kEpochSalt = 0x45504f4348ULL;

// The training loss is log_loss after clamping, so its exact derivative
// vanishes wherever the clamp is active. Keeping the analytic gradient equal
// to the derivative of the loss actually minimized is what lets the
// finite-difference checks hold everywhere.
bool loss_clamped(double p) {
  return p <= metrics::kLogLossEpsilon || p >= 1.0 - metrics::kLogLossEpsilon;
}

double label_target(const std::vector<int>& labels, int label) {
  return has_label(labels, label) ? 1.0 : 0.0;
}

int shard_count(int vocab, int threads) { return std::min(std::max(threads, 1), vocab); }

// Contiguous label ranges; shard boundaries never change per-label math, so
// any shard count reproduces the sequential parameters bit for bit.
std::vector<int> shard_bounds(int vocab, int shards) {
  std::vector<int> bounds(static_cast<std::size_t>(shards) + 1, 0);
  const int base = vocab / shards;
  const int rem = vocab % shards;
  for (int s = 0; s < shards; ++s) {
    bounds[static_cast<std::size_t>(s) + 1] =
        bounds[static_cast<std::size_t>(s)] + base + (s < rem ? 1 : 0);
  }
  return bounds;
}

void run_sharded(int vocab, int threads, const std::function<void(int, int)>& work) {
  const int shards = shard_count(vocab, threads);
  const std::vector<int> bounds = shard_bounds(vocab, shards);
  if (shards == 1) {
    work(0, vocab);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(shards));
  pool.reserve(static_cast<std::size_t>(shards));
  for (int s = 0; s < shards; ++s) {
    pool.emplace_back([&, s] {
      try {
        work(bounds[static_cast<std::size_t>(s)], bounds[static_cast<std::size_t>(s) + 1]);
      } catch (...) {
        errors[static_cast<std::size_t>(s)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Sum of log-loss and raw gradient sums for one label over a batch. No mean,
// no L2; callers apply both so the trainer and the checked objective share
// one kernel.
template <class Features>
double logistic_label_batch(const Features& x, const LabelSets& y,
                            const std::vector<std::size_t>& rows, const Eigen::VectorXd& w,
                            double b, int label, Eigen::VectorXd* gw, double* gb) {
  double loss = 0.0;
  if (gw != nullptr) gw->setZero();
  if (gb != nullptr) *gb = 0.0;
  for (const std::size_t i : rows) {
    const double p = sigmoid(x.dot(i, w) + b);
    const double target = label_target(y[i], label);
    loss += metrics::log_loss(p, target);
    if (gw == nullptr || loss_clamped(p)) continue;
    const double g = p - target;
    x.add_scaled(i, g, *gw);
    if (gb != nullptr) *gb += g;
  }
  return loss;
}

struct MoeLabelGrad {
  std::vector<Eigen::VectorXd> gate_weights;    // experts+1 rows
  Eigen::VectorXd gate_biases;                  // [experts+1]
  std::vector<Eigen::VectorXd> expert_weights;  // experts rows
  Eigen::VectorXd expert_biases;                // [experts]

  MoeLabelGrad(int experts, int dim)
      : gate_weights(static_cast<std::size_t>(experts) + 1, Eigen::VectorXd(dim)),
        gate_biases(experts + 1),
        expert_weights(static_cast<std::size_t>(experts), Eigen::VectorXd(dim)),
        expert_biases(experts) {}
  void set_zero() {
    for (auto& g : gate_weights) g.setZero();
    for (auto& g : expert_weights) g.setZero();
    gate_biases.setZero();
    expert_biases.setZero();
  }
};

// Mixture score for one label block plus optional raw gradient sums.
template <class Features>
double moe_label_batch(const Features& x, const LabelSets& y, const std::vector<std::size_t>& rows,
                       const MoeParams& params, int label, MoeLabelGrad* grad) {
  const int experts = params.experts;
  const int gate_base = label * (experts + 1);
  const int expert_base = label * experts;

  std::vector<Eigen::VectorXd> gate_w(static_cast<std::size_t>(experts) + 1);
  std::vector<Eigen::VectorXd> expert_w(static_cast<std::size_t>(experts));
  for (int k = 0; k <= experts; ++k) {
    gate_w[static_cast<std::size_t>(k)] = params.gate_weights.row(gate_base + k).transpose();
  }
  for (int k = 0; k < experts; ++k) {
    expert_w[static_cast<std::size_t>(k)] = params.expert_weights.row(expert_base + k).transpose();
  }

  std::vector<double> activations(static_cast<std::size_t>(experts) + 1);
  std::vector<double> expert_p(static_cast<std::size_t>(experts));
  double loss = 0.0;
  if (grad != nullptr) grad->set_zero();

  for (const std::size_t i : rows) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= experts; ++k) {
      const double logit =
          x.dot(i, gate_w[static_cast<std::size_t>(k)]) + params.gate_biases(gate_base + k);
      activations[static_cast<std::size_t>(k)] = logit;
      max_logit = std::max(max_logit, logit);
    }
    double denom = 0.0;
    for (int k = 0; k <= experts; ++k) {
      auto& a = activations[static_cast<std::size_t>(k)];
      a = std::exp(a - max_logit);
      denom += a;
    }
    for (int k = 0; k <= experts; ++k) activations[static_cast<std::size_t>(k)] /= denom;

    double score = 0.0;
    for (int k = 0; k < experts; ++k) {
      expert_p[static_cast<std::size_t>(k)] = sigmoid(
          x.dot(i, expert_w[static_cast<std::size_t>(k)]) + params.expert_biases(expert_base + k));
      score += activations[static_cast<std::size_t>(k)] * expert_p[static_cast<std::size_t>(k)];
    }

    const double target = label_target(y[i], label);
    loss += metrics::log_loss(score, target);
    if (grad == nullptr || loss_clamped(score)) continue;

    const double dscore = (score - target) / (score * (1.0 - score));
    for (int k = 0; k <= experts; ++k) {
      const double mixed = k < experts ? expert_p[static_cast<std::size_t>(k)] : 0.0;
      const double dlogit = dscore * activations[static_cast<std::size_t>(k)] * (mixed - score);
      x.add_scaled(i, dlogit, grad->gate_weights[static_cast<std::size_t>(k)]);
      grad->gate_biases(k) += dlogit;
    }
    for (int k = 0; k < experts; ++k) {
      const double pk = expert_p[static_cast<std::size_t>(k)];
      const double dz = dscore * activations[static_cast<std::size_t>(k)] * pk * (1.0 - pk);
      x.add_scaled(i, dz, grad->expert_weights[static_cast<std::size_t>(k)]);
      grad->expert_biases(k) += dz;
    }
  }
  return loss;
}

void update_row(Eigen::MatrixXd& param, Eigen::MatrixXd& accum, int row,
                const Eigen::VectorXd& grad, double lr, double eps) {
  accum.row(row).array() += grad.array().square().transpose();
  param.row(row).array() -=
      lr * grad.array().transpose() / (accum.row(row).array().sqrt() + eps);
}

void update_scalar(double& param, double& accum, double grad, double lr, double eps) {
  accum += grad * grad;
  param -= lr * grad / (std::sqrt(accum) + eps);
}

std::vector<std::size_t> batch_rows(const std::vector<std::size_t>& order, std::size_t start,
                                    std::size_t batch_size) {
  const std::size_t stop = std::min(order.size(), start + batch_size);
  return std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(stop));
}

void check_training_inputs(std::size_t n, const LabelSets& y, int vocab, const TrainConfig& cfg) {
  cfg.validate();
  if (vocab < 1) throw InvalidArgument("train: vocabulary must be positive");
  if (n == 0) throw InvalidArgument("train: empty dataset");
  if (y.size() != n) throw InvalidArgument("train: label sets do not match example count");
  for (const auto& labels : y) {
    if (!labels.empty() && (labels.front() < 0 || labels.back() >= vocab)) {
      throw InvalidArgument("train: label outside vocabulary");
    }
  }
}

std::vector<std::size_t> self_check_rows(std::size_t n) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < std::min<std::size_t>(n, 3); ++i) rows.push_back(i);
  return rows;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LogisticParams LogisticParams::zeros(int vocab, int dim, double lambda) {
  if (vocab < 1 || dim < 1) throw InvalidArgument("LogisticParams: vocab and dim must be positive");
  LogisticParams params;
  params.weights = Eigen::MatrixXd::Zero(vocab, dim);
  params.biases = Eigen::VectorXd::Zero(vocab);
  params.lambda = lambda;
  return params;
}

Eigen::VectorXd logistic_predict(const LogisticParams& params, const Eigen::VectorXd& x) {
  if (x.size() != params.weights.cols()) {
    throw InvalidArgument("logistic_predict: feature dimension mismatch");
  }
  Eigen::VectorXd scores = params.weights * x + params.biases;
  for (Eigen::Index e = 0; e < scores.size(); ++e) scores(e) = sigmoid(scores(e));
  return scores;
}

Eigen::VectorXd moe_predict(const MoeParams& params, const Eigen::VectorXd& x) {
  const int vocab = params.vocab();
  const int experts = params.experts;
  if (x.size() != params.expert_weights.cols()) {
    throw InvalidArgument("moe_predict: feature dimension mismatch");
  }
  Eigen::VectorXd gate_logits = params.gate_weights * x + params.gate_biases;
  Eigen::VectorXd expert_scores = params.expert_weights * x + params.expert_biases;
  Eigen::VectorXd scores(vocab);
  for (int e = 0; e < vocab; ++e) {
    const int gate_base = e * (experts + 1);
    double max_logit = gate_logits(gate_base);
    for (int k = 1; k <= experts; ++k) max_logit = std::max(max_logit, gate_logits(gate_base + k));
    double denom = 0.0;
    for (int k = 0; k <= experts; ++k) denom += std::exp(gate_logits(gate_base + k) - max_logit);
    double s = 0.0;
    for (int k = 0; k < experts; ++k) {
      const double a = std::exp(gate_logits(gate_base + k) - max_logit) / denom;
      s += a * sigmoid(expert_scores(e * experts + k));
    }
    scores(e) = s;
  }
  return scores;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("TrainConfig: learning_rate must be positive and finite");
  }
  if (!(adagrad_epsilon > 0.0)) throw InvalidArgument("TrainConfig: adagrad_epsilon must be positive");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
  if (lambda < 0.0 || !std::isfinite(lambda)) throw InvalidArgument("TrainConfig: lambda must be >= 0");
  if (experts < 1) throw InvalidArgument("TrainConfig: experts must be >= 1");
  if (threads < 1) throw InvalidArgument("TrainConfig: threads must be >= 1");
}

double TrainTrace::final_loss() const {
  if (step_loss.empty()) throw Error("TrainTrace: no steps recorded");
  return step_loss.back();
}

namespace {
double mean_range(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += v[i];
  return sum / static_cast<double>(end - begin);
}
}  // namespace

double TrainTrace::mean_head(double fraction) const {
  if (step_loss.empty()) throw Error("TrainTrace: no steps recorded");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("TrainTrace: fraction in (0,1]");
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(fraction * static_cast<double>(step_loss.size())));
  return mean_range(step_loss, 0, n);
}

double TrainTrace::mean_tail(double fraction) const {
  if (step_loss.empty()) throw Error("TrainTrace: no steps recorded");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("TrainTrace: fraction in (0,1]");
  const auto n = std::max<std::size_t>(
      1, static_cast<std::size_t>(fraction * static_cast<double>(step_loss.size())));
  return mean_range(step_loss, step_loss.size() - n, step_loss.size());
}

DenseFeatures DenseFeatures::from_examples(const std::vector<VideoExample>& examples,
                                           FeatureMode mode) {
  if (examples.empty()) return DenseFeatures(Eigen::MatrixXd(0, 0));
  const Eigen::VectorXd first = assemble_features(examples.front(), mode);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(examples.size()), first.size());
  rows.row(0) = first.transpose();
  for (std::size_t i = 1; i < examples.size(); ++i) {
    const Eigen::VectorXd features = assemble_features(examples[i], mode);
    if (features.size() != rows.cols()) {
      throw InvalidArgument("DenseFeatures: inconsistent feature dimensions at row " +
                            std::to_string(i));
    }
    rows.row(static_cast<Eigen::Index>(i)) = features.transpose();
  }
  return DenseFeatures(std::move(rows));
}

SparseFeatures::SparseFeatures(int dim) : dim_(dim) {
  if (dim < 1) throw InvalidArgument("SparseFeatures: dim must be positive");
}

void SparseFeatures::add_row(std::vector<int> indices, std::vector<double> values) {
  if (indices.size() != values.size()) {
    throw InvalidArgument("SparseFeatures: index/value length mismatch");
  }
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] < 0 || indices[j] >= dim_) {
      throw InvalidArgument("SparseFeatures: index out of range");
    }
    if (j > 0 && indices[j] <= indices[j - 1]) {
      throw InvalidArgument("SparseFeatures: indices must be strictly ascending");
    }
    if (!std::isfinite(values[j])) throw InvalidArgument("SparseFeatures: non-finite value");
  }
  indices_.insert(indices_.end(), indices.begin(), indices.end());
  values_.insert(values_.end(), values.begin(), values.end());
  offsets_.push_back(indices_.size());
}

double SparseFeatures::dot(std::size_t i, const Eigen::VectorXd& w) const {
  double sum = 0.0;
  for (std::size_t j = offsets_[i]; j < offsets_[i + 1]; ++j) {
    sum += values_[j] * w(indices_[j]);
  }
  return sum;
}

void SparseFeatures::add_scaled(std::size_t i, double c, Eigen::VectorXd& acc) const {
  for (std::size_t j = offsets_[i]; j < offsets_[i + 1]; ++j) {
    acc(indices_[j]) += c * values_[j];
  }
}

Eigen::VectorXd SparseFeatures::row(std::size_t i) const {
  Eigen::VectorXd dense = Eigen::VectorXd::Zero(dim_);
  for (std::size_t j = offsets_[i]; j < offsets_[i + 1]; ++j) dense(indices_[j]) = values_[j];
  return dense;
}

LabelSets label_sets(const std::vector<VideoExample>& examples, int vocab) {
  LabelSets y;
  y.reserve(examples.size());
  for (const auto& ex : examples) {
    if (!ex.labels.empty() && (ex.labels.front() < 0 || ex.labels.back() >= vocab)) {
      throw InvalidArgument("label_sets: label outside vocabulary for video " + ex.video_id);
    }
    y.push_back(ex.labels);
  }
  return y;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  Rng rng(mix_seed(seed, kEpochSalt + static_cast<std::uint64_t>(epoch)));
  return rng.permutation(n);
}

void adagrad_update(Eigen::Ref<Eigen::VectorXd> param, Eigen::Ref<Eigen::VectorXd> accum,
                    const Eigen::VectorXd& grad, double lr, double eps) {
  if (param.size() != accum.size() || param.size() != grad.size()) {
    throw InvalidArgument("adagrad_update: size mismatch");
  }
  accum.array() += grad.array().square();
  param.array() -= lr * grad.array() / (accum.array().sqrt() + eps);
}

template <class Features>
double logistic_batch_objective(const LogisticParams& params, const Features& x,
                                const LabelSets& y, const std::vector<std::size_t>& rows,
                                int label_lo, int label_hi, LogisticParams* grad) {
  if (rows.empty()) throw InvalidArgument("logistic_batch_objective: empty batch");
  const double inv = 1.0 / static_cast<double>(rows.size());
  double objective = 0.0;
  Eigen::VectorXd gw(params.dim());
  for (int e = label_lo; e < label_hi; ++e) {
    double gb = 0.0;
    const Eigen::VectorXd w = params.weights.row(e).transpose();
    const double loss =
        logistic_label_batch(x, y, rows, w, params.biases(e), e, grad ? &gw : nullptr, &gb);
    objective += loss * inv + params.lambda * w.squaredNorm();
    if (grad != nullptr) {
      grad->weights.row(e) = (gw * inv + 2.0 * params.lambda * w).transpose();
      grad->biases(e) = gb * inv;
    }
  }
  return objective;
}

template <class Features>
double moe_batch_objective(const MoeParams& params, const Features& x, const LabelSets& y,
                           const std::vector<std::size_t>& rows, int label_lo, int label_hi,
                           MoeParams* grad) {
  if (rows.empty()) throw InvalidArgument("moe_batch_objective: empty batch");
  const double inv = 1.0 / static_cast<double>(rows.size());
  const int experts = params.experts;
  double objective = 0.0;
  MoeLabelGrad local(experts, params.dim());
  for (int e = label_lo; e < label_hi; ++e) {
    const double loss = moe_label_batch(x, y, rows, params, e, grad ? &local : nullptr);
    const int gate_base = e * (experts + 1);
    const int expert_base = e * experts;
    double l2 = params.gate_weights.middleRows(gate_base, experts + 1).squaredNorm() +
                params.expert_weights.middleRows(expert_base, experts).squaredNorm();
    objective += loss * inv + params.lambda * l2;
    if (grad != nullptr) {
      for (int k = 0; k <= experts; ++k) {
        grad->gate_weights.row(gate_base + k) =
            local.gate_weights[static_cast<std::size_t>(k)].transpose() * inv +
            2.0 * params.lambda * params.gate_weights.row(gate_base + k);
      }
      grad->gate_biases.segment(gate_base, experts + 1) = local.gate_biases * inv;
      for (int k = 0; k < experts; ++k) {
        grad->expert_weights.row(expert_base + k) =
            local.expert_weights[static_cast<std::size_t>(k)].transpose() * inv +
            2.0 * params.lambda * params.expert_weights.row(expert_base + k);
      }
      grad->expert_biases.segment(expert_base, experts) = local.expert_biases * inv;
    }
  }
  return objective;
}

Eigen::VectorXd logistic_flatten(const LogisticParams& params) {
  const int vocab = params.vocab();
  const int dim = params.dim();
  Eigen::VectorXd flat(static_cast<Eigen::Index>(vocab) * dim + vocab);
  Eigen::Index pos = 0;
  for (int e = 0; e < vocab; ++e) {
    flat.segment(pos, dim) = params.weights.row(e).transpose();
    pos += dim;
  }
  flat.segment(pos, vocab) = params.biases;
  return flat;
}

LogisticParams logistic_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, double lambda) {
  if (flat.size() != static_cast<Eigen::Index>(vocab) * dim + vocab) {
    throw InvalidArgument("logistic_unflatten: size mismatch");
  }
  LogisticParams params = LogisticParams::zeros(vocab, dim, lambda);
  Eigen::Index pos = 0;
  for (int e = 0; e < vocab; ++e) {
    params.weights.row(e) = flat.segment(pos, dim).transpose();
    pos += dim;
  }
  params.biases = flat.segment(pos, vocab);
  return params;
}

Eigen::VectorXd moe_flatten(const MoeParams& params) {
  const Eigen::Index gw = params.gate_weights.size();
  const Eigen::Index gb = params.gate_biases.size();
  const Eigen::Index ew = params.expert_weights.size();
  const Eigen::Index eb = params.expert_biases.size();
  Eigen::VectorXd flat(gw + gb + ew + eb);
  Eigen::Index pos = 0;
  for (Eigen::Index r = 0; r < params.gate_weights.rows(); ++r) {
    flat.segment(pos, params.gate_weights.cols()) = params.gate_weights.row(r).transpose();
    pos += params.gate_weights.cols();
  }
  flat.segment(pos, gb) = params.gate_biases;
  pos += gb;
  for (Eigen::Index r = 0; r < params.expert_weights.rows(); ++r) {
    flat.segment(pos, params.expert_weights.cols()) = params.expert_weights.row(r).transpose();
    pos += params.expert_weights.cols();
  }
  flat.segment(pos, eb) = params.expert_biases;
  return flat;
}

MoeParams moe_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, int experts,
                        double lambda) {
  const Eigen::Index gate_rows = static_cast<Eigen::Index>(vocab) * (experts + 1);
  const Eigen::Index expert_rows = static_cast<Eigen::Index>(vocab) * experts;
  const Eigen::Index expect = gate_rows * dim + gate_rows + expert_rows * dim + expert_rows;
  if (flat.size() != expect) throw InvalidArgument("moe_unflatten: size mismatch");
  MoeParams params;
  params.experts = experts;
  params.lambda = lambda;
  params.gate_weights.resize(gate_rows, dim);
  params.expert_weights.resize(expert_rows, dim);
  Eigen::Index pos = 0;
  for (Eigen::Index r = 0; r < gate_rows; ++r) {
    params.gate_weights.row(r) = flat.segment(pos, dim).transpose();
    pos += dim;
  }
  params.gate_biases = flat.segment(pos, gate_rows);
  pos += gate_rows;
  for (Eigen::Index r = 0; r < expert_rows; ++r) {
    params.expert_weights.row(r) = flat.segment(pos, dim).transpose();
    pos += dim;
  }
  params.expert_biases = flat.segment(pos, expert_rows);
  return params;
}

MoeParams moe_init(int vocab, int dim, const TrainConfig& cfg) {
  if (vocab < 1 || dim < 1) throw InvalidArgument("moe_init: vocab and dim must be positive");
  const int experts = cfg.experts;
  MoeParams params;
  params.experts = experts;
  params.lambda = cfg.lambda;
  params.gate_weights.resize(static_cast<Eigen::Index>(vocab) * (experts + 1), dim);
  params.gate_biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab) * (experts + 1));
  params.expert_weights.resize(static_cast<Eigen::Index>(vocab) * experts, dim);
  params.expert_biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab) * experts);

  // Per-label streams keep initialization independent of shard layout.
  const double stddev = 0.01 / std::sqrt(static_cast<double>(dim));
  const std::uint64_t base = mix_seed(cfg.seed, fnv1a64("moe-init"));
  for (int e = 0; e < vocab; ++e) {
    Rng rng(mix_seed(base, static_cast<std::uint64_t>(e)));
    for (int k = 0; k <= experts; ++k) {
      for (int d = 0; d < dim; ++d) {
        params.gate_weights(e * (experts + 1) + k, d) = stddev * rng.normal();
      }
    }
    for (int k = 0; k < experts; ++k) {
      for (int d = 0; d < dim; ++d) {
        params.expert_weights(e * experts + k, d) = stddev * rng.normal();
      }
    }
  }
  return params;
}

namespace {

// Shared mini-batch driver. `label_step` must update every label in [lo, hi)
// for the given batch and, when loss_grid is non-null, store each label's
// mean batch log-loss at (*loss_grid)(step, label). Shards own disjoint label
// columns, and the trace sums each row in label order afterwards, so the
// recorded trace is byte-identical no matter how labels were sharded.
void drive_training(
    std::size_t n, int vocab, const TrainConfig& cfg, TrainTrace* trace,
    const std::function<void(int, int, const std::vector<std::size_t>&, std::size_t,
                             Eigen::MatrixXd*)>& label_step) {
  const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (n + batch_size - 1) / batch_size;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

  Eigen::MatrixXd loss_grid;
  Eigen::MatrixXd* grid = nullptr;
  if (trace != nullptr && total_steps > 0) {
    loss_grid.setZero(static_cast<Eigen::Index>(total_steps), vocab);
    grid = &loss_grid;
  }

  run_sharded(vocab, cfg.threads, [&](int lo, int hi) {
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const std::vector<std::size_t> order = epoch_order(cfg.seed, epoch, n);
      for (std::size_t start = 0; start < n; start += batch_size, ++step) {
        const std::vector<std::size_t> rows = batch_rows(order, start, batch_size);
        label_step(lo, hi, rows, step, grid);
      }
    }
  });

  if (trace != nullptr) {
    trace->step_loss.assign(total_steps, 0.0);
    for (std::size_t t = 0; t < total_steps; ++t) {
      double sum = 0.0;
      for (int e = 0; e < vocab; ++e) {
        sum += loss_grid(static_cast<Eigen::Index>(t), e);
      }
      trace->step_loss[t] = sum;
    }
  }
}

}  // namespace

template <class Features>
LogisticParams logistic_train_features(const Features& x, const LabelSets& y, int vocab,
                                       const TrainConfig& cfg, TrainTrace* trace) {
  check_training_inputs(x.count(), y, vocab, cfg);
  const int dim = x.dim();
  LogisticParams params = LogisticParams::zeros(vocab, dim, cfg.lambda);
  Eigen::MatrixXd acc_w = Eigen::MatrixXd::Zero(vocab, dim);
  Eigen::VectorXd acc_b = Eigen::VectorXd::Zero(vocab);
  const double inv_reg = 2.0 * cfg.lambda;

  drive_training(
      x.count(), vocab, cfg, trace,
      [&](int lo, int hi, const std::vector<std::size_t>& rows, std::size_t step,
          Eigen::MatrixXd* loss_grid) {
        const double inv = 1.0 / static_cast<double>(rows.size());
        Eigen::VectorXd gw(dim);
        for (int e = lo; e < hi; ++e) {
          double gb = 0.0;
          const Eigen::VectorXd w = params.weights.row(e).transpose();
          const double loss = logistic_label_batch(x, y, rows, w, params.biases(e), e, &gw, &gb);
          gw = gw * inv + inv_reg * w;
          update_row(params.weights, acc_w, e, gw, cfg.learning_rate, cfg.adagrad_epsilon);
          update_scalar(params.biases(e), acc_b(e), gb * inv, cfg.learning_rate,
                        cfg.adagrad_epsilon);
          if (loss_grid != nullptr) {
            (*loss_grid)(static_cast<Eigen::Index>(step), e) = loss * inv;
          }
        }
      });
  return params;
}

template <class Features>
MoeParams moe_train_features(const Features& x, const LabelSets& y, int vocab,
                             const TrainConfig& cfg, TrainTrace* trace) {
  check_training_inputs(x.count(), y, vocab, cfg);
  const int dim = x.dim();
  const int experts = cfg.experts;
  MoeParams params = moe_init(vocab, dim, cfg);

  if (cfg.gradient_self_check) {
    const std::vector<std::size_t> rows = self_check_rows(x.count());
    GradProblem problem;
    problem.loss = [&](const Eigen::VectorXd& flat) {
      const MoeParams p = moe_unflatten(flat, vocab, dim, experts, cfg.lambda);
      return moe_batch_objective(p, x, y, rows, 0, vocab, nullptr);
    };
    problem.gradient = [&](const Eigen::VectorXd& flat) {
      MoeParams p = moe_unflatten(flat, vocab, dim, experts, cfg.lambda);
      MoeParams g = moe_unflatten(Eigen::VectorXd::Zero(flat.size()), vocab, dim, experts,
                                  cfg.lambda);
      moe_batch_objective(p, x, y, rows, 0, vocab, &g);
      return moe_flatten(g);
    };
    const double err =
        certified_gradient_error(problem, moe_flatten(params), mix_seed(cfg.seed, fnv1a64("moe-check")));
    if (err >= 1e-4) {
      throw GradientCheckError("moe_train: analytic gradient failed finite-difference check "
                               "(max relative error " + std::to_string(err) + ")");
    }
  }

  Eigen::MatrixXd acc_gw = Eigen::MatrixXd::Zero(params.gate_weights.rows(), dim);
  Eigen::VectorXd acc_gb = Eigen::VectorXd::Zero(params.gate_biases.size());
  Eigen::MatrixXd acc_ew = Eigen::MatrixXd::Zero(params.expert_weights.rows(), dim);
  Eigen::VectorXd acc_eb = Eigen::VectorXd::Zero(params.expert_biases.size());

  drive_training(
      x.count(), vocab, cfg, trace,
      [&](int lo, int hi, const std::vector<std::size_t>& rows, std::size_t step,
          Eigen::MatrixXd* loss_grid) {
        const double inv = 1.0 / static_cast<double>(rows.size());
        MoeLabelGrad grad(experts, dim);
        for (int e = lo; e < hi; ++e) {
          const double loss = moe_label_batch(x, y, rows, params, e, &grad);
          const int gate_base = e * (experts + 1);
          const int expert_base = e * experts;
          for (int k = 0; k <= experts; ++k) {
            const Eigen::VectorXd g =
                grad.gate_weights[static_cast<std::size_t>(k)] * inv +
                2.0 * cfg.lambda * params.gate_weights.row(gate_base + k).transpose();
            update_row(params.gate_weights, acc_gw, gate_base + k, g, cfg.learning_rate,
                       cfg.adagrad_epsilon);
            update_scalar(params.gate_biases(gate_base + k), acc_gb(gate_base + k),
                          grad.gate_biases(k) * inv, cfg.learning_rate, cfg.adagrad_epsilon);
          }
          for (int k = 0; k < experts; ++k) {
            const Eigen::VectorXd g =
                grad.expert_weights[static_cast<std::size_t>(k)] * inv +
                2.0 * cfg.lambda * params.expert_weights.row(expert_base + k).transpose();
            update_row(params.expert_weights, acc_ew, expert_base + k, g, cfg.learning_rate,
                       cfg.adagrad_epsilon);
            update_scalar(params.expert_biases(expert_base + k), acc_eb(expert_base + k),
                          grad.expert_biases(k) * inv, cfg.learning_rate, cfg.adagrad_epsilon);
          }
          if (loss_grid != nullptr) {
            (*loss_grid)(static_cast<Eigen::Index>(step), e) = loss * inv;
          }
        }
      });
  return params;
}

LogisticParams logistic_train(const std::vector<VideoExample>& examples, const Vocabulary& vocab,
                              const TrainConfig& cfg, FeatureMode mode, TrainTrace* trace) {
  const DenseFeatures x = DenseFeatures::from_examples(examples, mode);
  const LabelSets y = label_sets(examples, vocab.size);
  return logistic_train_features(x, y, vocab.size, cfg, trace);
}

MoeParams moe_train(const std::vector<VideoExample>& examples, const Vocabulary& vocab,
                    const TrainConfig& cfg, FeatureMode mode, TrainTrace* trace) {
  const DenseFeatures x = DenseFeatures::from_examples(examples, mode);
  const LabelSets y = label_sets(examples, vocab.size);
  return moe_train_features(x, y, vocab.size, cfg, trace);
}

template LogisticParams logistic_train_features<DenseFeatures>(const DenseFeatures&,
                                                               const LabelSets&, int,
                                                               const TrainConfig&, TrainTrace*);
template LogisticParams logistic_train_features<SparseFeatures>(const SparseFeatures&,
                                                                const LabelSets&, int,
                                                                const TrainConfig&, TrainTrace*);
template MoeParams moe_train_features<DenseFeatures>(const DenseFeatures&, const LabelSets&, int,
                                                     const TrainConfig&, TrainTrace*);
template MoeParams moe_train_features<SparseFeatures>(const SparseFeatures&, const LabelSets&, int,
                                                      const TrainConfig&, TrainTrace*);
template double logistic_batch_objective<DenseFeatures>(const LogisticParams&,
                                                        const DenseFeatures&, const LabelSets&,
                                                        const std::vector<std::size_t>&, int, int,
                                                        LogisticParams*);
template double logistic_batch_objective<SparseFeatures>(const LogisticParams&,
                                                         const SparseFeatures&, const LabelSets&,
                                                         const std::vector<std::size_t>&, int, int,
                                                         LogisticParams*);
template double moe_batch_objective<DenseFeatures>(const MoeParams&, const DenseFeatures&,
                                                   const LabelSets&, const std::vector<std::size_t>&,
                                                   int, int, MoeParams*);
template double moe_batch_objective<SparseFeatures>(const MoeParams&, const SparseFeatures&,
                                                    const LabelSets&, const std::vector<std::size_t>&,
                                                    int, int, MoeParams*);

}  // namespace vle::linear
