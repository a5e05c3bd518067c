#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "vle/datamodel.hpp"

namespace vle::linear {

double sigmoid(double z);

// One-vs-all logistic model: one weight row and bias per label.
struct LogisticParams {
  Eigen::MatrixXd weights;  // [vocab x dim]
  Eigen::VectorXd biases;   // [vocab]
  double lambda = 1e-6;

  int vocab() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
  static LogisticParams zeros(int vocab, int dim, double lambda = 1e-6);
};

// Per-label sigmoid scores for one feature vector.
Eigen::VectorXd logistic_predict(const LogisticParams& params, const Eigen::VectorXd& x);

// Mixture of experts, one mixture per label. Rows are stored in label-major
// blocks: label e owns gate rows [e*(experts+1), e*(experts+1)+experts] (the
// last row of each block is the null gate) and expert rows
// [e*experts, e*experts+experts).
struct MoeParams {
  Eigen::MatrixXd gate_weights;    // [vocab*(experts+1) x dim]
  Eigen::VectorXd gate_biases;     // [vocab*(experts+1)]
  Eigen::MatrixXd expert_weights;  // [vocab*experts x dim]
  Eigen::VectorXd expert_biases;   // [vocab*experts]
  int experts = 2;
  double lambda = 1e-6;

  int vocab() const {
    return experts > 0 ? static_cast<int>(expert_weights.rows()) / experts : 0;
  }
  int dim() const { return static_cast<int>(expert_weights.cols()); }
};

Eigen::VectorXd moe_predict(const MoeParams& params, const Eigen::VectorXd& x);

struct TrainConfig {
  double learning_rate = 0.01;
  double adagrad_epsilon = 1e-6;
  int batch_size = 128;
  int epochs = 10;
  double lambda = 1e-6;
  int experts = 2;  // MoE only
  std::uint64_t seed = 1;
  int threads = 1;  // label shards; any value yields bit-identical parameters
  bool gradient_self_check = true;

  void validate() const;  // throws InvalidArgument
};

// Per-step training loss: mean over the batch of the log-loss summed over all
// labels (the L2 penalty is excluded so traces are comparable across lambda).
struct TrainTrace {
  std::vector<double> step_loss;

  double final_loss() const;
  // Mean loss over the first/last `fraction` of recorded steps.
  double mean_head(double fraction) const;
  double mean_tail(double fraction) const;
};

// Dense feature rows. `dot`/`add_scaled` form the contract the trainers need;
// SparseFeatures implements the same one so stacked ensemble inputs train
// through identical code.
class DenseFeatures {
 public:
  DenseFeatures() = default;
  explicit DenseFeatures(Eigen::MatrixXd rows) : rows_(std::move(rows)) {}
  static DenseFeatures from_examples(const std::vector<VideoExample>& examples, FeatureMode mode);

  std::size_t count() const { return static_cast<std::size_t>(rows_.rows()); }
  int dim() const { return static_cast<int>(rows_.cols()); }
  double dot(std::size_t i, const Eigen::VectorXd& w) const {
    return rows_.row(static_cast<Eigen::Index>(i)).dot(w);
  }
  void add_scaled(std::size_t i, double c, Eigen::VectorXd& acc) const {
    acc += c * rows_.row(static_cast<Eigen::Index>(i)).transpose();
  }
  Eigen::VectorXd row(std::size_t i) const { return rows_.row(static_cast<Eigen::Index>(i)); }
  const Eigen::MatrixXd& rows() const { return rows_; }

 private:
  Eigen::MatrixXd rows_;
};

// Row-compressed sparse features; indices per row are strictly ascending.
class SparseFeatures {
 public:
  explicit SparseFeatures(int dim);
  void add_row(std::vector<int> indices, std::vector<double> values);

  std::size_t count() const { return offsets_.size() - 1; }
  int dim() const { return dim_; }
  double dot(std::size_t i, const Eigen::VectorXd& w) const;
  void add_scaled(std::size_t i, double c, Eigen::VectorXd& acc) const;
  Eigen::VectorXd row(std::size_t i) const;  // densified copy
  std::size_t nonzeros() const { return indices_.size(); }

 private:
  int dim_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<int> indices_;
  std::vector<double> values_;
};

// Sorted positive-label lists, one per example row.
using LabelSets = std::vector<std::vector<int>>;

LabelSets label_sets(const std::vector<VideoExample>& examples, int vocab);

// Deterministic per-epoch visit order shared by every trainer.
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n);

// In-place Adagrad update: acc += g^2; p -= lr * g / (sqrt(acc) + eps).
void adagrad_update(Eigen::Ref<Eigen::VectorXd> param, Eigen::Ref<Eigen::VectorXd> accum,
                    const Eigen::VectorXd& grad, double lr, double eps);

template <class Features>
LogisticParams logistic_train_features(const Features& x, const LabelSets& y, int vocab,
                                       const TrainConfig& cfg, TrainTrace* trace = nullptr);

LogisticParams logistic_train(const std::vector<VideoExample>& examples, const Vocabulary& vocab,
                              const TrainConfig& cfg, FeatureMode mode = FeatureMode::both,
                              TrainTrace* trace = nullptr);

MoeParams moe_init(int vocab, int dim, const TrainConfig& cfg);

template <class Features>
MoeParams moe_train_features(const Features& x, const LabelSets& y, int vocab,
                             const TrainConfig& cfg, TrainTrace* trace = nullptr);

MoeParams moe_train(const std::vector<VideoExample>& examples, const Vocabulary& vocab,
                    const TrainConfig& cfg, FeatureMode mode = FeatureMode::both,
                    TrainTrace* trace = nullptr);

// Flat parameter order: weights row-major, then biases (logistic); gates
// row-major, gate biases, experts row-major, expert biases (MoE). Used by the
// finite-difference checks and by tests.
Eigen::VectorXd logistic_flatten(const LogisticParams& params);
LogisticParams logistic_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, double lambda);
Eigen::VectorXd moe_flatten(const MoeParams& params);
MoeParams moe_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, int experts,
                        double lambda);

// Mean-batch objective (log-loss plus L2 on weight matrices) over the given
// rows, restricted to labels [label_lo, label_hi). Accumulates per-parameter
// gradients into *grad when non-null; returns the objective value. One code
// path serves the trainers, the self-checks, and the tests.
template <class Features>
double logistic_batch_objective(const LogisticParams& params, const Features& x,
                                const LabelSets& y, const std::vector<std::size_t>& rows,
                                int label_lo, int label_hi, LogisticParams* grad);
template <class Features>
double moe_batch_objective(const MoeParams& params, const Features& x, const LabelSets& y,
                           const std::vector<std::size_t>& rows, int label_lo, int label_hi,
                           MoeParams* grad);

}  // namespace vle::linear
