#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "vle/datamodel.hpp"
#include "vle/gradcheck.hpp"
#include "vle/linear.hpp"

namespace vle::framelevel {

using vle::GradProblem;
using vle::numeric_gradient_check;

struct FrameSampleConfig {
  int frames_per_video = 20;
  std::uint64_t seed = 1;
};

// Seeded per video (cfg.seed mixed with a hash of the video id), so the
// sample for one video never depends on dataset order. Videos with fewer
// frames than requested contribute every frame. Indices ascend, so sampled
// frames keep their temporal order.
std::vector<Eigen::VectorXd> sample_frames(const FrameExample& example,
                                           const FrameSampleConfig& cfg,
                                           FeatureMode mode = FeatureMode::both);

// Mean of per-frame logistic scores, summed left to right in frame order so
// repeated runs are bitwise identical.
Eigen::VectorXd frame_logistic_infer(const linear::LogisticParams& params,
                                     const std::vector<Eigen::VectorXd>& frames);

// Trains a plain logistic model on sampled frames, each treated as an
// independent example carrying its video's labels.
linear::LogisticParams frame_logistic_train(const std::vector<FrameExample>& examples,
                                            const Vocabulary& vocab,
                                            const linear::TrainConfig& cfg,
                                            const FrameSampleConfig& sample,
                                            FeatureMode mode = FeatureMode::both,
                                            linear::TrainTrace* trace = nullptr);

// Deep bag of frames: one shared up-projection with ReLU, max pooling over
// frames, then a per-label sigmoid classifier.
struct DbofParams {
  Eigen::MatrixXd up_weights;   // [up_width x dim]
  Eigen::VectorXd up_biases;    // [up_width]
  Eigen::MatrixXd cls_weights;  // [vocab x up_width]
  Eigen::VectorXd cls_biases;   // [vocab]
  double lambda = 1e-6;

  int up_width() const { return static_cast<int>(up_weights.rows()); }
  int dim() const { return static_cast<int>(up_weights.cols()); }
  int vocab() const { return static_cast<int>(cls_weights.rows()); }
};

Eigen::VectorXd dbof_forward(const DbofParams& params, const std::vector<Eigen::VectorXd>& frames);

// One LSTM layer with diagonal peephole connections. The output gate peeks at
// the current cell state; the input and forget gates peek at the previous one.
struct LstmLayerParams {
  Eigen::MatrixXd w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho;
  Eigen::VectorXd w_ci, w_cf, w_co;  // peepholes, length hidden
  Eigen::VectorXd b_i, b_f, b_c, b_o;

  int hidden() const { return static_cast<int>(w_hi.rows()); }
  int input_dim() const { return static_cast<int>(w_xi.cols()); }
};

// Stacked layers followed by a bias-free sigmoid classifier on the final
// hidden state of the top layer.
struct LstmParams {
  std::vector<LstmLayerParams> layers;
  Eigen::MatrixXd cls_weights;  // [vocab x hidden]
  double lambda = 1e-6;

  int hidden() const { return layers.empty() ? 0 : layers.back().hidden(); }
  int input_dim() const { return layers.empty() ? 0 : layers.front().input_dim(); }
  int vocab() const { return static_cast<int>(cls_weights.rows()); }
};

struct LstmState {
  Eigen::VectorXd h, c;
};

LstmState lstm_cell_step(const LstmLayerParams& layer, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev);

// Frame subset an unroll budget selects: every frame when the video fits,
// otherwise the strided picks floor(m * frames / unroll) for m in [0, unroll).
std::vector<std::size_t> unroll_indices(std::size_t frames, int unroll);

Eigen::VectorXd lstm_forward(const LstmParams& params, const std::vector<Eigen::VectorXd>& frames,
                             int unroll);

enum class SequenceModelKind { dbof, lstm };

struct SequenceConfig {
  linear::TrainConfig train;
  int up_width = 0;  // DBoF units; 0 selects 8 * input dim
  int hidden = 64;   // LSTM cells per layer
  int layers = 2;    // LSTM stack depth
  int unroll = 60;   // LSTM unroll budget
};

DbofParams dbof_init(int vocab, int dim, int up_width, const linear::TrainConfig& cfg);
LstmParams lstm_init(int vocab, int dim, int hidden, int layers, const linear::TrainConfig& cfg);

DbofParams dbof_train(const std::vector<FrameExample>& examples, const Vocabulary& vocab,
                      const SequenceConfig& cfg, FeatureMode mode = FeatureMode::both,
                      linear::TrainTrace* trace = nullptr);
LstmParams lstm_train(const std::vector<FrameExample>& examples, const Vocabulary& vocab,
                      const SequenceConfig& cfg, FeatureMode mode = FeatureMode::both,
                      linear::TrainTrace* trace = nullptr);

using SequenceParams = std::variant<DbofParams, LstmParams>;
SequenceParams train_sequence_model(SequenceModelKind kind,
                                    const std::vector<FrameExample>& examples,
                                    const Vocabulary& vocab, const SequenceConfig& cfg,
                                    FeatureMode mode = FeatureMode::both,
                                    linear::TrainTrace* trace = nullptr);

// Flat layouts for the finite-difference checks. DBoF: up weights row-major,
// up biases, classifier weights row-major, classifier biases. LSTM: per layer
// w_xi, w_hi, w_ci, b_i, w_xf, w_hf, w_cf, b_f, w_xc, w_hc, b_c, w_xo, w_ho,
// w_co, b_o (matrices row-major), then classifier weights row-major.
Eigen::VectorXd dbof_flatten(const DbofParams& params);
DbofParams dbof_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, int up_width,
                          double lambda);
Eigen::VectorXd lstm_flatten(const LstmParams& params);
LstmParams lstm_unflatten(const Eigen::VectorXd& flat, int vocab, int dim, int hidden, int layers,
                          double lambda);

// Mean-over-batch objective with L2 on the weight matrices (biases and
// peepholes are unregularized). Each video's gradient is reduced into its own
// buffer and buffers are combined in batch order, so results do not depend on
// how videos were distributed across threads. When grad is non-null it is
// overwritten with the full objective gradient.
double dbof_batch_objective(const DbofParams& params,
                            const std::vector<std::vector<Eigen::VectorXd>>& videos,
                            const linear::LabelSets& y, const std::vector<std::size_t>& rows,
                            DbofParams* grad);
double lstm_batch_objective(const LstmParams& params,
                            const std::vector<std::vector<Eigen::VectorXd>>& videos,
                            const linear::LabelSets& y, const std::vector<std::size_t>& rows,
                            LstmParams* grad);

}  // namespace vle::framelevel
