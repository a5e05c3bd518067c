#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "vle/datamodel.hpp"
#include "vle/linear.hpp"
#include "vle/recordio.hpp"

namespace vle::ensemble {

// Vocab-sized conceptual vector stored sparsely: strictly ascending label
// ids with confidences in (0, 1]. Zero confidences are not stored; they are
// indistinguishable from the implicit default.
struct SparseStackFeature {
  std::vector<int> indices;
  std::vector<double> values;

  std::size_t nonzeros() const { return indices.size(); }
};

// Expands a canonical prediction list into its sparse vocab-sized vector.
// Label ids index the vector directly (0-based). Throws InvalidArgument on a
// non-canonical list or a label outside [0, vocab.size).
SparseStackFeature expand_topk(const PredictionList& pred, const Vocabulary& vocab);

// Densify onto [0, dim). Throws InvalidArgument if any index is >= dim.
Eigen::VectorXd densify(const SparseStackFeature& feature, int dim);

// One holdout video: ground-truth labels plus the concatenation of one
// expanded block per base model. Block b occupies indices
// [b*vocab, (b+1)*vocab); indices ascend across the whole concatenation.
struct StackedExample {
  std::string video_id;
  std::vector<int> labels;
  std::vector<int> indices;
  std::vector<double> values;
};

struct StackedDataset {
  int vocab = 0;
  int blocks = 0;
  std::vector<StackedExample> examples;

  int dim() const { return vocab * blocks; }
};

// Joins base prediction files over a shared video-id universe. All files must
// cover exactly the same ids and truth must cover every id; a mismatch raises
// FormatError listing the symmetric difference (capped at 10 ids). Examples
// come out sorted by video id.
StackedDataset build_stacked_dataset(const std::vector<std::string>& base_files,
                                     const GroundTruth& truth, const Vocabulary& vocab);

// JSONL with a leading header line {"vocab":V,"blocks":B}; one record
// {"id","labels","indices","values"} per video after it. Values use %.9g.
void write_stacked_dataset(const std::string& path, const StackedDataset& dataset);
StackedDataset read_stacked_dataset(const std::string& path);

enum class StackerKind { logistic, moe };

StackerKind stacker_from_string(const std::string& name);
const char* to_string(StackerKind kind);

// A fitted stacker plus the block geometry it was trained with. The base
// order is part of the model: scoring with blocks in a different order is a
// silent feature misalignment, so save/load carry `base_names`.
struct BlendModel {
  StackerKind kind = StackerKind::logistic;
  int vocab = 0;
  int blocks = 0;
  std::vector<std::string> base_names;
  linear::LogisticParams logistic;  // kind == logistic
  linear::MoeParams moe;            // kind == moe
};

// Trains the stacker over the sparse stacked features (dimension
// vocab * blocks, label space vocab). Dot products skip structural zeros.
BlendModel blend_fit(const StackedDataset& holdout, StackerKind kind,
                     const linear::TrainConfig& cfg, linear::TrainTrace* trace = nullptr);

// Per-label scores for one stacked example.
Eigen::VectorXd blend_scores(const BlendModel& model, const StackedExample& example);

// Expands the test-split base files (same count and order as at fit time),
// scores every video and keeps the top k_out labels. Rows sorted by video id.
std::vector<PredictionList> blend_predict(const BlendModel& model,
                                          const std::vector<std::string>& test_base_files,
                                          int k_out = 20);

recordio::ModelFile to_model_file(const BlendModel& model);
BlendModel blend_model_from_file(const recordio::ModelFile& file);

struct EnsembleMember {
  std::string path;
  double weight = 1.0;
};

struct EnsembleConfig {
  std::vector<EnsembleMember> members;
  int k_out = 20;

  void validate() const;  // throws InvalidArgument
};

// Strategy config: JSON {"members":[{"path":...,"weight":...}...],"k_out":N}.
// Relative member paths resolve against the config file's directory.
EnsembleConfig load_ensemble_config(const std::string& path);

// Weighted mean of member confidences per (video, label): missing entries
// count as 0, the video universe is the union over members, and members
// naming the same path are coalesced by adding weights first (so listing a
// file twice at weight 1 is exactly listing it once at weight 2). Per video
// the top k_out labels survive, zeros dropped, ties broken by label id.
std::vector<PredictionList> weighted_average(const EnsembleConfig& config);

// `name_or_path` is a shipped strategy letter (A..E, case-insensitive,
// resolved to configs/strategy_<letter>.cfg under the working directory) or a
// config file path.
std::vector<PredictionList> run_strategy(const std::string& name_or_path);

}  // namespace vle::ensemble
