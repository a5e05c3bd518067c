#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace vle {

// Number of label classes. A runtime parameter: the full benchmark
// vocabulary is 4716 classes, desk-scale runs use much smaller values.
struct Vocabulary {
  int size = 4716;
};

// One labeled video with dense video-level features.
struct VideoExample {
  std::string video_id;
  std::vector<int> labels;  // sorted, unique
  Eigen::VectorXd mean_rgb;
  Eigen::VectorXd mean_audio;
};

// One video as a per-frame feature sequence (one frame per second).
struct FrameExample {
  std::string video_id;
  std::vector<int> labels;
  std::vector<Eigen::VectorXd> rgb;
  std::vector<Eigen::VectorXd> audio;
};

inline constexpr int kMaxFrames = 300;

struct PredictionPair {
  int label = 0;
  double confidence = 0.0;
};

// Top-K (label, confidence) pairs for one video. Canonical order is
// confidence descending, ties broken by ascending label id; labels unique.
struct PredictionList {
  std::string video_id;
  std::vector<PredictionPair> pairs;
};

// video_id -> sorted unique label ids
using GroundTruth = std::map<std::string, std::vector<int>>;

struct Violation {
  std::size_t index = 0;  // 0-based example index within the dataset
  std::string message;
};

enum class FeatureMode { rgb, audio, both };

const char* to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& s);

// Feature assembly. `both` concatenates rgb then audio, in that order.
Eigen::VectorXd assemble_features(const VideoExample& ex, FeatureMode mode);
Eigen::VectorXd assemble_frame(const FrameExample& ex, std::size_t frame, FeatureMode mode);
std::vector<Eigen::VectorXd> assemble_frames(const FrameExample& ex, FeatureMode mode);

bool pairs_canonical(const std::vector<PredictionPair>& pairs);
// Sorts into canonical order. Does not deduplicate labels.
void canonicalize_pairs(std::vector<PredictionPair>& pairs);

/// Top-k of a dense score vector over the vocabulary.
///
/// Returns min(k, scores.size()) pairs in canonical order; ties break toward
/// the smaller label id so output is deterministic. Throws InvalidArgument
/// if k < 1 or any score is non-finite.
std::vector<PredictionPair> top_k(const Eigen::VectorXd& scores, int k);

// Report every invariant violation in the dataset, with example index.
// An empty result means the dataset is well formed.
std::vector<Violation> validate_dataset(const std::vector<VideoExample>& examples,
                                        const Vocabulary& vocab);
std::vector<Violation> validate_dataset(const std::vector<FrameExample>& examples,
                                        const Vocabulary& vocab);

// Sorted-label-set helpers.
bool has_label(const std::vector<int>& sorted_labels, int label);
std::vector<int> normalize_labels(std::vector<int> labels);

// Truth map taken from the labels carried by the examples themselves.
GroundTruth truth_from_examples(const std::vector<VideoExample>& examples);
GroundTruth truth_from_examples(const std::vector<FrameExample>& examples);

}  // namespace vle
