#include "vle/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vle/errors.hpp"

namespace vle {

const char* to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::rgb: return "rgb";
    case FeatureMode::audio: return "audio";
    case FeatureMode::both: return "both";
  }
  return "both";
}

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "rgb") return FeatureMode::rgb;
  if (s == "audio") return FeatureMode::audio;
  if (s == "both") return FeatureMode::both;
  throw InvalidArgument("unknown feature mode: " + s);
}

static Eigen::VectorXd concat(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() + b.size());
  out.head(a.size()) = a;
  out.tail(b.size()) = b;
  return out;
}

Eigen::VectorXd assemble_features(const VideoExample& ex, FeatureMode mode) {
  switch (mode) {
    case FeatureMode::rgb: return ex.mean_rgb;
    case FeatureMode::audio: return ex.mean_audio;
    case FeatureMode::both: return concat(ex.mean_rgb, ex.mean_audio);
  }
  return {};
}

Eigen::VectorXd assemble_frame(const FrameExample& ex, std::size_t frame, FeatureMode mode) {
  if (frame >= ex.rgb.size())
    throw InvalidArgument("assemble_frame: frame index out of range");
  switch (mode) {
    case FeatureMode::rgb: return ex.rgb[frame];
    case FeatureMode::audio: return ex.audio[frame];
    case FeatureMode::both: return concat(ex.rgb[frame], ex.audio[frame]);
  }
  return {};
}

std::vector<Eigen::VectorXd> assemble_frames(const FrameExample& ex, FeatureMode mode) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(ex.rgb.size());
  for (std::size_t j = 0; j < ex.rgb.size(); ++j) out.push_back(assemble_frame(ex, j, mode));
  return out;
}

static bool pair_before(const PredictionPair& a, const PredictionPair& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.label < b.label;
}

bool pairs_canonical(const std::vector<PredictionPair>& pairs) {
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pair_before(pairs[i], pairs[i - 1])) return false;
  }
  return true;
}

void canonicalize_pairs(std::vector<PredictionPair>& pairs) {
  std::sort(pairs.begin(), pairs.end(), pair_before);
}

std::vector<PredictionPair> top_k(const Eigen::VectorXd& scores, int k) {
  if (k < 1) throw InvalidArgument("top_k: k must be >= 1");
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw InvalidArgument("top_k: non-finite score at index " + std::to_string(i));
  }
  const Eigen::Index n = scores.size();
  const Eigen::Index m = std::min<Eigen::Index>(k, n);
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + m, idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<PredictionPair> out(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) out[i] = {idx[i], scores[idx[i]]};
  return out;
}

namespace {

void check_labels(const std::vector<int>& labels, int vocab_size, std::size_t index,
                  std::vector<Violation>& out) {
  for (int l : labels) {
    if (l < 0 || l >= vocab_size) {
      out.push_back({index, "label id " + std::to_string(l) + " out of range [0, " +
                                std::to_string(vocab_size) + ")"});
    }
  }
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1])
      out.push_back({index, "duplicate label id " + std::to_string(labels[i])});
  }
}

void check_finite(const Eigen::VectorXd& v, const char* name, std::size_t index,
                  std::vector<Violation>& out) {
  if (!v.allFinite())
    out.push_back({index, std::string("non-finite value in ") + name});
}

}  // namespace

std::vector<Violation> validate_dataset(const std::vector<VideoExample>& examples,
                                        const Vocabulary& vocab) {
  std::vector<Violation> out;
  if (examples.empty()) return out;
  const Eigen::Index d_rgb = examples[0].mean_rgb.size();
  const Eigen::Index d_audio = examples[0].mean_audio.size();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    check_labels(ex.labels, vocab.size, i, out);
    if (ex.mean_rgb.size() != d_rgb)
      out.push_back({i, "mean_rgb dimension " + std::to_string(ex.mean_rgb.size()) +
                            " differs from row 0 (" + std::to_string(d_rgb) + ")"});
    if (ex.mean_audio.size() != d_audio)
      out.push_back({i, "mean_audio dimension " + std::to_string(ex.mean_audio.size()) +
                            " differs from row 0 (" + std::to_string(d_audio) + ")"});
    check_finite(ex.mean_rgb, "mean_rgb", i, out);
    check_finite(ex.mean_audio, "mean_audio", i, out);
  }
  return out;
}

std::vector<Violation> validate_dataset(const std::vector<FrameExample>& examples,
                                        const Vocabulary& vocab) {
  std::vector<Violation> out;
  if (examples.empty()) return out;
  Eigen::Index d_rgb = -1, d_audio = -1;
  if (!examples[0].rgb.empty()) d_rgb = examples[0].rgb[0].size();
  if (!examples[0].audio.empty()) d_audio = examples[0].audio[0].size();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    check_labels(ex.labels, vocab.size, i, out);
    if (ex.rgb.empty()) {
      out.push_back({i, "empty frame sequence"});
      continue;
    }
    if (ex.rgb.size() != ex.audio.size())
      out.push_back({i, "rgb/audio frame counts differ (" + std::to_string(ex.rgb.size()) +
                            " vs " + std::to_string(ex.audio.size()) + ")"});
    if (ex.rgb.size() > kMaxFrames)
      out.push_back({i, "frame count " + std::to_string(ex.rgb.size()) + " exceeds " +
                            std::to_string(kMaxFrames)});
    for (const auto& f : ex.rgb) {
      if (d_rgb >= 0 && f.size() != d_rgb) {
        out.push_back({i, "rgb frame dimension " + std::to_string(f.size()) +
                              " differs from first frame (" + std::to_string(d_rgb) + ")"});
        break;
      }
    }
    for (const auto& f : ex.audio) {
      if (d_audio >= 0 && f.size() != d_audio) {
        out.push_back({i, "audio frame dimension " + std::to_string(f.size()) +
                              " differs from first frame (" + std::to_string(d_audio) + ")"});
        break;
      }
    }
  }
  return out;
}

bool has_label(const std::vector<int>& sorted_labels, int label) {
  return std::binary_search(sorted_labels.begin(), sorted_labels.end(), label);
}

std::vector<int> normalize_labels(std::vector<int> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

GroundTruth truth_from_examples(const std::vector<VideoExample>& examples) {
  GroundTruth truth;
  for (const auto& ex : examples) truth[ex.video_id] = ex.labels;
  return truth;
}

GroundTruth truth_from_examples(const std::vector<FrameExample>& examples) {
  GroundTruth truth;
  for (const auto& ex : examples) truth[ex.video_id] = ex.labels;
  return truth;
}

}  // namespace vle
