#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vle/datamodel.hpp"

namespace vle::metrics {

// Probabilities are clamped into [kLogLossEpsilon, 1 - kLogLossEpsilon]
// before evaluation so the loss is always finite.
inline constexpr double kLogLossEpsilon = 1e-6;

/// Binary cross-entropy -g*ln(p) - (1-g)*ln(1-p) after clamping p.
/// Throws InvalidArgument if p is outside [0,1] or g is not 0/1.
double log_loss(double p, int g);

struct PooledTriple {
  double confidence = 0.0;
  bool is_hit = false;
};

/// Average precision over a pooled list of scored candidates.
///
/// Triples are stable-sorted by confidence descending; equal confidences
/// keep their input order (hits are NOT promoted over misses). The sum of
/// precision-at-hit-positions is divided by total_positives. Returns 0.0
/// when total_positives is 0.
double pooled_average_precision(std::vector<PooledTriple> triples,
                                std::int64_t total_positives);

/// Pool of per-video top-k candidates supporting partition-and-merge
/// evaluation: gap(merge(a, b)) equals gap over the union of videos.
class GapAccumulator {
 public:
  explicit GapAccumulator(int k = 20);

  /// Adds one video's predictions (truncated to top-k) against its sorted
  /// truth labels. A video with no predictions still contributes its
  /// positives. Confidences must lie in [0,1].
  void add(const std::string& video_id, const std::vector<PredictionPair>& pairs,
           const std::vector<int>& sorted_truth);

  static GapAccumulator merge(const GapAccumulator& a, const GapAccumulator& b);

  double gap() const;

  int k() const { return k_; }
  std::int64_t total_positives() const { return total_positives_; }
  std::size_t triple_count() const { return entries_.size(); }

 private:
  struct Entry {
    std::string video_id;
    int label;
    double confidence;
    bool hit;
  };
  std::vector<Entry> entries_;
  std::int64_t total_positives_ = 0;
  int k_;
};

/// GAP@k over a prediction set. Every predicted video id must appear in
/// truth (unknown ids raise an error listing the offenders); truth videos
/// without predictions still count their positives. Sort ties in the pooled
/// list break by (video_id ascending, label ascending).
double gap_at_k(const std::map<std::string, PredictionList>& predictions,
                const GroundTruth& truth, int k = 20);

}  // namespace vle::metrics
