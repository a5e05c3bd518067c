#include "vle/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "vle/errors.hpp"

namespace vle::metrics {

double log_loss(double p, int g) {
  if (g != 0 && g != 1) throw InvalidArgument("log_loss: g must be 0 or 1");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("log_loss: p outside [0,1]");
  p = std::clamp(p, kLogLossEpsilon, 1.0 - kLogLossEpsilon);
  return g ? -std::log(p) : -std::log(1.0 - p);
}

double pooled_average_precision(std::vector<PooledTriple> triples,
                                std::int64_t total_positives) {
  if (total_positives <= 0) return 0.0;
  std::stable_sort(triples.begin(), triples.end(),
                   [](const PooledTriple& a, const PooledTriple& b) {
                     return a.confidence > b.confidence;
                   });
  double sum = 0.0;
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (triples[i].is_hit) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total_positives);
}

GapAccumulator::GapAccumulator(int k) : k_(k) {
  if (k < 1) throw InvalidArgument("GapAccumulator: k must be >= 1");
}

void GapAccumulator::add(const std::string& video_id,
                         const std::vector<PredictionPair>& pairs,
                         const std::vector<int>& sorted_truth) {
  const std::size_t take = std::min<std::size_t>(pairs.size(), static_cast<std::size_t>(k_));
  for (std::size_t i = 0; i < take; ++i) {
    const auto& p = pairs[i];
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0))
      throw InvalidArgument("GapAccumulator: confidence outside [0,1] for video " + video_id);
    entries_.push_back({video_id, p.label, p.confidence, has_label(sorted_truth, p.label)});
  }
  total_positives_ +=
      std::min<std::int64_t>(static_cast<std::int64_t>(sorted_truth.size()), k_);
}

GapAccumulator GapAccumulator::merge(const GapAccumulator& a, const GapAccumulator& b) {
  if (a.k_ != b.k_) throw InvalidArgument("GapAccumulator::merge: k mismatch");
  GapAccumulator out(a.k_);
  out.entries_.reserve(a.entries_.size() + b.entries_.size());
  out.entries_.insert(out.entries_.end(), a.entries_.begin(), a.entries_.end());
  out.entries_.insert(out.entries_.end(), b.entries_.begin(), b.entries_.end());
  out.total_positives_ = a.total_positives_ + b.total_positives_;
  return out;
}

double GapAccumulator::gap() const {
  // Canonical pre-order (video_id, label) makes the result independent of
  // insertion and merge order; the stable sort inside
  // pooled_average_precision then breaks confidence ties by that order.
  std::vector<const Entry*> order;
  order.reserve(entries_.size());
  for (const auto& e : entries_) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const Entry* a, const Entry* b) {
    if (a->video_id != b->video_id) return a->video_id < b->video_id;
    return a->label < b->label;
  });
  std::vector<PooledTriple> triples;
  triples.reserve(order.size());
  for (const Entry* e : order) triples.push_back({e->confidence, e->hit});
  return pooled_average_precision(std::move(triples), total_positives_);
}

double gap_at_k(const std::map<std::string, PredictionList>& predictions,
                const GroundTruth& truth, int k) {
  std::vector<std::string> unknown;
  for (const auto& [id, _] : predictions) {
    if (truth.find(id) == truth.end()) unknown.push_back(id);
  }
  if (!unknown.empty()) {
    std::string msg = "gap_at_k: prediction video ids missing from truth:";
    std::size_t shown = std::min<std::size_t>(unknown.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) msg += " " + unknown[i];
    if (unknown.size() > shown)
      msg += " (+" + std::to_string(unknown.size() - shown) + " more)";
    throw InvalidArgument(msg);
  }
  GapAccumulator acc(k);
  static const std::vector<PredictionPair> kNoPairs;
  for (const auto& [id, labels] : truth) {
    auto it = predictions.find(id);
    acc.add(id, it == predictions.end() ? kNoPairs : it->second.pairs, labels);
  }
  return acc.gap();
}

}  // namespace vle::metrics
