#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vle/datamodel.hpp"

namespace vle::synthgen {

// linear: labels are a threshold of a planted linear score of the features.
// mixture: the score's sign flips with the sign of the first feature
//   coordinate (whose planted weight is zero), so no single linear model can
//   express the rule but a two-expert mixture can.
// sequential: frames drift along a fixed direction, centred so the frame mean
//   is drift-free, and each label's threshold shifts by +-flip_strength with
//   the drift direction. Models that pool frames symmetrically cannot see the
//   drift sign; an order-aware model can.
enum class SynthTask { linear, mixture, sequential };

SynthTask task_from_string(const std::string& name);
const char* to_string(SynthTask task);

struct SynthSpec {
  int videos = 100;
  int vocab = 16;
  int rgb_dim = 8;
  int audio_dim = 4;
  double mean_labels = 2.0;  // calibrated to within [0.8, 1.2] of this
  SynthTask task = SynthTask::linear;
  int min_frames = 8;   // frame level only
  int max_frames = 16;  // inclusive
  double frame_noise = 0.25;
  double drift = 0.5;          // sequential drift strength per frame step
  double flip_strength = 1.5;  // sequential logit offset magnitude
  std::uint64_t seed = 1;

  int dim() const { return rgb_dim + audio_dim; }
  void validate() const;  // throws InvalidArgument
};

// The generating model, good enough to reproduce every label decision.
// `shift` is the calibrated global bias offset; label margins are
// task_score(x) + biases[l] + shift (+ r * flip[l] for sequential).
struct PlantedModel {
  std::string generator;  // Rng::kGeneratorId
  SynthTask task = SynthTask::linear;
  Eigen::MatrixXd weights;    // [vocab x dim]
  Eigen::VectorXd biases;     // [vocab]
  double shift = 0.0;
  Eigen::VectorXd flip;       // [vocab], sequential only (else empty)
  Eigen::VectorXd drift_dir;  // [dim] unit vector, sequential only (else empty)

  int vocab() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
};

struct VideoGenResult {
  std::vector<VideoExample> examples;
  PlantedModel planted;
  double mean_labels = 0.0;
};

struct FrameGenResult {
  std::vector<FrameExample> examples;
  PlantedModel planted;
  double mean_labels = 0.0;
};

// Deterministic in spec.seed. The global bias shift is calibrated by
// bisection (at most 64 rounds) until the mean labels per video lands within
// [0.8, 1.2] of spec.mean_labels; failure to land raises Error. The
// sequential task is frame-level only.
VideoGenResult gen_video_level(const SynthSpec& spec);
FrameGenResult gen_frame_level(const SynthSpec& spec);

// Scores from the generator's own viewpoint: sigmoid of the label margin it
// used, reconstructing latent quantities (cluster sign, drift sign) from the
// example. An upper reference point for trained models.
Eigen::VectorXd oracle_scores(const PlantedModel& planted, const VideoExample& example);
Eigen::VectorXd oracle_scores(const PlantedModel& planted, const FrameExample& example);

// Per-video frame means in frame order (left-to-right sums), keeping ids and
// labels. The sequential drift cancels exactly under this mean.
std::vector<VideoExample> to_video_means(const std::vector<FrameExample>& examples);

// Sidecar round-trip; weights are written with %.17g.
void save_planted(const std::string& path, const PlantedModel& planted);
PlantedModel load_planted(const std::string& path);

}  // namespace vle::synthgen
