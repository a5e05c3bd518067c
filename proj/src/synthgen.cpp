#include "vle/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include "vle/errors.hpp"
#include "vle/linear.hpp"
#include "vle/recordio.hpp"
#include "vle/rng.hpp"

namespace vle::synthgen {

namespace {

std::string video_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "v%06d", index);
  return buf;
}

Eigen::VectorXd draw_normal(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Pre-shift margin of every (video, label) pair. Labels are assigned from
// margin + shift > 0, so calibrating the shift is a one-dimensional search.
struct LatentVideo {
  Eigen::VectorXd z;           // latent features, dim()
  int frames = 0;              // frame level only
  double direction = 0.0;      // sequential: +-1
  Eigen::VectorXd margins;     // [vocab], excludes shift
};

PlantedModel draw_planted(const SynthSpec& spec) {
  PlantedModel planted;
  planted.generator = Rng::kGeneratorId;
  planted.task = spec.task;
  Rng rng(mix_seed(spec.seed, fnv1a64("planted")));
  const int dim = spec.dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  planted.weights.resize(spec.vocab, dim);
  for (int e = 0; e < spec.vocab; ++e) {
    for (int d = 0; d < dim; ++d) planted.weights(e, d) = scale * rng.normal();
  }
  planted.biases = 0.25 * draw_normal(rng, spec.vocab);
  if (spec.task == SynthTask::mixture) {
    // the gating coordinate carries no linear signal of its own
    planted.weights.col(0).setZero();
  }
  if (spec.task == SynthTask::sequential) {
    planted.flip.resize(spec.vocab);
    for (int e = 0; e < spec.vocab; ++e) {
      planted.flip(e) = (rng.uniform() < 0.5 ? -1.0 : 1.0) * spec.flip_strength;
    }
    planted.drift_dir = draw_normal(rng, dim);
    planted.drift_dir /= planted.drift_dir.norm();
  }
  return planted;
}

Eigen::VectorXd base_margins(const PlantedModel& planted, const LatentVideo& video) {
  Eigen::VectorXd margins = planted.weights * video.z + planted.biases;
  switch (planted.task) {
    case SynthTask::linear:
      break;
    case SynthTask::mixture:
      if (video.z(0) < 0.0) {
        margins = -(planted.weights * video.z) + planted.biases;
      }
      break;
    case SynthTask::sequential:
      margins += video.direction * planted.flip;
      break;
  }
  return margins;
}

double mean_labels_at(const std::vector<LatentVideo>& videos, double shift) {
  std::size_t active = 0;
  for (const auto& v : videos) {
    for (Eigen::Index e = 0; e < v.margins.size(); ++e) {
      if (v.margins(e) + shift > 0.0) ++active;
    }
  }
  return static_cast<double>(active) / static_cast<double>(videos.size());
}

// Bisection over the global bias shift. The mean is a nondecreasing step
// function of the shift, and with videos*vocab margins the steps are fine
// enough to land inside the +-20% band.
double calibrate_shift(const std::vector<LatentVideo>& videos, double target) {
  const double lo_goal = 0.8 * target;
  const double hi_goal = 1.2 * target;
  double extreme = 1.0;
  for (const auto& v : videos) {
    extreme = std::max(extreme, v.margins.cwiseAbs().maxCoeff());
  }
  double lo = -extreme - 1.0;
  double hi = extreme + 1.0;
  double shift = 0.0;
  for (int round = 0; round < 64; ++round) {
    shift = 0.5 * (lo + hi);
    const double mean = mean_labels_at(videos, shift);
    if (mean >= lo_goal && mean <= hi_goal) return shift;
    if (mean < target) {
      lo = shift;
    } else {
      hi = shift;
    }
  }
  throw Error("calibrate_shift: failed to reach the target label density in 64 rounds");
}

std::vector<int> labels_from_margins(const Eigen::VectorXd& margins, double shift) {
  std::vector<int> labels;
  for (Eigen::Index e = 0; e < margins.size(); ++e) {
    if (margins(e) + shift > 0.0) labels.push_back(static_cast<int>(e));
  }
  return labels;
}

Eigen::VectorXd sigmoid_all(Eigen::VectorXd margins) {
  for (Eigen::Index i = 0; i < margins.size(); ++i) margins(i) = linear::sigmoid(margins(i));
  return margins;
}

double estimate_direction(const PlantedModel& planted, const FrameExample& example) {
  // Least-squares slope of the drift-direction projection against the
  // centred frame index; its sign recovers the planted direction.
  const auto frames = static_cast<double>(example.rgb.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < example.rgb.size(); ++j) {
    const double c = static_cast<double>(j) - 0.5 * (frames - 1.0);
    Eigen::VectorXd x(planted.dim());
    x << example.rgb[j], example.audio[j];
    acc += c * planted.drift_dir.dot(x);
  }
  return acc >= 0.0 ? 1.0 : -1.0;
}

}  // namespace

SynthTask task_from_string(const std::string& name) {
  if (name == "linear") return SynthTask::linear;
  if (name == "mixture") return SynthTask::mixture;
  if (name == "sequential") return SynthTask::sequential;
  throw InvalidArgument("unknown task '" + name + "' (expected linear, mixture, or sequential)");
}

const char* to_string(SynthTask task) {
  switch (task) {
    case SynthTask::linear: return "linear";
    case SynthTask::mixture: return "mixture";
    case SynthTask::sequential: return "sequential";
  }
  return "linear";
}

void SynthSpec::validate() const {
  if (videos < 1) throw InvalidArgument("SynthSpec: videos must be >= 1");
  if (vocab < 1) throw InvalidArgument("SynthSpec: vocab must be >= 1");
  if (rgb_dim < 1 || audio_dim < 1) {
    throw InvalidArgument("SynthSpec: rgb_dim and audio_dim must be >= 1");
  }
  if (!(mean_labels > 0.0) || mean_labels > static_cast<double>(vocab)) {
    throw InvalidArgument("SynthSpec: mean_labels must be in (0, vocab]");
  }
  if (min_frames < 1 || max_frames < min_frames || max_frames > kMaxFrames) {
    throw InvalidArgument("SynthSpec: need 1 <= min_frames <= max_frames <= " +
                          std::to_string(kMaxFrames));
  }
  if (frame_noise < 0.0 || !std::isfinite(frame_noise)) {
    throw InvalidArgument("SynthSpec: frame_noise must be >= 0");
  }
  if (drift < 0.0 || !std::isfinite(drift)) throw InvalidArgument("SynthSpec: drift must be >= 0");
  if (flip_strength < 0.0 || !std::isfinite(flip_strength)) {
    throw InvalidArgument("SynthSpec: flip_strength must be >= 0");
  }
}

VideoGenResult gen_video_level(const SynthSpec& spec) {
  spec.validate();
  if (spec.task == SynthTask::sequential) {
    throw InvalidArgument("gen_video_level: the sequential task needs frame-level data");
  }
  VideoGenResult result;
  result.planted = draw_planted(spec);

  Rng rng(mix_seed(spec.seed, fnv1a64("data")));
  std::vector<LatentVideo> latents(static_cast<std::size_t>(spec.videos));
  for (auto& v : latents) {
    v.z = draw_normal(rng, spec.dim());
    v.margins = base_margins(result.planted, v);
  }
  result.planted.shift = calibrate_shift(latents, spec.mean_labels);
  result.mean_labels = mean_labels_at(latents, result.planted.shift);

  result.examples.reserve(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    VideoExample ex;
    ex.video_id = video_name(static_cast<int>(i));
    ex.labels = labels_from_margins(latents[i].margins, result.planted.shift);
    ex.mean_rgb = latents[i].z.head(spec.rgb_dim);
    ex.mean_audio = latents[i].z.tail(spec.audio_dim);
    result.examples.push_back(std::move(ex));
  }
  return result;
}

FrameGenResult gen_frame_level(const SynthSpec& spec) {
  spec.validate();
  FrameGenResult result;
  result.planted = draw_planted(spec);

  Rng rng(mix_seed(spec.seed, fnv1a64("data")));
  std::vector<LatentVideo> latents(static_cast<std::size_t>(spec.videos));
  std::vector<std::vector<Eigen::VectorXd>> noise(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    auto& v = latents[i];
    v.z = draw_normal(rng, spec.dim());
    v.frames = spec.min_frames +
               static_cast<int>(rng.below(
                   static_cast<std::uint64_t>(spec.max_frames - spec.min_frames + 1)));
    v.direction = rng.uniform() < 0.5 ? -1.0 : 1.0;
    noise[i].reserve(static_cast<std::size_t>(v.frames));
    for (int j = 0; j < v.frames; ++j) {
      noise[i].push_back(spec.frame_noise * draw_normal(rng, spec.dim()));
    }
    v.margins = base_margins(result.planted, v);
  }
  result.planted.shift = calibrate_shift(latents, spec.mean_labels);
  result.mean_labels = mean_labels_at(latents, result.planted.shift);

  if (spec.frame_noise > 0.0) {
    // Statistical self-check: per coordinate, the frame mean must sit within
    // 4 sigma / sqrt(F) of the latent for at least 99% of videos.
    std::size_t bad = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.dim());
      for (const auto& nj : noise[i]) mean += nj;
      mean /= static_cast<double>(latents[i].frames);
      const double bound =
          4.0 * spec.frame_noise / std::sqrt(static_cast<double>(latents[i].frames));
      if (mean.cwiseAbs().maxCoeff() > bound) ++bad;
    }
    if (static_cast<double>(bad) > 0.01 * static_cast<double>(latents.size())) {
      throw Error("gen_frame_level: frame means failed the concentration self-check (" +
                  std::to_string(bad) + " of " + std::to_string(latents.size()) + " videos)");
    }
  }

  result.examples.reserve(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const auto& v = latents[i];
    FrameExample ex;
    ex.video_id = video_name(static_cast<int>(i));
    ex.labels = labels_from_margins(v.margins, result.planted.shift);
    ex.rgb.reserve(static_cast<std::size_t>(v.frames));
    ex.audio.reserve(static_cast<std::size_t>(v.frames));
    for (int j = 0; j < v.frames; ++j) {
      Eigen::VectorXd frame = v.z + noise[i][static_cast<std::size_t>(j)];
      if (spec.task == SynthTask::sequential) {
        // centred index: the drift sums to zero over the video, so frame
        // means carry no trace of its direction
        const double c = static_cast<double>(j) - 0.5 * static_cast<double>(v.frames - 1);
        frame += c * spec.drift * v.direction * result.planted.drift_dir;
      }
      ex.rgb.push_back(frame.head(spec.rgb_dim));
      ex.audio.push_back(frame.tail(spec.audio_dim));
    }
    result.examples.push_back(std::move(ex));
  }

  if (spec.task == SynthTask::sequential && spec.drift > 0.0) {
    // generation self-check: the drift direction must be recoverable
    for (std::size_t i = 0; i < result.examples.size(); ++i) {
      if (latents[i].frames < 2) continue;
      if (estimate_direction(result.planted, result.examples[i]) != latents[i].direction) {
        throw Error("gen_frame_level: drift direction not recoverable for video " +
                    result.examples[i].video_id);
      }
    }
  }
  return result;
}

Eigen::VectorXd oracle_scores(const PlantedModel& planted, const VideoExample& example) {
  if (planted.task == SynthTask::sequential) {
    throw InvalidArgument("oracle_scores: sequential task needs frame-level examples");
  }
  Eigen::VectorXd x(planted.dim());
  if (example.mean_rgb.size() + example.mean_audio.size() != planted.dim()) {
    throw InvalidArgument("oracle_scores: feature dimension mismatch");
  }
  x << example.mean_rgb, example.mean_audio;
  LatentVideo v;
  v.z = x;
  return sigmoid_all((base_margins(planted, v).array() + planted.shift).matrix());
}

Eigen::VectorXd oracle_scores(const PlantedModel& planted, const FrameExample& example) {
  if (example.rgb.empty()) throw InvalidArgument("oracle_scores: video has no frames");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(planted.dim());
  for (std::size_t j = 0; j < example.rgb.size(); ++j) {
    if (example.rgb[j].size() + example.audio[j].size() != planted.dim()) {
      throw InvalidArgument("oracle_scores: feature dimension mismatch");
    }
    Eigen::VectorXd x(planted.dim());
    x << example.rgb[j], example.audio[j];
    mean += x;
  }
  mean /= static_cast<double>(example.rgb.size());
  LatentVideo v;
  v.z = mean;
  if (planted.task == SynthTask::sequential) {
    v.direction = estimate_direction(planted, example);
  }
  return sigmoid_all((base_margins(planted, v).array() + planted.shift).matrix());
}

std::vector<VideoExample> to_video_means(const std::vector<FrameExample>& examples) {
  std::vector<VideoExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.rgb.empty() || ex.rgb.size() != ex.audio.size()) {
      throw InvalidArgument("to_video_means: malformed frame example " + ex.video_id);
    }
    VideoExample v;
    v.video_id = ex.video_id;
    v.labels = ex.labels;
    Eigen::VectorXd rgb = Eigen::VectorXd::Zero(ex.rgb.front().size());
    Eigen::VectorXd audio = Eigen::VectorXd::Zero(ex.audio.front().size());
    for (std::size_t j = 0; j < ex.rgb.size(); ++j) {
      rgb += ex.rgb[j];
      audio += ex.audio[j];
    }
    v.mean_rgb = rgb / static_cast<double>(ex.rgb.size());
    v.mean_audio = audio / static_cast<double>(ex.audio.size());
    out.push_back(std::move(v));
  }
  return out;
}

void save_planted(const std::string& path, const PlantedModel& planted) {
  std::string out = "{\n";
  out += "\"generator\":" + nlohmann::json(planted.generator).dump() + ",\n";
  out += "\"task\":\"" + std::string(to_string(planted.task)) + "\",\n";
  out += "\"shift\":" + recordio::format_double(planted.shift, "%.17g") + ",\n";
  out += "\"weights\":" + recordio::matrix_json(planted.weights) + ",\n";
  out += "\"biases\":" + recordio::vector_json(planted.biases) + ",\n";
  out += "\"flip\":" + recordio::vector_json(planted.flip) + ",\n";
  out += "\"drift_dir\":" + recordio::vector_json(planted.drift_dir) + "\n";
  out += "}\n";
  recordio::atomic_write_text(path, out);
}

PlantedModel load_planted(const std::string& path) {
  const nlohmann::json j = recordio::load_json(path);
  const std::string where = path;
  try {
    PlantedModel planted;
    planted.generator = j.at("generator").get<std::string>();
    planted.task = task_from_string(j.at("task").get<std::string>());
    planted.shift = j.at("shift").get<double>();
    planted.weights = recordio::matrix_from_json(j.at("weights"), where + ": weights");
    planted.biases = recordio::vector_from_json(j.at("biases"), where + ": biases");
    planted.flip = recordio::vector_from_json(j.at("flip"), where + ": flip");
    planted.drift_dir = recordio::vector_from_json(j.at("drift_dir"), where + ": drift_dir");
    if (planted.biases.size() != planted.weights.rows()) {
      throw FormatError(where + ": biases do not match weights");
    }
    if (planted.task == SynthTask::sequential &&
        (planted.flip.size() != planted.weights.rows() ||
         planted.drift_dir.size() != planted.weights.cols())) {
      throw FormatError(where + ": sequential sidecar missing flip or drift_dir");
    }
    return planted;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

}  // namespace vle::synthgen
