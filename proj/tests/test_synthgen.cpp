#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vle/datamodel.hpp"
#include "vle/errors.hpp"
#include "vle/metrics.hpp"
#include "vle/recordio.hpp"
#include "vle/synthgen.hpp"
#include "support.hpp"

using namespace vle;
using namespace vle::synthgen;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

SynthSpec small_spec() {
  SynthSpec spec;
  spec.videos = 120;
  spec.vocab = 8;
  spec.rgb_dim = 6;
  spec.audio_dim = 2;
  spec.mean_labels = 2.0;
  spec.seed = 11;
  return spec;
}

}  // namespace

TEST_CASE("SynthSpec validation") {
  CHECK_NOTHROW(small_spec().validate());
  SynthSpec s = small_spec();
  s.videos = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec();
  s.mean_labels = 9.0;  // above vocab
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec();
  s.min_frames = 5;
  s.max_frames = 4;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec();
  s.frame_noise = -0.1;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);

  CHECK(task_from_string("mixture") == SynthTask::mixture);
  CHECK(std::string(to_string(SynthTask::sequential)) == "sequential");
  CHECK_THROWS_AS(task_from_string("cubic"), InvalidArgument);
}

TEST_CASE("generation is deterministic down to the bytes on disk") {
  const SynthSpec spec = small_spec();
  const VideoGenResult a = gen_video_level(spec);
  const VideoGenResult b = gen_video_level(spec);
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].video_id == b.examples[i].video_id);
    CHECK(a.examples[i].labels == b.examples[i].labels);
    CHECK(a.examples[i].mean_rgb == b.examples[i].mean_rgb);
    CHECK(a.examples[i].mean_audio == b.examples[i].mean_audio);
  }

  testsupport::TempDir dir;
  recordio::write_video_dataset(dir.file("a.jsonl"), a.examples);
  recordio::write_video_dataset(dir.file("b.jsonl"), b.examples);
  CHECK(testsupport::slurp(dir.file("a.jsonl")) == testsupport::slurp(dir.file("b.jsonl")));

  save_planted(dir.file("a.json"), a.planted);
  save_planted(dir.file("b.json"), b.planted);
  CHECK(testsupport::slurp(dir.file("a.json")) == testsupport::slurp(dir.file("b.json")));

  SynthSpec other = spec;
  other.seed = 12;
  const VideoGenResult c = gen_video_level(other);
  CHECK(a.examples.front().mean_rgb != c.examples.front().mean_rgb);
}

TEST_CASE("the planted model reproduces every label decision") {
  const VideoGenResult gen = gen_video_level(small_spec());
  for (const auto& ex : gen.examples) {
    const Eigen::VectorXd scores = oracle_scores(gen.planted, ex);
    std::vector<int> derived;
    for (int l = 0; l < gen.planted.vocab(); ++l) {
      if (scores(l) > 0.5) derived.push_back(l);
    }
    CHECK(derived == ex.labels);
  }

  // Mixture hides the gating coordinate from the linear weights.
  SynthSpec mix = small_spec();
  mix.task = SynthTask::mixture;
  const VideoGenResult mgen = gen_video_level(mix);
  CHECK(mgen.planted.weights.col(0).isZero(0.0));
  for (const auto& ex : mgen.examples) {
    const Eigen::VectorXd scores = oracle_scores(mgen.planted, ex);
    std::vector<int> derived;
    for (int l = 0; l < mgen.planted.vocab(); ++l) {
      if (scores(l) > 0.5) derived.push_back(l);
    }
    CHECK(derived == ex.labels);
  }
}

TEST_CASE("calibration lands the label density inside the +-20% band") {
  SynthSpec spec;
  spec.videos = 5000;
  spec.vocab = 16;
  spec.rgb_dim = 24;
  spec.audio_dim = 8;
  spec.mean_labels = 3.4;
  spec.seed = 7;
  const VideoGenResult gen = gen_video_level(spec);
  CHECK(gen.mean_labels >= 2.72);
  CHECK(gen.mean_labels <= 4.08);

  double total = 0.0;
  for (const auto& ex : gen.examples) total += static_cast<double>(ex.labels.size());
  CHECK(total / static_cast<double>(spec.videos) == doctest::Approx(gen.mean_labels).epsilon(1e-12));
}

TEST_CASE("an unreachable label density aborts after 64 bisection rounds") {
  SynthSpec spec = small_spec();
  spec.videos = 1;
  spec.vocab = 2;
  spec.mean_labels = 0.5;  // single video: attainable means are 0, 1, 2
  CHECK_THROWS_WITH_AS(gen_video_level(spec), doctest::Contains("64 rounds"), Error);
}

TEST_CASE("zero frame noise pins every frame to the latent") {
  SynthSpec spec = small_spec();
  spec.task = SynthTask::linear;
  spec.min_frames = 2;
  spec.max_frames = 5;
  spec.frame_noise = 0.0;
  const FrameGenResult gen = gen_frame_level(spec);
  for (const auto& ex : gen.examples) {
    REQUIRE(!ex.rgb.empty());
    for (std::size_t j = 1; j < ex.rgb.size(); ++j) {
      CHECK(ex.rgb[j] == ex.rgb[0]);
      CHECK(ex.audio[j] == ex.audio[0]);
    }
  }

  // Labels derived from the frame mean agree with the stored label sets.
  for (const auto& ex : gen.examples) {
    const Eigen::VectorXd scores = oracle_scores(gen.planted, ex);
    std::vector<int> derived;
    for (int l = 0; l < gen.planted.vocab(); ++l) {
      if (scores(l) > 0.5) derived.push_back(l);
    }
    CHECK(derived == ex.labels);
  }
}

TEST_CASE("noisy frame generation passes its concentration self-check") {
  SynthSpec spec = small_spec();
  spec.videos = 400;
  spec.min_frames = 8;
  spec.max_frames = 16;
  spec.frame_noise = 0.5;
  CHECK_NOTHROW(gen_frame_level(spec));
}

TEST_CASE("sequential drift: centred frames, recoverable sign, symmetric logits") {
  SynthSpec spec = small_spec();
  spec.task = SynthTask::sequential;
  spec.videos = 80;
  spec.min_frames = 4;
  spec.max_frames = 9;
  spec.frame_noise = 0.0;
  spec.drift = 0.6;
  spec.flip_strength = 1.5;
  const FrameGenResult gen = gen_frame_level(spec);

  int flipped_any = 0;
  for (const auto& ex : gen.examples) {
    // With zero noise the video walks exactly along drift_dir.
    REQUIRE(ex.rgb.size() >= 2);
    Eigen::VectorXd first(spec.dim()), last(spec.dim());
    first << ex.rgb.front(), ex.audio.front();
    last << ex.rgb.back(), ex.audio.back();
    const double along = gen.planted.drift_dir.dot(last - first);
    const double span = static_cast<double>(ex.rgb.size() - 1) * spec.drift;
    CHECK(std::abs(std::abs(along) - span) < 1e-9);
    CHECK(((last - first) - along * gen.planted.drift_dir).norm() < 1e-9);

    // Reversing the frames flips the recovered drift sign, which shifts every
    // label logit by exactly 2*flip while the midpoint stays put.
    FrameExample reversed = ex;
    std::reverse(reversed.rgb.begin(), reversed.rgb.end());
    std::reverse(reversed.audio.begin(), reversed.audio.end());
    const Eigen::VectorXd fwd = oracle_scores(gen.planted, ex);
    const Eigen::VectorXd rev = oracle_scores(gen.planted, reversed);
    for (int l = 0; l < spec.vocab; ++l) {
      const double gap = logit(fwd(l)) - logit(rev(l));
      CHECK(std::abs(std::abs(gap) - 2.0 * spec.flip_strength) < 1e-6);
      const double mid = 0.5 * (logit(fwd(l)) + logit(rev(l)));
      // Drift-dominated labels complement when the sign flips.
      if (std::abs(mid) < spec.flip_strength - 1e-6) {
        CHECK((fwd(l) > 0.5) != (rev(l) > 0.5));
        ++flipped_any;
      }
    }
  }
  CHECK(flipped_any > 0);

  // Drift is required for the direction to be recoverable.
  SynthSpec video_seq = spec;
  CHECK_THROWS_AS(gen_video_level(video_seq), InvalidArgument);
}

TEST_CASE("oracle scores are a GAP upper reference on clean data") {
  const VideoGenResult gen = gen_video_level(small_spec());
  std::map<std::string, PredictionList> preds;
  GroundTruth truth;
  for (const auto& ex : gen.examples) {
    PredictionList list;
    list.video_id = ex.video_id;
    list.pairs = top_k(oracle_scores(gen.planted, ex), 20);
    preds.emplace(ex.video_id, std::move(list));
    truth.emplace(ex.video_id, ex.labels);
  }
  CHECK(metrics::gap_at_k(preds, truth, 20) >= 0.99);
}

TEST_CASE("oracle_scores rejects mismatched inputs") {
  const VideoGenResult gen = gen_video_level(small_spec());
  VideoExample bad = gen.examples.front();
  bad.mean_rgb = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(oracle_scores(gen.planted, bad), InvalidArgument);

  SynthSpec seq = small_spec();
  seq.task = SynthTask::sequential;
  seq.frame_noise = 0.0;
  const FrameGenResult fgen = gen_frame_level(seq);
  const auto means = to_video_means(fgen.examples);
  CHECK_THROWS_AS(oracle_scores(fgen.planted, means.front()), InvalidArgument);
}

TEST_CASE("to_video_means averages left to right and keeps identity") {
  FrameExample ex;
  ex.video_id = "v";
  ex.labels = {1, 3};
  Eigen::VectorXd r1(2), r2(2), a1(1), a2(1);
  r1 << 1.0, 2.0;
  r2 << 3.0, 6.0;
  a1 << 0.5;
  a2 << 1.5;
  ex.rgb = {r1, r2};
  ex.audio = {a1, a2};
  const auto means = to_video_means({ex});
  REQUIRE(means.size() == 1);
  CHECK(means[0].video_id == "v");
  CHECK(means[0].labels == std::vector<int>{1, 3});
  Eigen::VectorXd er(2), ea(1);
  er << 2.0, 4.0;
  ea << 1.0;
  CHECK(means[0].mean_rgb == er);
  CHECK(means[0].mean_audio == ea);

  FrameExample empty;
  empty.video_id = "bad";
  CHECK_THROWS_AS(to_video_means({empty}), InvalidArgument);
}

TEST_CASE("planted sidecar round-trips bit-exactly") {
  testsupport::TempDir dir;
  SynthSpec seq = small_spec();
  seq.task = SynthTask::sequential;
  seq.frame_noise = 0.0;
  const FrameGenResult gen = gen_frame_level(seq);
  const std::string path = dir.file("planted.json");
  save_planted(path, gen.planted);
  const PlantedModel loaded = load_planted(path);
  CHECK(loaded.generator == gen.planted.generator);
  CHECK(loaded.task == gen.planted.task);
  CHECK(loaded.shift == gen.planted.shift);
  CHECK(loaded.weights == gen.planted.weights);
  CHECK(loaded.biases == gen.planted.biases);
  CHECK(loaded.flip == gen.planted.flip);
  CHECK(loaded.drift_dir == gen.planted.drift_dir);

  // A sequential sidecar without its flip vector is rejected.
  std::string text = testsupport::slurp(path);
  const std::string needle = "\"flip\":[";
  const auto at = text.find(needle);
  REQUIRE(at != std::string::npos);
  const auto end = text.find(']', at);
  text = text.substr(0, at) + "\"flip\":[" + text.substr(end);
  testsupport::spit(dir.file("broken.json"), text);
  CHECK_THROWS_AS(load_planted(dir.file("broken.json")), FormatError);
}
