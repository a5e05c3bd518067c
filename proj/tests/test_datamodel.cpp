#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <limits>

#include "vle/datamodel.hpp"
#include "vle/errors.hpp"

using namespace vle;

namespace {

VideoExample make_video(const std::string& id, std::vector<int> labels, int rgb_dim = 4,
                        int audio_dim = 2) {
  VideoExample ex;
  ex.video_id = id;
  ex.labels = std::move(labels);
  ex.mean_rgb = Eigen::VectorXd::LinSpaced(rgb_dim, 0.0, 1.0);
  ex.mean_audio = Eigen::VectorXd::Constant(audio_dim, -0.5);
  return ex;
}

}  // namespace

TEST_CASE("top_k orders by score then label id") {
  Eigen::VectorXd scores(3);
  scores << 0.1, 0.9, 0.5;
  const auto pairs = top_k(scores, 2);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].label == 1);
  CHECK(pairs[0].confidence == 0.9);
  CHECK(pairs[1].label == 2);
  CHECK(pairs[1].confidence == 0.5);
}

TEST_CASE("top_k breaks ties toward the smaller label") {
  Eigen::VectorXd scores(2);
  scores << 0.4, 0.4;
  const auto pairs = top_k(scores, 2);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].label == 0);
  CHECK(pairs[1].label == 1);
}

TEST_CASE("top_k of an all-equal 4716 vector keeps labels 0..19") {
  const Eigen::VectorXd scores = Eigen::VectorXd::Constant(4716, 0.25);
  const auto pairs = top_k(scores, 20);
  REQUIRE(pairs.size() == 20);
  for (int i = 0; i < 20; ++i) CHECK(pairs[i].label == i);
}

TEST_CASE("top_k clips k to the vocabulary and validates input") {
  Eigen::VectorXd scores(3);
  scores << 0.3, 0.2, 0.1;
  CHECK(top_k(scores, 10).size() == 3);
  CHECK_THROWS_AS(top_k(scores, 0), InvalidArgument);
  scores(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(top_k(scores, 2), InvalidArgument);
}

TEST_CASE("pairs_canonical and canonicalize_pairs") {
  std::vector<PredictionPair> pairs{{2, 0.5}, {1, 0.9}};
  CHECK_FALSE(pairs_canonical(pairs));
  canonicalize_pairs(pairs);
  CHECK(pairs_canonical(pairs));
  CHECK(pairs[0].label == 1);
  // Tie: ascending label.
  std::vector<PredictionPair> tie{{4, 0.7}, {3, 0.7}};
  canonicalize_pairs(tie);
  CHECK(tie[0].label == 3);
  CHECK(pairs_canonical({}));
}

TEST_CASE("assemble_features concatenates rgb then audio") {
  const VideoExample ex = make_video("v", {0}, 3, 2);
  const Eigen::VectorXd both = assemble_features(ex, FeatureMode::both);
  REQUIRE(both.size() == 5);
  CHECK(both.head(3) == ex.mean_rgb);
  CHECK(both.tail(2) == ex.mean_audio);
  CHECK(assemble_features(ex, FeatureMode::rgb) == ex.mean_rgb);
  CHECK(assemble_features(ex, FeatureMode::audio) == ex.mean_audio);
}

TEST_CASE("assemble_frame and assemble_frames agree") {
  FrameExample ex;
  ex.video_id = "f";
  ex.labels = {1};
  ex.rgb = {Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(3.0, 4.0)};
  ex.audio = {Eigen::VectorXd::Constant(1, 9.0), Eigen::VectorXd::Constant(1, 8.0)};
  const auto frames = assemble_frames(ex, FeatureMode::both);
  REQUIRE(frames.size() == 2);
  CHECK(frames[0] == assemble_frame(ex, 0, FeatureMode::both));
  CHECK(frames[1](2) == 8.0);
  CHECK(assemble_frames(ex, FeatureMode::audio)[0](0) == 9.0);
}

TEST_CASE("feature mode string round-trip") {
  for (const auto mode : {FeatureMode::rgb, FeatureMode::audio, FeatureMode::both}) {
    CHECK(feature_mode_from_string(to_string(mode)) == mode);
  }
  CHECK_THROWS_AS(feature_mode_from_string("video"), InvalidArgument);
}

TEST_CASE("validate_dataset accepts a well-formed set") {
  std::vector<VideoExample> examples{make_video("a", {0, 2}), make_video("b", {}),
                                     make_video("c", {1})};
  CHECK(validate_dataset(examples, Vocabulary{3}).empty());
}

TEST_CASE("validate_dataset flags label at vocab boundary") {
  std::vector<VideoExample> examples{make_video("a", {0}), make_video("b", {3})};
  const auto violations = validate_dataset(examples, Vocabulary{3});
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].index == 1);
}

TEST_CASE("validate_dataset flags dimension drift at the offending row") {
  std::vector<VideoExample> examples{make_video("a", {0}, 4), make_video("b", {1}, 3)};
  const auto violations = validate_dataset(examples, Vocabulary{2});
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].index == 1);
}

TEST_CASE("validate_dataset on frames checks counts and paired lengths") {
  FrameExample ok;
  ok.video_id = "x";
  ok.labels = {0};
  ok.rgb = {Eigen::Vector2d(0, 1)};
  ok.audio = {Eigen::VectorXd::Constant(1, 0.0)};
  FrameExample bad = ok;
  bad.video_id = "y";
  bad.audio.push_back(Eigen::VectorXd::Constant(1, 1.0));  // rgb/audio length mismatch
  FrameExample empty;
  empty.video_id = "z";
  const std::vector<FrameExample> examples{ok, bad, empty};
  const auto violations = validate_dataset(examples, Vocabulary{2});
  REQUIRE(violations.size() >= 2);
  CHECK(violations[0].index == 1);
}

TEST_CASE("normalize_labels sorts and dedups; has_label is binary search") {
  CHECK(normalize_labels({3, 1, 3, 0}) == std::vector<int>{0, 1, 3});
  const std::vector<int> labels{0, 2, 5};
  CHECK(has_label(labels, 2));
  CHECK_FALSE(has_label(labels, 3));
}

TEST_CASE("truth_from_examples keeps ids and labels") {
  std::vector<VideoExample> examples{make_video("b", {1}), make_video("a", {0, 2})};
  const GroundTruth truth = truth_from_examples(examples);
  REQUIRE(truth.size() == 2);
  CHECK(truth.at("a") == std::vector<int>{0, 2});
  CHECK(truth.at("b") == std::vector<int>{1});
}
