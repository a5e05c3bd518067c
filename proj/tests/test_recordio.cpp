#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "support.hpp"
#include "vle/errors.hpp"
#include "vle/recordio.hpp"
#include "vle/rng.hpp"

using namespace vle;
using testsupport::TempDir;

namespace {

Eigen::VectorXd random_vector(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

std::vector<VideoExample> random_video_dataset(Rng& rng, int n, int vocab, int rgb_dim,
                                               int audio_dim) {
  std::vector<VideoExample> out;
  for (int i = 0; i < n; ++i) {
    VideoExample ex;
    ex.video_id = "vid" + std::to_string(i);
    for (int l = 0; l < vocab; ++l) {
      if (rng.uniform() < 0.3) ex.labels.push_back(l);
    }
    ex.mean_rgb = random_vector(rng, rgb_dim);
    ex.mean_audio = random_vector(rng, audio_dim);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<FrameExample> random_frame_dataset(Rng& rng, int n, int vocab, int rgb_dim,
                                               int audio_dim) {
  std::vector<FrameExample> out;
  for (int i = 0; i < n; ++i) {
    FrameExample ex;
    ex.video_id = "vid" + std::to_string(i);
    for (int l = 0; l < vocab; ++l) {
      if (rng.uniform() < 0.3) ex.labels.push_back(l);
    }
    const int frames = 1 + static_cast<int>(rng.below(5));
    for (int f = 0; f < frames; ++f) {
      ex.rgb.push_back(random_vector(rng, rgb_dim));
      ex.audio.push_back(random_vector(rng, audio_dim));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

bool video_equal(const VideoExample& a, const VideoExample& b) {
  return a.video_id == b.video_id && a.labels == b.labels && a.mean_rgb == b.mean_rgb &&
         a.mean_audio == b.mean_audio;
}

}  // namespace

TEST_CASE("video dataset round-trip is stable after one precision snap") {
  TempDir tmp;
  Rng rng(101);
  const auto original = random_video_dataset(rng, 12, 6, 5, 3);
  const std::string path = tmp.file("data.jsonl");
  recordio::write_video_dataset(path, original);
  const auto first = recordio::read_video_dataset(path);
  REQUIRE(first.size() == original.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].video_id == original[i].video_id);
    CHECK(first[i].labels == original[i].labels);
    CHECK((first[i].mean_rgb - original[i].mean_rgb).lpNorm<Eigen::Infinity>() < 1e-8);
  }
  // Values already snapped to the file precision: second pass is exact.
  const std::string path2 = tmp.file("data2.jsonl");
  recordio::write_video_dataset(path2, first);
  const auto second = recordio::read_video_dataset(path2);
  REQUIRE(second.size() == first.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(video_equal(first[i], second[i]));
  CHECK(testsupport::slurp(path) == testsupport::slurp(path2));
}

TEST_CASE("frame dataset round-trip keeps sequences and labels") {
  TempDir tmp;
  Rng rng(102);
  const auto original = random_frame_dataset(rng, 8, 5, 4, 2);
  const std::string path = tmp.file("frames.jsonl");
  recordio::write_frame_dataset(path, original);
  const auto back = recordio::read_frame_dataset(path);
  REQUIRE(back.size() == original.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].video_id == original[i].video_id);
    CHECK(back[i].labels == original[i].labels);
    REQUIRE(back[i].rgb.size() == original[i].rgb.size());
    REQUIRE(back[i].audio.size() == original[i].audio.size());
    for (std::size_t f = 0; f < back[i].rgb.size(); ++f) {
      CHECK((back[i].rgb[f] - original[i].rgb[f]).lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }
}

TEST_CASE("empty dataset round-trips to an empty stream") {
  TempDir tmp;
  const std::string path = tmp.file("empty.jsonl");
  recordio::write_video_dataset(path, {});
  CHECK(recordio::read_video_dataset(path).empty());
}

TEST_CASE("malformed or truncated line raises a parse error naming the line") {
  TempDir tmp;
  const std::string path = tmp.file("bad.jsonl");
  Rng rng(1);
  recordio::write_video_dataset(path, random_video_dataset(rng, 1, 2, 2, 1));
  std::string content = testsupport::slurp(path);
  content += "{\"video_id\":\"x\",\"labels\":[0],\"mean_rgb\":[0.1";  // truncated
  testsupport::spit(path, content);
  CHECK_THROWS_WITH_AS(recordio::read_video_dataset(path), doctest::Contains(":2"), ParseError);
}

TEST_CASE("unexpected keys and level mixups are format errors") {
  TempDir tmp;
  const std::string path = tmp.file("odd.jsonl");
  testsupport::spit(path,
                    "{\"video_id\":\"a\",\"labels\":[],\"mean_rgb\":[0.5],"
                    "\"mean_audio\":[0.5],\"extra\":1}\n");
  CHECK_THROWS_AS(recordio::read_video_dataset(path), FormatError);

  Rng rng(5);
  const std::string frames = tmp.file("frames.jsonl");
  recordio::write_frame_dataset(frames, random_frame_dataset(rng, 2, 3, 2, 1));
  CHECK_THROWS_AS(recordio::read_video_dataset(frames), FormatError);
  CHECK(recordio::detect_level(frames) == recordio::DatasetLevel::frame);
  const std::string videos = tmp.file("videos.jsonl");
  recordio::write_video_dataset(videos, random_video_dataset(rng, 2, 3, 2, 1));
  CHECK(recordio::detect_level(videos) == recordio::DatasetLevel::video);
}

TEST_CASE("prediction rows print six decimals and the paper row byte-exactly") {
  TempDir tmp;
  PredictionList row;
  row.video_id = "100011194";
  row.pairs = {{1, 0.991708},   {4, 0.830637},   {1833, 0.781667}, {2292, 0.730538},
               {297, 0.718730}, {3547, 0.465280}, {34, 0.396639},  {1511, 0.371649},
               {2, 0.351788},   {0, 0.303522},   {92, 0.169908},   {933, 0.164513},
               {198, 0.145657}, {202, 0.143494}, {658, 0.106776},  {74, 0.089043},
               {167, 0.088266}, {33, 0.052943},  {332, 0.049101},  {360, 0.045714}};
  const std::string path = tmp.file("preds.csv");
  recordio::write_predictions(path, {row}, 20);
  const std::string content = testsupport::slurp(path);
  CHECK(content.rfind("VideoId,LabelConfidencePairs\n", 0) == 0);
  const std::string line = content.substr(content.find('\n') + 1);
  CHECK(line.rfind("100011194,1 0.991708 4 0.830637 1833 0.781667", 0) == 0);
  CHECK(line ==
        "100011194,1 0.991708 4 0.830637 1833 0.781667 2292 0.730538 297 0.718730 "
        "3547 0.465280 34 0.396639 1511 0.371649 2 0.351788 0 0.303522 92 0.169908 "
        "933 0.164513 198 0.145657 202 0.143494 658 0.106776 74 0.089043 167 0.088266 "
        "33 0.052943 332 0.049101 360 0.045714\n");
}

TEST_CASE("prediction edge rows: single pair, empty pairs, truncation to k") {
  TempDir tmp;
  const std::string path = tmp.file("preds.csv");
  recordio::write_predictions(path, {{"v1", {{0, 1.0}}}, {"v2", {}}}, 20);
  CHECK(testsupport::slurp(path) == "VideoId,LabelConfidencePairs\nv1,0 1.000000\nv2,\n");

  recordio::write_predictions(path, {{"v1", {{3, 0.9}, {1, 0.8}, {2, 0.7}}}}, 2);
  CHECK(testsupport::slurp(path) == "VideoId,LabelConfidencePairs\nv1,3 0.900000 1 0.800000\n");
}

TEST_CASE("write_predictions validates before any byte lands") {
  TempDir tmp;
  const std::string path = tmp.file("preds.csv");
  CHECK_THROWS_AS(
      recordio::write_predictions(path, {{"a", {{0, 0.5}}}, {"a", {{1, 0.4}}}}, 20),
      FormatError);
  CHECK_FALSE(std::filesystem::exists(path));
  // Non-canonical order or a bad confidence is the caller's bug, not
  // repairable output.
  CHECK_THROWS_AS(recordio::write_predictions(path, {{"a", {{0, 0.4}, {1, 0.5}}}}, 20),
                  InvalidArgument);
  CHECK_THROWS_AS(recordio::write_predictions(path, {{"a", {{0, 1.5}}}}, 20), InvalidArgument);
}

TEST_CASE("parse_predictions reads the paper's second row") {
  TempDir tmp;
  const std::string path = tmp.file("preds.csv");
  testsupport::spit(path,
                    "VideoId,LabelConfidencePairs\n"
                    "100253546,77 0.996484 21 0.987201 142 0.971881\n");
  const auto parsed = recordio::parse_predictions(path);
  REQUIRE(parsed.rows.size() == 1);
  CHECK(parsed.rows[0].video_id == "100253546");
  REQUIRE(parsed.rows[0].pairs.size() == 3);
  CHECK(parsed.rows[0].pairs[0].label == 77);
  CHECK(parsed.rows[0].pairs[0].confidence == doctest::Approx(0.996484).epsilon(1e-12));
  CHECK(parsed.reorder_warnings == 0);
}

TEST_CASE("parse_predictions round-trips canonical files byte-identically") {
  TempDir tmp;
  Rng rng(700);
  std::vector<PredictionList> rows;
  for (int v = 0; v < 10; ++v) {
    PredictionList row;
    row.video_id = "v" + std::to_string(v);
    for (int l = 0; l < 8; ++l) {
      if (rng.uniform() < 0.6) row.pairs.push_back({l, rng.uniform()});
    }
    canonicalize_pairs(row.pairs);
    rows.push_back(std::move(row));
  }
  const std::string a = tmp.file("a.csv");
  const std::string b = tmp.file("b.csv");
  recordio::write_predictions(a, rows, 20);
  recordio::write_predictions(b, recordio::parse_predictions(a).rows, 20);
  CHECK(testsupport::slurp(a) == testsupport::slurp(b));
}

TEST_CASE("parse_predictions repairs out-of-order pairs with a warning") {
  TempDir tmp;
  const std::string path = tmp.file("preds.csv");
  testsupport::spit(path,
                    "VideoId,LabelConfidencePairs\n"
                    "a,3 0.500000 1 0.900000\n");
  const auto parsed = recordio::parse_predictions(path);
  CHECK(parsed.reorder_warnings == 1);
  REQUIRE(parsed.rows[0].pairs.size() == 2);
  CHECK(parsed.rows[0].pairs[0].label == 1);
}

TEST_CASE("parse_predictions rejects structural damage") {
  TempDir tmp;
  const std::string path = tmp.file("preds.csv");
  testsupport::spit(path, "VideoId,Pairs\na,0 0.5\n");
  CHECK_THROWS_AS(recordio::parse_predictions(path), FormatError);
  testsupport::spit(path, "VideoId,LabelConfidencePairs\na,0 0.5 1\n");
  CHECK_THROWS_WITH_AS(recordio::parse_predictions(path), doctest::Contains("a"), ParseError);
  testsupport::spit(path, "VideoId,LabelConfidencePairs\na,0 0.5\na,1 0.4\n");
  CHECK_THROWS_AS(recordio::parse_predictions(path), FormatError);
  testsupport::spit(path, "VideoId,LabelConfidencePairs\na,0 0.5 0 0.4\n");
  CHECK_THROWS_AS(recordio::parse_predictions(path), FormatError);
}

TEST_CASE("model files round-trip bit-exactly for every kind") {
  TempDir tmp;
  Rng rng(301);

  const auto save_load_resave = [&](const recordio::ModelFile& file) {
    const std::string p1 = tmp.file("m1.json");
    const std::string p2 = tmp.file("m2.json");
    recordio::save_model(p1, file);
    const recordio::ModelFile back = recordio::load_model(p1);
    CHECK(back.kind == file.kind);
    CHECK(back.vocab_size == file.vocab_size);
    recordio::save_model(p2, back);
    CHECK(testsupport::slurp(p1) == testsupport::slurp(p2));
    return back;
  };

  SUBCASE("logistic") {
    recordio::ModelFile file;
    file.kind = "logistic";
    file.vocab_size = 3;
    file.params = linear::logistic_unflatten(random_vector(rng, 3 * 4 + 3), 3, 4, 1e-6);
    const auto back = save_load_resave(file);
    const auto& p = std::get<linear::LogisticParams>(file.params);
    CHECK(back.logistic().weights == p.weights);
    CHECK(back.logistic().biases == p.biases);
    CHECK(back.logistic().lambda == p.lambda);
    CHECK_THROWS_AS(back.moe(), KindMismatchError);
  }
  SUBCASE("frame_logistic uses the logistic accessor") {
    recordio::ModelFile file;
    file.kind = "frame_logistic";
    file.vocab_size = 2;
    file.params = linear::logistic_unflatten(random_vector(rng, 2 * 3 + 2), 2, 3, 0.0);
    const auto back = save_load_resave(file);
    CHECK(back.logistic().weights == std::get<linear::LogisticParams>(file.params).weights);
  }
  SUBCASE("moe") {
    recordio::ModelFile file;
    file.kind = "moe";
    file.vocab_size = 2;
    const int dim = 3, experts = 2;
    const int flat = 2 * (experts + 1) * dim + 2 * (experts + 1) + 2 * experts * dim + 2 * experts;
    file.params = linear::moe_unflatten(random_vector(rng, flat), 2, dim, experts, 1e-6);
    const auto back = save_load_resave(file);
    CHECK(back.moe().gate_weights == std::get<linear::MoeParams>(file.params).gate_weights);
    CHECK(back.moe().expert_biases == std::get<linear::MoeParams>(file.params).expert_biases);
    CHECK_THROWS_AS(back.logistic(), KindMismatchError);
  }
  SUBCASE("dbof") {
    recordio::ModelFile file;
    file.kind = "dbof";
    file.vocab_size = 3;
    const int dim = 4, up = 5;
    const int flat = up * dim + up + 3 * up + 3;
    file.params = framelevel::dbof_unflatten(random_vector(rng, flat), 3, dim, up, 1e-6);
    const auto back = save_load_resave(file);
    CHECK(back.dbof().up_weights == std::get<framelevel::DbofParams>(file.params).up_weights);
    CHECK(back.dbof().cls_biases == std::get<framelevel::DbofParams>(file.params).cls_biases);
  }
  SUBCASE("lstm") {
    recordio::ModelFile file;
    file.kind = "lstm";
    file.vocab_size = 2;
    const int dim = 3, hidden = 4, layers = 2;
    int flat = 0;
    for (int l = 0; l < layers; ++l) {
      const int in = l == 0 ? dim : hidden;
      flat += 4 * (hidden * in + hidden * hidden + hidden) + 3 * hidden;
    }
    flat += 2 * hidden;
    file.params = framelevel::lstm_unflatten(random_vector(rng, flat), 2, dim, hidden, layers,
                                             1e-6);
    const auto back = save_load_resave(file);
    const auto& p = std::get<framelevel::LstmParams>(file.params);
    REQUIRE(back.lstm().layers.size() == p.layers.size());
    CHECK(back.lstm().layers[1].w_hc == p.layers[1].w_hc);
    CHECK(back.lstm().layers[0].w_co == p.layers[0].w_co);
    CHECK(back.lstm().cls_weights == p.cls_weights);
  }
}

TEST_CASE("model metadata echoes the full-scale shape") {
  TempDir tmp;
  recordio::ModelFile file;
  file.kind = "logistic";
  file.vocab_size = 4716;
  file.config = nlohmann::json{{"features", "both"}};
  file.params = linear::LogisticParams::zeros(4716, 1152);
  const std::string path = tmp.file("big.json");
  recordio::save_model(path, file);
  const auto back = recordio::load_model(path);
  CHECK(back.vocab_size == 4716);
  CHECK(back.logistic().vocab() == 4716);
  CHECK(back.logistic().dim() == 1152);
  CHECK(back.config.at("features") == "both");
}

TEST_CASE("model loading rejects wrong kinds and bad shapes") {
  TempDir tmp;
  recordio::ModelFile file;
  file.kind = "logistic";
  file.vocab_size = 2;
  file.params = linear::LogisticParams::zeros(2, 3);
  const std::string path = tmp.file("m.json");
  recordio::save_model(path, file);

  // vocab_size disagreeing with the params is rejected at save time.
  recordio::ModelFile bad = file;
  bad.vocab_size = 5;
  CHECK_THROWS_AS(recordio::save_model(tmp.file("bad.json"), bad), FormatError);

  // Kind string unknown on load.
  std::string text = testsupport::slurp(path);
  testsupport::spit(path, text);
  auto corrupt = text;
  corrupt.replace(corrupt.find("logistic"), 8, "logitnot");
  testsupport::spit(tmp.file("corrupt.json"), corrupt);
  CHECK_THROWS_AS(recordio::load_model(tmp.file("corrupt.json")), FormatError);
}

TEST_CASE("atomic_write_text leaves no partial files") {
  TempDir tmp;
  const std::string missing_dir = tmp.file("nodir/out.txt");
  CHECK_THROWS_AS(recordio::atomic_write_text(missing_dir, "x"), IoError);
  CHECK_FALSE(std::filesystem::exists(missing_dir));

  const std::string path = tmp.file("ok.txt");
  recordio::atomic_write_text(path, "payload");
  CHECK(testsupport::slurp(path) == "payload");
  // No stray temp siblings.
  std::size_t entries = 0;
  for (const auto& entry : std::filesystem::directory_iterator(tmp.path())) {
    (void)entry;
    ++entries;
  }
  CHECK(entries == 1);
}

TEST_CASE("format_double fixed and shortest-exact forms") {
  CHECK(recordio::format_double(0.5, "%.6f") == "0.500000");
  CHECK(recordio::format_double(1.0, "%.6f") == "1.000000");
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(6)) - 3.0);
    const std::string s = recordio::format_double(v, "%.17g");
    CHECK(std::stod(s) == v);
  }
}
