#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "vle/cli.hpp"
#include "vle/datamodel.hpp"
#include "vle/recordio.hpp"
#include "vle/synthgen.hpp"
#include "support.hpp"

using namespace vle;

namespace {

int run(const std::vector<std::string>& args) { return cli::run(args); }

template <class Fn>
std::pair<int, std::string> with_captured_stdout(Fn&& fn) {
  std::fflush(stdout);
  FILE* tmp = std::tmpfile();
  REQUIRE(tmp != nullptr);
  const int saved = ::dup(::fileno(stdout));
  REQUIRE(saved >= 0);
  REQUIRE(::dup2(::fileno(tmp), ::fileno(stdout)) >= 0);
  const int code = fn();
  std::fflush(stdout);
  ::dup2(saved, ::fileno(stdout));
  ::close(saved);
  std::fseek(tmp, 0, SEEK_END);
  std::string text(static_cast<std::size_t>(std::ftell(tmp)), '\0');
  std::fseek(tmp, 0, SEEK_SET);
  if (!text.empty()) {
    const std::size_t got = std::fread(text.data(), 1, text.size(), tmp);
    text.resize(got);
  }
  std::fclose(tmp);
  return {code, text};
}

struct EnvGuard {
  std::string name;
  EnvGuard(const std::string& n, const std::string& value) : name(n) {
    ::setenv(name.c_str(), value.c_str(), 1);
  }
  ~EnvGuard() { ::unsetenv(name.c_str()); }
};

const char* kVideoSpec =
    "{\"level\":\"video\",\"videos\":100,\"vocab\":6,\"rgb_dim\":4,\"audio_dim\":2,"
    "\"mean_labels\":1.5,\"seed\":3}\n";

// Generates the shared 100-video dataset into dir/data once per fixture.
struct VideoDataFixture {
  testsupport::TempDir dir;
  std::string spec_path;
  std::string data_dir;

  VideoDataFixture() {
    spec_path = dir.file("spec.json");
    testsupport::spit(spec_path, kVideoSpec);
    data_dir = dir.file("data");
    REQUIRE(run({"gen-data", "--spec", spec_path, "--out", data_dir}) == 0);
  }

  std::string split(const std::string& name) const { return data_dir + "/" + name + ".jsonl"; }
};

std::vector<PredictionList> perfect_rows(const std::vector<VideoExample>& examples) {
  std::vector<PredictionList> rows;
  for (const auto& ex : examples) {
    PredictionList r;
    r.video_id = ex.video_id;
    double conf = 0.9;
    for (const int l : ex.labels) {
      r.pairs.push_back({l, conf});
      conf -= 0.05;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

TEST_CASE("gen-data writes splits, the planted model, and a manifest; reruns are identical") {
  VideoDataFixture fx;
  for (const char* name : {"train", "validate", "test"}) {
    CHECK(std::filesystem::exists(fx.split(name)));
  }
  CHECK(recordio::read_video_dataset(fx.split("train")).size() == 70);
  CHECK(recordio::read_video_dataset(fx.split("validate")).size() == 20);
  CHECK(recordio::read_video_dataset(fx.split("test")).size() == 10);
  CHECK_NOTHROW(synthgen::load_planted(fx.data_dir + "/planted.json"));

  const auto manifest = recordio::load_json(fx.data_dir + "/manifest.json");
  CHECK(manifest.at("command") == "gen-data");
  CHECK(manifest.at("seeds") == nlohmann::json::array({3}));
  CHECK(manifest.at("outputs").size() == 4);
  const double mean = manifest.at("metrics").at("mean_labels").get<double>();
  CHECK(mean >= 1.2);
  CHECK(mean <= 1.8);

  const std::string second = fx.dir.file("data2");
  REQUIRE(run({"gen-data", "--spec", fx.spec_path, "--out", second}) == 0);
  for (const char* name : {"train.jsonl", "validate.jsonl", "test.jsonl", "planted.json"}) {
    CHECK(testsupport::slurp(fx.data_dir + "/" + name) ==
          testsupport::slurp(second + "/" + name));
  }
}

TEST_CASE("gen-data at frame level writes video-mean companions") {
  testsupport::TempDir dir;
  const std::string spec = dir.file("spec.json");
  testsupport::spit(spec,
                    "{\"level\":\"frame\",\"videos\":60,\"vocab\":4,\"rgb_dim\":3,"
                    "\"audio_dim\":2,\"mean_labels\":1.2,\"min_frames\":2,\"max_frames\":5,"
                    "\"frame_noise\":0.1,\"seed\":5}\n");
  const std::string out = dir.file("out");
  REQUIRE(run({"gen-data", "--spec", spec, "--out", out}) == 0);

  CHECK(recordio::detect_level(out + "/train.jsonl") == recordio::DatasetLevel::frame);
  CHECK(recordio::detect_level(out + "/train_video.jsonl") == recordio::DatasetLevel::video);
  const auto frames = recordio::read_frame_dataset(out + "/train.jsonl");
  const auto means = recordio::read_video_dataset(out + "/train_video.jsonl");
  REQUIRE(frames.size() == means.size());
  CHECK(frames.size() == 42);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(frames[i].video_id == means[i].video_id);
    CHECK(frames[i].labels == means[i].labels);
  }

  const std::string bad = dir.file("bad.json");
  testsupport::spit(bad, "{\"level\":\"video\",\"cluster_count\":9}\n");
  CHECK(run({"gen-data", "--spec", bad, "--out", dir.file("nope")}) == 1);
}

TEST_CASE("train writes a model plus manifest and enforces the data level") {
  VideoDataFixture fx;
  const std::string model = fx.dir.file("logistic.json");
  REQUIRE(run({"train", "--model", "logistic", "--data", fx.split("train"),
               "--data", fx.split("validate"), "--out", model, "--epochs", "2",
               "--batch-size", "16", "--threads", "1", "--seed", "4"}) == 0);
  const auto file = recordio::load_model(model);
  CHECK(file.kind == "logistic");
  CHECK(file.vocab_size == 6);
  CHECK(file.logistic().dim() == 6);

  const auto manifest = recordio::load_json(model + ".manifest.json");
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("inputs").size() == 2);
  CHECK(manifest.at("metrics").contains("final_loss"));
  CHECK(manifest.at("metrics").at("final_loss").get<double>() > 0.0);

  // Frame-level data under a video-level model is a typed failure.
  testsupport::TempDir frame_dir;
  const std::string fspec = frame_dir.file("spec.json");
  testsupport::spit(fspec,
                    "{\"level\":\"frame\",\"videos\":30,\"vocab\":4,\"rgb_dim\":3,"
                    "\"audio_dim\":2,\"mean_labels\":1.2,\"min_frames\":2,\"max_frames\":4,"
                    "\"seed\":6}\n");
  const std::string fout = frame_dir.file("out");
  REQUIRE(run({"gen-data", "--spec", fspec, "--out", fout}) == 0);
  CHECK(run({"train", "--model", "logistic", "--data", fout + "/train.jsonl",
             "--out", fx.dir.file("x.json")}) == 1);
  CHECK(run({"train", "--model", "dbof", "--data", fx.split("train"),
             "--out", fx.dir.file("x.json")}) == 1);

  CHECK(run({"train", "--model", "ridge", "--data", fx.split("train"),
             "--out", fx.dir.file("x.json")}) != 0);
}

TEST_CASE("predict emits the canonical CSV, zero model scoring 0.5 everywhere") {
  VideoDataFixture fx;
  const std::string model = fx.dir.file("zero.json");
  REQUIRE(run({"train", "--model", "logistic", "--data", fx.split("train"), "--out", model,
               "--epochs", "0"}) == 0);

  const std::string out = fx.dir.file("preds.csv");
  REQUIRE(run({"predict", "--model", model, "--data", fx.split("test"), "--out", out,
               "--top-k", "3"}) == 0);

  const std::string text = testsupport::slurp(out);
  CHECK(text.rfind(recordio::kPredictionHeader, 0) == 0);
  CHECK(text.find(",0 0.500000 1 0.500000 2 0.500000\n") != std::string::npos);

  const auto parsed = recordio::parse_predictions(out);
  CHECK(parsed.reorder_warnings == 0);
  REQUIRE(parsed.rows.size() == 10);
  for (const auto& row : parsed.rows) {
    REQUIRE(row.pairs.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(row.pairs[j].label == static_cast<int>(j));
      CHECK(row.pairs[j].confidence == 0.5);
    }
  }

  // Level and dimension mismatches are typed failures.
  testsupport::TempDir other;
  const std::string frame_spec = other.file("frame_spec.json");
  testsupport::spit(frame_spec,
                    "{\"level\":\"frame\",\"videos\":20,\"vocab\":6,\"rgb_dim\":4,"
                    "\"audio_dim\":2,\"mean_labels\":1.5,\"min_frames\":2,\"max_frames\":3,"
                    "\"seed\":3}\n");
  const std::string frames = other.file("frames");
  REQUIRE(run({"gen-data", "--spec", frame_spec, "--out", frames}) == 0);
  CHECK(run({"predict", "--model", model, "--data", frames + "/train.jsonl",
             "--out", fx.dir.file("x.csv")}) == 1);

  const std::string wide_spec = other.file("wide_spec.json");
  testsupport::spit(wide_spec,
                    "{\"level\":\"video\",\"videos\":20,\"vocab\":6,\"rgb_dim\":5,"
                    "\"audio_dim\":2,\"mean_labels\":1.5,\"seed\":3}\n");
  const std::string wide = other.file("wide");
  REQUIRE(run({"gen-data", "--spec", wide_spec, "--out", wide}) == 0);
  CHECK(run({"predict", "--model", model, "--data", wide + "/train.jsonl",
             "--out", fx.dir.file("x.csv")}) == 1);
}

TEST_CASE("blend pipeline: perfect base keeps its GAP and block order is recorded") {
  // Larger run than the shared fixture: the stacker needs a holdout and a
  // test split big enough for GAP to be a stable readout.
  testsupport::TempDir dir;
  const std::string spec_path = dir.file("spec.json");
  testsupport::spit(spec_path,
                    "{\"level\":\"video\",\"videos\":400,\"vocab\":6,\"rgb_dim\":4,"
                    "\"audio_dim\":2,\"mean_labels\":1.5,\"seed\":3}\n");
  struct {
    testsupport::TempDir& dir;
    std::string data_dir;
    std::string split(const std::string& name) const { return data_dir + "/" + name + ".jsonl"; }
  } fx{dir, dir.file("data")};
  REQUIRE(run({"gen-data", "--spec", spec_path, "--out", fx.data_dir}) == 0);

  const auto validate = recordio::read_video_dataset(fx.split("validate"));
  const auto test = recordio::read_video_dataset(fx.split("test"));
  const std::string pv = fx.dir.file("perfect_validate.csv");
  const std::string pt = fx.dir.file("perfect_test.csv");
  recordio::write_predictions(pv, perfect_rows(validate));
  recordio::write_predictions(pt, perfect_rows(test));

  const std::string zero_model = fx.dir.file("zero.json");
  REQUIRE(run({"train", "--model", "logistic", "--data", fx.split("train"), "--out", zero_model,
               "--epochs", "0"}) == 0);
  const std::string zv = fx.dir.file("zero_validate.csv");
  const std::string zt = fx.dir.file("zero_test.csv");
  REQUIRE(run({"predict", "--model", zero_model, "--data", fx.split("validate"), "--out", zv,
               "--top-k", "6"}) == 0);
  REQUIRE(run({"predict", "--model", zero_model, "--data", fx.split("test"), "--out", zt,
               "--top-k", "6"}) == 0);

  const std::string out = fx.dir.file("blend_test.csv");
  REQUIRE(run({"blend", "--bases", pv, "--holdout-data", fx.split("validate"),
               "--test-bases", pt, "--stacker", "logistic", "--out", out,
               "--epochs", "100", "--batch-size", "4", "--learning-rate", "0.3",
               "--seed", "7"}) == 0);
  CHECK(std::filesystem::exists(out + ".stacker.json"));
  const auto manifest = recordio::load_json(out + ".manifest.json");
  CHECK(manifest.at("metrics").at("holdout_gap").get<double>() >= 0.95);

  auto [code, printed] = with_captured_stdout([&] {
    return run({"evaluate", "--predictions", out, "--truth", fx.split("test")});
  });
  CHECK(code == 0);
  CHECK(std::stod(printed) >= 0.95);

  // Two bases, both orders: recorded block order makes the outputs agree.
  const std::string ab = fx.dir.file("blend_ab.csv");
  const std::string ba = fx.dir.file("blend_ba.csv");
  REQUIRE(run({"blend", "--bases", pv, "--bases", zv, "--holdout-data", fx.split("validate"),
               "--test-bases", pt, "--test-bases", zt, "--out", ab,
               "--epochs", "10", "--batch-size", "8", "--seed", "7"}) == 0);
  REQUIRE(run({"blend", "--bases", zv, "--bases", pv, "--holdout-data", fx.split("validate"),
               "--test-bases", zt, "--test-bases", pt, "--out", ba,
               "--epochs", "10", "--batch-size", "8", "--seed", "7"}) == 0);
  CHECK(testsupport::slurp(ab) == testsupport::slurp(ba));

  CHECK(run({"blend", "--bases", pv, "--bases", zv, "--holdout-data", fx.split("validate"),
             "--test-bases", pt, "--out", fx.dir.file("x.csv")}) == 1);
}

TEST_CASE("average is the identity on one member and coalesces duplicates") {
  VideoDataFixture fx;
  const auto test = recordio::read_video_dataset(fx.split("test"));
  const std::string member = fx.dir.file("member.csv");
  recordio::write_predictions(member, perfect_rows(test));

  const std::string solo_cfg = fx.dir.file("solo.cfg");
  testsupport::spit(solo_cfg,
                    "{\"members\":[{\"path\":\"member.csv\",\"weight\":1.0}],\"k_out\":20}\n");
  const std::string solo_out = fx.dir.file("solo.csv");
  REQUIRE(run({"average", "--config", solo_cfg, "--out", solo_out}) == 0);
  CHECK(testsupport::slurp(solo_out) == testsupport::slurp(member));

  const std::string dup_cfg = fx.dir.file("dup.cfg");
  testsupport::spit(dup_cfg,
                    "{\"members\":[{\"path\":\"member.csv\",\"weight\":1.0},"
                    "{\"path\":\"member.csv\",\"weight\":1.0}],\"k_out\":20}\n");
  const std::string w2_cfg = fx.dir.file("w2.cfg");
  testsupport::spit(w2_cfg,
                    "{\"members\":[{\"path\":\"member.csv\",\"weight\":2.0}],\"k_out\":20}\n");
  const std::string dup_out = fx.dir.file("dup.csv");
  const std::string w2_out = fx.dir.file("w2.csv");
  REQUIRE(run({"average", "--config", dup_cfg, "--out", dup_out}) == 0);
  REQUIRE(run({"average", "--config", w2_cfg, "--out", w2_out}) == 0);
  CHECK(testsupport::slurp(dup_out) == testsupport::slurp(w2_out));

  const auto manifest = recordio::load_json(solo_out + ".manifest.json");
  CHECK(manifest.at("command") == "average");
  CHECK(manifest.at("config").at("members").size() == 1);

  const std::string missing_cfg = fx.dir.file("missing.cfg");
  testsupport::spit(missing_cfg,
                    "{\"members\":[{\"path\":\"nope.csv\",\"weight\":1.0}]}\n");
  CHECK(run({"average", "--config", missing_cfg, "--out", fx.dir.file("x.csv")}) == 1);
  CHECK(run({"average", "--config", "q", "--out", fx.dir.file("x.csv")}) == 1);
}

TEST_CASE("evaluate prints GAP with five decimals") {
  testsupport::TempDir dir;
  std::vector<VideoExample> examples(2);
  examples[0].video_id = "A";
  examples[0].labels = {0};
  examples[1].video_id = "B";
  examples[1].labels = {1};
  for (auto& ex : examples) {
    ex.mean_rgb = Eigen::VectorXd::Zero(2);
    ex.mean_audio = Eigen::VectorXd::Zero(1);
  }
  const std::string truth = dir.file("truth.jsonl");
  recordio::write_video_dataset(truth, examples);

  const std::string worked = dir.file("worked.csv");
  recordio::write_predictions(worked, {{"A", {{0, 0.9}, {1, 0.8}}},
                                       {"B", {{0, 0.7}, {1, 0.6}}}});
  auto [code, printed] = with_captured_stdout(
      [&] { return run({"evaluate", "--predictions", worked, "--truth", truth}); });
  CHECK(code == 0);
  CHECK(printed == "0.75000\n");

  const std::string perfect = dir.file("perfect.csv");
  recordio::write_predictions(perfect, {{"A", {{0, 0.9}}}, {"B", {{1, 0.8}}}});
  auto [pcode, ptext] = with_captured_stdout(
      [&] { return run({"evaluate", "--predictions", perfect, "--truth", truth}); });
  CHECK(pcode == 0);
  CHECK(ptext == "1.00000\n");

  const std::string disjoint = dir.file("disjoint.csv");
  recordio::write_predictions(disjoint, {{"A", {{1, 0.9}}}, {"B", {{0, 0.8}}}});
  auto [dcode, dtext] = with_captured_stdout(
      [&] { return run({"evaluate", "--predictions", disjoint, "--truth", truth}); });
  CHECK(dcode == 0);
  CHECK(dtext == "0.00000\n");

  const std::string unknown = dir.file("unknown.csv");
  recordio::write_predictions(unknown, {{"ZZ", {{0, 0.9}}}});
  CHECK(run({"evaluate", "--predictions", unknown, "--truth", truth}) == 1);
}

TEST_CASE("VLE_SEED overrides the spec seed") {
  testsupport::TempDir dir;
  const std::string spec3 = dir.file("spec3.json");
  testsupport::spit(spec3, kVideoSpec);
  const std::string spec9 = dir.file("spec9.json");
  testsupport::spit(spec9,
                    "{\"level\":\"video\",\"videos\":100,\"vocab\":6,\"rgb_dim\":4,"
                    "\"audio_dim\":2,\"mean_labels\":1.5,\"seed\":9}\n");

  const std::string out9 = dir.file("out9");
  REQUIRE(run({"gen-data", "--spec", spec9, "--out", out9}) == 0);

  const std::string forced = dir.file("forced");
  {
    EnvGuard guard("VLE_SEED", "9");
    REQUIRE(run({"gen-data", "--spec", spec3, "--out", forced}) == 0);
  }
  CHECK(testsupport::slurp(forced + "/train.jsonl") == testsupport::slurp(out9 + "/train.jsonl"));
  const auto manifest = recordio::load_json(forced + "/manifest.json");
  CHECK(manifest.at("seeds") == nlohmann::json::array({9}));

  {
    EnvGuard guard("VLE_SEED", "banana");
    CHECK(run({"gen-data", "--spec", spec3, "--out", dir.file("x")}) == 1);
  }
}
