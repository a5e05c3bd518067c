#include "vle/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "vle/datamodel.hpp"
#include "vle/ensemble.hpp"
#include "vle/errors.hpp"
#include "vle/framelevel.hpp"
#include "vle/linear.hpp"
#include "vle/metrics.hpp"
#include "vle/recordio.hpp"
#include "vle/synthgen.hpp"

namespace vle::cli {
namespace {

using nlohmann::json;

int default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// VLE_SEED takes precedence over any seed from a flag or spec file.
std::uint64_t apply_seed_env(std::uint64_t seed) {
  const char* env = std::getenv("VLE_SEED");
  if (env == nullptr || *env == '\0') return seed;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || end == env || *end != '\0') {
    throw InvalidArgument("VLE_SEED must be a nonnegative integer, got '" + std::string(env) +
                          "'");
  }
  return static_cast<std::uint64_t>(v);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// One manifest next to every output: what ran, with which resolved settings,
// over which files, and what came out.
void write_manifest(const std::string& path, const std::string& command, json config,
                    std::vector<std::uint64_t> seeds, std::vector<std::string> inputs,
                    std::vector<std::string> outputs, double wall_clock_seconds, json metrics) {
  json j;
  j["command"] = command;
  j["config"] = std::move(config);
  j["seeds"] = std::move(seeds);
  j["inputs"] = std::move(inputs);
  j["outputs"] = std::move(outputs);
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["metrics"] = std::move(metrics);
  recordio::atomic_write_text(path, j.dump(2) + "\n");
}

void require_spec_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& what) {
  if (!j.is_object()) throw FormatError(what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw FormatError(what + ": unexpected key '" + it.key() + "'");
    }
  }
}

struct DataSpec {
  synthgen::SynthSpec synth;
  recordio::DatasetLevel level = recordio::DatasetLevel::video;
};

DataSpec load_data_spec(const std::string& path) {
  const json j = recordio::load_json(path);
  require_spec_keys(j,
                    {"level", "videos", "vocab", "rgb_dim", "audio_dim", "mean_labels", "task",
                     "min_frames", "max_frames", "frame_noise", "drift", "flip_strength", "seed"},
                    path);
  DataSpec spec;
  try {
    if (j.contains("level")) {
      const std::string level = j.at("level").get<std::string>();
      if (level == "video") {
        spec.level = recordio::DatasetLevel::video;
      } else if (level == "frame") {
        spec.level = recordio::DatasetLevel::frame;
      } else {
        throw FormatError(path + ": level must be video or frame");
      }
    }
    auto& s = spec.synth;
    if (j.contains("videos")) s.videos = j.at("videos").get<int>();
    if (j.contains("vocab")) s.vocab = j.at("vocab").get<int>();
    if (j.contains("rgb_dim")) s.rgb_dim = j.at("rgb_dim").get<int>();
    if (j.contains("audio_dim")) s.audio_dim = j.at("audio_dim").get<int>();
    if (j.contains("mean_labels")) s.mean_labels = j.at("mean_labels").get<double>();
    if (j.contains("task")) s.task = synthgen::task_from_string(j.at("task").get<std::string>());
    if (j.contains("min_frames")) s.min_frames = j.at("min_frames").get<int>();
    if (j.contains("max_frames")) s.max_frames = j.at("max_frames").get<int>();
    if (j.contains("frame_noise")) s.frame_noise = j.at("frame_noise").get<double>();
    if (j.contains("drift")) s.drift = j.at("drift").get<double>();
    if (j.contains("flip_strength")) s.flip_strength = j.at("flip_strength").get<double>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return spec;
}

// Contiguous 7:2:1 split over generation order (examples are exchangeable).
struct SplitSizes {
  std::size_t train, validate, test;
};

SplitSizes split_sizes(std::size_t n) {
  SplitSizes s{};
  s.train = n * 7 / 10;
  s.validate = n * 2 / 10;
  s.test = n - s.train - s.validate;
  return s;
}

template <class Example>
std::vector<std::vector<Example>> split_examples(const std::vector<Example>& all) {
  const SplitSizes s = split_sizes(all.size());
  std::vector<std::vector<Example>> out(3);
  out[0].assign(all.begin(), all.begin() + s.train);
  out[1].assign(all.begin() + s.train, all.begin() + s.train + s.validate);
  out[2].assign(all.begin() + s.train + s.validate, all.end());
  return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  Stopwatch watch;
  DataSpec spec = load_data_spec(spec_path);
  spec.synth.seed = apply_seed_env(spec.synth.seed);
  std::filesystem::create_directories(out_dir);

  const std::vector<std::string> split_names = {"train", "validate", "test"};
  std::vector<std::string> outputs;
  json metrics;
  json config;
  config["spec"] = spec_path;
  config["level"] = to_string(spec.level);
  config["videos"] = spec.synth.videos;
  config["vocab"] = spec.synth.vocab;
  config["rgb_dim"] = spec.synth.rgb_dim;
  config["audio_dim"] = spec.synth.audio_dim;
  config["mean_labels"] = spec.synth.mean_labels;
  config["task"] = synthgen::to_string(spec.synth.task);
  config["seed"] = spec.synth.seed;

  if (spec.level == recordio::DatasetLevel::video) {
    synthgen::VideoGenResult r = synthgen::gen_video_level(spec.synth);
    auto splits = split_examples(r.examples);
    for (std::size_t i = 0; i < splits.size(); ++i) {
      const std::string path = out_dir + "/" + split_names[i] + ".jsonl";
      recordio::write_video_dataset(path, splits[i]);
      outputs.push_back(path);
      metrics[split_names[i] + "_videos"] = splits[i].size();
    }
    synthgen::save_planted(out_dir + "/planted.json", r.planted);
    outputs.push_back(out_dir + "/planted.json");
    metrics["mean_labels"] = r.mean_labels;
  } else {
    config["min_frames"] = spec.synth.min_frames;
    config["max_frames"] = spec.synth.max_frames;
    config["frame_noise"] = spec.synth.frame_noise;
    synthgen::FrameGenResult r = synthgen::gen_frame_level(spec.synth);
    auto splits = split_examples(r.examples);
    for (std::size_t i = 0; i < splits.size(); ++i) {
      const std::string path = out_dir + "/" + split_names[i] + ".jsonl";
      recordio::write_frame_dataset(path, splits[i]);
      outputs.push_back(path);
      // Video-level companions carry the per-video frame means, so the
      // video-level trainers run against the same videos and labels.
      const std::string video_path = out_dir + "/" + split_names[i] + "_video.jsonl";
      recordio::write_video_dataset(video_path, synthgen::to_video_means(splits[i]));
      outputs.push_back(video_path);
      metrics[split_names[i] + "_videos"] = splits[i].size();
    }
    synthgen::save_planted(out_dir + "/planted.json", r.planted);
    outputs.push_back(out_dir + "/planted.json");
    metrics["mean_labels"] = r.mean_labels;
  }

  write_manifest(out_dir + "/manifest.json", "gen-data", config, {spec.synth.seed}, {spec_path},
                 outputs, watch.seconds(), metrics);
  return 0;
}

struct TrainOptions {
  std::string model;
  std::string features = "both";
  std::vector<std::string> data;
  std::string out;
  int vocab = 0;  // 0 infers max label + 1 from the data
  double learning_rate = 0.01;
  int batch_size = 128;
  int epochs = 10;
  double lambda = 1e-6;
  int experts = 2;
  std::uint64_t seed = 1;
  int threads = default_threads();
  bool no_self_check = false;
  int frames_per_video = 20;
  int up_width = 0;
  int hidden = 64;
  int layers = 2;
  int unroll = 60;
};

linear::TrainConfig train_config(const TrainOptions& opt) {
  linear::TrainConfig cfg;
  cfg.learning_rate = opt.learning_rate;
  cfg.batch_size = opt.batch_size;
  cfg.epochs = opt.epochs;
  cfg.lambda = opt.lambda;
  cfg.experts = opt.experts;
  cfg.seed = apply_seed_env(opt.seed);
  cfg.threads = opt.threads;
  cfg.gradient_self_check = !opt.no_self_check;
  return cfg;
}

bool is_frame_model(const std::string& model) {
  return model == "frame-logistic" || model == "dbof" || model == "lstm";
}

void check_level(const std::string& model, const std::string& path,
                 recordio::DatasetLevel want) {
  const recordio::DatasetLevel got = recordio::detect_level(path);
  if (got != want) {
    throw FormatError("model '" + model + "' expects " + std::string(to_string(want)) +
                      "-level data but " + path + " is " + to_string(got) + "-level");
  }
}

template <class Example>
int infer_vocab(const std::vector<Example>& examples, int flag_value) {
  if (flag_value > 0) return flag_value;
  int max_label = -1;
  for (const auto& ex : examples) {
    if (!ex.labels.empty()) max_label = std::max(max_label, ex.labels.back());
  }
  if (max_label < 0) {
    throw InvalidArgument("cannot infer the vocabulary from unlabeled data; pass --vocab");
  }
  return max_label + 1;
}

int cmd_train(const TrainOptions& opt) {
  Stopwatch watch;
  const FeatureMode mode = feature_mode_from_string(opt.features);
  linear::TrainConfig cfg = train_config(opt);
  linear::TrainTrace trace;

  const recordio::DatasetLevel want =
      is_frame_model(opt.model) ? recordio::DatasetLevel::frame : recordio::DatasetLevel::video;
  for (const auto& path : opt.data) check_level(opt.model, path, want);

  recordio::ModelFile file;
  json config;
  config["model"] = opt.model;
  config["features"] = opt.features;
  config["learning_rate"] = cfg.learning_rate;
  config["adagrad_epsilon"] = cfg.adagrad_epsilon;
  config["batch_size"] = cfg.batch_size;
  config["epochs"] = cfg.epochs;
  config["lambda"] = cfg.lambda;
  config["seed"] = cfg.seed;
  config["threads"] = cfg.threads;

  if (want == recordio::DatasetLevel::video) {
    std::vector<VideoExample> examples;
    for (const auto& path : opt.data) {
      auto part = recordio::read_video_dataset(path);
      examples.insert(examples.end(), std::make_move_iterator(part.begin()),
                      std::make_move_iterator(part.end()));
    }
    const Vocabulary vocab{infer_vocab(examples, opt.vocab)};
    if (opt.model == "logistic") {
      file.kind = "logistic";
      file.params = linear::logistic_train(examples, vocab, cfg, mode, &trace);
    } else {
      file.kind = "moe";
      config["experts"] = cfg.experts;
      file.params = linear::moe_train(examples, vocab, cfg, mode, &trace);
    }
    file.vocab_size = vocab.size;
  } else {
    std::vector<FrameExample> examples;
    for (const auto& path : opt.data) {
      auto part = recordio::read_frame_dataset(path);
      examples.insert(examples.end(), std::make_move_iterator(part.begin()),
                      std::make_move_iterator(part.end()));
    }
    const Vocabulary vocab{infer_vocab(examples, opt.vocab)};
    if (opt.model == "frame-logistic") {
      framelevel::FrameSampleConfig sample{opt.frames_per_video, cfg.seed};
      config["frames_per_video"] = sample.frames_per_video;
      file.kind = "frame_logistic";
      file.params = framelevel::frame_logistic_train(examples, vocab, cfg, sample, mode, &trace);
    } else {
      framelevel::SequenceConfig seq;
      seq.train = cfg;
      seq.up_width = opt.up_width;
      seq.hidden = opt.hidden;
      seq.layers = opt.layers;
      seq.unroll = opt.unroll;
      if (opt.model == "dbof") {
        config["up_width"] = seq.up_width;
        file.kind = "dbof";
        file.params = framelevel::dbof_train(examples, vocab, seq, mode, &trace);
      } else {
        config["hidden"] = seq.hidden;
        config["layers"] = seq.layers;
        config["unroll"] = seq.unroll;
        file.kind = "lstm";
        file.params = framelevel::lstm_train(examples, vocab, seq, mode, &trace);
      }
    }
    file.vocab_size = vocab.size;
  }

  config["vocab"] = file.vocab_size;
  file.config = config;
  recordio::save_model(opt.out, file);

  json metrics;
  if (!trace.step_loss.empty()) {
    metrics["final_loss"] = trace.final_loss();
    metrics["steps"] = trace.step_loss.size();
  }
  write_manifest(opt.out + ".manifest.json", "train", config, {cfg.seed}, opt.data, {opt.out},
                 watch.seconds(), metrics);
  return 0;
}

FeatureMode model_feature_mode(const recordio::ModelFile& file) {
  if (file.config.contains("features")) {
    return feature_mode_from_string(file.config.at("features").get<std::string>());
  }
  return FeatureMode::both;
}

int model_unroll(const recordio::ModelFile& file) {
  if (file.config.contains("unroll")) return file.config.at("unroll").get<int>();
  return 60;
}

void check_dim(const std::string& model_path, int model_dim, int data_dim) {
  if (model_dim != data_dim) {
    throw InvalidArgument("feature dimension mismatch: " + model_path + " expects " +
                          std::to_string(model_dim) + ", data provides " +
                          std::to_string(data_dim));
  }
}

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out, int top_k_n) {
  Stopwatch watch;
  const recordio::ModelFile file = recordio::load_model(model_path);
  const FeatureMode mode = model_feature_mode(file);
  const bool frame_model =
      file.kind == "frame_logistic" || file.kind == "dbof" || file.kind == "lstm";
  const std::string cli_name = file.kind == "frame_logistic" ? "frame-logistic" : file.kind;
  check_level(cli_name, data_path,
              frame_model ? recordio::DatasetLevel::frame : recordio::DatasetLevel::video);

  std::vector<PredictionList> rows;
  if (!frame_model) {
    const auto examples = recordio::read_video_dataset(data_path);
    for (const auto& ex : examples) {
      const Eigen::VectorXd x = assemble_features(ex, mode);
      Eigen::VectorXd scores;
      if (file.kind == "logistic") {
        check_dim(model_path, file.logistic().dim(), static_cast<int>(x.size()));
        scores = linear::logistic_predict(file.logistic(), x);
      } else {
        check_dim(model_path, file.moe().dim(), static_cast<int>(x.size()));
        scores = linear::moe_predict(file.moe(), x);
      }
      rows.push_back({ex.video_id, top_k(scores, top_k_n)});
    }
  } else {
    const auto examples = recordio::read_frame_dataset(data_path);
    const int unroll = model_unroll(file);
    for (const auto& ex : examples) {
      const std::vector<Eigen::VectorXd> frames = assemble_frames(ex, mode);
      const int data_dim = frames.empty() ? 0 : static_cast<int>(frames.front().size());
      Eigen::VectorXd scores;
      if (file.kind == "frame_logistic") {
        check_dim(model_path, file.logistic().dim(), data_dim);
        scores = framelevel::frame_logistic_infer(file.logistic(), frames);
      } else if (file.kind == "dbof") {
        check_dim(model_path, file.dbof().dim(), data_dim);
        scores = framelevel::dbof_forward(file.dbof(), frames);
      } else {
        check_dim(model_path, file.lstm().input_dim(), data_dim);
        scores = framelevel::lstm_forward(file.lstm(), frames, unroll);
      }
      rows.push_back({ex.video_id, top_k(scores, top_k_n)});
    }
  }

  recordio::write_predictions(out, rows, top_k_n);
  json config{{"model", model_path}, {"data", data_path}, {"top_k", top_k_n}};
  write_manifest(out + ".manifest.json", "predict", config, {}, {model_path, data_path}, {out},
                 watch.seconds(), json{{"videos", rows.size()}});
  return 0;
}

struct BlendOptions {
  std::vector<std::string> bases;
  std::string holdout_data;
  std::vector<std::string> test_bases;
  std::string stacker = "logistic";
  std::string out;
  int top_k_n = 20;
  TrainOptions train;  // shared trainer knobs; model/data/out unused
};

GroundTruth truth_from_dataset(const std::string& path) {
  if (recordio::detect_level(path) == recordio::DatasetLevel::video) {
    return truth_from_examples(recordio::read_video_dataset(path));
  }
  return truth_from_examples(recordio::read_frame_dataset(path));
}

int infer_vocab_for_blend(const BlendOptions& opt, const GroundTruth& truth) {
  if (opt.train.vocab > 0) return opt.train.vocab;
  int max_label = -1;
  for (const auto& [id, labels] : truth) {
    if (!labels.empty()) max_label = std::max(max_label, labels.back());
  }
  for (const auto& path : opt.bases) {
    for (const auto& row : recordio::parse_predictions(path).rows) {
      for (const auto& pair : row.pairs) max_label = std::max(max_label, pair.label);
    }
  }
  if (max_label < 0) {
    throw InvalidArgument("cannot infer the vocabulary from the holdout; pass --vocab");
  }
  return max_label + 1;
}

int cmd_blend(const BlendOptions& opt) {
  Stopwatch watch;
  if (opt.bases.size() != opt.test_bases.size()) {
    throw InvalidArgument("--bases lists " + std::to_string(opt.bases.size()) +
                          " files but --test-bases lists " +
                          std::to_string(opt.test_bases.size()) +
                          "; base model i must appear in both, in the same order");
  }
  const ensemble::StackerKind kind = ensemble::stacker_from_string(opt.stacker);
  linear::TrainConfig cfg = train_config(opt.train);

  const GroundTruth truth = truth_from_dataset(opt.holdout_data);
  const Vocabulary vocab{infer_vocab_for_blend(opt, truth)};

  ensemble::StackedDataset holdout = ensemble::build_stacked_dataset(opt.bases, truth, vocab);
  linear::TrainTrace trace;
  ensemble::BlendModel model = ensemble::blend_fit(holdout, kind, cfg, &trace);
  model.base_names = opt.bases;

  std::map<std::string, PredictionList> holdout_preds;
  for (const auto& ex : holdout.examples) {
    holdout_preds[ex.video_id] = {ex.video_id, top_k(ensemble::blend_scores(model, ex), 20)};
  }
  const double holdout_gap = metrics::gap_at_k(holdout_preds, truth, 20);

  const std::vector<PredictionList> rows =
      ensemble::blend_predict(model, opt.test_bases, opt.top_k_n);
  recordio::write_predictions(opt.out, rows, opt.top_k_n);

  const std::string stacker_path = opt.out + ".stacker.json";
  recordio::save_model(stacker_path, ensemble::to_model_file(model));

  json config;
  config["stacker"] = opt.stacker;
  config["bases"] = opt.bases;
  config["test_bases"] = opt.test_bases;
  config["holdout_data"] = opt.holdout_data;
  config["vocab"] = vocab.size;
  config["top_k"] = opt.top_k_n;
  config["learning_rate"] = cfg.learning_rate;
  config["batch_size"] = cfg.batch_size;
  config["epochs"] = cfg.epochs;
  config["lambda"] = cfg.lambda;
  config["seed"] = cfg.seed;
  config["threads"] = cfg.threads;
  if (kind == ensemble::StackerKind::moe) config["experts"] = cfg.experts;

  std::vector<std::string> inputs = opt.bases;
  inputs.push_back(opt.holdout_data);
  inputs.insert(inputs.end(), opt.test_bases.begin(), opt.test_bases.end());
  json metrics_j{{"holdout_gap", holdout_gap}, {"videos", rows.size()}};
  if (!trace.step_loss.empty()) metrics_j["final_loss"] = trace.final_loss();
  write_manifest(opt.out + ".manifest.json", "blend", config, {cfg.seed}, inputs,
                 {opt.out, stacker_path}, watch.seconds(), metrics_j);
  return 0;
}

int cmd_average(const std::string& config_arg, const std::string& out) {
  Stopwatch watch;
  // Resolve the letter form to the shipped config path so the manifest can
  // echo what actually ran.
  std::string config_path = config_arg;
  if (config_arg.size() == 1 && std::isalpha(static_cast<unsigned char>(config_arg[0]))) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(config_arg[0])));
    if (c < 'a' || c > 'e') {
      throw InvalidArgument("unknown strategy '" + config_arg + "' (want A..E or a path)");
    }
    config_path = std::string("configs/strategy_") + c + ".cfg";
  }
  const ensemble::EnsembleConfig config = ensemble::load_ensemble_config(config_path);
  const std::vector<PredictionList> rows = ensemble::weighted_average(config);
  recordio::write_predictions(out, rows, config.k_out);

  json members = json::array();
  std::vector<std::string> inputs;
  for (const auto& m : config.members) {
    members.push_back({{"path", m.path}, {"weight", m.weight}});
    inputs.push_back(m.path);
  }
  json config_j{{"config", config_path}, {"members", members}, {"k_out", config.k_out}};
  write_manifest(out + ".manifest.json", "average", config_j, {}, inputs, {out}, watch.seconds(),
                 json{{"videos", rows.size()}});
  return 0;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& truth_path, int k) {
  const recordio::ParsedPredictions parsed = recordio::parse_predictions(predictions_path);
  std::map<std::string, PredictionList> predictions;
  for (const auto& row : parsed.rows) predictions[row.video_id] = row;
  const GroundTruth truth = truth_from_dataset(truth_path);
  const double gap = metrics::gap_at_k(predictions, truth, k);
  std::printf("%.5f\n", gap);
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainOptions& opt) {
  cmd->add_option("--vocab", opt.vocab, "Vocabulary size (0 infers max label + 1)");
  cmd->add_option("--learning-rate", opt.learning_rate, "Adagrad base learning rate");
  cmd->add_option("--batch-size", opt.batch_size, "Mini-batch size");
  cmd->add_option("--epochs", opt.epochs, "Passes over the training data");
  cmd->add_option("--lambda", opt.lambda, "L2 penalty on weight matrices");
  cmd->add_option("--seed", opt.seed, "Training seed (VLE_SEED overrides)");
  cmd->add_option("--threads", opt.threads, "Worker threads (results are thread-invariant)");
  cmd->add_flag("--no-self-check", opt.no_self_check,
                "Skip the finite-difference gradient check at initialization");
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Video multi-label classification and ensembling toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_path;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with splits");
  gen->add_option("--spec", spec_path, "Generator spec (JSON)")->required();
  gen->add_option("--out", out_path, "Output directory")->required();

  TrainOptions topt;
  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("--model", topt.model, "Model kind")
      ->required()
      ->check(CLI::IsMember({"logistic", "moe", "frame-logistic", "dbof", "lstm"}));
  train->add_option("--features", topt.features, "Feature mode")
      ->check(CLI::IsMember({"rgb", "audio", "both"}));
  train->add_option("--data", topt.data, "Dataset files (concatenated)")->required();
  train->add_option("--out", topt.out, "Model output path")->required();
  add_train_flags(train, topt);
  train->add_option("--experts", topt.experts, "Experts per label (moe)");
  train->add_option("--frames-per-video", topt.frames_per_video,
                    "Sampled frames per video (frame-logistic)");
  train->add_option("--up-width", topt.up_width, "Up-projection units, 0 = 8 x dim (dbof)");
  train->add_option("--hidden", topt.hidden, "Hidden units per layer (lstm)");
  train->add_option("--layers", topt.layers, "Stacked layers (lstm)");
  train->add_option("--unroll", topt.unroll, "Unroll budget in frames (lstm)");

  std::string model_path, data_path;
  int top_k_n = 20;
  CLI::App* predict = app.add_subcommand("predict", "Write top-k predictions for a dataset");
  predict->add_option("--model", model_path, "Model file")->required();
  predict->add_option("--data", data_path, "Dataset file")->required();
  predict->add_option("--out", out_path, "Predictions CSV path")->required();
  predict->add_option("--top-k", top_k_n, "Predictions kept per video");

  BlendOptions bopt;
  CLI::App* blend = app.add_subcommand("blend", "Fit a stacker on holdout predictions");
  blend->add_option("--bases", bopt.bases, "Holdout prediction files, one per base model")
      ->required();
  blend->add_option("--holdout-data", bopt.holdout_data, "Holdout dataset (ground truth)")
      ->required();
  blend->add_option("--test-bases", bopt.test_bases, "Test prediction files, same order")
      ->required();
  blend->add_option("--stacker", bopt.stacker, "Stacker kind")
      ->check(CLI::IsMember({"logistic", "moe"}));
  blend->add_option("--out", bopt.out, "Predictions CSV path")->required();
  blend->add_option("--top-k", bopt.top_k_n, "Predictions kept per video");
  add_train_flags(blend, bopt.train);
  blend->add_option("--experts", bopt.train.experts, "Experts per label (moe stacker)");

  std::string config_arg;
  CLI::App* average = app.add_subcommand("average", "Weighted-average prediction files");
  average->add_option("--config", config_arg, "Strategy config path or letter A..E")->required();
  average->add_option("--out", out_path, "Predictions CSV path")->required();

  std::string predictions_path, truth_path;
  int eval_k = 20;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Print GAP@k for predictions");
  evaluate->add_option("--predictions", predictions_path, "Predictions CSV")->required();
  evaluate->add_option("--truth", truth_path, "Dataset file holding the labels")->required();
  evaluate->add_option("--k", eval_k, "Pool depth");

  std::vector<const char*> argv;
  argv.push_back("vle");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_path);
    if (train->parsed()) return cmd_train(topt);
    if (predict->parsed()) return cmd_predict(model_path, data_path, out_path, top_k_n);
    if (blend->parsed()) return cmd_blend(bopt);
    if (average->parsed()) return cmd_average(config_arg, out_path);
    if (evaluate->parsed()) return cmd_evaluate(predictions_path, truth_path, eval_k);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace vle::cli
