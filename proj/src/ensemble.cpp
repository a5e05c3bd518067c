#include "vle/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "vle/errors.hpp"
#include "vle/metrics.hpp"

namespace vle::ensemble {
namespace {

using nlohmann::json;

void require_keys(const json& j, const std::vector<std::string>& required,
                  const std::vector<std::string>& optional, const std::string& what) {
  if (!j.is_object()) throw FormatError(what + ": expected a JSON object");
  for (const auto& key : required) {
    if (!j.contains(key)) throw FormatError(what + ": missing key '" + key + "'");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(required.begin(), required.end(), it.key()) == required.end() &&
        std::find(optional.begin(), optional.end(), it.key()) == optional.end()) {
      throw FormatError(what + ": unexpected key '" + it.key() + "'");
    }
  }
}

std::map<std::string, PredictionList> load_prediction_map(const std::string& path) {
  recordio::ParsedPredictions parsed = recordio::parse_predictions(path);
  std::map<std::string, PredictionList> by_id;
  for (auto& row : parsed.rows) by_id.emplace(row.video_id, std::move(row));
  return by_id;
}

std::string id_list(const std::set<std::string>& ids, std::size_t cap) {
  std::string out;
  std::size_t shown = 0;
  for (const auto& id : ids) {
    if (shown == cap) {
      out += ", ...";
      break;
    }
    if (shown > 0) out += ", ";
    out += id;
    ++shown;
  }
  return out;
}

// Requires every file to cover exactly the same video ids as the first one.
void check_same_universe(const std::string& first_path,
                         const std::map<std::string, PredictionList>& first,
                         const std::string& other_path,
                         const std::map<std::string, PredictionList>& other) {
  std::set<std::string> missing;  // in first, not in other
  std::set<std::string> extra;    // in other, not in first
  for (const auto& [id, row] : first) {
    if (!other.count(id)) missing.insert(id);
  }
  for (const auto& [id, row] : other) {
    if (!first.count(id)) extra.insert(id);
  }
  if (missing.empty() && extra.empty()) return;
  std::string msg = "video id sets differ between " + first_path + " and " + other_path;
  if (!missing.empty()) msg += "; missing from the latter: " + id_list(missing, 10);
  if (!extra.empty()) msg += "; extra in the latter: " + id_list(extra, 10);
  throw FormatError(msg);
}

// Concatenated sparse blocks per video, sorted by video id.
std::vector<StackedExample> join_blocks(const std::vector<std::string>& base_files,
                                        const Vocabulary& vocab) {
  if (base_files.empty()) throw InvalidArgument("join_blocks: no base prediction files");
  std::vector<std::map<std::string, PredictionList>> maps;
  maps.reserve(base_files.size());
  for (const auto& path : base_files) maps.push_back(load_prediction_map(path));
  for (std::size_t b = 1; b < maps.size(); ++b) {
    check_same_universe(base_files[0], maps[0], base_files[b], maps[b]);
  }

  std::vector<StackedExample> out;
  out.reserve(maps[0].size());
  for (const auto& [id, row0] : maps[0]) {
    StackedExample ex;
    ex.video_id = id;
    for (std::size_t b = 0; b < maps.size(); ++b) {
      const PredictionList& row = maps[b].at(id);
      SparseStackFeature block = expand_topk(row, vocab);
      const int offset = static_cast<int>(b) * vocab.size;
      for (std::size_t j = 0; j < block.indices.size(); ++j) {
        ex.indices.push_back(offset + block.indices[j]);
        ex.values.push_back(block.values[j]);
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::string stacked_record_line(const StackedExample& ex) {
  std::string line = "{\"id\":" + json(ex.video_id).dump() + ",\"labels\":[";
  for (std::size_t i = 0; i < ex.labels.size(); ++i) {
    if (i > 0) line += ',';
    line += std::to_string(ex.labels[i]);
  }
  line += "],\"indices\":[";
  for (std::size_t i = 0; i < ex.indices.size(); ++i) {
    if (i > 0) line += ',';
    line += std::to_string(ex.indices[i]);
  }
  line += "],\"values\":[";
  for (std::size_t i = 0; i < ex.values.size(); ++i) {
    if (i > 0) line += ',';
    line += recordio::format_double(ex.values[i], "%.9g");
  }
  line += "]}";
  return line;
}

void check_stacked_example(const StackedExample& ex, int vocab, int dim, const std::string& what) {
  std::vector<int> labels = ex.labels;
  if (normalize_labels(labels) != ex.labels) {
    throw FormatError(what + ": labels must be sorted and unique");
  }
  if (!ex.labels.empty() && (ex.labels.front() < 0 || ex.labels.back() >= vocab)) {
    throw FormatError(what + ": label outside [0, vocab)");
  }
  if (ex.indices.size() != ex.values.size()) {
    throw FormatError(what + ": index/value length mismatch");
  }
  for (std::size_t j = 0; j < ex.indices.size(); ++j) {
    if (ex.indices[j] < 0 || ex.indices[j] >= dim) {
      throw FormatError(what + ": feature index outside [0, vocab*blocks)");
    }
    if (j > 0 && ex.indices[j] <= ex.indices[j - 1]) {
      throw FormatError(what + ": feature indices must be strictly ascending");
    }
    if (!(ex.values[j] > 0.0) || ex.values[j] > 1.0) {
      throw FormatError(what + ": feature values must lie in (0, 1]");
    }
  }
}

json member_json(const EnsembleMember& m) {
  return json{{"path", m.path}, {"weight", m.weight}};
}

}  // namespace

SparseStackFeature expand_topk(const PredictionList& pred, const Vocabulary& vocab) {
  if (!pairs_canonical(pred.pairs)) {
    throw InvalidArgument("expand_topk: prediction pairs for " + pred.video_id +
                          " are not in canonical order");
  }
  std::vector<PredictionPair> by_label = pred.pairs;
  std::sort(by_label.begin(), by_label.end(),
            [](const PredictionPair& a, const PredictionPair& b) { return a.label < b.label; });
  SparseStackFeature feature;
  feature.indices.reserve(by_label.size());
  feature.values.reserve(by_label.size());
  for (std::size_t j = 0; j < by_label.size(); ++j) {
    const auto& pair = by_label[j];
    if (pair.label < 0 || pair.label >= vocab.size) {
      throw InvalidArgument("expand_topk: label " + std::to_string(pair.label) +
                            " outside vocabulary of size " + std::to_string(vocab.size));
    }
    if (j > 0 && pair.label == by_label[j - 1].label) {
      throw InvalidArgument("expand_topk: duplicate label " + std::to_string(pair.label));
    }
    if (pair.confidence < 0.0 || pair.confidence > 1.0 || !std::isfinite(pair.confidence)) {
      throw InvalidArgument("expand_topk: confidence outside [0, 1]");
    }
    if (pair.confidence == 0.0) continue;  // equal to the implicit default
    feature.indices.push_back(pair.label);
    feature.values.push_back(pair.confidence);
  }
  return feature;
}

Eigen::VectorXd densify(const SparseStackFeature& feature, int dim) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  for (std::size_t j = 0; j < feature.indices.size(); ++j) {
    if (feature.indices[j] < 0 || feature.indices[j] >= dim) {
      throw InvalidArgument("densify: index outside [0, dim)");
    }
    x(feature.indices[j]) = feature.values[j];
  }
  return x;
}

StackedDataset build_stacked_dataset(const std::vector<std::string>& base_files,
                                     const GroundTruth& truth, const Vocabulary& vocab) {
  StackedDataset ds;
  ds.vocab = vocab.size;
  ds.blocks = static_cast<int>(base_files.size());
  ds.examples = join_blocks(base_files, vocab);

  std::set<std::string> uncovered;
  for (auto& ex : ds.examples) {
    auto it = truth.find(ex.video_id);
    if (it == truth.end()) {
      uncovered.insert(ex.video_id);
      continue;
    }
    ex.labels = it->second;
  }
  if (!uncovered.empty()) {
    throw FormatError("build_stacked_dataset: truth is missing video ids: " +
                      id_list(uncovered, 10));
  }
  return ds;
}

void write_stacked_dataset(const std::string& path, const StackedDataset& dataset) {
  if (dataset.vocab <= 0 || dataset.blocks <= 0) {
    throw InvalidArgument("write_stacked_dataset: vocab and blocks must be positive");
  }
  std::string content =
      "{\"vocab\":" + std::to_string(dataset.vocab) +
      ",\"blocks\":" + std::to_string(dataset.blocks) + "}\n";
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto& ex = dataset.examples[i];
    check_stacked_example(ex, dataset.vocab, dataset.dim(),
                          "stacked example " + std::to_string(i));
    content += stacked_record_line(ex);
    content += '\n';
  }
  recordio::atomic_write_text(path, content);
}

StackedDataset read_stacked_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;

  auto parse_line = [&](const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed JSON");
    }
    return j;
  };

  if (!std::getline(in, line)) throw ParseError(path + ": missing header line");
  ++line_no;
  json header = parse_line(line);
  require_keys(header, {"vocab", "blocks"}, {}, path + ": header");
  StackedDataset ds;
  try {
    ds.vocab = header.at("vocab").get<int>();
    ds.blocks = header.at("blocks").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": header: " + e.what());
  }
  if (ds.vocab <= 0 || ds.blocks <= 0) {
    throw FormatError(path + ": header vocab/blocks must be positive");
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(line);
    const std::string what = path + ":" + std::to_string(line_no);
    require_keys(j, {"id", "labels", "indices", "values"}, {}, what);
    StackedExample ex;
    try {
      ex.video_id = j.at("id").get<std::string>();
      ex.labels = j.at("labels").get<std::vector<int>>();
      ex.indices = j.at("indices").get<std::vector<int>>();
      ex.values = j.at("values").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw FormatError(what + ": " + e.what());
    }
    check_stacked_example(ex, ds.vocab, ds.dim(), what);
    ds.examples.push_back(std::move(ex));
  }
  if (in.bad()) throw IoError("read error on " + path);
  return ds;
}

StackerKind stacker_from_string(const std::string& name) {
  if (name == "logistic") return StackerKind::logistic;
  if (name == "moe") return StackerKind::moe;
  throw InvalidArgument("unknown stacker kind '" + name + "' (want logistic or moe)");
}

const char* to_string(StackerKind kind) {
  return kind == StackerKind::logistic ? "logistic" : "moe";
}

BlendModel blend_fit(const StackedDataset& holdout, StackerKind kind,
                     const linear::TrainConfig& cfg, linear::TrainTrace* trace) {
  if (holdout.examples.empty()) throw InvalidArgument("blend_fit: empty stacked dataset");
  linear::SparseFeatures x(holdout.dim());
  linear::LabelSets y;
  y.reserve(holdout.examples.size());
  for (const auto& ex : holdout.examples) {
    x.add_row(ex.indices, ex.values);
    y.push_back(ex.labels);
  }

  BlendModel model;
  model.kind = kind;
  model.vocab = holdout.vocab;
  model.blocks = holdout.blocks;
  if (kind == StackerKind::logistic) {
    model.logistic = linear::logistic_train_features(x, y, holdout.vocab, cfg, trace);
  } else {
    model.moe = linear::moe_train_features(x, y, holdout.vocab, cfg, trace);
  }
  return model;
}

Eigen::VectorXd blend_scores(const BlendModel& model, const StackedExample& example) {
  const int dim = model.vocab * model.blocks;
  SparseStackFeature feature{example.indices, example.values};
  Eigen::VectorXd x = densify(feature, dim);
  if (model.kind == StackerKind::logistic) {
    if (model.logistic.dim() != dim) {
      throw InvalidArgument("blend_scores: stacker dimension mismatch");
    }
    return linear::logistic_predict(model.logistic, x);
  }
  if (model.moe.dim() != dim) throw InvalidArgument("blend_scores: stacker dimension mismatch");
  return linear::moe_predict(model.moe, x);
}

std::vector<PredictionList> blend_predict(const BlendModel& model,
                                          const std::vector<std::string>& test_base_files,
                                          int k_out) {
  if (static_cast<int>(test_base_files.size()) != model.blocks) {
    throw InvalidArgument("blend_predict: got " + std::to_string(test_base_files.size()) +
                          " base files for a stacker fitted on " +
                          std::to_string(model.blocks) + " blocks");
  }
  Vocabulary vocab{model.vocab};
  std::vector<StackedExample> joined = join_blocks(test_base_files, vocab);
  std::vector<PredictionList> rows;
  rows.reserve(joined.size());
  for (const auto& ex : joined) {
    PredictionList row;
    row.video_id = ex.video_id;
    row.pairs = top_k(blend_scores(model, ex), k_out);
    rows.push_back(std::move(row));
  }
  return rows;
}

recordio::ModelFile to_model_file(const BlendModel& model) {
  recordio::ModelFile file;
  file.kind = to_string(model.kind);
  file.vocab_size = model.vocab;
  file.config = json{{"stacker_blocks", model.blocks}, {"stacker_bases", model.base_names}};
  if (model.kind == StackerKind::logistic) {
    file.params = model.logistic;
  } else {
    file.params = model.moe;
  }
  return file;
}

BlendModel blend_model_from_file(const recordio::ModelFile& file) {
  BlendModel model;
  model.kind = stacker_from_string(file.kind);
  model.vocab = file.vocab_size;
  if (!file.config.contains("stacker_blocks")) {
    throw FormatError("model file is not a stacker: missing stacker_blocks in config");
  }
  try {
    model.blocks = file.config.at("stacker_blocks").get<int>();
    if (file.config.contains("stacker_bases")) {
      model.base_names = file.config.at("stacker_bases").get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("stacker config: ") + e.what());
  }
  if (model.blocks <= 0) throw FormatError("stacker config: blocks must be positive");
  const int dim = model.vocab * model.blocks;
  if (model.kind == StackerKind::logistic) {
    model.logistic = file.logistic();
    if (model.logistic.dim() != dim) throw FormatError("stacker dimension mismatch");
  } else {
    model.moe = file.moe();
    if (model.moe.dim() != dim) throw FormatError("stacker dimension mismatch");
  }
  return model;
}

void EnsembleConfig::validate() const {
  if (members.empty()) throw InvalidArgument("ensemble config needs at least one member");
  for (const auto& m : members) {
    if (m.path.empty()) throw InvalidArgument("ensemble member has an empty path");
    if (!std::isfinite(m.weight) || m.weight <= 0.0) {
      throw InvalidArgument("ensemble member weight must be finite and positive: " + m.path);
    }
  }
  if (k_out < 1) throw InvalidArgument("ensemble k_out must be at least 1");
}

EnsembleConfig load_ensemble_config(const std::string& path) {
  json j = recordio::load_json(path);
  require_keys(j, {"members"}, {"k_out"}, path);
  if (!j.at("members").is_array()) throw FormatError(path + ": members must be an array");

  const std::filesystem::path base_dir = std::filesystem::path(path).parent_path();
  EnsembleConfig config;
  try {
    for (const auto& mj : j.at("members")) {
      require_keys(mj, {"path"}, {"weight"}, path + ": member");
      EnsembleMember m;
      m.path = mj.at("path").get<std::string>();
      if (mj.contains("weight")) m.weight = mj.at("weight").get<double>();
      if (std::filesystem::path(m.path).is_relative()) {
        m.path = (base_dir / m.path).string();
      }
      config.members.push_back(std::move(m));
    }
    if (j.contains("k_out")) config.k_out = j.at("k_out").get<int>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  config.validate();
  return config;
}

std::vector<PredictionList> weighted_average(const EnsembleConfig& config) {
  config.validate();

  // Coalesce repeated paths by adding weights; each file then contributes a
  // single w*conf term, which makes duplicate-listing and weight doubling
  // bitwise identical.
  std::vector<EnsembleMember> members;
  std::map<std::string, std::size_t> seen;
  for (const auto& m : config.members) {
    auto it = seen.find(m.path);
    if (it == seen.end()) {
      seen.emplace(m.path, members.size());
      members.push_back(m);
    } else {
      members[it->second].weight += m.weight;
    }
  }

  double total_weight = 0.0;
  for (const auto& m : members) total_weight += m.weight;

  std::map<std::string, std::map<int, double>> sums;
  for (const auto& m : members) {
    std::map<std::string, PredictionList> rows = load_prediction_map(m.path);
    for (const auto& [id, row] : rows) {
      auto& per_label = sums[id];
      for (const auto& pair : row.pairs) {
        per_label[pair.label] += m.weight * pair.confidence;
      }
    }
  }

  std::vector<PredictionList> out;
  out.reserve(sums.size());
  for (const auto& [id, per_label] : sums) {
    std::vector<PredictionPair> pairs;
    pairs.reserve(per_label.size());
    for (const auto& [label, sum] : per_label) {
      const double merged = sum / total_weight;
      if (merged == 0.0) continue;
      pairs.push_back({label, merged});
    }
    std::sort(pairs.begin(), pairs.end(), [](const PredictionPair& a, const PredictionPair& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      return a.label < b.label;
    });
    if (static_cast<int>(pairs.size()) > config.k_out) pairs.resize(config.k_out);
    out.push_back({id, std::move(pairs)});
  }
  return out;
}

std::vector<PredictionList> run_strategy(const std::string& name_or_path) {
  std::string path = name_or_path;
  if (name_or_path.size() == 1) {
    const char c = name_or_path[0];
    if (c >= 'A' && c <= 'E') {
      path = std::string("configs/strategy_") + static_cast<char>(c - 'A' + 'a') + ".cfg";
    } else if (c >= 'a' && c <= 'e') {
      path = std::string("configs/strategy_") + c + ".cfg";
    } else {
      throw InvalidArgument("unknown strategy '" + name_or_path + "' (want A..E or a path)");
    }
  }
  return weighted_average(load_ensemble_config(path));
}

}  // namespace vle::ensemble
