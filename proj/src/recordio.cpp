#include "vle/recordio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "vle/errors.hpp"

namespace vle::recordio {

namespace {

using nlohmann::json;

std::string line_tag(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line);
}

json parse_record(const std::string& path, std::size_t line, const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(line_tag(path, line) + ": " + e.what());
  }
}

void require_keys(const json& j, const std::vector<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": record is not a JSON object");
  for (const auto& key : keys) {
    if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw FormatError(where + ": unexpected key '" + key + "'");
    }
  }
}

std::string parse_video_id(const json& j, const std::string& where) {
  const auto& v = j.at("video_id");
  if (!v.is_string()) throw FormatError(where + ": video_id must be a string");
  std::string id = v.get<std::string>();
  if (id.empty()) throw FormatError(where + ": video_id must be non-empty");
  return id;
}

std::vector<int> parse_labels(const json& j, const std::string& where) {
  const auto& v = j.at("labels");
  if (!v.is_array()) throw FormatError(where + ": labels must be an array");
  std::vector<int> labels;
  labels.reserve(v.size());
  for (const auto& item : v) {
    if (!item.is_number_integer()) throw FormatError(where + ": labels must be integers");
    const auto wide = item.get<std::int64_t>();
    if (wide < 0 || wide > std::numeric_limits<int>::max()) {
      throw FormatError(where + ": label out of range");
    }
    labels.push_back(static_cast<int>(wide));
  }
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] <= labels[i - 1]) {
      throw FormatError(where + ": labels must be sorted and unique");
    }
  }
  return labels;
}

Eigen::VectorXd parse_feature_array(const json& v, const std::string& where,
                                    const std::string& key) {
  if (!v.is_array()) throw FormatError(where + ": " + key + " must be an array");
  if (v.empty()) throw FormatError(where + ": " + key + " must be non-empty");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (const auto& item : v) {
    if (!item.is_number()) throw FormatError(where + ": " + key + " must contain numbers");
    out(i++) = item.get<double>();
  }
  return out;
}

void append_real(std::string& out, double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  out += buf;
}

void append_real_array(std::string& out, const Eigen::VectorXd& v, const char* fmt) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    append_real(out, v(i), fmt);
  }
  out += ']';
}

void append_labels(std::string& out, const std::vector<int>& labels) {
  out += '[';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(labels[i]);
  }
  out += ']';
}

constexpr const char* kDatasetReal = "%.9g";

void check_labels_sorted(const std::vector<int>& labels, const std::string& where) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw FormatError(where + ": negative label");
    if (i > 0 && labels[i] <= labels[i - 1]) {
      throw FormatError(where + ": labels must be sorted and unique");
    }
  }
}

void check_finite(const Eigen::VectorXd& v, const std::string& where) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v(i))) throw FormatError(where + ": non-finite value");
  }
}

std::string video_record_line(const VideoExample& ex) {
  std::string out = "{\"video_id\":";
  out += json(ex.video_id).dump();
  out += ",\"labels\":";
  append_labels(out, ex.labels);
  out += ",\"mean_rgb\":";
  append_real_array(out, ex.mean_rgb, kDatasetReal);
  out += ",\"mean_audio\":";
  append_real_array(out, ex.mean_audio, kDatasetReal);
  out += "}";
  return out;
}

std::string frame_record_line(const FrameExample& ex) {
  std::string out = "{\"video_id\":";
  out += json(ex.video_id).dump();
  out += ",\"labels\":";
  append_labels(out, ex.labels);
  out += ",\"rgb\":[";
  for (std::size_t j = 0; j < ex.rgb.size(); ++j) {
    if (j > 0) out += ',';
    append_real_array(out, ex.rgb[j], kDatasetReal);
  }
  out += "],\"audio\":[";
  for (std::size_t j = 0; j < ex.audio.size(); ++j) {
    if (j > 0) out += ',';
    append_real_array(out, ex.audio[j], kDatasetReal);
  }
  out += "]}";
  return out;
}

std::vector<Eigen::VectorXd> parse_frame_rows(const json& v, const std::string& where,
                                              const std::string& key) {
  if (!v.is_array()) throw FormatError(where + ": " + key + " must be an array of arrays");
  if (v.empty()) throw FormatError(where + ": " + key + " must contain at least one frame");
  if (v.size() > static_cast<std::size_t>(kMaxFrames)) {
    throw FormatError(where + ": " + key + " exceeds " + std::to_string(kMaxFrames) + " frames");
  }
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(v.size());
  for (const auto& item : v) {
    rows.push_back(parse_feature_array(item, where, key));
    if (rows.back().size() != rows.front().size()) {
      throw FormatError(where + ": " + key + " rows must share one dimension");
    }
  }
  return rows;
}

VideoExample video_from_json(const json& j, const std::string& where) {
  require_keys(j, {"video_id", "labels", "mean_rgb", "mean_audio"}, where);
  VideoExample ex;
  ex.video_id = parse_video_id(j, where);
  ex.labels = parse_labels(j, where);
  ex.mean_rgb = parse_feature_array(j.at("mean_rgb"), where, "mean_rgb");
  ex.mean_audio = parse_feature_array(j.at("mean_audio"), where, "mean_audio");
  return ex;
}

FrameExample frame_from_json(const json& j, const std::string& where) {
  require_keys(j, {"video_id", "labels", "rgb", "audio"}, where);
  FrameExample ex;
  ex.video_id = parse_video_id(j, where);
  ex.labels = parse_labels(j, where);
  ex.rgb = parse_frame_rows(j.at("rgb"), where, "rgb");
  ex.audio = parse_frame_rows(j.at("audio"), where, "audio");
  if (ex.rgb.size() != ex.audio.size()) {
    throw FormatError(where + ": rgb and audio must have the same frame count");
  }
  return ex;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

}  // namespace

void atomic_write_text(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("failed renaming " + tmp + " to " + path + ": " + ec.message());
}

std::string read_text(const std::string& path) {
  std::ifstream in = open_input(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path);
  return buf.str();
}

nlohmann::json load_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string matrix_json(const Eigen::MatrixXd& m, const char* fmt) {
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r > 0) out += ',';
    out += '[';
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ',';
      if (!std::isfinite(m(r, c))) throw FormatError("matrix_json: non-finite value");
      append_real(out, m(r, c), fmt);
    }
    out += ']';
  }
  out += ']';
  return out;
}

std::string vector_json(const Eigen::VectorXd& v, const char* fmt) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    if (!std::isfinite(v(i))) throw FormatError("vector_json: non-finite value");
    append_real(out, v(i), fmt);
  }
  out += ']';
  return out;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw FormatError(what + ": expected a non-empty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  Eigen::MatrixXd m;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.empty()) throw FormatError(what + ": rows must be non-empty arrays");
    if (r == 0) {
      cols = row.size();
      m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      throw FormatError(what + ": ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw FormatError(what + ": entries must be numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& item : j) {
    if (!item.is_number()) throw FormatError(what + ": entries must be numbers");
    v(i++) = item.get<double>();
  }
  return v;
}

VideoDatasetReader::VideoDatasetReader(const std::string& path)
    : path_(path), in_(open_input(path)) {}

std::optional<VideoExample> VideoDatasetReader::next() {
  std::string text;
  if (!std::getline(in_, text)) {
    if (in_.bad()) throw IoError("failed reading " + path_);
    return std::nullopt;
  }
  ++line_;
  const json j = parse_record(path_, line_, text);
  return video_from_json(j, line_tag(path_, line_));
}

FrameDatasetReader::FrameDatasetReader(const std::string& path)
    : path_(path), in_(open_input(path)) {}

std::optional<FrameExample> FrameDatasetReader::next() {
  std::string text;
  if (!std::getline(in_, text)) {
    if (in_.bad()) throw IoError("failed reading " + path_);
    return std::nullopt;
  }
  ++line_;
  const json j = parse_record(path_, line_, text);
  return frame_from_json(j, line_tag(path_, line_));
}

std::vector<VideoExample> read_video_dataset(const std::string& path) {
  VideoDatasetReader reader(path);
  std::vector<VideoExample> out;
  while (auto ex = reader.next()) out.push_back(std::move(*ex));
  return out;
}

std::vector<FrameExample> read_frame_dataset(const std::string& path) {
  FrameDatasetReader reader(path);
  std::vector<FrameExample> out;
  while (auto ex = reader.next()) out.push_back(std::move(*ex));
  return out;
}

void write_video_dataset(const std::string& path, const std::vector<VideoExample>& examples) {
  std::string content;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const std::string where = path + ": example " + std::to_string(i);
    if (ex.video_id.empty()) throw FormatError(where + ": empty video_id");
    check_labels_sorted(ex.labels, where);
    if (ex.mean_rgb.size() == 0 || ex.mean_audio.size() == 0) {
      throw FormatError(where + ": empty feature vector");
    }
    if (ex.mean_rgb.size() != examples.front().mean_rgb.size() ||
        ex.mean_audio.size() != examples.front().mean_audio.size()) {
      throw FormatError(where + ": inconsistent feature dimensions");
    }
    check_finite(ex.mean_rgb, where);
    check_finite(ex.mean_audio, where);
    content += video_record_line(ex);
    content += '\n';
  }
  atomic_write_text(path, content);
}

void write_frame_dataset(const std::string& path, const std::vector<FrameExample>& examples) {
  std::string content;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const std::string where = path + ": example " + std::to_string(i);
    if (ex.video_id.empty()) throw FormatError(where + ": empty video_id");
    check_labels_sorted(ex.labels, where);
    if (ex.rgb.empty() || ex.rgb.size() != ex.audio.size()) {
      throw FormatError(where + ": rgb and audio must be non-empty with equal frame counts");
    }
    if (ex.rgb.size() > static_cast<std::size_t>(kMaxFrames)) {
      throw FormatError(where + ": more than " + std::to_string(kMaxFrames) + " frames");
    }
    for (const auto& seq : {&ex.rgb, &ex.audio}) {
      for (const auto& frame : *seq) {
        if (frame.size() == 0) throw FormatError(where + ": empty frame vector");
        if (frame.size() != (*seq).front().size()) {
          throw FormatError(where + ": inconsistent frame dimensions");
        }
        check_finite(frame, where);
      }
    }
    if (ex.rgb.front().size() != examples.front().rgb.front().size() ||
        ex.audio.front().size() != examples.front().audio.front().size()) {
      throw FormatError(where + ": inconsistent feature dimensions");
    }
    content += frame_record_line(ex);
    content += '\n';
  }
  atomic_write_text(path, content);
}

const char* to_string(DatasetLevel level) {
  return level == DatasetLevel::video ? "video" : "frame";
}

DatasetLevel detect_level(const std::string& path) {
  std::ifstream in = open_input(path);
  std::string text;
  if (!std::getline(in, text)) throw FormatError(path + ": empty dataset");
  const json j = parse_record(path, 1, text);
  if (!j.is_object()) throw FormatError(path + ":1: record is not a JSON object");
  if (j.contains("mean_rgb")) return DatasetLevel::video;
  if (j.contains("rgb")) return DatasetLevel::frame;
  throw FormatError(path + ":1: record matches neither video nor frame level");
}

void write_predictions(const std::string& path, const std::vector<PredictionList>& rows, int k) {
  if (k < 1) throw InvalidArgument("write_predictions: k must be >= 1");
  std::string content = kPredictionHeader;
  content += '\n';
  std::set<std::string> seen;
  for (const auto& row : rows) {
    if (row.video_id.empty()) throw FormatError(path + ": empty video_id");
    if (!seen.insert(row.video_id).second) {
      throw FormatError(path + ": duplicate video id " + row.video_id);
    }
    if (!pairs_canonical(row.pairs)) {
      throw InvalidArgument(path + ": pairs for " + row.video_id + " are not in canonical order");
    }
    std::set<int> labels;
    for (const auto& pair : row.pairs) {
      if (pair.label < 0) throw InvalidArgument(path + ": negative label for " + row.video_id);
      if (!labels.insert(pair.label).second) {
        throw InvalidArgument(path + ": duplicate label for " + row.video_id);
      }
      if (!std::isfinite(pair.confidence) || pair.confidence < 0.0 || pair.confidence > 1.0) {
        throw InvalidArgument(path + ": confidence out of [0,1] for " + row.video_id);
      }
    }
    content += row.video_id;
    content += ',';
    const std::size_t keep = std::min(row.pairs.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < keep; ++i) {
      if (i > 0) content += ' ';
      content += std::to_string(row.pairs[i].label);
      content += ' ';
      append_real(content, row.pairs[i].confidence, "%.6f");
    }
    content += '\n';
  }
  atomic_write_text(path, content);
}

ParsedPredictions parse_predictions(const std::string& path) {
  std::ifstream in = open_input(path);
  std::string text;
  std::size_t line = 0;
  auto next_line = [&](std::string& out) {
    if (!std::getline(in, out)) {
      if (in.bad()) throw IoError("failed reading " + path);
      return false;
    }
    ++line;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  };

  if (!next_line(text)) throw FormatError(path + ": missing header");
  if (text != kPredictionHeader) {
    throw FormatError(path + ":1: expected header '" + std::string(kPredictionHeader) + "'");
  }

  ParsedPredictions parsed;
  std::set<std::string> seen;
  while (next_line(text)) {
    if (text.empty()) throw ParseError(line_tag(path, line) + ": empty row");
    const std::size_t comma = text.find(',');
    if (comma == std::string::npos) {
      throw ParseError(line_tag(path, line) + ": missing comma");
    }
    PredictionList row;
    row.video_id = text.substr(0, comma);
    if (row.video_id.empty()) throw FormatError(line_tag(path, line) + ": empty video_id");
    if (!seen.insert(row.video_id).second) {
      throw FormatError(line_tag(path, line) + ": duplicate video id " + row.video_id);
    }

    std::istringstream pairs(text.substr(comma + 1));
    std::vector<std::string> tokens;
    std::string token;
    while (pairs >> token) tokens.push_back(token);
    if (tokens.size() % 2 != 0) {
      throw ParseError(line_tag(path, line) + ": odd token count for " + row.video_id);
    }
    std::set<int> labels;
    for (std::size_t i = 0; i < tokens.size(); i += 2) {
      char* end = nullptr;
      const long label = std::strtol(tokens[i].c_str(), &end, 10);
      if (end == tokens[i].c_str() || *end != '\0' || label < 0 ||
          label > std::numeric_limits<int>::max()) {
        throw ParseError(line_tag(path, line) + ": bad label '" + tokens[i] + "'");
      }
      const double conf = std::strtod(tokens[i + 1].c_str(), &end);
      if (end == tokens[i + 1].c_str() || *end != '\0') {
        throw ParseError(line_tag(path, line) + ": bad confidence '" + tokens[i + 1] + "'");
      }
      if (!std::isfinite(conf) || conf < 0.0 || conf > 1.0) {
        throw FormatError(line_tag(path, line) + ": confidence out of [0,1]");
      }
      if (!labels.insert(static_cast<int>(label)).second) {
        throw FormatError(line_tag(path, line) + ": duplicate label " + tokens[i]);
      }
      row.pairs.push_back(PredictionPair{static_cast<int>(label), conf});
    }
    if (!pairs_canonical(row.pairs)) {
      canonicalize_pairs(row.pairs);
      ++parsed.reorder_warnings;
    }
    parsed.rows.push_back(std::move(row));
  }
  return parsed;
}

namespace {

constexpr const char* kModelReal = "%.17g";

const char* kind_for_params(const ModelFile& model) {
  struct Visitor {
    const char* operator()(const linear::LogisticParams&) const { return "logistic"; }
    const char* operator()(const linear::MoeParams&) const { return "moe"; }
    const char* operator()(const framelevel::DbofParams&) const { return "dbof"; }
    const char* operator()(const framelevel::LstmParams&) const { return "lstm"; }
  };
  return std::visit(Visitor{}, model.params);
}

bool kind_matches(const std::string& kind, const ModelFile& model) {
  const std::string held = kind_for_params(model);
  if (kind == "frame_logistic") return held == "logistic";
  return kind == held;
}

void append_kv(std::string& out, const char* key, const std::string& value) {
  out += '"';
  out += key;
  out += "\":";
  out += value;
}

std::string weights_json(const linear::LogisticParams& p) {
  std::string out = "{";
  append_kv(out, "weights", matrix_json(p.weights, kModelReal));
  out += ',';
  append_kv(out, "biases", vector_json(p.biases, kModelReal));
  out += ',';
  append_kv(out, "lambda", format_double(p.lambda, kModelReal));
  out += '}';
  return out;
}

std::string weights_json(const linear::MoeParams& p) {
  std::string out = "{";
  append_kv(out, "gate_weights", matrix_json(p.gate_weights, kModelReal));
  out += ',';
  append_kv(out, "gate_biases", vector_json(p.gate_biases, kModelReal));
  out += ',';
  append_kv(out, "expert_weights", matrix_json(p.expert_weights, kModelReal));
  out += ',';
  append_kv(out, "expert_biases", vector_json(p.expert_biases, kModelReal));
  out += ',';
  append_kv(out, "lambda", format_double(p.lambda, kModelReal));
  out += '}';
  return out;
}

std::string weights_json(const framelevel::DbofParams& p) {
  std::string out = "{";
  append_kv(out, "up_weights", matrix_json(p.up_weights, kModelReal));
  out += ',';
  append_kv(out, "up_biases", vector_json(p.up_biases, kModelReal));
  out += ',';
  append_kv(out, "cls_weights", matrix_json(p.cls_weights, kModelReal));
  out += ',';
  append_kv(out, "cls_biases", vector_json(p.cls_biases, kModelReal));
  out += ',';
  append_kv(out, "lambda", format_double(p.lambda, kModelReal));
  out += '}';
  return out;
}

std::string weights_json(const framelevel::LstmParams& p) {
  std::string out = "{\"layers\":[";
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    if (l > 0) out += ',';
    out += '{';
    append_kv(out, "w_xi", matrix_json(layer.w_xi, kModelReal)); out += ',';
    append_kv(out, "w_hi", matrix_json(layer.w_hi, kModelReal)); out += ',';
    append_kv(out, "w_ci", vector_json(layer.w_ci, kModelReal)); out += ',';
    append_kv(out, "b_i", vector_json(layer.b_i, kModelReal)); out += ',';
    append_kv(out, "w_xf", matrix_json(layer.w_xf, kModelReal)); out += ',';
    append_kv(out, "w_hf", matrix_json(layer.w_hf, kModelReal)); out += ',';
    append_kv(out, "w_cf", vector_json(layer.w_cf, kModelReal)); out += ',';
    append_kv(out, "b_f", vector_json(layer.b_f, kModelReal)); out += ',';
    append_kv(out, "w_xc", matrix_json(layer.w_xc, kModelReal)); out += ',';
    append_kv(out, "w_hc", matrix_json(layer.w_hc, kModelReal)); out += ',';
    append_kv(out, "b_c", vector_json(layer.b_c, kModelReal)); out += ',';
    append_kv(out, "w_xo", matrix_json(layer.w_xo, kModelReal)); out += ',';
    append_kv(out, "w_ho", matrix_json(layer.w_ho, kModelReal)); out += ',';
    append_kv(out, "w_co", vector_json(layer.w_co, kModelReal)); out += ',';
    append_kv(out, "b_o", vector_json(layer.b_o, kModelReal));
    out += '}';
  }
  out += "],";
  append_kv(out, "cls_weights", matrix_json(p.cls_weights, kModelReal));
  out += ',';
  append_kv(out, "lambda", format_double(p.lambda, kModelReal));
  out += '}';
  return out;
}

std::string dims_json(const ModelFile& model) {
  struct Visitor {
    std::string operator()(const linear::LogisticParams& p) const {
      return "{\"dim\":" + std::to_string(p.dim()) + "}";
    }
    std::string operator()(const linear::MoeParams& p) const {
      return "{\"dim\":" + std::to_string(p.dim()) +
             ",\"experts\":" + std::to_string(p.experts) + "}";
    }
    std::string operator()(const framelevel::DbofParams& p) const {
      return "{\"dim\":" + std::to_string(p.dim()) +
             ",\"up_width\":" + std::to_string(p.up_width()) + "}";
    }
    std::string operator()(const framelevel::LstmParams& p) const {
      return "{\"dim\":" + std::to_string(p.input_dim()) +
             ",\"hidden\":" + std::to_string(p.hidden()) +
             ",\"layers\":" + std::to_string(p.layers.size()) + "}";
    }
  };
  return std::visit(Visitor{}, model.params);
}

int params_vocab(const ModelFile& model) {
  struct Visitor {
    int operator()(const linear::LogisticParams& p) const { return p.vocab(); }
    int operator()(const linear::MoeParams& p) const { return p.vocab(); }
    int operator()(const framelevel::DbofParams& p) const { return p.vocab(); }
    int operator()(const framelevel::LstmParams& p) const { return p.vocab(); }
  };
  return std::visit(Visitor{}, model.params);
}

double read_lambda(const json& weights, const std::string& where) {
  if (!weights.contains("lambda") || !weights.at("lambda").is_number()) {
    throw FormatError(where + ": missing numeric lambda");
  }
  const double lambda = weights.at("lambda").get<double>();
  if (lambda < 0.0 || !std::isfinite(lambda)) throw FormatError(where + ": bad lambda");
  return lambda;
}

int dim_field(const json& dims, const char* key, const std::string& where) {
  if (!dims.contains(key) || !dims.at(key).is_number_integer()) {
    throw FormatError(where + ": dims missing integer '" + std::string(key) + "'");
  }
  const auto v = dims.at(key).get<std::int64_t>();
  if (v < 1 || v > std::numeric_limits<int>::max()) {
    throw FormatError(where + ": dims '" + std::string(key) + "' out of range");
  }
  return static_cast<int>(v);
}

void check_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                 const std::string& what, const std::string& where) {
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError(where + ": " + what + " has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
}

void check_length(const Eigen::VectorXd& v, Eigen::Index n, const std::string& what,
                  const std::string& where) {
  if (v.size() != n) {
    throw FormatError(where + ": " + what + " has length " + std::to_string(v.size()) +
                      ", expected " + std::to_string(n));
  }
}

}  // namespace

const linear::LogisticParams& ModelFile::logistic() const {
  if (const auto* p = std::get_if<linear::LogisticParams>(&params)) return *p;
  throw KindMismatchError("model holds kind '" + kind + "', not logistic parameters");
}

const linear::MoeParams& ModelFile::moe() const {
  if (const auto* p = std::get_if<linear::MoeParams>(&params)) return *p;
  throw KindMismatchError("model holds kind '" + kind + "', not moe parameters");
}

const framelevel::DbofParams& ModelFile::dbof() const {
  if (const auto* p = std::get_if<framelevel::DbofParams>(&params)) return *p;
  throw KindMismatchError("model holds kind '" + kind + "', not dbof parameters");
}

const framelevel::LstmParams& ModelFile::lstm() const {
  if (const auto* p = std::get_if<framelevel::LstmParams>(&params)) return *p;
  throw KindMismatchError("model holds kind '" + kind + "', not lstm parameters");
}

void save_model(const std::string& path, const ModelFile& model) {
  if (!kind_matches(model.kind, model)) {
    throw KindMismatchError("save_model: kind '" + model.kind +
                            "' does not match the held parameters");
  }
  if (model.vocab_size != params_vocab(model)) {
    throw FormatError("save_model: vocab_size " + std::to_string(model.vocab_size) +
                      " does not match parameters (" + std::to_string(params_vocab(model)) + ")");
  }

  std::string out = "{\n";
  append_kv(out, "kind", json(model.kind).dump());
  out += ",\n";
  append_kv(out, "vocab_size", std::to_string(model.vocab_size));
  out += ",\n";
  append_kv(out, "dims", dims_json(model));
  out += ",\n";
  append_kv(out, "config", model.config.dump());
  out += ",\n";
  struct Visitor {
    std::string operator()(const linear::LogisticParams& p) const { return weights_json(p); }
    std::string operator()(const linear::MoeParams& p) const { return weights_json(p); }
    std::string operator()(const framelevel::DbofParams& p) const { return weights_json(p); }
    std::string operator()(const framelevel::LstmParams& p) const { return weights_json(p); }
  };
  append_kv(out, "weights", std::visit(Visitor{}, model.params));
  out += "\n}\n";
  atomic_write_text(path, out);
}

ModelFile load_model(const std::string& path) {
  const json j = load_json(path);
  const std::string where = path;
  if (!j.is_object()) throw FormatError(where + ": model file is not a JSON object");
  for (const char* key : {"kind", "vocab_size", "dims", "config", "weights"}) {
    if (!j.contains(key)) throw FormatError(where + ": missing key '" + std::string(key) + "'");
  }
  if (!j.at("kind").is_string()) throw FormatError(where + ": kind must be a string");
  ModelFile model;
  model.kind = j.at("kind").get<std::string>();
  if (!j.at("vocab_size").is_number_integer()) {
    throw FormatError(where + ": vocab_size must be an integer");
  }
  const auto vocab_wide = j.at("vocab_size").get<std::int64_t>();
  if (vocab_wide < 1 || vocab_wide > std::numeric_limits<int>::max()) {
    throw FormatError(where + ": vocab_size out of range");
  }
  model.vocab_size = static_cast<int>(vocab_wide);
  model.config = j.at("config");
  const json& dims = j.at("dims");
  const json& weights = j.at("weights");
  if (!dims.is_object() || !weights.is_object()) {
    throw FormatError(where + ": dims and weights must be objects");
  }
  const int vocab = model.vocab_size;

  try {
  if (model.kind == "logistic" || model.kind == "frame_logistic") {
    const int dim = dim_field(dims, "dim", where);
    linear::LogisticParams p;
    p.weights = matrix_from_json(weights.at("weights"), where + ": weights");
    p.biases = vector_from_json(weights.at("biases"), where + ": biases");
    p.lambda = read_lambda(weights, where);
    check_shape(p.weights, vocab, dim, "weights", where);
    check_length(p.biases, vocab, "biases", where);
    model.params = std::move(p);
  } else if (model.kind == "moe") {
    const int dim = dim_field(dims, "dim", where);
    const int experts = dim_field(dims, "experts", where);
    linear::MoeParams p;
    p.experts = experts;
    p.gate_weights = matrix_from_json(weights.at("gate_weights"), where + ": gate_weights");
    p.gate_biases = vector_from_json(weights.at("gate_biases"), where + ": gate_biases");
    p.expert_weights = matrix_from_json(weights.at("expert_weights"), where + ": expert_weights");
    p.expert_biases = vector_from_json(weights.at("expert_biases"), where + ": expert_biases");
    p.lambda = read_lambda(weights, where);
    check_shape(p.gate_weights, static_cast<Eigen::Index>(vocab) * (experts + 1), dim,
                "gate_weights", where);
    check_length(p.gate_biases, static_cast<Eigen::Index>(vocab) * (experts + 1), "gate_biases",
                 where);
    check_shape(p.expert_weights, static_cast<Eigen::Index>(vocab) * experts, dim,
                "expert_weights", where);
    check_length(p.expert_biases, static_cast<Eigen::Index>(vocab) * experts, "expert_biases",
                 where);
    model.params = std::move(p);
  } else if (model.kind == "dbof") {
    const int dim = dim_field(dims, "dim", where);
    const int up_width = dim_field(dims, "up_width", where);
    framelevel::DbofParams p;
    p.up_weights = matrix_from_json(weights.at("up_weights"), where + ": up_weights");
    p.up_biases = vector_from_json(weights.at("up_biases"), where + ": up_biases");
    p.cls_weights = matrix_from_json(weights.at("cls_weights"), where + ": cls_weights");
    p.cls_biases = vector_from_json(weights.at("cls_biases"), where + ": cls_biases");
    p.lambda = read_lambda(weights, where);
    check_shape(p.up_weights, up_width, dim, "up_weights", where);
    check_length(p.up_biases, up_width, "up_biases", where);
    check_shape(p.cls_weights, vocab, up_width, "cls_weights", where);
    check_length(p.cls_biases, vocab, "cls_biases", where);
    model.params = std::move(p);
  } else if (model.kind == "lstm") {
    const int dim = dim_field(dims, "dim", where);
    const int hidden = dim_field(dims, "hidden", where);
    const int layers = dim_field(dims, "layers", where);
    if (!weights.contains("layers") || !weights.at("layers").is_array() ||
        weights.at("layers").size() != static_cast<std::size_t>(layers)) {
      throw FormatError(where + ": weights.layers must be an array of " + std::to_string(layers));
    }
    framelevel::LstmParams p;
    for (int l = 0; l < layers; ++l) {
      const json& jl = weights.at("layers")[static_cast<std::size_t>(l)];
      const std::string lw = where + ": layer " + std::to_string(l);
      const int in = l == 0 ? dim : hidden;
      framelevel::LstmLayerParams layer;
      layer.w_xi = matrix_from_json(jl.at("w_xi"), lw + " w_xi");
      layer.w_hi = matrix_from_json(jl.at("w_hi"), lw + " w_hi");
      layer.w_ci = vector_from_json(jl.at("w_ci"), lw + " w_ci");
      layer.b_i = vector_from_json(jl.at("b_i"), lw + " b_i");
      layer.w_xf = matrix_from_json(jl.at("w_xf"), lw + " w_xf");
      layer.w_hf = matrix_from_json(jl.at("w_hf"), lw + " w_hf");
      layer.w_cf = vector_from_json(jl.at("w_cf"), lw + " w_cf");
      layer.b_f = vector_from_json(jl.at("b_f"), lw + " b_f");
      layer.w_xc = matrix_from_json(jl.at("w_xc"), lw + " w_xc");
      layer.w_hc = matrix_from_json(jl.at("w_hc"), lw + " w_hc");
      layer.b_c = vector_from_json(jl.at("b_c"), lw + " b_c");
      layer.w_xo = matrix_from_json(jl.at("w_xo"), lw + " w_xo");
      layer.w_ho = matrix_from_json(jl.at("w_ho"), lw + " w_ho");
      layer.w_co = vector_from_json(jl.at("w_co"), lw + " w_co");
      layer.b_o = vector_from_json(jl.at("b_o"), lw + " b_o");
      check_shape(layer.w_xi, hidden, in, "w_xi", lw);
      check_shape(layer.w_hi, hidden, hidden, "w_hi", lw);
      check_shape(layer.w_xf, hidden, in, "w_xf", lw);
      check_shape(layer.w_hf, hidden, hidden, "w_hf", lw);
      check_shape(layer.w_xc, hidden, in, "w_xc", lw);
      check_shape(layer.w_hc, hidden, hidden, "w_hc", lw);
      check_shape(layer.w_xo, hidden, in, "w_xo", lw);
      check_shape(layer.w_ho, hidden, hidden, "w_ho", lw);
      for (const auto* v : {&layer.w_ci, &layer.w_cf, &layer.w_co, &layer.b_i, &layer.b_f,
                            &layer.b_c, &layer.b_o}) {
        check_length(*v, hidden, "gate vector", lw);
      }
      p.layers.push_back(std::move(layer));
    }
    p.cls_weights = matrix_from_json(weights.at("cls_weights"), where + ": cls_weights");
    p.lambda = read_lambda(weights, where);
    check_shape(p.cls_weights, vocab, hidden, "cls_weights", where);
    model.params = std::move(p);
  } else {
    throw FormatError(where + ": unknown model kind '" + model.kind + "'");
  }
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
  return model;
}

}  // namespace vle::recordio
