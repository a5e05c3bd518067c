#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vle/datamodel.hpp"
#include "vle/framelevel.hpp"
#include "vle/linear.hpp"

namespace vle::recordio {

// Writes via a sibling temp file plus rename, so readers never observe a
// partially written file. Throws IoError.
void atomic_write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);
nlohmann::json load_json(const std::string& path);

// Number formatting used across every writer. Datasets round-trip through
// %.9g (nine significant digits); model weights use %.17g so reloaded
// parameters are bit-identical.
std::string format_double(double v, const char* fmt);
std::string matrix_json(const Eigen::MatrixXd& m, const char* fmt = "%.17g");
std::string vector_json(const Eigen::VectorXd& v, const char* fmt = "%.17g");
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& what);
Eigen::VectorXd vector_from_json(const nlohmann::json& j, const std::string& what);

// Streaming JSONL readers. Each record is validated as it is read: malformed
// JSON or a truncated final line raises ParseError naming the line; records
// whose fields break the datamodel invariants raise FormatError naming the
// line. next() returns nullopt at end of file.
class VideoDatasetReader {
 public:
  explicit VideoDatasetReader(const std::string& path);
  std::optional<VideoExample> next();
  std::size_t line_number() const { return line_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_ = 0;
};

class FrameDatasetReader {
 public:
  explicit FrameDatasetReader(const std::string& path);
  std::optional<FrameExample> next();
  std::size_t line_number() const { return line_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_ = 0;
};

std::vector<VideoExample> read_video_dataset(const std::string& path);
std::vector<FrameExample> read_frame_dataset(const std::string& path);

// Writers check structural invariants (sorted unique labels, finite values,
// uniform dimensions, frame-count bounds) before any byte reaches disk.
void write_video_dataset(const std::string& path, const std::vector<VideoExample>& examples);
void write_frame_dataset(const std::string& path, const std::vector<FrameExample>& examples);

enum class DatasetLevel { video, frame };
const char* to_string(DatasetLevel level);

// Peeks at the first record's keys.
DatasetLevel detect_level(const std::string& path);

inline constexpr const char* kPredictionHeader = "VideoId,LabelConfidencePairs";

// CSV rows "id,label conf label conf ...", confidences printed with six
// decimals. Rows keep their given order; pairs must be canonical. Rows are
// truncated to k pairs. Duplicate video ids raise FormatError.
void write_predictions(const std::string& path, const std::vector<PredictionList>& rows,
                       int k = 20);

struct ParsedPredictions {
  std::vector<PredictionList> rows;
  // count of rows whose pairs arrived out of canonical order and were sorted
  int reorder_warnings = 0;
};

ParsedPredictions parse_predictions(const std::string& path);

// A trained model plus enough metadata to reload it: kind, vocabulary size,
// the training config echo, and the parameter tensors.
struct ModelFile {
  std::string kind;  // logistic | frame_logistic | moe | dbof | lstm
  int vocab_size = 0;
  nlohmann::json config = nlohmann::json::object();
  std::variant<linear::LogisticParams, linear::MoeParams, framelevel::DbofParams,
               framelevel::LstmParams>
      params;

  // Typed access; requesting a kind the file does not hold raises
  // KindMismatchError. `logistic` serves both logistic and frame_logistic.
  const linear::LogisticParams& logistic() const;
  const linear::MoeParams& moe() const;
  const framelevel::DbofParams& dbof() const;
  const framelevel::LstmParams& lstm() const;
};

void save_model(const std::string& path, const ModelFile& model);
ModelFile load_model(const std::string& path);

}  // namespace vle::recordio
