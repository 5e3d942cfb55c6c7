#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/nn/tensor.hpp"

namespace specdiff::eval {

/// Orthonormal DCT-II of each log-mel frame: [F, M] -> [F, order + 1],
/// column 0 being the energy coefficient c0.
nn::Tensor mel_cepstrum(const nn::Tensor& log_mel, int order);
/// Cepstra of a waveform through the feature pipeline's log mel.
nn::Tensor mel_cepstrum(const std::vector<double>& waveform, const config::FeatureConfig& feature, int order);

enum class Alignment { kTruncate, kDtw };
Alignment parse_alignment(const std::string& s);

struct DtwResult {
  std::vector<std::pair<int, int>> path;
  double cost = 0.0;
};

/// Minimum-cost monotonic path from (0, 0) to (N-1, M-1) under Euclidean frame
/// distance with steps (1,0), (0,1), (1,1). Ties prefer the diagonal step.
DtwResult dtw_align(const nn::Tensor& ref, const nn::Tensor& gen);

/// Mean over aligned frame pairs of (10 / ln 10) sqrt(2 sum_d (c_d - c'_d)^2),
/// dimensions 1..order (0..order when c0 is included).
double metric_mcd(const nn::Tensor& ref_cepstra, const nn::Tensor& gen_cepstra, Alignment alignment,
                  bool exclude_c0);

enum class VoicingMask {
  /// Frames voiced in both tracks.
  kJoint,
  /// Frames voiced in the reference.
  kReference,
};

/// A metric value or the reason it was not computed.
struct Score {
  std::optional<double> value;
  std::string reason;
};

/// RMSE in Hz over the masked frames; equal lengths required (DataError).
Score metric_f0_rmse(const std::vector<double>& ref_f0, const std::vector<double>& gen_f0,
                     VoicingMask mask = VoicingMask::kJoint);

/// Mean local SSIM with a 7x7 Gaussian window (sigma 1.5); the window shrinks
/// to the image when a side is shorter than 7. C1 = (0.01 L)^2 and
/// C2 = (0.03 L)^2 with L the data range of the reference (1 when flat).
double metric_ssim(const nn::Tensor& ref, const nn::Tensor& gen);
/// Same with an explicit data range.
double metric_ssim(const nn::Tensor& ref, const nn::Tensor& gen, double data_range);

/// Runs `tool <ref_wav> <gen_wav>` and parses the first token of its output.
struct ExternalResult {
  enum class Status { kOmitted, kOk, kSkipped };
  Status status = Status::kOmitted;
  double value = 0.0;
  std::string reason;
};
ExternalResult external_metric_adapter(const std::string& tool, const std::filesystem::path& ref_wav,
                                       const std::filesystem::path& gen_wav);

struct UtteranceMetrics {
  std::string id;
  std::map<std::string, double> values;
  /// Metric name to reason for metrics not computed on this utterance.
  std::map<std::string, std::string> skipped_metrics;
};

struct MetricsReport {
  std::string alignment;
  std::vector<std::string> metrics;
  std::vector<UtteranceMetrics> utterances;
  /// Utterances that could not be scored at all, id to reason.
  std::map<std::string, std::string> skipped;
  std::map<std::string, double> means;
  std::map<std::string, int> counts;
  /// Columns dropped because their tool is not configured.
  std::vector<std::string> omitted;

  std::string to_text() const;
  std::string to_json() const;
  bool complete() const;
};

/// Scores every id present in both directories. Each holds `<id>.bin` log
/// mels [F, n_mels]; `<id>.wav` is used for F0 and external tools when present,
/// otherwise audio comes from Griffin-Lim. `<id>.json` in gen_dir may carry
/// an "rtf" field. Throws DataError when no ids match.
MetricsReport evaluate_corpus(const std::filesystem::path& ref_dir, const std::filesystem::path& gen_dir,
                              const config::RunConfig& cfg);

}  // namespace specdiff::eval
