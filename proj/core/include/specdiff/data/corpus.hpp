#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/nn/tensor.hpp"

namespace specdiff::data {

/// One manifest line: tab-separated key=value fields
///   id=... audio=... text=... phonemes=... speaker=... durations=...
/// Phonemes are space-separated symbols. Relative paths resolve against the
/// manifest's directory.
struct ManifestEntry {
  std::string id;
  std::filesystem::path audio;
  std::string text;
  std::vector<std::string> phonemes;
  std::string speaker;
  std::filesystem::path durations;
};

/// Entries sorted by id; duplicate ids and missing fields raise DataError.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Alignment line: "<phoneme> <start_frame> <end_frame>", end exclusive.
struct AlignmentSpan {
  std::string phoneme;
  int start = 0;
  int end = 0;
};
std::vector<AlignmentSpan> read_alignment(const std::filesystem::path& path);

/// Forces sum(durations) == frames: a shortfall goes to the last phoneme,
/// an excess is trimmed from the final phonemes without going below zero.
std::vector<int> correct_duration_sum(std::vector<int> durations, int frames);

/// Span lengths checked against the phoneme list, then sum-corrected.
std::vector<int> ingest_durations(const std::vector<AlignmentSpan>& spans, const std::vector<std::string>& phonemes,
                                  int frames);

std::vector<int> phoneme_ids(const std::vector<std::string>& phonemes, const std::vector<std::string>& vocab);

/// Features before normalisation.
struct RawUtterance {
  std::string id;
  std::string speaker;
  std::vector<std::string> phonemes;
  std::vector<int> phoneme_ids;
  std::vector<int> durations;
  nn::Tensor mel;  // [F, n_mels], log scale
  std::vector<double> f0;
  std::vector<double> energy;
};

struct SpeakerStats {
  double pitch_mean = 0.0;
  double pitch_std = 1.0;
  double energy_mean = 0.0;
  double energy_std = 1.0;
};

/// Per-channel mel statistics plus per-speaker log-F0 and energy statistics.
/// Every standard deviation is floored at kStdFloor.
struct NormStats {
  static constexpr double kStdFloor = 1e-6;
  std::vector<double> mel_mean;
  std::vector<double> mel_std;
  std::map<std::string, SpeakerStats> speakers;

  std::string to_json() const;
  static NormStats from_json(const std::string& text);
  bool operator==(const NormStats&) const = default;
};

/// Pooled statistics over the given utterances. Log-F0 uses voiced frames only.
NormStats compute_norm_stats(const std::vector<const RawUtterance*>& corpus);

/// Training-ready record. `pitch` and `energy` hold one value per phoneme or
/// per frame depending on the configured granularity.
struct Utterance {
  std::string id;
  std::string speaker;
  std::vector<int> phonemes;
  std::vector<int> durations;
  nn::Tensor mel;  // [F, n_mels], normalised when enabled
  std::vector<double> pitch;
  std::vector<double> energy;

  int frames() const { return mel.rank() == 2 ? mel.dim(0) : 0; }
};

/// Normalised log-F0 with unvoiced frames mapped to the speaker mean (zero).
Utterance normalize_utterance(const RawUtterance& raw, const NormStats& stats, const config::FeatureConfig& feature,
                              const std::string& granularity);

/// Inverse of the mel normalisation for a [F, C] or [B, F, C] tensor.
nn::Tensor denormalize_mel(const nn::Tensor& mel, const NormStats& stats);
nn::Tensor normalize_mel(const nn::Tensor& mel, const NormStats& stats);

/// Seeded split into (train, validation) indexes; at least one item always
/// remains in train.
std::pair<std::vector<int>, std::vector<int>> split_indices(int count, int val_count, std::uint64_t seed);

struct PreprocessSummary {
  int utterances = 0;
  int train = 0;
  int validation = 0;
  std::vector<std::string> speakers;
};

/// Full pipeline for every manifest entry, persisted under `out_dir`:
///   mel/ duration/ pitch/ energy/ f0/ ref/ <id>.bin, ref/<id>.wav,
///   metadata.json and stats.json.
/// Statistics come from the training split only.
PreprocessSummary preprocess(const config::RunConfig& cfg, const std::filesystem::path& manifest,
                             const std::filesystem::path& out_dir, std::uint64_t seed, int workers);

struct Dataset {
  std::filesystem::path root;
  std::vector<Utterance> utterances;
  NormStats stats;
  std::vector<std::string> speakers;
  std::vector<std::string> vocab;
  std::string granularity;
  std::vector<int> train;
  std::vector<int> validation;

  int find(const std::string& id) const;
};

Dataset load_dataset(const std::filesystem::path& dir);
void save_utterance(const std::filesystem::path& dir, const Utterance& u);
Utterance load_utterance(const std::filesystem::path& dir, const std::string& id, const std::string& speaker,
                         const std::vector<int>& phonemes);

/// JSON object {speaker_id: [values...]}; rows returned in `ids` order.
nn::Tensor load_speaker_embeddings(const std::filesystem::path& path, const std::vector<std::string>& ids);

}  // namespace specdiff::data
