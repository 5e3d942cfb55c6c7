#pragma once

#include <string>
#include <vector>

#include "specdiff/nn/layers.hpp"

namespace specdiff::model {

enum class SpeakerMode { kLookup, kPrecomputed };
SpeakerMode parse_speaker_mode(const std::string& s);
std::string to_string(SpeakerMode m);

/// Speaker identity plus its current embedding vector.
struct SpeakerRef {
  std::string speaker_id;
  nn::Tensor embedding;
};

/// Maps speaker ids to embedding rows. In lookup mode the table is a
/// trainable parameter registered with the owning ParameterSet; in
/// precomputed mode it is a constant built from externally supplied vectors.
class SpeakerStore {
 public:
  SpeakerStore() = default;
  /// Lookup mode: one trainable row per id.
  SpeakerStore(std::vector<std::string> ids, int dim, nn::ParameterSet& params, Rng& rng);
  /// Precomputed mode: row i of `embeddings` [S, dim] belongs to ids[i].
  SpeakerStore(std::vector<std::string> ids, const nn::Tensor& embeddings);

  SpeakerMode mode() const { return mode_; }
  int dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  /// Throws DataError naming the id and the mode when unknown.
  int index(const std::string& id) const;
  SpeakerRef resolve(const std::string& id) const;
  /// Rows for a batch of speaker indexes, [B, dim].
  nn::Var embed(const std::vector<int>& indexes) const;
  const nn::Var& table() const { return table_; }

 private:
  SpeakerMode mode_ = SpeakerMode::kLookup;
  int dim_ = 0;
  std::vector<std::string> ids_;
  nn::Var table_;
};

}  // namespace specdiff::model
