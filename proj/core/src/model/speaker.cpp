#include "specdiff/model/speaker.hpp"

#include <algorithm>

#include "specdiff/error.hpp"

namespace specdiff::model {

SpeakerMode parse_speaker_mode(const std::string& s) {
  if (s == "lookup") return SpeakerMode::kLookup;
  if (s == "precomputed") return SpeakerMode::kPrecomputed;
  throw ConfigError("speaker mode '" + s + "' is not one of lookup, precomputed");
}

std::string to_string(SpeakerMode m) { return m == SpeakerMode::kLookup ? "lookup" : "precomputed"; }

SpeakerStore::SpeakerStore(std::vector<std::string> ids, int dim, nn::ParameterSet& params, Rng& rng)
    : mode_(SpeakerMode::kLookup), dim_(dim), ids_(std::move(ids)) {
  if (ids_.empty()) throw DataError("speaker store needs at least one speaker");
  table_ = params.create("speaker.table", {static_cast<int>(ids_.size()), dim}, 1, rng);
}

SpeakerStore::SpeakerStore(std::vector<std::string> ids, const nn::Tensor& embeddings)
    : mode_(SpeakerMode::kPrecomputed), ids_(std::move(ids)) {
  if (ids_.empty()) throw DataError("speaker store needs at least one speaker");
  if (embeddings.rank() != 2 || embeddings.dim(0) != static_cast<int>(ids_.size())) {
    throw DataError("precomputed speaker embeddings have shape " + nn::shape_string(embeddings.shape) + " for " +
                    std::to_string(ids_.size()) + " speakers");
  }
  if (!embeddings.all_finite()) throw DataError("precomputed speaker embeddings contain non-finite values");
  dim_ = embeddings.dim(1);
  table_ = nn::Var::constant(embeddings);
}

int SpeakerStore::index(const std::string& id) const {
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) throw DataError("unknown speaker '" + id + "' (" + to_string(mode_) + " mode)");
  return static_cast<int>(it - ids_.begin());
}

SpeakerRef SpeakerStore::resolve(const std::string& id) const {
  const int row = index(id);
  SpeakerRef ref{id, nn::Tensor({dim_})};
  std::copy_n(table_.value().data.begin() + static_cast<std::size_t>(row) * dim_, dim_, ref.embedding.data.begin());
  return ref;
}

nn::Var SpeakerStore::embed(const std::vector<int>& indexes) const {
  std::vector<std::vector<int>> ids;
  for (int i : indexes) {
    if (i < 0 || i >= static_cast<int>(ids_.size())) throw DataError("speaker index out of range");
    ids.push_back({i});
  }
  return nn::reshape(nn::embedding(table_, ids, 1), {static_cast<int>(indexes.size()), dim_});
}

}  // namespace specdiff::model
