#include "specdiff/data/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "specdiff/data/audio.hpp"
#include "specdiff/data/features.hpp"
#include "specdiff/error.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "specdiff/rng.hpp"

namespace specdiff::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nn::Tensor vector_tensor(const std::vector<double>& v) { return nn::Tensor({static_cast<int>(v.size())}, v); }

nn::Tensor int_tensor(const std::vector<int>& v) {
  nn::Tensor t({static_cast<int>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

fs::path feature_path(const fs::path& root, const std::string& feature, const std::string& id) {
  return root / feature / (id + ".bin");
}

struct Moments {
  double sum = 0.0;
  double sq = 0.0;
  long n = 0;
  void add(double v) {
    sum += v;
    sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / n : 0.0; }
  double std() const {
    if (!n) return 1.0;
    const double m = mean();
    return std::max(std::sqrt(std::max(sq / n - m * m, 0.0)), NormStats::kStdFloor);
  }
};

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::map<std::string, std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": field '" + field + "' is not key=value");
      }
      fields[field.substr(0, eq)] = field.substr(eq + 1);
    }
    auto need = [&](const char* key) {
      auto it = fields.find(key);
      if (it == fields.end() || it->second.empty()) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing field '" + key + "'");
      }
      return it->second;
    };
    ManifestEntry e;
    e.id = need("id");
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    e.audio = resolve(need("audio"));
    e.text = fields.count("text") ? fields["text"] : "";
    e.phonemes = split_ws(need("phonemes"));
    e.speaker = need("speaker");
    e.durations = resolve(need("durations"));
    if (!seen.insert(e.id).second) throw DataError(path.string() + ": duplicate utterance id '" + e.id + "'");
    entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  for (const auto& e : entries) {
    std::string ph;
    for (std::size_t i = 0; i < e.phonemes.size(); ++i) ph += (i ? " " : "") + e.phonemes[i];
    os << "id=" << e.id << "\taudio=" << e.audio.string() << "\ttext=" << e.text << "\tphonemes=" << ph
       << "\tspeaker=" << e.speaker << "\tdurations=" << e.durations.string() << '\n';
  }
  io::atomic_write(path, os.str());
}

std::vector<AlignmentSpan> read_alignment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read alignment " + path.string());
  std::vector<AlignmentSpan> spans;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 3) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'phoneme start end'");
    AlignmentSpan s;
    s.phoneme = tok[0];
    try {
      s.start = std::stoi(tok[1]);
      s.end = std::stoi(tok[2]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-integer frame index");
    }
    if (s.start < 0 || s.end < s.start) throw DataError(path.string() + ":" + std::to_string(lineno) + ": inverted span");
    spans.push_back(s);
  }
  return spans;
}

std::vector<int> correct_duration_sum(std::vector<int> d, int frames) {
  if (d.empty()) throw DataError("duration list is empty");
  long sum = 0;
  for (int v : d) sum += v;
  if (sum < frames) {
    d.back() += static_cast<int>(frames - sum);
  } else {
    long excess = sum - frames;
    for (int i = static_cast<int>(d.size()) - 1; i >= 0 && excess > 0; --i) {
      const long cut = std::min<long>(excess, d[i]);
      d[i] -= static_cast<int>(cut);
      excess -= cut;
    }
  }
  return d;
}

std::vector<int> ingest_durations(const std::vector<AlignmentSpan>& spans, const std::vector<std::string>& phonemes,
                                  int frames) {
  if (spans.size() != phonemes.size()) {
    throw DataError("alignment has " + std::to_string(spans.size()) + " spans for " + std::to_string(phonemes.size()) +
                    " phonemes");
  }
  std::vector<int> d;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].phoneme != phonemes[i]) {
      throw DataError("alignment span " + std::to_string(i) + " is '" + spans[i].phoneme + "' but the transcript has '" +
                      phonemes[i] + "'");
    }
    if (spans[i].start < 0 || spans[i].end < spans[i].start) {
      throw DataError("alignment span " + std::to_string(i) + " has negative extent");
    }
    d.push_back(spans[i].end - spans[i].start);
  }
  return correct_duration_sum(std::move(d), frames);
}

std::vector<int> phoneme_ids(const std::vector<std::string>& phonemes, const std::vector<std::string>& vocab) {
  std::vector<int> ids;
  for (const auto& p : phonemes) {
    const auto it = std::find(vocab.begin(), vocab.end(), p);
    if (it == vocab.end() || it == vocab.begin()) throw DataError("phoneme '" + p + "' is not in the vocabulary");
    ids.push_back(static_cast<int>(it - vocab.begin()));
  }
  if (ids.empty()) throw DataError("empty phoneme sequence");
  return ids;
}

std::string NormStats::to_json() const {
  json j;
  j["mel_mean"] = mel_mean;
  j["mel_std"] = mel_std;
  json sp = json::object();
  for (const auto& [id, s] : speakers) {
    sp[id] = {{"pitch_mean", s.pitch_mean}, {"pitch_std", s.pitch_std}, {"energy_mean", s.energy_mean},
              {"energy_std", s.energy_std}};
  }
  j["speakers"] = sp;
  return j.dump(2);
}

NormStats NormStats::from_json(const std::string& text) {
  NormStats s;
  try {
    const json j = json::parse(text);
    s.mel_mean = j.at("mel_mean").get<std::vector<double>>();
    s.mel_std = j.at("mel_std").get<std::vector<double>>();
    for (const auto& [id, v] : j.at("speakers").items()) {
      s.speakers[id] = SpeakerStats{v.at("pitch_mean").get<double>(), v.at("pitch_std").get<double>(),
                                    v.at("energy_mean").get<double>(), v.at("energy_std").get<double>()};
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed normalisation statistics: ") + e.what());
  }
  return s;
}

NormStats compute_norm_stats(const std::vector<const RawUtterance*>& corpus) {
  if (corpus.empty()) throw DataError("compute_norm_stats: empty corpus");
  const int channels = corpus.front()->mel.dim(1);
  std::vector<Moments> mel(channels);
  std::map<std::string, std::pair<Moments, Moments>> spk;
  for (const auto* u : corpus) {
    if (u->mel.dim(1) != channels) throw DataError("compute_norm_stats: inconsistent mel channel counts");
    for (int f = 0; f < u->mel.dim(0); ++f)
      for (int c = 0; c < channels; ++c) mel[c].add(u->mel[static_cast<std::size_t>(f) * channels + c]);
    auto& [pitch, energy] = spk[u->speaker];
    for (double v : u->f0)
      if (v > 0) pitch.add(std::log(v));
    for (double e : u->energy) energy.add(e);
  }
  NormStats s;
  for (const auto& m : mel) {
    s.mel_mean.push_back(m.mean());
    s.mel_std.push_back(m.std());
  }
  for (const auto& [id, pe] : spk) s.speakers[id] = SpeakerStats{pe.first.mean(), pe.first.std(), pe.second.mean(), pe.second.std()};
  return s;
}

nn::Tensor normalize_mel(const nn::Tensor& mel, const NormStats& stats) {
  const int c = mel.dim(-1);
  if (static_cast<int>(stats.mel_mean.size()) != c) throw DataError("mel statistics do not match the channel count");
  nn::Tensor out = mel;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - stats.mel_mean[i % c]) / stats.mel_std[i % c];
  return out;
}

nn::Tensor denormalize_mel(const nn::Tensor& mel, const NormStats& stats) {
  const int c = mel.dim(-1);
  if (static_cast<int>(stats.mel_mean.size()) != c) throw DataError("mel statistics do not match the channel count");
  nn::Tensor out = mel;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * stats.mel_std[i % c] + stats.mel_mean[i % c];
  return out;
}

Utterance normalize_utterance(const RawUtterance& raw, const NormStats& stats, const config::FeatureConfig& feature,
                              const std::string& granularity) {
  const auto it = stats.speakers.find(raw.speaker);
  if (it == stats.speakers.end()) throw DataError("no statistics for speaker '" + raw.speaker + "'");
  const SpeakerStats& s = it->second;
  const int frames = raw.mel.dim(0);
  std::vector<double> pitch(frames, 0.0), energy(frames, 0.0);
  std::vector<bool> voiced(frames, false);
  for (int f = 0; f < frames; ++f) {
    if (raw.f0[f] > 0) {
      pitch[f] = (std::log(raw.f0[f]) - s.pitch_mean) / s.pitch_std;
      voiced[f] = true;
    }
    energy[f] = (raw.energy[f] - s.energy_mean) / s.energy_std;
  }
  Utterance u;
  u.id = raw.id;
  u.speaker = raw.speaker;
  u.phonemes = raw.phoneme_ids;
  u.durations = raw.durations;
  u.mel = feature.normalize ? normalize_mel(raw.mel, stats) : raw.mel;
  if (granularity == "frame") {
    u.pitch = pitch;
    u.energy = energy;
    return u;
  }
  int pos = 0;
  for (int d : raw.durations) {
    double ps = 0.0, es = 0.0;
    int pv = 0;
    for (int f = pos; f < pos + d; ++f) {
      if (voiced[f]) {
        ps += pitch[f];
        ++pv;
      }
      es += energy[f];
    }
    u.pitch.push_back(pv ? ps / pv : 0.0);
    u.energy.push_back(d ? es / d : 0.0);
    pos += d;
  }
  return u;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int count, int val_count, std::uint64_t seed) {
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = count - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  const int nval = std::clamp(val_count, 0, std::max(count - 1, 0));
  std::vector<int> val(order.begin(), order.begin() + nval);
  std::vector<int> train(order.begin() + nval, order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

void save_utterance(const fs::path& dir, const Utterance& u) {
  io::save_tensor(feature_path(dir, "mel", u.id), u.mel);
  io::save_tensor(feature_path(dir, "duration", u.id), int_tensor(u.durations));
  io::save_tensor(feature_path(dir, "pitch", u.id), vector_tensor(u.pitch));
  io::save_tensor(feature_path(dir, "energy", u.id), vector_tensor(u.energy));
}

Utterance load_utterance(const fs::path& dir, const std::string& id, const std::string& speaker,
                         const std::vector<int>& phonemes) {
  Utterance u;
  u.id = id;
  u.speaker = speaker;
  u.phonemes = phonemes;
  u.mel = io::load_tensor(feature_path(dir, "mel", id));
  for (double v : io::load_tensor(feature_path(dir, "duration", id)).data) u.durations.push_back(static_cast<int>(v));
  u.pitch = io::load_tensor(feature_path(dir, "pitch", id)).data;
  u.energy = io::load_tensor(feature_path(dir, "energy", id)).data;
  if (u.mel.rank() != 2) throw DataError(id + ": mel must be [F, C]");
  long sum = 0;
  for (int d : u.durations) sum += d;
  if (sum != u.frames()) {
    throw DataError(id + ": durations sum to " + std::to_string(sum) + " but the mel has " + std::to_string(u.frames()) +
                    " frames");
  }
  if (u.durations.size() != phonemes.size()) throw DataError(id + ": duration count differs from phoneme count");
  if (!u.mel.all_finite()) throw DataError(id + ": non-finite mel values");
  return u;
}

PreprocessSummary preprocess(const config::RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir,
                             std::uint64_t seed, int workers) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw DataError("manifest " + manifest.string() + " has no entries");
  for (const char* sub : {"mel", "duration", "pitch", "energy", "f0", "ref"}) fs::create_directories(out_dir / sub);

  const int n = static_cast<int>(entries.size());
  std::vector<RawUtterance> raw(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        const auto& e = entries[i];
        Waveform w = load_audio(e.audio, cfg.feature.sample_rate);
        FrameFeatures feat = analyze(w.samples, cfg.feature);
        const int frames = feat.mel.dim(0);
        RawUtterance& r = raw[i];
        r.id = e.id;
        r.speaker = e.speaker;
        r.phonemes = e.phonemes;
        r.phoneme_ids = phoneme_ids(e.phonemes, cfg.model.vocab);
        r.durations = ingest_durations(read_alignment(e.durations), e.phonemes, frames);
        r.mel = std::move(feat.mel);
        r.f0 = std::move(feat.f0);
        r.energy = std::move(feat.energy);
        if (static_cast<int>(r.f0.size()) != frames || static_cast<int>(r.energy.size()) != frames) {
          throw DataError("frame counts of mel, F0 and energy disagree");
        }
        io::save_tensor(feature_path(out_dir, "ref", e.id), r.mel);
        io::save_tensor(feature_path(out_dir, "f0", e.id), vector_tensor(r.f0));
        write_wav(out_dir / "ref" / (e.id + ".wav"), w.samples, w.sample_rate);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min(workers, n));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (int i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw DataError("utterance '" + entries[i].id + "': " + e.what());
    } catch (const std::exception& e) {
      throw DataError("utterance '" + entries[i].id + "': " + e.what());
    }
  }

  const auto [train, val] = split_indices(n, cfg.train.val_count, seed);
  std::vector<const RawUtterance*> train_raw;
  for (int i : train) train_raw.push_back(&raw[i]);
  NormStats stats = compute_norm_stats(train_raw);
  // Speakers seen only in validation still need variance statistics.
  {
    std::vector<const RawUtterance*> all;
    for (const auto& r : raw) all.push_back(&r);
    const NormStats everything = compute_norm_stats(all);
    for (const auto& [id, s] : everything.speakers) stats.speakers.emplace(id, s);
  }
  if (!cfg.feature.normalize) {
    stats.mel_mean.assign(cfg.feature.n_mels, 0.0);
    stats.mel_std.assign(cfg.feature.n_mels, 1.0);
  }

  std::set<std::string> speaker_set;
  json utts = json::array();
  std::vector<bool> is_val(n, false);
  for (int i : val) is_val[i] = true;
  for (int i = 0; i < n; ++i) {
    const Utterance u = normalize_utterance(raw[i], stats, cfg.feature, cfg.model.pitch_granularity);
    save_utterance(out_dir, u);
    speaker_set.insert(raw[i].speaker);
    utts.push_back({{"id", raw[i].id},
                    {"speaker", raw[i].speaker},
                    {"phonemes", raw[i].phonemes},
                    {"phoneme_ids", raw[i].phoneme_ids},
                    {"frames", u.frames()},
                    {"split", is_val[i] ? "validation" : "train"}});
  }
  PreprocessSummary summary;
  summary.utterances = n;
  summary.train = static_cast<int>(train.size());
  summary.validation = static_cast<int>(val.size());
  summary.speakers.assign(speaker_set.begin(), speaker_set.end());

  json meta;
  meta["format"] = 1;
  meta["granularity"] = cfg.model.pitch_granularity;
  meta["normalize"] = cfg.feature.normalize;
  meta["vocab"] = cfg.model.vocab;
  meta["speakers"] = summary.speakers;
  meta["feature"] = {{"sample_rate", cfg.feature.sample_rate}, {"n_mels", cfg.feature.n_mels},
                     {"hop", cfg.feature.hop},                 {"window", cfg.feature.window},
                     {"n_fft", cfg.feature.n_fft},             {"fmin", cfg.feature.fmin},
                     {"fmax", cfg.feature.fmax},               {"log_floor", cfg.feature.log_floor}};
  meta["seed"] = seed;
  meta["utterances"] = utts;
  io::atomic_write(out_dir / "stats.json", stats.to_json());
  io::atomic_write(out_dir / "metadata.json", meta.dump(2));
  return summary;
}

int Dataset::find(const std::string& id) const {
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (utterances[i].id == id) return static_cast<int>(i);
  return -1;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  json meta;
  try {
    meta = json::parse(read_text(dir / "metadata.json"));
    ds.stats = NormStats::from_json(read_text(dir / "stats.json"));
    ds.vocab = meta.at("vocab").get<std::vector<std::string>>();
    ds.speakers = meta.at("speakers").get<std::vector<std::string>>();
    ds.granularity = meta.at("granularity").get<std::string>();
    for (const auto& u : meta.at("utterances")) {
      ds.utterances.push_back(load_utterance(dir, u.at("id").get<std::string>(), u.at("speaker").get<std::string>(),
                                             u.at("phoneme_ids").get<std::vector<int>>()));
      (u.at("split").get<std::string>() == "validation" ? ds.validation : ds.train)
          .push_back(static_cast<int>(ds.utterances.size()) - 1);
    }
  } catch (const json::exception& e) {
    throw DataError("malformed dataset metadata in " + dir.string() + ": " + e.what());
  }
  if (ds.utterances.empty()) throw DataError("dataset " + dir.string() + " is empty");
  return ds;
}

nn::Tensor load_speaker_embeddings(const fs::path& path, const std::vector<std::string>& ids) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError("malformed speaker embeddings " + path.string() + ": " + e.what());
  }
  int dim = -1;
  std::vector<double> rows;
  for (const auto& id : ids) {
    if (!j.contains(id)) throw DataError("unknown speaker '" + id + "' (precomputed mode, " + path.string() + ")");
    const auto v = j[id].get<std::vector<double>>();
    if (dim >= 0 && static_cast<int>(v.size()) != dim) throw DataError("speaker embeddings differ in dimension");
    dim = static_cast<int>(v.size());
    rows.insert(rows.end(), v.begin(), v.end());
  }
  return nn::Tensor({static_cast<int>(ids.size()), dim}, rows);
}

}  // namespace specdiff::data
