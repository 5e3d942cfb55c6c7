#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "specdiff/data/audio.hpp"
#include "specdiff/data/corpus.hpp"
#include "specdiff/rng.hpp"

namespace specdiff::testing {

struct ToyCorpusSpec {
  int utterances = 10;
  int speakers = 2;
  int sample_rate = 22050;
  int hop = 256;
  std::uint64_t seed = 7;
  int min_phonemes = 4;
  int max_phonemes = 6;
  int min_frames = 4;
  int max_frames = 9;
};

/// Harmonic "vowels" and noise "fricatives" with per-speaker pitch, written as
/// WAV + alignment files plus a manifest. Returns the manifest path.
inline std::filesystem::path write_toy_corpus(const std::filesystem::path& dir, const ToyCorpusSpec& spec = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "wav");
  fs::create_directories(dir / "align");
  const std::vector<std::string> voiced = {"AA1", "IY1", "UW1", "M", "N"};
  const std::vector<std::string> unvoiced = {"S", "F"};
  Rng rng(spec.seed);
  std::vector<data::ManifestEntry> entries;
  for (int u = 0; u < spec.utterances; ++u) {
    const int spk = u % spec.speakers;
    const double f0 = 110.0 + 90.0 * spk;
    const int n_ph = rng.uniform_int(spec.min_phonemes, spec.max_phonemes);
    std::vector<std::string> phonemes = {"sil"};
    for (int i = 0; i < n_ph; ++i) {
      phonemes.push_back(rng.uniform() < 0.75 ? voiced[static_cast<std::size_t>(rng.uniform_int(0, 4))]
                                              : unvoiced[static_cast<std::size_t>(rng.uniform_int(0, 1))]);
    }
    phonemes.push_back("sil");

    std::vector<int> frames;
    int total = 0;
    for (std::size_t i = 0; i < phonemes.size(); ++i) {
      frames.push_back(rng.uniform_int(spec.min_frames, spec.max_frames));
      total += frames.back();
    }
    // 1 + floor(n / hop) analysis frames == total
    const std::size_t n = static_cast<std::size_t>(total - 1) * spec.hop + spec.hop / 2;
    std::vector<double> x(n, 0.0);
    std::size_t pos = 0;
    double phase = 0.0;
    for (std::size_t i = 0; i < phonemes.size(); ++i) {
      const std::size_t len = std::min(n - pos, static_cast<std::size_t>(frames[i]) * spec.hop);
      const std::string& p = phonemes[i];
      const bool is_voiced = std::find(voiced.begin(), voiced.end(), p) != voiced.end();
      const double formant = 400.0 + 300.0 * static_cast<double>(p[0] - 'A') / 26.0 * 4.0;
      for (std::size_t k = 0; k < len; ++k) {
        double v = 0.0;
        if (p == "sil") {
          v = 0.001 * rng.normal();
        } else if (is_voiced) {
          const double f = f0 * (1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * 2.0 * (pos + k) / spec.sample_rate));
          phase += 2.0 * std::numbers::pi * f / spec.sample_rate;
          for (int h = 1; h <= 12; ++h) {
            const double fh = h * f;
            if (fh > spec.sample_rate / 2.0) break;
            const double gain = std::exp(-std::pow((fh - formant) / 600.0, 2.0)) + 0.15 / h;
            v += 0.08 * gain * std::sin(h * phase);
          }
        } else {
          v = 0.05 * rng.normal();
        }
        x[pos + k] = v;
      }
      pos += len;
    }

    data::ManifestEntry e;
    e.id = "utt" + std::to_string(100 + u);
    e.speaker = "spk" + std::to_string(spk);
    e.phonemes = phonemes;
    e.text = "toy utterance " + std::to_string(u);
    e.audio = fs::path("wav") / (e.id + ".wav");
    e.durations = fs::path("align") / (e.id + ".txt");
    data::write_wav(dir / e.audio, x, spec.sample_rate);
    std::ofstream al(dir / e.durations);
    int start = 0;
    for (std::size_t i = 0; i < phonemes.size(); ++i) {
      al << phonemes[i] << ' ' << start << ' ' << start + frames[i] << '\n';
      start += frames[i];
    }
    entries.push_back(e);
  }
  const fs::path manifest = dir / "manifest.tsv";
  data::write_manifest(manifest, entries);
  return manifest;
}

}  // namespace specdiff::testing
