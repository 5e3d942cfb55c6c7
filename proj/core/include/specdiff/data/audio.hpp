#pragma once

#include <filesystem>
#include <vector>

namespace specdiff::data {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;
};

/// RIFF/WAVE reader for PCM 8/16/24/32-bit and IEEE float 32/64; channels
/// are averaged to mono. Throws DataError for unreadable or empty files.
Waveform read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM, clipping to [-1, 1].
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, int sample_rate);

/// Band-limited resampling with a Hann-windowed sinc kernel.
std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate);

/// Reads, converts to `target_rate` and scales down so |sample| <= 1.
Waveform load_audio(const std::filesystem::path& path, int target_rate);

}  // namespace specdiff::data
