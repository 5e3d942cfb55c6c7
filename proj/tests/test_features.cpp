#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>

#include "specdiff/data/audio.hpp"
#include "specdiff/data/features.hpp"
#include "specdiff/rng.hpp"

using namespace specdiff;
using namespace specdiff::data;

namespace {

std::vector<double> tone(double hz, int rate, double seconds, double amp = 0.5) {
  std::vector<double> x(static_cast<std::size_t>(rate * seconds));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2 * M_PI * hz * i / rate);
  return x;
}

// Bin with the largest naive DFT magnitude over the first n samples.
int dft_peak_bin(const std::vector<double>& x, int n) {
  int best = 0;
  double best_mag = -1;
  for (int k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0;
    for (int i = 0; i < n; ++i) acc += x[i] * std::polar(1.0, -2 * M_PI * k * i / n);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  return best;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "specdiff_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Audio, WavRoundTripAndResampleRate) {
  const auto x = tone(440, 48000, 0.25);
  const auto path = temp_file("tone48k.wav");
  write_wav(path, x, 48000);
  Waveform w = read_wav(path);
  ASSERT_EQ(w.sample_rate, 48000);
  ASSERT_EQ(w.samples.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(w.samples[i], x[i], 1.0 / 32767);

  Waveform r = load_audio(path, 22050);
  EXPECT_EQ(r.sample_rate, 22050);
  EXPECT_NEAR(static_cast<double>(r.samples.size()), x.size() * 22050.0 / 48000, 1.0);
  double peak = 0;
  for (double s : r.samples) peak = std::max(peak, std::abs(s));
  EXPECT_LE(peak, 1.0);

  Waveform same = load_audio(temp_file("tone48k.wav"), 48000);
  EXPECT_EQ(same.samples.size(), x.size());
}

TEST(Audio, ResampledToneKeepsItsFrequency) {
  const auto x = tone(440, 48000, 0.5);
  const auto y = resample(x, 48000, 22050);
  const int n = 4096;
  const int bin = dft_peak_bin(y, n);
  const double expected = 440.0 * n / 22050;
  EXPECT_LE(std::abs(bin - expected), 1.0);
}

TEST(Features, FrameCountForOneSecond) {
  config::FeatureConfig cfg;
  const auto m = extract_mel(tone(300, 22050, 1.0), cfg);
  EXPECT_GE(m.dim(0), 86);
  EXPECT_LE(m.dim(0), 88);
  EXPECT_EQ(m.dim(1), 80);
  EXPECT_EQ(m.dim(0), frame_count(22050, 256));
}

TEST(Features, SilenceHitsTheLogFloor) {
  config::FeatureConfig cfg;
  const auto m = extract_mel(std::vector<double>(8000, 0.0), cfg);
  for (double v : m.data) EXPECT_EQ(v, std::log(cfg.log_floor));
  for (double e : extract_energy(std::vector<double>(8000, 0.0), cfg)) EXPECT_EQ(e, 0.0);
  for (double f : extract_f0(std::vector<double>(8000, 0.0), cfg)) EXPECT_EQ(f, 0.0);
}

TEST(Features, ToneMapsToOneMelBin) {
  config::FeatureConfig cfg;
  const auto m = extract_mel(tone(1000, 22050, 0.5), cfg);
  std::vector<int> argmax;
  for (int f = 2; f < m.dim(0) - 2; ++f) {
    const double* row = m.ptr() + f * 80;
    argmax.push_back(static_cast<int>(std::max_element(row, row + 80) - row));
  }
  for (int a : argmax) EXPECT_EQ(a, argmax.front());
  // The winning filter's centre is the one closest to 1 kHz.
  std::vector<double> centres;
  const double lo = hz_to_mel(0), hi = hz_to_mel(8000);
  for (int i = 1; i <= 80; ++i) centres.push_back(mel_to_hz(lo + (hi - lo) * i / 81));
  int nearest = 0;
  for (int i = 0; i < 80; ++i)
    if (std::abs(centres[i] - 1000) < std::abs(centres[nearest] - 1000)) nearest = i;
  EXPECT_LE(std::abs(argmax.front() - nearest), 1);
}

TEST(Features, EnergyIsLinearAndMatchesBruteForce) {
  config::FeatureConfig cfg;
  Rng rng(3);
  std::vector<double> x(6000);
  for (auto& v : x) v = rng.uniform() - 0.5;
  auto e1 = extract_energy(x, cfg);
  std::vector<double> x2 = x;
  for (auto& v : x2) v *= 2;
  auto e2 = extract_energy(x2, cfg);
  for (std::size_t i = 0; i < e1.size(); ++i) EXPECT_NEAR(e2[i], 2 * e1[i], 1e-9 * e2[i]);

  const int f = 7;
  const auto w = analysis_window(cfg.window, cfg.n_fft);
  double sum = 0;
  for (int k = 0; k <= cfg.n_fft / 2; ++k) {
    std::complex<double> acc = 0;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const long j = static_cast<long>(f) * cfg.hop - cfg.n_fft / 2 + i;
      acc += x[j] * w[i] * std::polar(1.0, -2 * M_PI * k * i / cfg.n_fft);
    }
    sum += std::norm(acc);
  }
  EXPECT_NEAR(e1[f], std::sqrt(sum), 1e-8 * e1[f]);
}

TEST(Features, F0OfSawtoothAndNoise) {
  config::FeatureConfig cfg;
  std::vector<double> saw(22050);
  for (std::size_t i = 0; i < saw.size(); ++i) {
    const double phase = std::fmod(220.0 * i / 22050.0, 1.0);
    saw[i] = 0.5 * (2 * phase - 1);
  }
  auto f0 = extract_f0(saw, cfg);
  std::vector<double> voiced;
  for (double v : f0)
    if (v > 0) voiced.push_back(v);
  ASSERT_GT(voiced.size(), f0.size() / 2);
  std::nth_element(voiced.begin(), voiced.begin() + voiced.size() / 2, voiced.end());
  EXPECT_NEAR(voiced[voiced.size() / 2], 220.0, 5.0);
  for (double v : f0) EXPECT_TRUE(v == 0 || (v >= 50 && v <= 800));

  Rng rng(11);
  std::vector<double> noise(22050);
  for (auto& v : noise) v = 0.3 * rng.normal();
  auto fn = extract_f0(noise, cfg);
  const auto unvoiced = std::count(fn.begin(), fn.end(), 0.0);
  EXPECT_GE(unvoiced, static_cast<long>(0.9 * fn.size()));
}

TEST(Features, StftInverseReconstructs) {
  config::FeatureConfig cfg;
  const auto x = tone(523, 22050, 0.3);
  auto spec = stft(x, cfg.n_fft, cfg.hop, cfg.window);
  auto y = istft(spec, cfg.n_fft, cfg.hop, cfg.window, x.size());
  double err = 0;
  for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(x[i] - y[i]));
  EXPECT_LT(err, 1e-9);
}
