#pragma once

#include <complex>
#include <vector>

#include "specdiff/config/run_config.hpp"
#include "specdiff/nn/tensor.hpp"

namespace specdiff::data {

/// Complex STFT, frames x (n_fft / 2 + 1) bins, row-major.
struct Spectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<std::complex<double>> values;

  std::complex<double>& at(int f, int k) { return values[static_cast<std::size_t>(f) * bins + k]; }
  std::complex<double> at(int f, int k) const { return values[static_cast<std::size_t>(f) * bins + k]; }
};

/// Frames produced for `n_samples` with centred framing: 1 + floor(n / hop).
int frame_count(std::size_t n_samples, int hop);

/// Periodic Hann window of `window` samples, zero-padded and centred in n_fft.
std::vector<double> analysis_window(int window, int n_fft);

/// Centred STFT: the signal is reflect-padded by n_fft / 2 on both sides so
/// frame f is centred on sample f * hop.
Spectrogram stft(const std::vector<double>& x, int n_fft, int hop, int window);

/// Weighted overlap-add inverse of stft(); output trimmed to `length` samples.
std::vector<double> istft(const Spectrogram& spec, int n_fft, int hop, int window, std::size_t length);

/// [frames, bins] magnitudes.
nn::Tensor magnitude(const Spectrogram& spec);

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Slaney-style triangular filters with area normalisation, [n_mels, n_fft / 2 + 1].
nn::Tensor mel_filterbank(int sample_rate, int n_fft, int n_mels, double fmin, double fmax);

/// Log mel spectrogram [F, n_mels]: filterbank applied to the STFT magnitude,
/// clamped at cfg.log_floor, natural log. Throws DataError for a waveform
/// shorter than one window.
nn::Tensor extract_mel(const std::vector<double>& waveform, const config::FeatureConfig& cfg);

/// Per-frame L2 norm of the linear magnitude spectrum.
std::vector<double> extract_energy(const nn::Tensor& magnitudes);
std::vector<double> extract_energy(const std::vector<double>& waveform, const config::FeatureConfig& cfg);

/// YIN-style F0 track in Hz, one value per STFT frame; 0 marks unvoiced.
std::vector<double> extract_f0(const std::vector<double>& waveform, const config::FeatureConfig& cfg);

/// Mel, energy and F0 from one analysis pass.
struct FrameFeatures {
  nn::Tensor mel;  // [F, n_mels], log scale
  std::vector<double> energy;
  std::vector<double> f0;
};
FrameFeatures analyze(const std::vector<double>& waveform, const config::FeatureConfig& cfg);

}  // namespace specdiff::data
