#include "specdiff/data/features.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>

#include "specdiff/error.hpp"

namespace specdiff::data {
namespace {

Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> fft = [] {
    Eigen::FFT<double> f;
    f.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    return f;
  }();
  return fft;
}

void check_length(const std::vector<double>& x, const config::FeatureConfig& cfg) {
  if (x.empty()) throw DataError("feature extraction: empty waveform");
  if (static_cast<int>(x.size()) < cfg.window || static_cast<int>(x.size()) <= cfg.n_fft / 2) {
    throw DataError("feature extraction: waveform of " + std::to_string(x.size()) +
                    " samples is shorter than one analysis window (" + std::to_string(cfg.window) + ")");
  }
}

}  // namespace

int frame_count(std::size_t n_samples, int hop) { return 1 + static_cast<int>(n_samples / hop); }

std::vector<double> analysis_window(int window, int n_fft) {
  std::vector<double> w(n_fft, 0.0);
  const int offset = (n_fft - window) / 2;
  for (int i = 0; i < window; ++i) w[offset + i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / window);
  return w;
}

Spectrogram stft(const std::vector<double>& x, int n_fft, int hop, int window) {
  const int pad = n_fft / 2;
  const long n = static_cast<long>(x.size());
  if (n <= pad) throw DataError("stft: signal shorter than half an FFT frame");
  auto sample = [&](long i) {
    // Reflect without repeating the edge sample.
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return x[i];
  };
  const std::vector<double> w = analysis_window(window, n_fft);
  Spectrogram s;
  s.frames = frame_count(x.size(), hop);
  s.bins = n_fft / 2 + 1;
  s.values.resize(static_cast<std::size_t>(s.frames) * s.bins);
  std::vector<double> frame(n_fft);
  std::vector<std::complex<double>> out;
  for (int f = 0; f < s.frames; ++f) {
    const long start = static_cast<long>(f) * hop - pad;
    for (int i = 0; i < n_fft; ++i) frame[i] = w[i] == 0.0 ? 0.0 : sample(start + i) * w[i];
    fft_engine().fwd(out, frame);
    std::copy_n(out.begin(), s.bins, s.values.begin() + static_cast<std::size_t>(f) * s.bins);
  }
  return s;
}

std::vector<double> istft(const Spectrogram& spec, int n_fft, int hop, int window, std::size_t length) {
  const int pad = n_fft / 2;
  const std::vector<double> w = analysis_window(window, n_fft);
  const std::size_t total = static_cast<std::size_t>(spec.frames - 1) * hop + n_fft;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  std::vector<std::complex<double>> half(spec.bins);
  std::vector<double> frame;
  for (int f = 0; f < spec.frames; ++f) {
    std::copy_n(spec.values.begin() + static_cast<std::size_t>(f) * spec.bins, spec.bins, half.begin());
    fft_engine().inv(frame, half, n_fft);
    const std::size_t start = static_cast<std::size_t>(f) * hop;
    for (int i = 0; i < n_fft; ++i) {
      acc[start + i] += frame[i] * w[i];
      norm[start + i] += w[i] * w[i];
    }
  }
  std::vector<double> y(length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t j = i + pad;
    if (j < total && norm[j] > 1e-10) y[i] = acc[j] / norm[j];
  }
  return y;
}

nn::Tensor magnitude(const Spectrogram& spec) {
  nn::Tensor m({spec.frames, spec.bins});
  for (std::size_t i = 0; i < spec.values.size(); ++i) m[i] = std::abs(spec.values[i]);
  return m;
}

double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

nn::Tensor mel_filterbank(int sample_rate, int n_fft, int n_mels, double fmin, double fmax) {
  const int bins = n_fft / 2 + 1;
  std::vector<double> fft_freqs(bins);
  for (int k = 0; k < bins; ++k) fft_freqs[k] = static_cast<double>(k) * sample_rate / n_fft;
  const double mmin = hz_to_mel(fmin), mmax = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mmin + (mmax - mmin) * i / (n_mels + 1));
  nn::Tensor fb({n_mels, bins});
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double enorm = 2.0 / (hi - lo);
    for (int k = 0; k < bins; ++k) {
      const double up = (fft_freqs[k] - lo) / (mid - lo);
      const double down = (hi - fft_freqs[k]) / (hi - mid);
      fb[static_cast<std::size_t>(m) * bins + k] = std::max(0.0, std::min(up, down)) * enorm;
    }
  }
  return fb;
}

namespace {

nn::Tensor log_mel_from_magnitude(const nn::Tensor& mag, const config::FeatureConfig& cfg) {
  const nn::Tensor fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
  const int frames = mag.dim(0), bins = mag.dim(1);
  nn::Tensor mel({frames, cfg.n_mels});
  for (int f = 0; f < frames; ++f)
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      const double* row = fb.ptr() + static_cast<std::size_t>(m) * bins;
      const double* spec = mag.ptr() + static_cast<std::size_t>(f) * bins;
      for (int k = 0; k < bins; ++k) acc += row[k] * spec[k];
      mel[static_cast<std::size_t>(f) * cfg.n_mels + m] = std::log(std::max(acc, cfg.log_floor));
    }
  return mel;
}

}  // namespace

nn::Tensor extract_mel(const std::vector<double>& waveform, const config::FeatureConfig& cfg) {
  check_length(waveform, cfg);
  return log_mel_from_magnitude(magnitude(stft(waveform, cfg.n_fft, cfg.hop, cfg.window)), cfg);
}

std::vector<double> extract_energy(const nn::Tensor& magnitudes) {
  const int frames = magnitudes.dim(0), bins = magnitudes.dim(1);
  std::vector<double> e(frames);
  for (int f = 0; f < frames; ++f) {
    double s = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double v = magnitudes[static_cast<std::size_t>(f) * bins + k];
      s += v * v;
    }
    e[f] = std::sqrt(s);
  }
  return e;
}

std::vector<double> extract_energy(const std::vector<double>& waveform, const config::FeatureConfig& cfg) {
  check_length(waveform, cfg);
  return extract_energy(magnitude(stft(waveform, cfg.n_fft, cfg.hop, cfg.window)));
}

std::vector<double> extract_f0(const std::vector<double>& x, const config::FeatureConfig& cfg) {
  const int frames = frame_count(x.size(), cfg.hop);
  std::vector<double> f0(frames, 0.0);
  const int tau_min = std::max(2, static_cast<int>(std::floor(cfg.sample_rate / cfg.f0_max)));
  const int tau_max = static_cast<int>(std::ceil(cfg.sample_rate / cfg.f0_min));
  const int span = std::max(cfg.window, 2 * tau_max + 2);
  const int integration = span - tau_max - 1;
  const long n = static_cast<long>(x.size());
  std::vector<double> frame(span), d(tau_max + 2), cmnd(tau_max + 2);
  for (int f = 0; f < frames; ++f) {
    const long start = static_cast<long>(f) * cfg.hop - span / 2;
    double power = 0.0;
    for (int i = 0; i < span; ++i) {
      const long j = start + i;
      frame[i] = (j >= 0 && j < n) ? x[j] : 0.0;
      power += frame[i] * frame[i];
    }
    if (power / span < 1e-8) continue;  // silence
    d[0] = 0.0;
    for (int tau = 1; tau <= tau_max + 1; ++tau) {
      double s = 0.0;
      for (int j = 0; j < integration; ++j) {
        const double diff = frame[j] - frame[j + tau];
        s += diff * diff;
      }
      d[tau] = s;
    }
    cmnd[0] = 1.0;
    double running = 0.0;
    for (int tau = 1; tau <= tau_max + 1; ++tau) {
      running += d[tau];
      cmnd[tau] = running > 0.0 ? d[tau] * tau / running : 1.0;
    }
    int best = -1;
    for (int tau = tau_min; tau <= tau_max; ++tau) {
      if (cmnd[tau] < cfg.voicing_threshold) {
        while (tau + 1 <= tau_max && cmnd[tau + 1] < cmnd[tau]) ++tau;
        best = tau;
        break;
      }
    }
    if (best < 0) continue;
    double refined = best;
    if (best > 1 && best < tau_max + 1) {
      const double a = cmnd[best - 1], b = cmnd[best], c = cmnd[best + 1];
      const double denom = a - 2.0 * b + c;
      if (std::abs(denom) > 1e-12) refined = best + 0.5 * (a - c) / denom;
    }
    const double hz = cfg.sample_rate / refined;
    if (hz >= cfg.f0_min && hz <= cfg.f0_max) f0[f] = hz;
  }
  return f0;
}

FrameFeatures analyze(const std::vector<double>& waveform, const config::FeatureConfig& cfg) {
  check_length(waveform, cfg);
  const nn::Tensor mag = magnitude(stft(waveform, cfg.n_fft, cfg.hop, cfg.window));
  FrameFeatures out;
  out.mel = log_mel_from_magnitude(mag, cfg);
  out.energy = extract_energy(mag);
  out.f0 = extract_f0(waveform, cfg);
  return out;
}

}  // namespace specdiff::data
