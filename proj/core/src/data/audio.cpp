#include "specdiff/data/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include "specdiff/error.hpp"
#include "specdiff/io/tensor_file.hpp"

namespace specdiff::data {
namespace {

std::uint32_t u32le(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24); }
std::uint16_t u16le(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open audio file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError(path.string() + ": not a RIFF/WAVE file");
  }
  int format = 0, channels = 0, rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = u32le(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = u16le(chunk + 8);
      channels = u16le(chunk + 10);
      rate = static_cast<int>(u32le(chunk + 12));
      bits = u16le(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = u16le(chunk + 8 + 24);  // extensible: sub-format tag
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (!data || channels < 1 || rate <= 0) throw DataError(path.string() + ": missing fmt or data chunk");
  const bool is_float = format == 3;
  if (!(format == 1 || is_float)) throw DataError(path.string() + ": unsupported WAVE format tag " + std::to_string(format));
  const int bytes_per = bits / 8;
  if (bytes_per < 1 || (is_float && bytes_per != 4 && bytes_per != 8) || (!is_float && bytes_per > 4)) {
    throw DataError(path.string() + ": unsupported sample width " + std::to_string(bits));
  }
  const std::size_t frames = data_size / (static_cast<std::size_t>(bytes_per) * channels);
  if (frames == 0) throw DataError(path.string() + ": zero-length audio");

  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      double v = 0.0;
      if (is_float && bytes_per == 4) {
        float f;
        std::uint32_t u = u32le(p);
        std::memcpy(&f, &u, 4);
        v = f;
      } else if (is_float) {
        std::uint64_t u = u32le(p) | (std::uint64_t(u32le(p + 4)) << 32);
        std::memcpy(&v, &u, 8);
      } else if (bytes_per == 1) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else {
        std::int64_t s = 0;
        for (int b = 0; b < bytes_per; ++b) s |= std::int64_t(p[b]) << (8 * b);
        const int shift = 64 - 8 * bytes_per;
        s = (s << shift) >> shift;  // sign-extend
        v = static_cast<double>(s) / static_cast<double>(std::int64_t(1) << (8 * bytes_per - 1));
      }
      acc += v;
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, int sample_rate) {
  std::string out;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : samples) {
    const double c = std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  io::atomic_write(path, out);
}

std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw DataError("resample: rates must be positive");
  if (from_rate == to_rate || x.empty()) return x;
  const double ratio = static_cast<double>(to_rate) / from_rate;
  // Cutoff just below the lower Nyquist, relative to the input rate.
  const double cutoff = 0.97 * std::min(1.0, ratio);
  const int zeros = 24;
  const double half_width = zeros / cutoff;
  const std::size_t n_out = static_cast<std::size_t>(std::floor(x.size() * ratio));
  std::vector<double> y(n_out);
  const long n_in = static_cast<long>(x.size());
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = n / ratio;
    const long lo = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long hi = std::min(n_in - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long k = lo; k <= hi; ++k) {
      const double d = t - k;
      const double window = 0.5 + 0.5 * std::cos(M_PI * d / half_width);
      acc += x[k] * cutoff * sinc(cutoff * d) * window;
    }
    y[n] = acc;
  }
  return y;
}

Waveform load_audio(const std::filesystem::path& path, int target_rate) {
  Waveform w = read_wav(path);
  w.samples = resample(w.samples, w.sample_rate, target_rate);
  w.sample_rate = target_rate;
  if (w.samples.empty()) throw DataError(path.string() + ": zero-length audio after resampling");
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0)
    for (double& s : w.samples) s /= peak;
  return w;
}

}  // namespace specdiff::data
