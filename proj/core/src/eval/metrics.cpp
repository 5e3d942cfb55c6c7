#include "specdiff/eval/metrics.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "specdiff/data/audio.hpp"
#include "specdiff/data/features.hpp"
#include "specdiff/error.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "specdiff/synth/synthesis.hpp"

namespace specdiff::eval {

using nn::Tensor;

Tensor mel_cepstrum(const Tensor& log_mel, int order) {
  if (log_mel.rank() != 2 || log_mel.dim(0) < 1) throw DataError("mel_cepstrum expects a non-empty [F, M] mel");
  const int frames = log_mel.dim(0);
  const int M = log_mel.dim(1);
  if (order < 1 || order + 1 > M) {
    throw ConfigError("cepstral order must lie in [1, " + std::to_string(M - 1) + "], got " + std::to_string(order));
  }
  const int K = order + 1;
  std::vector<double> basis(static_cast<std::size_t>(K) * M);
  for (int k = 0; k < K; ++k) {
    const double norm = std::sqrt((k == 0 ? 1.0 : 2.0) / M);
    for (int m = 0; m < M; ++m) {
      basis[static_cast<std::size_t>(k) * M + m] = norm * std::cos(std::numbers::pi * k * (2 * m + 1) / (2.0 * M));
    }
  }
  Tensor out({frames, K});
  for (int f = 0; f < frames; ++f) {
    const double* x = log_mel.ptr() + static_cast<std::size_t>(f) * M;
    for (int k = 0; k < K; ++k) {
      const double* b = basis.data() + static_cast<std::size_t>(k) * M;
      double acc = 0.0;
      for (int m = 0; m < M; ++m) acc += b[m] * x[m];
      out[static_cast<std::size_t>(f) * K + k] = acc;
    }
  }
  return out;
}

Tensor mel_cepstrum(const std::vector<double>& waveform, const config::FeatureConfig& feature, int order) {
  return mel_cepstrum(data::extract_mel(waveform, feature), order);
}

Alignment parse_alignment(const std::string& s) {
  if (s == "teacher" || s == "truncate") return Alignment::kTruncate;
  if (s == "dtw") return Alignment::kDtw;
  throw ConfigError("alignment must be teacher or dtw, got '" + s + "'");
}

namespace {

double frame_distance(const Tensor& a, int i, const Tensor& b, int j, int first, int count) {
  const double* x = a.ptr() + static_cast<std::size_t>(i) * a.dim(1) + first;
  const double* y = b.ptr() + static_cast<std::size_t>(j) * b.dim(1) + first;
  double acc = 0.0;
  for (int d = 0; d < count; ++d) acc += (x[d] - y[d]) * (x[d] - y[d]);
  return std::sqrt(acc);
}

DtwResult dtw_columns(const Tensor& ref, const Tensor& gen, int first, int count) {
  const int N = ref.dim(0);
  const int M = gen.dim(0);
  if (N < 1 || M < 1) throw DataError("dtw needs two non-empty sequences");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> D(static_cast<std::size_t>(N) * M, inf);
  auto at = [&](int i, int j) -> double& { return D[static_cast<std::size_t>(i) * M + j]; };
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < M; ++j) {
      double best = 0.0;
      if (i > 0 || j > 0) {
        best = inf;
        if (i > 0 && j > 0) best = at(i - 1, j - 1);
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = best + frame_distance(ref, i, gen, j, first, count);
    }
  }
  DtwResult r;
  r.cost = at(N - 1, M - 1);
  int i = N - 1;
  int j = M - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i - 1, j - 1) <= std::min(i > 0 ? at(i - 1, j) : inf, j > 0 ? at(i, j - 1) : inf)) {
      --i;
      --j;
    } else if (i > 0 && (j == 0 || at(i - 1, j) <= at(i, j - 1))) {
      --i;
    } else {
      --j;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

}  // namespace

DtwResult dtw_align(const Tensor& ref, const Tensor& gen) {
  if (ref.rank() != 2 || gen.rank() != 2 || ref.dim(1) != gen.dim(1)) {
    throw DataError("dtw_align expects [N, D] and [M, D] sequences");
  }
  return dtw_columns(ref, gen, 0, ref.dim(1));
}

double metric_mcd(const Tensor& ref, const Tensor& gen, Alignment alignment, bool exclude_c0) {
  if (ref.rank() != 2 || gen.rank() != 2 || ref.dim(1) != gen.dim(1)) {
    throw DataError("metric_mcd expects cepstra of equal order");
  }
  if (ref.dim(0) < 1 || gen.dim(0) < 1) throw DataError("metric_mcd: empty alignment");
  const int first = exclude_c0 ? 1 : 0;
  const int count = ref.dim(1) - first;
  if (count < 1) throw DataError("metric_mcd: no coefficients left after excluding c0");
  std::vector<std::pair<int, int>> pairs;
  if (alignment == Alignment::kDtw) {
    pairs = dtw_columns(ref, gen, first, count).path;
  } else {
    for (int i = 0; i < std::min(ref.dim(0), gen.dim(0)); ++i) pairs.emplace_back(i, i);
  }
  const double k = 10.0 / std::numbers::ln10;
  double total = 0.0;
  for (const auto& [i, j] : pairs) {
    const double d = frame_distance(ref, i, gen, j, first, count);
    total += k * std::sqrt(2.0) * d;
  }
  return total / static_cast<double>(pairs.size());
}

Score metric_f0_rmse(const std::vector<double>& ref, const std::vector<double>& gen, VoicingMask mask) {
  if (ref.size() != gen.size()) {
    throw DataError("f0 tracks differ in length: " + std::to_string(ref.size()) + " vs " + std::to_string(gen.size()));
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const bool use = mask == VoicingMask::kJoint ? (ref[i] > 0 && gen[i] > 0) : ref[i] > 0;
    if (!use) continue;
    const double d = ref[i] - gen[i];
    acc += d * d;
    ++n;
  }
  if (n == 0) return {std::nullopt, mask == VoicingMask::kJoint ? "no jointly voiced frames" : "no voiced frames"};
  return {std::sqrt(acc / static_cast<double>(n)), {}};
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

int window_side(int extent) {
  const int side = std::min(7, extent);
  return side % 2 ? side : side - 1;
}

}  // namespace

double metric_ssim(const Tensor& ref, const Tensor& gen) {
  if (ref.empty()) throw DataError("metric_ssim: empty input");
  const auto [lo, hi] = std::minmax_element(ref.data.begin(), ref.data.end());
  const double range = *hi - *lo;
  return metric_ssim(ref, gen, range > 0 ? range : 1.0);
}

double metric_ssim(const Tensor& ref, const Tensor& gen, double data_range) {
  if (ref.rank() != 2 || ref.shape != gen.shape) {
    throw DataError("metric_ssim: shape mismatch " + nn::shape_string(ref.shape) + " vs " +
                    nn::shape_string(gen.shape));
  }
  const int H = ref.dim(0);
  const int W = ref.dim(1);
  const int kh = window_side(H);
  const int kw = window_side(W);
  const auto wh = gaussian_window(kh, 1.5);
  const auto ww = gaussian_window(kw, 1.5);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);

  double total = 0.0;
  long count = 0;
  for (int i = 0; i + kh <= H; ++i) {
    for (int j = 0; j + kw <= W; ++j) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int a = 0; a < kh; ++a) {
        for (int b = 0; b < kw; ++b) {
          const double w = wh[static_cast<std::size_t>(a)] * ww[static_cast<std::size_t>(b)];
          const std::size_t idx = static_cast<std::size_t>(i + a) * W + (j + b);
          const double x = ref[idx];
          const double y = gen[idx];
          mx += w * x;
          my += w * y;
          xx += w * x * x;
          yy += w * y * y;
          xy += w * x * y;
        }
      }
      const double vx = xx - mx * mx;
      const double vy = yy - my * my;
      const double cxy = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

bool tool_available(const std::string& tool) {
  std::istringstream is(tool);
  std::string exe;
  is >> exe;
  if (exe.empty()) return false;
  if (exe.find('/') != std::string::npos) return ::access(exe.c_str(), X_OK) == 0;
  const char* path = std::getenv("PATH");
  std::istringstream dirs(path ? path : "");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (!dir.empty() && ::access((dir + "/" + exe).c_str(), X_OK) == 0) return true;
  }
  return false;
}

}  // namespace

ExternalResult external_metric_adapter(const std::string& tool, const std::filesystem::path& ref_wav,
                                       const std::filesystem::path& gen_wav) {
  ExternalResult r;
  if (tool.empty()) {
    r.reason = "tool not configured";
    return r;
  }
  if (!tool_available(tool)) {
    r.reason = "tool not found: " + tool;
    return r;
  }
  const std::string cmd = tool + " " + shell_quote(ref_wav.string()) + " " + shell_quote(gen_wav.string()) +
                          " 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    r.status = ExternalResult::Status::kSkipped;
    r.reason = "could not start tool";
    return r;
  }
  std::string output;
  std::array<char, 256> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) output += buf.data();
  const int status = ::pclose(pipe);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    r.status = ExternalResult::Status::kSkipped;
    r.reason = "tool failed with status " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : status);
    return r;
  }
  std::istringstream is(output);
  std::string token;
  is >> token;
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size() || !std::isfinite(v)) throw std::invalid_argument(token);
    r.status = ExternalResult::Status::kOk;
    r.value = v;
  } catch (const std::exception&) {
    r.status = ExternalResult::Status::kSkipped;
    r.reason = "could not parse tool output '" + token + "'";
  }
  return r;
}

namespace {

const char* column_name(const std::string& metric) {
  if (metric == "ssim") return "ssim";
  if (metric == "mcd") return "mcd_db";
  if (metric == "f0rmse") return "f0_rmse_hz";
  if (metric == "stoi") return "stoi";
  if (metric == "pesq") return "pesq";
  throw ConfigError("unknown metric '" + metric + "' (expected ssim, mcd, f0rmse, stoi, pesq)");
}

std::set<std::string> ids_in(const std::filesystem::path& dir) {
  std::set<std::string> ids;
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".bin") ids.insert(e.path().stem().string());
  }
  return ids;
}

Tensor load_mel(const std::filesystem::path& path, int n_mels) {
  Tensor m = io::load_tensor(path);
  if (m.rank() != 2 || m.dim(1) != n_mels || m.dim(0) < 1) {
    throw DataError(path.filename().string() + " has shape " + nn::shape_string(m.shape) + ", expected [F, " +
                    std::to_string(n_mels) + "]");
  }
  if (!m.all_finite()) throw DataError(path.filename().string() + " contains non-finite values");
  return m;
}

/// Audio for F0: the stored wave when present, else a Griffin-Lim rendering
/// of the mel.
std::vector<double> audio_for(const std::filesystem::path& dir, const std::string& id, const Tensor& mel,
                              const config::RunConfig& cfg) {
  const auto wav = dir / (id + ".wav");
  if (std::filesystem::exists(wav)) return data::load_audio(wav, cfg.feature.sample_rate).samples;
  return synth::griffin_lim(synth::mel_to_linear(mel, cfg.feature), cfg.feature, cfg.eval.griffin_lim_iters, 0);
}

/// Gen frames resampled onto the reference frame axis along a DTW path.
Tensor warp_to_reference(const Tensor& gen, const std::vector<std::pair<int, int>>& path, int ref_frames) {
  const int C = gen.dim(1);
  Tensor out({ref_frames, C});
  std::vector<bool> filled(static_cast<std::size_t>(ref_frames), false);
  for (const auto& [i, j] : path) {
    if (filled[static_cast<std::size_t>(i)]) continue;
    filled[static_cast<std::size_t>(i)] = true;
    std::copy_n(gen.ptr() + static_cast<std::size_t>(j) * C, C, out.ptr() + static_cast<std::size_t>(i) * C);
  }
  return out;
}

std::vector<double> warp_track(const std::vector<double>& gen, const std::vector<std::pair<int, int>>& path,
                               std::size_t ref_len) {
  std::vector<double> out(ref_len, 0.0);
  std::vector<bool> filled(ref_len, false);
  for (const auto& [i, j] : path) {
    const auto ii = static_cast<std::size_t>(i);
    if (ii >= ref_len || filled[ii]) continue;
    filled[ii] = true;
    out[ii] = static_cast<std::size_t>(j) < gen.size() ? gen[static_cast<std::size_t>(j)] : 0.0;
  }
  return out;
}

UtteranceMetrics score_one(const std::filesystem::path& ref_dir, const std::filesystem::path& gen_dir,
                           const std::string& id, const config::RunConfig& cfg, const std::vector<std::string>& metrics,
                           Alignment align) {
  UtteranceMetrics u;
  u.id = id;
  const Tensor ref = load_mel(ref_dir / (id + ".bin"), cfg.feature.n_mels);
  const Tensor gen = load_mel(gen_dir / (id + ".bin"), cfg.feature.n_mels);
  if (align == Alignment::kTruncate && ref.shape != gen.shape) {
    throw DataError("teacher-forced shapes differ: " + nn::shape_string(ref.shape) + " vs " +
                    nn::shape_string(gen.shape));
  }
  std::vector<std::pair<int, int>> path;
  if (align == Alignment::kDtw) path = dtw_align(ref, gen).path;

  auto wants = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };
  if (wants("ssim")) {
    const Tensor g = align == Alignment::kDtw ? warp_to_reference(gen, path, ref.dim(0)) : gen;
    u.values["ssim"] = metric_ssim(ref, g);
  }
  if (wants("mcd")) {
    const int order = std::min(cfg.eval.mcd_order, cfg.feature.n_mels - 1);
    u.values["mcd_db"] = metric_mcd(mel_cepstrum(ref, order), mel_cepstrum(gen, order), align, cfg.eval.mcd_exclude_c0);
  }
  std::vector<double> ref_audio;
  std::vector<double> gen_audio;
  if (wants("f0rmse")) {
    ref_audio = audio_for(ref_dir, id, ref, cfg);
    gen_audio = audio_for(gen_dir, id, gen, cfg);
    auto f_ref = data::extract_f0(ref_audio, cfg.feature);
    auto f_gen = data::extract_f0(gen_audio, cfg.feature);
    if (align == Alignment::kDtw) {
      f_gen = warp_track(f_gen, path, f_ref.size());
    } else {
      const std::size_t n = std::min({f_ref.size(), f_gen.size(), static_cast<std::size_t>(ref.dim(0))});
      f_ref.resize(n);
      f_gen.resize(n);
    }
    const Score s = metric_f0_rmse(f_ref, f_gen);
    if (s.value) {
      u.values["f0_rmse_hz"] = *s.value;
    } else {
      u.skipped_metrics["f0_rmse_hz"] = s.reason;
    }
  }
  const auto sidecar = gen_dir / (id + ".json");
  if (std::filesystem::exists(sidecar)) {
    std::ifstream is(sidecar);
    try {
      const auto j = nlohmann::json::parse(is);
      if (j.contains("rtf")) u.values["rtf"] = j.at("rtf").get<double>();
    } catch (const nlohmann::json::exception& e) {
      u.skipped_metrics["rtf"] = std::string("unreadable sidecar: ") + e.what();
    }
  }
  for (const char* name : {"stoi", "pesq"}) {
    if (!wants(name)) continue;
    const std::string& tool = std::string(name) == "stoi" ? cfg.eval.stoi_tool : cfg.eval.pesq_tool;
    const auto ref_wav = ref_dir / (id + ".wav");
    const auto gen_wav = gen_dir / (id + ".wav");
    if (!std::filesystem::exists(ref_wav) || !std::filesystem::exists(gen_wav)) {
      u.skipped_metrics[name] = "missing wave file";
      continue;
    }
    const auto r = external_metric_adapter(tool, ref_wav, gen_wav);
    if (r.status == ExternalResult::Status::kOk) {
      u.values[name] = r.value;
    } else if (r.status == ExternalResult::Status::kSkipped) {
      u.skipped_metrics[name] = r.reason;
    }
  }
  return u;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

MetricsReport evaluate_corpus(const std::filesystem::path& ref_dir, const std::filesystem::path& gen_dir,
                              const config::RunConfig& cfg) {
  const Alignment align = parse_alignment(cfg.eval.align);
  MetricsReport report;
  report.alignment = cfg.eval.align;
  std::vector<std::string> metrics;
  for (const auto& m : cfg.eval.metrics) {
    column_name(m);
    if ((m == "stoi" && !tool_available(cfg.eval.stoi_tool)) || (m == "pesq" && !tool_available(cfg.eval.pesq_tool))) {
      report.omitted.push_back(m);
      continue;
    }
    metrics.push_back(m);
  }
  report.metrics = metrics;

  const auto ref_ids = ids_in(ref_dir);
  const auto gen_ids = ids_in(gen_dir);
  std::vector<std::string> ids;
  std::set_intersection(ref_ids.begin(), ref_ids.end(), gen_ids.begin(), gen_ids.end(), std::back_inserter(ids));
  if (ids.empty()) throw DataError("no utterance ids shared by " + ref_dir.string() + " and " + gen_dir.string());

  std::vector<std::optional<UtteranceMetrics>> results(ids.size());
  std::vector<std::string> errors(ids.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < ids.size(); k = next++) {
      try {
        results[k] = score_one(ref_dir, gen_dir, ids[k], cfg, metrics, align);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                             static_cast<unsigned>(ids.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::map<std::string, double> sums;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!results[k]) {
      report.skipped[ids[k]] = errors[k];
      continue;
    }
    for (const auto& [name, v] : results[k]->values) {
      sums[name] += v;
      report.counts[name] += 1;
    }
    report.utterances.push_back(std::move(*results[k]));
  }
  for (const auto& [name, total] : sums) report.means[name] = total / report.counts[name];
  return report;
}

bool MetricsReport::complete() const {
  if (utterances.empty()) return false;
  for (const auto& m : metrics) {
    if (!means.count(column_name(m))) return false;
  }
  return true;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "alignment=" << alignment << " scored=" << utterances.size() << " skipped=" << skipped.size() << '\n';
  for (const auto& m : omitted) os << "omitted=" << m << " reason=tool_unavailable\n";
  for (const auto& u : utterances) {
    os << "id=" << u.id;
    for (const auto& [k, v] : u.values) os << ' ' << k << '=' << fmt(v);
    for (const auto& [k, why] : u.skipped_metrics) os << ' ' << k << "_skipped=\"" << why << '"';
    os << '\n';
  }
  for (const auto& [id, why] : skipped) os << "skipped id=" << id << " reason=\"" << why << "\"\n";
  os << "mean";
  for (const auto& [k, v] : means) os << ' ' << k << '=' << fmt(v);
  os << '\n';
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["alignment"] = alignment;
  j["metrics"] = metrics;
  j["omitted"] = omitted;
  j["means"] = means;
  j["counts"] = counts;
  j["skipped"] = skipped;
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : utterances) {
    j["utterances"].push_back({{"id", u.id}, {"values", u.values}, {"skipped_metrics", u.skipped_metrics}});
  }
  return j.dump(2) + "\n";
}

}  // namespace specdiff::eval
