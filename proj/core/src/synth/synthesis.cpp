#include "specdiff/synth/synthesis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

#include "specdiff/data/audio.hpp"
#include "specdiff/data/features.hpp"
#include "specdiff/error.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "specdiff/train/trainer.hpp"

namespace specdiff::synth {

using nn::Tensor;
using nn::Var;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor to_frames(const Tensor& x) {
  // [1, F, C] -> [F, C]
  return Tensor({x.dim(1), x.dim(2)}, x.data);
}

}  // namespace

Synthesizer::Synthesizer(const std::filesystem::path& checkpoint) {
  auto st = train::load_checkpoint(checkpoint);
  generator_ = std::move(st.models.generator);
  cfg_ = st.config;
  stats_ = st.stats;
  schedule_ = diffusion::build_schedule(cfg_.diffusion.steps, diffusion::ScheduleSpec::parse(cfg_.diffusion.schedule));
}

Synthesizer::Synthesizer(std::unique_ptr<model::Generator> generator, config::RunConfig cfg, data::NormStats stats)
    : generator_(std::move(generator)), cfg_(std::move(cfg)), stats_(std::move(stats)) {
  schedule_ = diffusion::build_schedule(cfg_.diffusion.steps, diffusion::ScheduleSpec::parse(cfg_.diffusion.schedule));
}

SynthesisResult Synthesizer::synthesize(const SynthesisRequest& request) const {
  if (request.phonemes.empty()) throw DataError("synthesis request has no phonemes");
  nn::NoGradGuard no_grad;
  const auto start = Clock::now();
  const auto& gen = *generator_;

  model::TextBatch text;
  text.phonemes.push_back(data::phoneme_ids(request.phonemes, cfg_.model.vocab));
  text.speakers.push_back(gen.speakers().index(request.speaker));

  SynthesisResult out;
  auto t0 = Clock::now();
  const auto encoded = gen.encode_text(text);
  out.times.encode = seconds_since(t0);

  model::VarianceTargets override_targets;
  const model::VarianceTargets* targets = nullptr;
  if (request.duration_override) {
    if (request.duration_override->size() != request.phonemes.size()) {
      throw DataError("duration override has " + std::to_string(request.duration_override->size()) +
                      " entries for " + std::to_string(request.phonemes.size()) + " phonemes");
    }
    override_targets.durations.push_back(*request.duration_override);
    targets = &override_targets;
  }
  t0 = Clock::now();
  const auto cond = gen.adapt(encoded, text.speakers, model::Mode::kInfer, targets);
  out.times.adapt = seconds_since(t0);
  out.durations = cond.variances.durations.at(0);

  Rng rng(request.seed);
  const int frames = cond.frames.at(0);
  const Var x_T = Var::constant(diffusion::standard_normal({1, frames, gen.n_mels()}, rng));
  diffusion::DenoiseFn denoise = [&](const Var& x, int t) {
    const auto td = Clock::now();
    Var y = gen.diffusion_decode(x, cond, {t});
    out.times.decode.push_back(seconds_since(td));
    return y;
  };
  const auto trajectory = diffusion::reverse_rollout(x_T, schedule_, denoise, rng);

  out.mel = data::denormalize_mel(to_frames(trajectory.back().value()), stats_);
  if (!out.mel.all_finite()) throw NumericalError("non-finite synthesized mel");
  if (request.dump_steps) {
    for (const auto& x : trajectory) out.steps.push_back(data::denormalize_mel(to_frames(x.value()), stats_));
  }
  out.times.total = seconds_since(start);
  return out;
}

std::string RtfReport::to_text() const {
  std::ostringstream os;
  os << "rtf=" << rtf << " median_seconds=" << median_seconds << " audio_seconds=" << audio_seconds
     << " frames=" << frames << " repetitions=" << repetitions << " encode=" << breakdown.encode
     << " adapt=" << breakdown.adapt;
  for (std::size_t i = 0; i < breakdown.decode.size(); ++i) os << " decode_" << i << '=' << breakdown.decode[i];
  return os.str();
}

RtfReport measure_rtf(const Synthesizer& synth, const SynthesisRequest& request, int repetitions) {
  if (repetitions < 1) throw UsageError("rtf repetitions must be >= 1");
  synth.synthesize(request);  // warm-up
  std::vector<SynthesisResult> runs;
  std::vector<double> totals;
  for (int i = 0; i < repetitions; ++i) {
    runs.push_back(synth.synthesize(request));
    totals.push_back(runs.back().times.total);
  }
  const auto& f = synth.config().feature;
  RtfReport r;
  r.repetitions = repetitions;
  r.frames = runs.front().mel.dim(0);
  r.audio_seconds = static_cast<double>(r.frames) * f.hop / f.sample_rate;
  r.median_seconds = median(totals);
  r.rtf = r.median_seconds / r.audio_seconds;
  auto stage = [&](auto getter) {
    std::vector<double> v;
    for (const auto& run : runs) v.push_back(getter(run.times));
    return median(v);
  };
  r.breakdown.encode = stage([](const StageTimes& t) { return t.encode; });
  r.breakdown.adapt = stage([](const StageTimes& t) { return t.adapt; });
  r.breakdown.total = r.median_seconds;
  for (std::size_t k = 0; k < runs.front().times.decode.size(); ++k) {
    r.breakdown.decode.push_back(stage([k](const StageTimes& t) { return t.decode.at(k); }));
  }
  return r;
}

std::filesystem::path sidecar_path(const std::filesystem::path& mel_path) {
  auto p = mel_path;
  return p.replace_extension(".json");
}

void export_mel(const std::filesystem::path& path, const Tensor& mel, const config::FeatureConfig& f,
                const std::map<std::string, double>& extra) {
  if (mel.rank() != 2) throw DataError("exported mel must be [frames, n_mels]");
  if (mel.dim(1) != 80) {
    throw DataError("vocoder export expects 80 mel channels, got " + std::to_string(mel.dim(1)));
  }
  io::save_tensor(path, mel, io::DType::kFloat32);
  nlohmann::json meta = {
      {"layout", "frames x mels"},
      {"scale", "natural log of filterbank magnitude"},
      {"frames", mel.dim(0)},
      {"n_mels", mel.dim(1)},
      {"sample_rate", f.sample_rate},
      {"hop", f.hop},
      {"window", f.window},
      {"n_fft", f.n_fft},
      {"fmin", f.fmin},
      {"fmax", f.fmax},
      {"log_floor", f.log_floor},
      {"mel_scale", "slaney"},
  };
  for (const auto& [k, v] : extra) meta[k] = v;
  io::atomic_write(sidecar_path(path), meta.dump(2) + "\n");
}

Tensor mel_to_linear(const Tensor& log_mel, const config::FeatureConfig& f) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Tensor fb = data::mel_filterbank(f.sample_rate, f.n_fft, f.n_mels, f.fmin, f.fmax);
  const int n_mels = fb.dim(0);
  const int bins = fb.dim(1);
  if (log_mel.rank() != 2 || log_mel.dim(1) != n_mels) {
    throw DataError("mel has shape " + nn::shape_string(log_mel.shape) + ", expected [F, " +
                    std::to_string(n_mels) + "]");
  }
  const int frames = log_mel.dim(0);
  const Eigen::Map<const Mat> M(fb.ptr(), n_mels, bins);
  Mat target(n_mels, frames);
  for (int t = 0; t < frames; ++t) {
    for (int m = 0; m < n_mels; ++m) target(m, t) = std::exp(log_mel[static_cast<std::size_t>(t) * n_mels + m]);
  }

  // Projected gradient on 0.5 |M s - y|^2 subject to s >= 0, started from the
  // clipped pseudo-inverse solution.
  const Mat pinv = M.completeOrthogonalDecomposition().pseudoInverse();
  Mat S = (pinv * target).cwiseMax(0.0);
  const double lipschitz = Eigen::JacobiSVD<Mat>(M).singularValues()(0);
  const double step = 1.0 / (lipschitz * lipschitz);
  const Eigen::SparseMatrix<double> Ms = M.sparseView();
  const Eigen::SparseMatrix<double> Mt = Ms.transpose();
  for (int it = 0; it < 200; ++it) {
    const Mat residual = Ms * S - target;
    S = (S - step * (Mt * residual)).cwiseMax(0.0);
  }

  Tensor out({frames, bins});
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < bins; ++k) out[static_cast<std::size_t>(t) * bins + k] = S(k, t);
  }
  return out;
}

std::vector<double> griffin_lim(const Tensor& magnitudes, const config::FeatureConfig& f, int iterations,
                                std::uint64_t seed) {
  const int frames = magnitudes.dim(0);
  const int bins = magnitudes.dim(1);
  if (bins != f.n_fft / 2 + 1) throw DataError("magnitude bins do not match n_fft");
  if (frames < 1) throw DataError("griffin_lim needs at least one frame");
  const std::size_t length = static_cast<std::size_t>(frames - 1) * f.hop;

  Rng rng(seed);
  data::Spectrogram spec;
  spec.frames = frames;
  spec.bins = bins;
  spec.values.resize(magnitudes.size());
  for (std::size_t i = 0; i < magnitudes.size(); ++i) {
    spec.values[i] = std::polar(magnitudes[i], 2.0 * std::numbers::pi * rng.uniform());
  }
  std::vector<double> y = data::istft(spec, f.n_fft, f.hop, f.window, length);
  for (int it = 0; it < iterations; ++it) {
    const auto est = data::stft(y, f.n_fft, f.hop, f.window);
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < bins; ++k) {
        const auto z = t < est.frames ? est.at(t, k) : std::complex<double>(0.0);
        const double a = std::abs(z);
        spec.at(t, k) = a > 0 ? z * (magnitudes[static_cast<std::size_t>(t) * bins + k] / a)
                              : std::complex<double>(magnitudes[static_cast<std::size_t>(t) * bins + k]);
      }
    }
    y = data::istft(spec, f.n_fft, f.hop, f.window, length);
  }
  return y;
}

void render_wav(const std::filesystem::path& path, const Tensor& log_mel, const config::FeatureConfig& f,
                int iterations, std::uint64_t seed) {
  auto y = griffin_lim(mel_to_linear(log_mel, f), f, iterations, seed);
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  if (peak > 0.99) {
    for (double& v : y) v *= 0.99 / peak;
  }
  data::write_wav(path, y, f.sample_rate);
}

std::vector<std::string> synthesize_corpus(const Synthesizer& synth, const data::Dataset& ds,
                                           const std::vector<int>& indices, const CorpusSynthesisOptions& options) {
  std::filesystem::create_directories(options.out_dir);
  const auto& vocab = synth.config().model.vocab;
  const auto& f = synth.config().feature;
  std::vector<std::string> written;
  for (int i : indices) {
    const auto& u = ds.utterances.at(static_cast<std::size_t>(i));
    SynthesisRequest req;
    for (int id : u.phonemes) req.phonemes.push_back(vocab.at(static_cast<std::size_t>(id)));
    req.speaker = u.speaker;
    req.seed = options.seed + static_cast<std::uint64_t>(i);
    if (options.teacher_forced) req.duration_override = u.durations;
    const auto result = synth.synthesize(req);
    const double audio = static_cast<double>(result.mel.dim(0)) * f.hop / f.sample_rate;
    const auto mel_path = options.out_dir / (u.id + ".bin");
    export_mel(mel_path, result.mel, f, {{"rtf", result.times.total / audio}});
    if (options.write_wav) {
      render_wav(options.out_dir / (u.id + ".wav"), result.mel, f, synth.config().eval.griffin_lim_iters, req.seed);
    }
    written.push_back(u.id);
  }
  return written;
}

}  // namespace specdiff::synth
