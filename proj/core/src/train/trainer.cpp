#include "specdiff/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "specdiff/config/config.hpp"
#include "specdiff/error.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "specdiff/version.hpp"

namespace specdiff::train {

using nn::Tensor;
using nn::Var;

std::vector<int> sample_timesteps(int batch, int steps, Rng& rng) {
  if (steps < 1) throw ConfigError("diffusion.steps must be >= 1");
  std::vector<int> t(static_cast<std::size_t>(batch));
  for (auto& v : t) v = rng.uniform_int(1, steps);
  return t;
}

Batch make_batch(const data::Dataset& ds, const std::vector<int>& indices, const std::vector<std::string>& speakers) {
  if (indices.empty()) throw DataError("empty batch");
  Batch b;
  int max_frames = 0;
  int n_mels = 0;
  for (int i : indices) {
    const auto& u = ds.utterances.at(static_cast<std::size_t>(i));
    max_frames = std::max(max_frames, u.frames());
    n_mels = u.mel.dim(1);
  }
  const int B = static_cast<int>(indices.size());
  b.mel = Tensor({B, max_frames, n_mels});
  const bool per_frame = ds.granularity == "frame";
  for (int k = 0; k < B; ++k) {
    const auto& u = ds.utterances[static_cast<std::size_t>(indices[static_cast<std::size_t>(k)])];
    auto it = std::find(speakers.begin(), speakers.end(), u.speaker);
    if (it == speakers.end()) throw DataError("utterance " + u.id + " has unknown speaker '" + u.speaker + "'");
    b.ids.push_back(u.id);
    b.text.phonemes.push_back(u.phonemes);
    b.text.speakers.push_back(static_cast<int>(it - speakers.begin()));
    b.targets.durations.push_back(u.durations);
    b.targets.pitch.push_back(u.pitch);
    b.targets.energy.push_back(u.energy);
    b.targets.mel_frames.push_back(u.frames());
    b.frames.push_back(u.frames());
    b.phoneme_lengths.push_back(static_cast<int>(u.phonemes.size()));
    b.variance_lengths.push_back(per_frame ? u.frames() : static_cast<int>(u.phonemes.size()));
    std::copy(u.mel.data.begin(), u.mel.data.end(),
              b.mel.data.begin() + static_cast<std::ptrdiff_t>(k) * max_frames * n_mels);
  }
  return b;
}

BatchSampler::BatchSampler(const data::Dataset& ds, std::vector<int> pool, int batch_size)
    : sorted_(std::move(pool)), batch_size_(batch_size) {
  if (sorted_.empty()) throw DataError("no training utterances");
  if (batch_size_ < 1) throw ConfigError("train.batch_size must be >= 1");
  std::stable_sort(sorted_.begin(), sorted_.end(), [&](int a, int b) {
    return ds.utterances[static_cast<std::size_t>(a)].frames() < ds.utterances[static_cast<std::size_t>(b)].frames();
  });
}

std::vector<int> BatchSampler::next(Rng& rng) const {
  const int n = static_cast<int>(sorted_.size());
  if (n <= batch_size_) return sorted_;
  const int start = rng.uniform_int(0, n - batch_size_);
  return {sorted_.begin() + start, sorted_.begin() + start + batch_size_};
}

namespace {

Models build_models_with(const config::RunConfig& cfg, const std::vector<std::string>& speakers,
                         const Tensor* embeddings, Rng& init) {
  Models m;
  if (cfg.model.speaker_mode == "precomputed") {
    Tensor table = embeddings ? *embeddings
                              : data::load_speaker_embeddings(cfg.paths.speaker_embeddings, speakers);
    m.generator = std::make_unique<model::Generator>(cfg.model, cfg.feature.n_mels, speakers, table, init);
  } else {
    m.generator = std::make_unique<model::Generator>(cfg.model, cfg.feature.n_mels, speakers, init);
  }
  const auto mode = cfg.train.ablation;
  m.diffusion = std::make_unique<model::DiffusionDiscriminator>(
      cfg.model, mode == config::AblationMode::kNoSpecDiscSpkToDiff, init);
  if (mode == config::AblationMode::kFull) {
    m.spectrogram = std::make_unique<model::SpectrogramDiscriminator>(cfg.model, init);
  }
  return m;
}

Tensor mask_tensor(const std::vector<int>& frames, int max_frames, int channels) {
  const int B = static_cast<int>(frames.size());
  Tensor m({B, max_frames, channels});
  for (int b = 0; b < B; ++b) {
    std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(b) * max_frames * channels,
                static_cast<std::size_t>(frames[static_cast<std::size_t>(b)]) * channels, 1.0);
  }
  return m;
}

void apply_mask(Tensor& x, const Tensor& mask) {
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] *= mask.data[i];
}

Tensor masked_normal(const Tensor& mask, Rng& rng) {
  Tensor z = diffusion::standard_normal(mask.shape, rng);
  apply_mask(z, mask);
  return z;
}

std::vector<Var> detach_all(const std::vector<Var>& xs) {
  std::vector<Var> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(nn::detach(x));
  return out;
}

std::string t_list(const std::vector<int>& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? "," : "") + std::to_string(t[i]);
  return s;
}

void check_finite(const losses::LossReport& r, const char* phase) {
  if (!r.all_finite()) {
    throw NumericalError(std::string("non-finite loss in ") + phase + " step " + std::to_string(r.step) +
                         " (t=" + t_list(r.t_sampled) + "): " + r.to_log_line());
  }
}

}  // namespace

Models build_models(const config::RunConfig& cfg, const std::vector<std::string>& speakers, Rng& init) {
  return build_models_with(cfg, speakers, nullptr, init);
}

double effective_alpha(const config::RunConfig& cfg) {
  return cfg.train.ablation == config::AblationMode::kFull ? cfg.train.alpha : 1.0;
}

Optimizers build_optimizers(const config::TrainConfig& cfg, Models& models) {
  auto make = [&](const nn::ParameterSet& ps, double lr) {
    nn::AdamConfig ac;
    ac.learning_rate = lr;
    ac.beta1 = cfg.adam_beta1;
    ac.beta2 = cfg.adam_beta2;
    ac.decay = cfg.lr_decay;
    return std::make_unique<nn::Adam>(ps, ac);
  };
  Optimizers o;
  o.generator = make(models.generator->params(), cfg.lr_g);
  o.diffusion = make(models.diffusion->params(), cfg.lr_d);
  if (models.spectrogram) o.spectrogram = make(models.spectrogram->params(), cfg.lr_d);
  return o;
}

Batch expand_over_timesteps(const Batch& b, int steps) {
  Batch out;
  const int B = b.size();
  const int F = b.mel.dim(1);
  const int C = b.mel.dim(2);
  out.mel = Tensor({B * steps, F, C});
  const auto item = static_cast<std::ptrdiff_t>(F) * C;
  for (int i = 0; i < B; ++i) {
    for (int k = 0; k < steps; ++k) {
      const auto i_ = static_cast<std::size_t>(i);
      out.ids.push_back(b.ids[i_]);
      out.text.phonemes.push_back(b.text.phonemes[i_]);
      out.text.speakers.push_back(b.text.speakers[i_]);
      out.targets.durations.push_back(b.targets.durations[i_]);
      out.targets.pitch.push_back(b.targets.pitch[i_]);
      out.targets.energy.push_back(b.targets.energy[i_]);
      out.targets.mel_frames.push_back(b.targets.mel_frames[i_]);
      out.frames.push_back(b.frames[i_]);
      out.phoneme_lengths.push_back(b.phoneme_lengths[i_]);
      out.variance_lengths.push_back(b.variance_lengths[i_]);
      std::copy(b.mel.data.begin() + i * item, b.mel.data.begin() + (i + 1) * item,
                out.mel.data.begin() + (static_cast<std::ptrdiff_t>(i) * steps + k) * item);
    }
  }
  return out;
}

StepState prepare_step(const Batch& batch, const Models& models, const diffusion::DiffusionSchedule& schedule,
                       const config::RunConfig& cfg, Rng& rng) {
  StepState s;
  const int B = batch.size();
  const int T = schedule.steps;
  if (cfg.train.exact_t_sum) {
    if (B % T != 0) throw DataError("exact_t_sum batch size must be a multiple of T");
    for (int j = 0; j < B; ++j) s.t.push_back(j % T + 1);
  } else {
    s.t = sample_timesteps(B, T, rng);
  }
  const Tensor mask = mask_tensor(batch.frames, batch.mel.dim(1), batch.mel.dim(2));
  s.x0 = batch.mel;

  std::vector<int> t_prev(s.t);
  for (auto& v : t_prev) v -= 1;
  s.x_prev = diffusion::q_sample_batch(s.x0, t_prev, schedule, masked_normal(mask, rng));
  s.x_t = diffusion::q_step_batch(s.x_prev, s.t, schedule, masked_normal(mask, rng));

  const auto& gen = *models.generator;
  const Var x_t = Var::constant(s.x_t);
  s.g = gen.forward(x_t, batch.text, s.t, model::Mode::kTrain, &batch.targets);
  // x_t, x0_pred and the noise are all zero on padded frames, so the sample is too.
  s.fake_prev = diffusion::posterior_sample(x_t, s.g.x0_pred, s.t, schedule, masked_normal(mask, rng));
  s.speaker = nn::detach(gen.speakers().embed(batch.text.speakers));

  if (cfg.train.fake_x0 == config::FakeX0Mode::kRollout && models.spectrogram) {
    const auto& cond = s.g.cond;
    diffusion::DenoiseFn denoise = [&](const Var& x, int t) {
      return gen.diffusion_decode(x, cond, std::vector<int>(static_cast<std::size_t>(B), t));
    };
    diffusion::NoiseFn noise = [&](int, const nn::Shape&) { return masked_normal(mask, rng); };
    Var x_T = Var::constant(masked_normal(mask, rng));
    auto traj = diffusion::reverse_rollout(x_T, schedule, denoise, noise);
    s.fake_x0 = traj.back();
  } else {
    s.fake_x0 = s.g.x0_pred;
  }
  return s;
}

losses::LossReport train_step_d(const StepState& s, Models& models, Optimizers& opt, const config::RunConfig& cfg) {
  losses::LossReport r;
  r.alpha = effective_alpha(cfg);
  r.t_sampled = s.t;
  auto& dd = *models.diffusion;
  auto* ds = models.spectrogram.get();

  models.generator->params().set_requires_grad(false);
  dd.params().zero_grad();
  if (ds) ds->params().zero_grad();

  const Var x_prev = Var::constant(s.x_prev);
  const Var x_t = Var::constant(s.x_t);
  const auto real_d = dd.forward(x_prev, x_t, s.t, s.speaker);
  const auto fake_d = dd.forward(nn::detach(s.fake_prev), x_t, s.t, s.speaker);
  const Var l_diff = losses::loss_diff_d(real_d.score, fake_d.score);
  Var l_spec;
  if (ds) {
    const auto real_s = ds->forward(Var::constant(s.x0), s.speaker);
    const auto fake_s = ds->forward(nn::detach(s.fake_x0), s.speaker);
    l_spec = losses::loss_spec_d(real_s.score, fake_s.score);
  }
  const Var l_d = losses::loss_d_total(l_diff, l_spec, r.alpha);
  r.l_diff = l_diff.item();
  r.l_spec = l_spec ? l_spec.item() : 0.0;
  r.l_d = l_d.item();
  models.generator->params().set_requires_grad(true);
  check_finite(r, "discriminator");

  nn::backward(l_d);
  r.grad_norm_dd = dd.params().grad_norm();
  r.grad_norm_ds = ds ? ds->params().grad_norm() : 0.0;
  check_finite(r, "discriminator");
  opt.diffusion->step();
  if (ds) opt.spectrogram->step();
  return r;
}

void train_step_g(const Batch& batch, const StepState& s, Models& models, Optimizers& opt,
                  const config::RunConfig& cfg, losses::LossReport& r) {
  auto& gen = *models.generator;
  auto& dd = *models.diffusion;
  auto* ds = models.spectrogram.get();
  const double alpha = effective_alpha(cfg);

  dd.params().set_requires_grad(false);
  if (ds) ds->params().set_requires_grad(false);
  gen.params().zero_grad();

  const Var x_t = Var::constant(s.x_t);
  const auto fake_d = dd.forward(s.fake_prev, x_t, s.t, s.speaker);
  model::DiscriminatorOutput real_d;
  model::DiscriminatorOutput real_s;
  model::DiscriminatorOutput fake_s;
  {
    nn::NoGradGuard guard;
    real_d = dd.forward(Var::constant(s.x_prev), x_t, s.t, s.speaker);
    if (ds) real_s = ds->forward(Var::constant(s.x0), s.speaker);
  }
  if (ds) fake_s = ds->forward(s.fake_x0, s.speaker);

  const Var l_adv = losses::loss_adv_g(fake_d.score, ds ? fake_s.score : Var());
  const auto recon = losses::loss_recon(s.g.cond.variances, batch.targets, batch.phoneme_lengths,
                                        batch.variance_lengths, s.g.x0_pred, s.x0, batch.frames);
  const Var l_fm = losses::loss_fm(detach_all(real_d.features), fake_d.features, detach_all(real_s.features),
                                   fake_s.features, alpha);
  const auto total = losses::loss_g_total(l_adv, recon.total, l_fm);

  r.l_adv = l_adv.item();
  r.l_recon = recon.total.item();
  r.l_fm = l_fm.item();
  r.lambda_fm = total.lambda_fm;
  r.l_g = total.l_g.item();
  r.recon_duration = recon.duration;
  r.recon_pitch = recon.pitch;
  r.recon_energy = recon.energy;
  r.recon_mel = recon.mel;
  auto unfreeze = [&] {
    dd.params().set_requires_grad(true);
    if (ds) ds->params().set_requires_grad(true);
  };
  try {
    check_finite(r, "generator");
    nn::backward(total.l_g);
    r.grad_norm_g = gen.params().grad_norm();
    check_finite(r, "generator");
  } catch (...) {
    unfreeze();
    throw;
  }
  unfreeze();
  opt.generator->step();
}

TrainingState initial_state(const config::RunConfig& cfg, const data::Dataset& ds) {
  TrainingState st;
  st.config = cfg;
  st.stats = ds.stats;
  st.speakers = ds.speakers;
  Rng init(cfg.train.seed);
  st.models = build_models(cfg, ds.speakers, init);
  st.optimizers = build_optimizers(cfg.train, st.models);
  st.rng_state = Rng(cfg.train.seed + 1).state();
  st.data_rng_state = Rng(cfg.train.seed + 2).state();
  return st;
}

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct NamedTensors {
  std::vector<std::string> names;
  std::vector<const Tensor*> tensors;
  std::vector<Tensor> owned;
};

std::map<std::string, std::string> config_map(const config::RunConfig& cfg) {
  std::map<std::string, std::string> out;
  std::istringstream is(config::dump_config(cfg));
  std::string line;
  std::string section;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find(" = ");
    out[section + "." + line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

}  // namespace

bool resumable_key(const std::string& key) {
  static const std::vector<std::string> keys = {"train.total_steps", "train.checkpoint_interval",
                                                "train.log_interval", "train.loader_workers", "train.val_count"};
  if (key.rfind("paths.", 0) == 0 || key.rfind("eval.", 0) == 0) return true;
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

void save_checkpoint(const std::filesystem::path& path, const TrainingState& st) {
  nlohmann::json header;
  header["format"] = "specdiff-checkpoint";
  header["version"] = std::string(kVersion);
  header["code_version"] = std::string(kCodeVersion);
  header["step"] = st.step;
  header["config"] = config::dump_config(st.config);
  header["rng_state"] = st.rng_state;
  header["data_rng_state"] = st.data_rng_state;
  header["stats"] = nlohmann::json::parse(st.stats.to_json());
  header["speakers"] = st.speakers;

  std::vector<std::pair<std::string, Tensor>> tensors;
  auto add_params = [&](const std::string& prefix, const nn::ParameterSet& ps) {
    for (const auto& [name, var] : ps.entries()) tensors.emplace_back(prefix + name, var.value());
  };
  auto add_opt = [&](const std::string& prefix, const nn::Adam& adam) {
    header["optimizers"][prefix] = {{"steps", adam.steps()}, {"lr", adam.current_learning_rate()}};
    const auto state = adam.state();
    for (std::size_t i = 0; i < state.size(); ++i) {
      tensors.emplace_back("opt/" + prefix + "/" + std::to_string(i), state[i]);
    }
  };
  const auto& m = st.models;
  add_params("g/", m.generator->params());
  add_params("dd/", m.diffusion->params());
  if (m.spectrogram) add_params("ds/", m.spectrogram->params());
  if (m.generator->speakers().mode() == model::SpeakerMode::kPrecomputed) {
    tensors.emplace_back("speaker_table", m.generator->speakers().table().value());
  }
  add_opt("g", *st.optimizers.generator);
  add_opt("dd", *st.optimizers.diffusion);
  if (st.optimizers.spectrogram) add_opt("ds", *st.optimizers.spectrogram);
  for (const auto& [name, t] : tensors) header["tensors"].push_back(name);

  std::ostringstream os;
  os.write(kCheckpointMagic, 8);
  const std::string h = header.dump();
  put_u64(os, h.size());
  os << h;
  for (const auto& [name, t] : tensors) io::write_tensor(os, t, io::DType::kFloat64);
  io::atomic_write(path, os.str());
}

TrainingState load_checkpoint(const std::filesystem::path& path, const config::RunConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  const auto hlen = get_u64(is);
  std::string h(hlen, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(hlen))) throw DataError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }

  TrainingState st;
  st.config = config::parse_config(header.at("config").get<std::string>(), path.string());
  if (expected) {
    const auto stored = config_map(st.config);
    const auto wanted = config_map(*expected);
    for (const auto& [key, value] : wanted) {
      if (resumable_key(key)) continue;
      auto it = stored.find(key);
      if (it == stored.end() || it->second != value) {
        throw ConfigError("checkpoint/config mismatch on " + key + ": checkpoint has '" +
                          (it == stored.end() ? std::string("<missing>") : it->second) + "', config has '" + value +
                          "'");
      }
    }
  }
  st.step = header.at("step").get<long>();
  st.rng_state = header.at("rng_state").get<std::string>();
  st.data_rng_state = header.at("data_rng_state").get<std::string>();
  st.stats = data::NormStats::from_json(header.at("stats").dump());
  st.speakers = header.at("speakers").get<std::vector<std::string>>();

  std::map<std::string, Tensor> tensors;
  for (const auto& name : header.at("tensors")) tensors[name.get<std::string>()] = io::read_tensor(is);
  auto take = [&](const std::string& name) -> Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint lacks tensor " + name);
    return it->second;
  };

  const Tensor* table = nullptr;
  if (st.config.model.speaker_mode == "precomputed") table = &take("speaker_table");
  Rng scratch(0);
  st.models = build_models_with(st.config, st.speakers, table, scratch);
  auto fill = [&](const std::string& prefix, nn::ParameterSet& ps) {
    for (const auto& [name, var] : ps.entries()) {
      Tensor& src = take(prefix + name);
      if (src.shape != var.shape()) {
        throw DataError("checkpoint tensor " + prefix + name + " has shape " + nn::shape_string(src.shape) +
                        ", model expects " + nn::shape_string(var.shape()));
      }
      Var v = var;
      v.mutable_value() = src;
    }
  };
  fill("g/", st.models.generator->params());
  fill("dd/", st.models.diffusion->params());
  if (st.models.spectrogram) fill("ds/", st.models.spectrogram->params());

  st.optimizers = build_optimizers(st.config.train, st.models);
  auto restore = [&](const std::string& prefix, nn::Adam& adam, std::size_t count) {
    const auto& meta = header.at("optimizers").at(prefix);
    std::vector<Tensor> state;
    for (std::size_t i = 0; i < 2 * count; ++i) state.push_back(take("opt/" + prefix + "/" + std::to_string(i)));
    adam.load_state(meta.at("steps").get<long>(), meta.at("lr").get<double>(), state);
  };
  restore("g", *st.optimizers.generator, st.models.generator->params().entries().size());
  restore("dd", *st.optimizers.diffusion, st.models.diffusion->params().entries().size());
  if (st.optimizers.spectrogram) {
    restore("ds", *st.optimizers.spectrogram, st.models.spectrogram->params().entries().size());
  }
  return st;
}

namespace {

struct QueuedBatch {
  Batch batch;
  std::string data_rng_after;
};

/// Bounded prefetch queue fed by one producer thread. The producer owns a
/// copy of the data random source and tags every batch with the state that
/// follows its draw, so a checkpoint can record exactly what was consumed.
class BatchQueue {
 public:
  BatchQueue(const data::Dataset& ds, const BatchSampler& sampler, const std::vector<std::string>& speakers,
             const std::string& rng_state, int capacity)
      : ds_(ds), sampler_(sampler), speakers_(speakers), capacity_(std::max(1, capacity)) {
    rng_.set_state(rng_state);
    if (capacity > 0) worker_ = std::thread([this] { produce(); });
  }
  ~BatchQueue() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  QueuedBatch pop() {
    if (!worker_.joinable()) return draw();
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    QueuedBatch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  QueuedBatch draw() {
    QueuedBatch q;
    q.batch = make_batch(ds_, sampler_.next(rng_), speakers_);
    q.data_rng_after = rng_.state();
    return q;
  }

  void produce() {
    try {
      for (;;) {
        {
          std::unique_lock lock(mu_);
          cv_.wait(lock, [&] { return stop_ || static_cast<int>(queue_.size()) < capacity_; });
          if (stop_) return;
        }
        QueuedBatch q = draw();
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(q));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  const data::Dataset& ds_;
  const BatchSampler& sampler_;
  const std::vector<std::string>& speakers_;
  int capacity_;
  Rng rng_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<QueuedBatch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

std::filesystem::path step_checkpoint(const std::filesystem::path& dir, long step) {
  return dir / ("step_" + std::to_string(step) + ".ckpt");
}

void write_checkpoints(const std::filesystem::path& dir, const TrainingState& st) {
  save_checkpoint(step_checkpoint(dir, st.step), st);
  save_checkpoint(dir / "latest.ckpt", st);
}

}  // namespace

TrainResult run_training(const config::RunConfig& cfg, const data::Dataset& ds, const TrainOptions& options) {
  if (ds.utterances.empty() || ds.train.empty()) throw DataError("training corpus is empty");
  config::validate(cfg);
  std::filesystem::create_directories(options.out_dir);

  TrainingState st;
  if (options.resume) {
    st = load_checkpoint(*options.resume, &cfg);
    st.config.train.total_steps = cfg.train.total_steps;
    st.config.train.checkpoint_interval = cfg.train.checkpoint_interval;
    st.config.train.log_interval = cfg.train.log_interval;
    st.config.train.loader_workers = cfg.train.loader_workers;
    st.config.paths = cfg.paths;
    st.config.eval = cfg.eval;
    if (st.speakers != ds.speakers) throw DataError("checkpoint speakers differ from the corpus speakers");
  } else {
    st = initial_state(cfg, ds);
  }
  const auto& c = st.config;
  const auto schedule = diffusion::build_schedule(c.diffusion.steps, diffusion::ScheduleSpec::parse(c.diffusion.schedule));

  TrainResult result;
  if (c.train.total_steps == 0 || st.step >= c.train.total_steps) {
    result.final_checkpoint = step_checkpoint(options.out_dir, st.step);
    write_checkpoints(options.out_dir, st);
    result.final_step = st.step;
    return result;
  }

  std::ofstream log(options.out_dir / "train.log", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot open training log in " + options.out_dir.string());

  Rng rng;
  rng.set_state(st.rng_state);
  const BatchSampler sampler(ds, ds.train, c.train.batch_size);
  BatchQueue queue(ds, sampler, st.speakers, st.data_rng_state, c.train.loader_workers > 0 ? 2 * c.train.loader_workers : 0);
  const auto start = std::chrono::steady_clock::now();

  long ran = 0;
  while (st.step < c.train.total_steps && (options.max_steps_this_run < 0 || ran < options.max_steps_this_run)) {
    QueuedBatch qb = queue.pop();
    Batch batch = c.train.exact_t_sum ? expand_over_timesteps(qb.batch, schedule.steps) : std::move(qb.batch);
    const long step = st.step + 1;

    const StepState s = prepare_step(batch, st.models, schedule, c, rng);
    losses::LossReport report;
    for (int k = 0; k < c.train.d_updates_per_g; ++k) {
      report = train_step_d(s, st.models, st.optimizers, c);
    }
    report.step = step;
    train_step_g(batch, s, st.models, st.optimizers, c, report);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    st.step = step;
    st.rng_state = rng.state();
    st.data_rng_state = qb.data_rng_after;
    ++ran;

    if (c.train.log_interval > 0 && (step % c.train.log_interval == 0 || step == 1)) {
      log << report.to_log_line() << '\n';
      log.flush();
    }
    if (options.on_step) options.on_step(report);
    result.reports.push_back(std::move(report));
    if (c.train.checkpoint_interval > 0 && step % c.train.checkpoint_interval == 0) {
      write_checkpoints(options.out_dir, st);
    }
  }
  if (c.train.checkpoint_interval <= 0 || st.step % c.train.checkpoint_interval != 0) {
    write_checkpoints(options.out_dir, st);
  }
  result.final_checkpoint = step_checkpoint(options.out_dir, st.step);
  result.final_step = st.step;
  return result;
}

}  // namespace specdiff::train
