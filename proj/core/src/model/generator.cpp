#include "specdiff/model/generator.hpp"

#include <algorithm>
#include <cmath>

#include "specdiff/error.hpp"

namespace specdiff::model {

using nn::Tensor;
using nn::Var;

int TextBatch::max_length() const {
  int m = 0;
  for (const auto& p : phonemes) m = std::max(m, static_cast<int>(p.size()));
  return m;
}

std::vector<int> TextBatch::lengths() const {
  std::vector<int> out;
  for (const auto& p : phonemes) out.push_back(static_cast<int>(p.size()));
  return out;
}

Tensor sequence_mask(const std::vector<int>& lengths, int max_length) {
  Tensor m({static_cast<int>(lengths.size()), max_length});
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (int i = 0; i < std::min(lengths[b], max_length); ++i) m[b * max_length + i] = 1.0;
  return m;
}

int duration_from_log(double log_duration, int min_duration) {
  const double d = std::floor(std::exp(log_duration) + 0.5);
  // Guards overflow from a wild prediction before converting to int.
  const double capped = std::min(d, 1e6);
  return std::max(static_cast<int>(capped), min_duration);
}

RegulatedSequence length_regulate(const Var& hidden, const std::vector<std::vector<int>>& durations) {
  const int batch = hidden.dim(0);
  const int rows = hidden.dim(1);
  if (static_cast<int>(durations.size()) != batch) throw DataError("length_regulate: one duration list per item");
  RegulatedSequence out;
  std::vector<std::vector<int>> index(batch);
  int longest = 0;
  for (int b = 0; b < batch; ++b) {
    if (static_cast<int>(durations[b].size()) > rows) {
      throw DataError("length_regulate: " + std::to_string(durations[b].size()) + " durations for " +
                      std::to_string(rows) + " rows");
    }
    for (std::size_t i = 0; i < durations[b].size(); ++i) {
      if (durations[b][i] < 0) throw DataError("length_regulate: negative duration");
      index[b].insert(index[b].end(), durations[b][i], static_cast<int>(i));
    }
    if (index[b].empty()) throw DataError("length_regulate: durations of item " + std::to_string(b) + " sum to zero");
    out.lengths.push_back(static_cast<int>(index[b].size()));
    longest = std::max(longest, out.lengths.back());
  }
  out.frames = nn::gather_rows(hidden, index, longest);
  return out;
}

Generator::Generator(const config::ModelConfig& cfg, int n_mels, std::vector<std::string> speaker_ids, Rng& rng)
    : cfg_(cfg), n_mels_(n_mels) {
  speakers_ = SpeakerStore(std::move(speaker_ids), cfg.speaker_dim, params_, rng);
  build(rng);
}

Generator::Generator(const config::ModelConfig& cfg, int n_mels, std::vector<std::string> speaker_ids,
                     const Tensor& speaker_embeddings, Rng& rng)
    : cfg_(cfg), n_mels_(n_mels) {
  speakers_ = SpeakerStore(std::move(speaker_ids), speaker_embeddings);
  if (speakers_.dim() != cfg.speaker_dim) {
    throw DataError("precomputed speaker embeddings have dimension " + std::to_string(speakers_.dim()) +
                    ", config expects " + std::to_string(cfg.speaker_dim));
  }
  build(rng);
}

Generator::VariancePredictor Generator::make_predictor(const std::string& name, int kernel, Rng& rng) {
  const int d = cfg_.d_model;
  const int f = cfg_.variance_filter;
  return VariancePredictor{nn::Conv1d(params_, name + ".conv1", d, f, kernel, rng), nn::LayerNorm(params_, name + ".norm1", f),
                           nn::Conv1d(params_, name + ".conv2", f, f, kernel, rng), nn::LayerNorm(params_, name + ".norm2", f),
                           nn::Linear(params_, name + ".out", f, 1, rng)};
}

void Generator::build(Rng& rng) {
  const int d = cfg_.d_model;
  const int r = cfg_.residual_channels;
  phoneme_table_ = params_.create("encoder.embedding", {static_cast<int>(cfg_.vocab.size()), d}, 1, rng);
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string n = "encoder.layer" + std::to_string(l);
    encoder_.push_back(AttentionLayer{
        nn::Linear(params_, n + ".q", d, d, rng), nn::Linear(params_, n + ".k", d, d, rng),
        nn::Linear(params_, n + ".v", d, d, rng), nn::Linear(params_, n + ".out", d, d, rng),
        nn::LayerNorm(params_, n + ".norm1", d),
        nn::Conv1d(params_, n + ".ffn1", d, cfg_.encoder_conv_filter, cfg_.encoder_conv_kernel, rng),
        nn::Conv1d(params_, n + ".ffn2", cfg_.encoder_conv_filter, d, cfg_.encoder_conv_kernel, rng),
        nn::LayerNorm(params_, n + ".norm2", d)});
  }
  speaker_to_hidden_ = nn::Linear(params_, "adaptor.speaker", cfg_.speaker_dim, d, rng);
  duration_ = make_predictor("adaptor.duration", cfg_.duration_kernel, rng);
  pitch_ = make_predictor("adaptor.pitch", cfg_.pitch_kernel, rng);
  energy_ = make_predictor("adaptor.energy", cfg_.energy_kernel, rng);
  pitch_embed_ = nn::Linear(params_, "adaptor.pitch_embed", 1, d, rng);
  energy_embed_ = nn::Linear(params_, "adaptor.energy_embed", 1, d, rng);

  input_proj_ = nn::Linear(params_, "decoder.input", n_mels_, r, rng);
  time_mlp1_ = nn::Linear(params_, "decoder.time1", d, 4 * r, rng);
  time_mlp2_ = nn::Linear(params_, "decoder.time2", 4 * r, r, rng);
  for (int i = 0; i < cfg_.residual_blocks; ++i) {
    const std::string n = "decoder.block" + std::to_string(i);
    blocks_.push_back(ResidualBlock{nn::Linear(params_, n + ".time", r, r, rng),
                                    nn::Conv1d(params_, n + ".conv", r, 2 * r, 3, rng),
                                    nn::Linear(params_, n + ".cond", d, 2 * r, rng),
                                    nn::Linear(params_, n + ".speaker", cfg_.speaker_dim, 2 * r, rng),
                                    nn::Linear(params_, n + ".out", r, 2 * r, rng)});
  }
  skip_proj_ = nn::Linear(params_, "decoder.skip", r, r, rng);
  output_proj_ = nn::Linear(params_, "decoder.output", r, n_mels_, rng);
}

Var Generator::attention(const AttentionLayer& layer, const Var& x, const std::vector<int>& lengths) const {
  const int b = x.dim(0), p = x.dim(1), d = x.dim(2);
  const int h = cfg_.attention_heads, dh = d / h;
  auto split_heads = [&](const Var& y) {
    return nn::reshape(nn::permute(nn::reshape(y, {b, p, h, dh}), {0, 2, 1, 3}), {b * h, p, dh});
  };
  Var q = split_heads(layer.q(x));
  Var k = split_heads(layer.k(x));
  Var v = split_heads(layer.v(x));
  Var scores = nn::scale(nn::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var ctx = nn::bmm(nn::masked_softmax(scores, lengths, h), v, false);
  ctx = nn::reshape(nn::permute(nn::reshape(ctx, {b, h, p, dh}), {0, 2, 1, 3}), {b, p, d});
  return layer.out(ctx);
}

EncodedText Generator::encode_text(const TextBatch& text) const {
  const int batch = text.batch();
  if (batch == 0) throw DataError("encode_text: empty batch");
  if (static_cast<int>(text.speakers.size()) != batch) throw DataError("encode_text: one speaker per item");
  const int vocab = static_cast<int>(cfg_.vocab.size());
  for (const auto& seq : text.phonemes) {
    if (seq.empty()) throw DataError("encode_text: empty phoneme sequence");
    for (int id : seq)
      if (id < 0 || id >= vocab) throw DataError("encode_text: phoneme id " + std::to_string(id) + " outside vocabulary");
  }
  const int p = text.max_length();
  EncodedText out;
  out.lengths = text.lengths();
  const Tensor mask = sequence_mask(out.lengths, p);

  Tensor pos = nn::sinusoidal_table(p, cfg_.d_model);
  Var x = nn::embedding(phoneme_table_, text.phonemes, p);
  {
    Tensor tiled({batch, p, cfg_.d_model});
    for (int b = 0; b < batch; ++b) std::copy(pos.data.begin(), pos.data.end(), tiled.data.begin() + b * pos.size());
    x = nn::mul_mask(nn::add(x, Var::constant(std::move(tiled))), mask);
  }
  for (const auto& layer : encoder_) {
    x = nn::mul_mask(layer.norm1(nn::add(x, attention(layer, x, out.lengths))), mask);
    Var f = layer.ffn2(nn::mul_mask(nn::relu(layer.ffn1(x)), mask));
    x = nn::mul_mask(layer.norm2(nn::add(x, f)), mask);
  }
  out.hidden = x;
  return out;
}

Var Generator::run_predictor(const VariancePredictor& p, const Var& x, const Tensor& mask) const {
  Var y = p.norm1(nn::relu(p.conv1(x)));
  y = p.norm2(nn::relu(p.conv2(nn::mul_mask(y, mask))));
  y = p.out(y);
  return nn::mul_mask(nn::reshape(y, {x.dim(0), x.dim(1)}), mask);
}

namespace {

Tensor pad_values(const std::vector<std::vector<double>>& v, int length, const char* what) {
  Tensor t({static_cast<int>(v.size()), length});
  for (std::size_t b = 0; b < v.size(); ++b) {
    if (static_cast<int>(v[b].size()) > length) throw DataError(std::string(what) + " target longer than its sequence");
    std::copy(v[b].begin(), v[b].end(), t.data.begin() + b * length);
  }
  return t;
}

}  // namespace

Conditioning Generator::adapt(const EncodedText& encoded, const std::vector<int>& speakers, Mode mode,
                              const VarianceTargets* targets) const {
  const int batch = encoded.hidden.dim(0);
  const int p = encoded.hidden.dim(1);
  const bool train = mode == Mode::kTrain;
  const bool per_frame = cfg_.pitch_granularity == "frame";
  if (train && (!targets || targets->durations.size() != static_cast<std::size_t>(batch) ||
                targets->pitch.size() != static_cast<std::size_t>(batch) ||
                targets->energy.size() != static_cast<std::size_t>(batch))) {
    throw DataError("predict_variances: train mode requires duration, pitch and energy targets for every item");
  }
  const Tensor pmask = sequence_mask(encoded.lengths, p);

  Conditioning c;
  c.speaker = speakers_.embed(speakers);
  Var h = nn::mul_mask(nn::add_per_batch(encoded.hidden, speaker_to_hidden_(c.speaker)), pmask);

  VarianceOutputs& vo = c.variances;
  vo.log_durations = run_predictor(duration_, h, pmask);
  const bool override_durations = targets && !targets->durations.empty();
  if (train || override_durations) {
    if (targets->durations.size() != static_cast<std::size_t>(batch)) throw DataError("duration override: one list per item");
    for (int b = 0; b < batch; ++b) {
      if (static_cast<int>(targets->durations[b].size()) != encoded.lengths[b]) {
        throw DataError("item " + std::to_string(b) + ": " + std::to_string(targets->durations[b].size()) +
                        " durations for " + std::to_string(encoded.lengths[b]) + " phonemes");
      }
    }
    vo.durations = targets->durations;
  } else {
    vo.durations.resize(batch);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < encoded.lengths[b]; ++i)
        vo.durations[b].push_back(duration_from_log(vo.log_durations.value()[b * p + i], cfg_.min_duration));
  }

  auto embed_scalar = [](const nn::Linear& proj, const Var& values) {
    return proj(nn::reshape(values, {values.dim(0), values.dim(1), 1}));
  };

  if (!per_frame) {
    vo.pitch = run_predictor(pitch_, h, pmask);
    vo.energy = run_predictor(energy_, h, pmask);
    Var pitch_in = train ? Var::constant(pad_values(targets->pitch, p, "pitch")) : nn::detach(vo.pitch);
    Var energy_in = train ? Var::constant(pad_values(targets->energy, p, "energy")) : nn::detach(vo.energy);
    h = nn::mul_mask(nn::add(h, nn::add(embed_scalar(pitch_embed_, pitch_in), embed_scalar(energy_embed_, energy_in))),
                     pmask);
    RegulatedSequence reg = length_regulate(h, vo.durations);
    c.sequence = reg.frames;
    vo.frames = reg.lengths;
  } else {
    RegulatedSequence reg = length_regulate(h, vo.durations);
    vo.frames = reg.lengths;
    const int f = reg.frames.dim(1);
    const Tensor fmask = sequence_mask(vo.frames, f);
    vo.pitch = run_predictor(pitch_, reg.frames, fmask);
    vo.energy = run_predictor(energy_, reg.frames, fmask);
    Var pitch_in = train ? Var::constant(pad_values(targets->pitch, f, "pitch")) : nn::detach(vo.pitch);
    Var energy_in = train ? Var::constant(pad_values(targets->energy, f, "energy")) : nn::detach(vo.energy);
    c.sequence = nn::mul_mask(
        nn::add(reg.frames, nn::add(embed_scalar(pitch_embed_, pitch_in), embed_scalar(energy_embed_, energy_in))),
        fmask);
  }
  c.frames = vo.frames;
  if (train && !targets->mel_frames.empty()) {
    for (int b = 0; b < batch; ++b) {
      if (vo.frames[b] != targets->mel_frames[b]) {
        throw DataError("item " + std::to_string(b) + ": durations sum to " + std::to_string(vo.frames[b]) +
                        " frames but the mel has " + std::to_string(targets->mel_frames[b]));
      }
    }
  }
  return c;
}

Conditioning Generator::condition(const TextBatch& text, Mode mode, const VarianceTargets* targets) const {
  return adapt(encode_text(text), text.speakers, mode, targets);
}

Var Generator::diffusion_decode(const Var& x_t, const Conditioning& cond, const std::vector<int>& t) const {
  const int batch = x_t.dim(0);
  if (x_t.value().rank() != 3 || x_t.dim(2) != n_mels_) {
    throw DataError("diffusion_decode: x_t has shape " + nn::shape_string(x_t.shape()) + ", expected [B, F, " +
                    std::to_string(n_mels_) + "]");
  }
  if (cond.sequence.dim(0) != batch || cond.sequence.dim(1) != x_t.dim(1)) {
    throw DataError("diffusion_decode: x_t has " + std::to_string(x_t.dim(1)) + " frames but the conditioning has " +
                    std::to_string(cond.sequence.dim(1)));
  }
  if (static_cast<int>(t.size()) != batch) throw DataError("diffusion_decode: one timestep per item");
  const int r = cfg_.residual_channels;
  const Tensor mask = sequence_mask(cond.frames, x_t.dim(1));

  Var temb = Var::constant(nn::sinusoidal_encode(t, cfg_.d_model));
  temb = time_mlp2_(nn::relu(time_mlp1_(temb)));

  Var x = nn::mul_mask(nn::relu(input_proj_(x_t)), mask);
  Var skips;
  for (const auto& blk : blocks_) {
    Var y = nn::add_per_batch(x, blk.time(temb));
    y = nn::add(blk.conv(y), blk.cond(cond.sequence));
    y = nn::add_per_batch(y, blk.speaker(cond.speaker));
    Var gated = nn::mul(nn::tanh(nn::slice_lastdim(y, 0, r)), nn::sigmoid(nn::slice_lastdim(y, r, r)));
    Var o = blk.out(gated);
    x = nn::mul_mask(nn::scale(nn::add(x, nn::slice_lastdim(o, 0, r)), M_SQRT1_2), mask);
    Var skip = nn::slice_lastdim(o, r, r);
    skips = skips ? nn::add(skips, skip) : skip;
  }
  Var s = nn::scale(skips, 1.0 / std::sqrt(static_cast<double>(blocks_.size())));
  s = output_proj_(nn::relu(skip_proj_(s)));
  return nn::mul_mask(s, mask);
}

Generator::Output Generator::forward(const Var& x_t, const TextBatch& text, const std::vector<int>& t, Mode mode,
                                     const VarianceTargets* targets) const {
  Output out;
  out.cond = condition(text, mode, targets);
  if (mode == Mode::kTrain) {
    int longest = 0;
    for (int f : out.cond.frames) longest = std::max(longest, f);
    if (x_t.dim(1) != longest) {
      throw DataError("generator_forward: expanded length " + std::to_string(longest) + " differs from mel length " +
                      std::to_string(x_t.dim(1)));
    }
  }
  out.x0_pred = diffusion_decode(x_t, out.cond, t);
  return out;
}

}  // namespace specdiff::model
