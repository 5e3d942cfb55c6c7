#include "specdiff/model/discriminators.hpp"

#include <algorithm>
#include <cmath>

#include "specdiff/config/config.hpp"
#include "specdiff/error.hpp"

namespace specdiff::model {

using nn::Tensor;
using nn::Var;

namespace {

constexpr int kTimeEncoding = 64;

Var as_image(const Var& mel) { return nn::reshape(mel, {mel.dim(0), mel.dim(1), mel.dim(2), 1}); }

void check_mel(const Var& x, const char* what) {
  if (x.value().rank() != 3) throw DataError(std::string(what) + ": expected [B, F, C], got " + nn::shape_string(x.shape()));
  if (!x.value().all_finite()) throw NumericalError(std::string(what) + ": non-finite input");
}

}  // namespace

DiffusionDiscriminator::DiffusionDiscriminator(const config::ModelConfig& cfg, bool use_speaker, Rng& rng)
    : cfg_(cfg), use_speaker_(use_speaker), time_dim_(cfg.dd_max_channels) {
  const int k = cfg.dd_kernel;
  const nn::Conv2dGeometry same{k, k, 1, 1, k / 2, k / 2};
  const nn::Conv2dGeometry pointwise{1, 1, 1, 1, 0, 0};
  input_ = nn::Conv2d(params_, "dd.input", 2, cfg.dd_base_channels, same, rng);
  time1_ = nn::Linear(params_, "dd.time1", kTimeEncoding, time_dim_, rng);
  time2_ = nn::Linear(params_, "dd.time2", time_dim_, time_dim_, rng);
  int in = cfg.dd_base_channels;
  for (int i = 0; i < cfg.dd_blocks; ++i) {
    const std::string n = "dd.block" + std::to_string(i);
    const int out = block_channels(i);
    Block b;
    b.time = nn::Linear(params_, n + ".time", time_dim_, in, rng);
    if (use_speaker_) b.speaker = nn::Linear(params_, n + ".speaker", cfg.speaker_dim, in, rng);
    b.conv = nn::Conv2d(params_, n + ".conv", in, out, same, rng);
    b.shortcut = nn::Conv2d(params_, n + ".shortcut", in, out, pointwise, rng);
    blocks_.push_back(std::move(b));
    in = out;
  }
  head_conv_ = nn::Conv2d(params_, "dd.head.conv", in + 1, in, same, rng);
  head_out_ = nn::Linear(params_, "dd.head.out", in, 1, rng);
}

int DiffusionDiscriminator::block_channels(int i) const {
  long c = cfg_.dd_base_channels;
  for (int j = 0; j <= i && c < cfg_.dd_max_channels; ++j) c *= 2;
  return static_cast<int>(std::min<long>(c, cfg_.dd_max_channels));
}

DiscriminatorOutput DiffusionDiscriminator::forward(const Var& x_prev, const Var& x_t, const std::vector<int>& t,
                                                    const Var& speaker) const {
  check_mel(x_prev, "diffusion discriminator x_prev");
  check_mel(x_t, "diffusion discriminator x_t");
  if (x_prev.shape() != x_t.shape()) {
    throw DataError("diffusion discriminator: x_prev " + nn::shape_string(x_prev.shape()) + " vs x_t " +
                    nn::shape_string(x_t.shape()));
  }
  const int batch = x_t.dim(0);
  if (static_cast<int>(t.size()) != batch) throw DataError("diffusion discriminator: one timestep per item");
  for (int ti : t)
    if (ti < 1) throw DataError("diffusion discriminator: timestep " + std::to_string(ti) + " out of range");
  if (use_speaker_ && (!speaker || speaker.dim(0) != batch)) {
    throw DataError("diffusion discriminator: speaker embedding required in this configuration");
  }

  Var temb = Var::constant(nn::sinusoidal_encode(t, kTimeEncoding));
  temb = time2_(nn::leaky_relu(time1_(temb)));

  Var x = nn::leaky_relu(input_(nn::concat_lastdim({as_image(x_prev), as_image(x_t)})));
  DiscriminatorOutput out;
  for (const auto& b : blocks_) {
    Var c = nn::add_per_batch(x, b.time(temb));
    if (use_speaker_) c = nn::add_per_batch(c, b.speaker(speaker));
    c = nn::avg_pool2d(nn::leaky_relu(b.conv(c)));
    Var u = b.shortcut(nn::avg_pool2d(x));
    x = nn::scale(nn::add(c, u), M_SQRT1_2);
    out.features.push_back(x);
  }
  Var h = nn::leaky_relu(head_conv_(nn::minibatch_stddev(x)));
  out.score = nn::reshape(head_out_(nn::mean_spatial(h)), {batch});
  return out;
}

SpectrogramDiscriminator::SpectrogramDiscriminator(const config::ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto plain_k = config::parse_kernel_size(cfg.ds_kernel_sizes[0]);
  const auto strided_k = config::parse_kernel_size(cfg.ds_kernel_sizes[1]);
  const nn::Conv2dGeometry plain{plain_k.height, plain_k.width, cfg.ds_stride_height, cfg.ds_stride_widths[0],
                                 cfg.ds_padding_height, cfg.ds_padding_widths[0]};
  const nn::Conv2dGeometry strided{strided_k.height, strided_k.width, cfg.ds_stride_height, cfg.ds_stride_widths[1],
                                   cfg.ds_padding_height, cfg.ds_padding_widths[1]};
  const int c = cfg.ds_channels;
  input_ = nn::Conv2d(params_, "ds.input", 1, c, plain, rng);
  speaker_ = nn::Linear(params_, "ds.speaker", cfg.speaker_dim, c, rng);
  int idx = 0;
  for (int i = 0; i < cfg.ds_strided_convs; ++i)
    convs_.emplace_back(params_, "ds.conv" + std::to_string(idx++), c, c, strided, rng);
  for (int i = 0; i < cfg.ds_plain_convs; ++i)
    convs_.emplace_back(params_, "ds.conv" + std::to_string(idx++), c, c, plain, rng);
  head_ = nn::Linear(params_, "ds.head", c, 1, rng);
}

DiscriminatorOutput SpectrogramDiscriminator::forward(const Var& x0, const Var& speaker) const {
  check_mel(x0, "spectrogram discriminator input");
  const int batch = x0.dim(0);
  if (!speaker || speaker.dim(0) != batch || speaker.dim(1) != cfg_.speaker_dim) {
    throw DataError("spectrogram discriminator: speaker embedding [B, " + std::to_string(cfg_.speaker_dim) +
                    "] required");
  }
  Var x = nn::add_per_batch(input_(as_image(x0)), speaker_(speaker));
  DiscriminatorOutput out;
  for (const auto& conv : convs_) {
    x = nn::leaky_relu(conv(x));
    out.features.push_back(x);
  }
  out.score = nn::reshape(head_(nn::mean_spatial(x)), {batch});
  return out;
}

}  // namespace specdiff::model
