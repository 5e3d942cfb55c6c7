#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace specdiff::config {

/// Audio analysis settings shared by preprocessing, synthesis and evaluation.
struct FeatureConfig {
  int sample_rate = 22050;
  int n_mels = 80;
  int hop = 256;
  int window = 1024;
  int n_fft = 1024;
  double fmin = 0.0;
  double fmax = 8000.0;
  /// Linear magnitudes are clamped here before the natural log.
  double log_floor = 1e-5;
  bool normalize = true;
  double f0_min = 50.0;
  double f0_max = 800.0;
  /// Cumulative-mean-normalised difference threshold for the voicing decision.
  double voicing_threshold = 0.25;

  bool operator==(const FeatureConfig&) const = default;
};

struct DiffusionConfig {
  int steps = 4;
  /// "vp:<beta_min>:<beta_max>" or "explicit:<b1>,<b2>,...".
  std::string schedule = "vp:0.1:40";

  bool operator==(const DiffusionConfig&) const = default;
};

/// Default phoneme inventory: padding, silence markers, then ARPAbet with
/// lexical stress variants.
std::vector<std::string> default_vocab();

struct ModelConfig {
  /// Phoneme symbols, index = id. Index 0 is reserved for padding.
  std::vector<std::string> vocab = default_vocab();

  int d_model = 256;
  int encoder_layers = 4;
  int attention_heads = 2;
  int encoder_conv_kernel = 9;
  int encoder_conv_filter = 1024;

  int duration_kernel = 3;
  int pitch_kernel = 5;
  int energy_kernel = 5;
  int variance_filter = 256;
  /// "phoneme" or "frame".
  std::string pitch_granularity = "phoneme";
  int min_duration = 1;

  int residual_blocks = 20;
  int residual_channels = 256;

  int speaker_dim = 256;
  /// "lookup" (trainable table) or "precomputed" (external embeddings).
  std::string speaker_mode = "lookup";

  int dd_blocks = 6;
  int dd_kernel = 3;
  int dd_base_channels = 32;
  int dd_max_channels = 256;

  int ds_channels = 32;
  int ds_strided_convs = 3;
  int ds_plain_convs = 2;
  /// Plain kernel first, strided kernel second, as "HxW".
  std::vector<std::string> ds_kernel_sizes = {"3x3", "3x9"};
  int ds_stride_height = 1;
  std::vector<int> ds_stride_widths = {1, 2};
  int ds_padding_height = 1;
  std::vector<int> ds_padding_widths = {1, 4};

  bool operator==(const ModelConfig&) const = default;
};

enum class AblationMode { kFull, kNoSpecDiscSpkToDiff, kNoSpecDiscNoSpk };
enum class FakeX0Mode { kOneShot, kRollout };

std::string to_string(AblationMode m);
AblationMode parse_ablation(const std::string& s);
std::string to_string(FakeX0Mode m);
FakeX0Mode parse_fake_x0(const std::string& s);

struct TrainConfig {
  double alpha = 0.5;
  int batch_size = 16;
  long total_steps = 300000;
  double lr_g = 1e-4;
  double lr_d = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double lr_decay = 1.0;
  int d_updates_per_g = 1;
  std::uint64_t seed = 1234;
  AblationMode ablation = AblationMode::kFull;
  FakeX0Mode fake_x0 = FakeX0Mode::kOneShot;
  /// Sum the diffusion-discriminator loss over every t instead of sampling one.
  bool exact_t_sum = false;
  long checkpoint_interval = 10000;
  long log_interval = 100;
  int val_count = 512;
  int loader_workers = 2;

  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  std::vector<std::string> metrics = {"ssim", "mcd", "f0rmse"};
  /// "teacher" (frame-aligned) or "dtw".
  std::string align = "teacher";
  int mcd_order = 24;
  bool mcd_exclude_c0 = true;
  std::string stoi_tool;
  std::string pesq_tool;
  int griffin_lim_iters = 60;

  bool operator==(const EvalConfig&) const = default;
};

struct PathsConfig {
  std::string data;
  std::string output;
  std::string speaker_embeddings;

  bool operator==(const PathsConfig&) const = default;
};

struct RunConfig {
  FeatureConfig feature;
  DiffusionConfig diffusion;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace specdiff::config
