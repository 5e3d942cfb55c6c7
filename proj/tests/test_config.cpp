#include <gtest/gtest.h>

#include <filesystem>

#include "specdiff/config/config.hpp"
#include "specdiff/error.hpp"

using namespace specdiff;
using namespace specdiff::config;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(SPECDIFF_SOURCE_DIR) / "configs";

std::string error_of(const std::string& ini) {
  try {
    parse_config(ini);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, ShippedFullScaleValues) {
  const RunConfig cfg = validate_config(kConfigs / "paper.cfg");
  EXPECT_EQ(cfg.diffusion.steps, 4);
  EXPECT_EQ(cfg.train.alpha, 0.5);
  EXPECT_EQ(cfg.model.residual_blocks, 20);
  EXPECT_EQ(cfg.model.attention_heads, 2);
  EXPECT_EQ(cfg.model.d_model, 256);
  EXPECT_EQ(cfg.model.residual_channels, 256);
  EXPECT_EQ(cfg.model.encoder_layers, 4);
  EXPECT_EQ(cfg.model.encoder_conv_kernel, 9);
  EXPECT_EQ(cfg.model.ds_strided_convs, 3);
  EXPECT_EQ(cfg.model.ds_plain_convs, 2);
  EXPECT_EQ(cfg.feature.sample_rate, 22050);
  EXPECT_EQ(cfg.feature.n_mels, 80);
  EXPECT_EQ(cfg.feature.hop, 256);
  EXPECT_EQ(cfg.feature.window, 1024);
  EXPECT_EQ(cfg.train.batch_size, 16);
  EXPECT_EQ(cfg.train.total_steps, 300000);
  EXPECT_EQ(cfg.model.vocab, default_vocab());
}

TEST(Config, ShippedProfilesValidate) {
  for (const char* name : {"paper.cfg", "desk.cfg", "tiny.cfg"}) {
    EXPECT_NO_THROW(validate_config(kConfigs / name)) << name;
  }
  const RunConfig desk = validate_config(kConfigs / "desk.cfg");
  EXPECT_EQ(desk.diffusion.steps, 4);
  EXPECT_LT(desk.model.d_model, 256);
}

TEST(Config, AlphaOutOfRangeNamesFieldAndRange) {
  const std::string msg = error_of("[train]\nalpha = 1.5\n");
  EXPECT_NE(msg.find("train.alpha"), std::string::npos) << msg;
  EXPECT_NE(msg.find("[0, 1]"), std::string::npos) << msg;
}

TEST(Config, UnknownAndMalformedKeys) {
  EXPECT_NE(error_of("[train]\nalpah = 0.5\n").find("train.alpah"), std::string::npos);
  EXPECT_NE(error_of("[bogus]\nx = 1\n"), "");
  EXPECT_NE(error_of("[train]\nbatch_size = many\n").find("train.batch_size"), std::string::npos);
  EXPECT_NE(error_of("[diffusion]\nschedule = cosine\n"), "");
  EXPECT_NE(error_of("[train]\nablation = sideways\n"), "");
  EXPECT_THROW(validate_config(kConfigs / "absent.cfg"), ConfigError);
}

TEST(Config, MissingKeysTakeDefaultsAndAreDumped) {
  const RunConfig cfg = parse_config("[train]\nbatch_size = 3\n");
  EXPECT_EQ(cfg.train.batch_size, 3);
  EXPECT_EQ(cfg.train.lr_d, TrainConfig{}.lr_d);
  const std::string dump = dump_config(cfg);
  EXPECT_NE(dump.find("lr_d"), std::string::npos);
  EXPECT_NE(dump.find("residual_blocks = 20"), std::string::npos);
}

TEST(Config, DumpRoundTrip) {
  for (const char* name : {"paper.cfg", "desk.cfg", "tiny.cfg"}) {
    const RunConfig cfg = validate_config(kConfigs / name);
    EXPECT_EQ(parse_config(dump_config(cfg)), cfg) << name;
  }
  RunConfig odd;
  odd.diffusion.schedule = "explicit:0.1,0.2,0.3,0.4";
  odd.train.ablation = AblationMode::kNoSpecDiscNoSpk;
  odd.train.fake_x0 = FakeX0Mode::kRollout;
  odd.train.lr_g = 3.3e-5;
  odd.eval.metrics = {"ssim", "mcd"};
  odd.model.speaker_mode = "precomputed";
  odd.paths.speaker_embeddings = "emb.json";
  EXPECT_EQ(parse_config(dump_config(odd)), odd);
}

TEST(Config, EveryKeyIsDumped) {
  const std::string dump = dump_config(RunConfig{});
  for (const auto& key : schema_keys()) {
    const auto dot = key.find('.');
    EXPECT_NE(dump.find(key.substr(dot + 1) + " ="), std::string::npos) << key;
  }
}

TEST(Config, Overrides) {
  RunConfig cfg;
  apply_override(cfg, "train.alpha=0.25");
  apply_override(cfg, "diffusion.steps = 6");
  EXPECT_EQ(cfg.train.alpha, 0.25);
  EXPECT_EQ(cfg.diffusion.steps, 6);
  EXPECT_THROW(apply_override(cfg, "train.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "alpha"), UsageError);
}

TEST(Config, CrossFieldChecks) {
  EXPECT_NE(error_of("[model]\nd_model = 15\nattention_heads = 2\n"), "");
  EXPECT_NE(error_of("[diffusion]\nsteps = 3\nschedule = explicit:0.1,0.2\n"), "");
  EXPECT_NE(error_of("[feature]\nfmax = 20000\n"), "");
}

TEST(Config, KernelSizes) {
  const auto k = parse_kernel_size("3x9");
  EXPECT_EQ(k.height, 3);
  EXPECT_EQ(k.width, 9);
  EXPECT_THROW(parse_kernel_size("3by9"), ConfigError);
}

TEST(Config, InlineComments) {
  const RunConfig cfg = parse_config("[train]\nbatch_size = 5 ; small\nlr_g = 1e-3 # faster\n");
  EXPECT_EQ(cfg.train.batch_size, 5);
  EXPECT_EQ(cfg.train.lr_g, 1e-3);
}
