#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "specdiff/data/corpus.hpp"
#include "specdiff/error.hpp"
#include "support/toy_corpus.hpp"

using namespace specdiff;
using namespace specdiff::data;
namespace fs = std::filesystem;
namespace st = specdiff::testing;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("specdiff_corpus_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RawUtterance raw(const std::string& speaker, std::vector<std::vector<double>> rows, std::vector<double> f0) {
  RawUtterance u;
  u.id = "u";
  u.speaker = speaker;
  const int f = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows.front().size());
  u.mel = nn::Tensor({f, c});
  for (int i = 0; i < f; ++i)
    for (int k = 0; k < c; ++k) u.mel[i * c + k] = rows[i][k];
  u.f0 = std::move(f0);
  for (int i = 0; i < f; ++i) u.energy.push_back(1.0 + i);
  u.durations = {f};
  u.phoneme_ids = {3};
  return u;
}

}  // namespace

TEST(Durations, AlignmentCorrections) {
  EXPECT_EQ(correct_duration_sum({2, 3, 1}, 6), (std::vector<int>{2, 3, 1}));
  EXPECT_EQ(correct_duration_sum({2, 3, 1}, 7), (std::vector<int>{2, 3, 2}));
  EXPECT_EQ(correct_duration_sum({1, 1, 4}, 4), (std::vector<int>{1, 1, 2}));
  EXPECT_EQ(correct_duration_sum({2, 1, 1}, 2), (std::vector<int>{2, 0, 0}));

  const std::vector<AlignmentSpan> spans = {{"sil", 0, 2}, {"AA1", 2, 5}, {"sil", 5, 6}};
  EXPECT_EQ(ingest_durations(spans, {"sil", "AA1", "sil"}, 6), (std::vector<int>{2, 3, 1}));
  EXPECT_THROW(ingest_durations(spans, {"sil", "IY1", "sil"}, 6), DataError);
  EXPECT_THROW(ingest_durations(spans, {"sil", "AA1"}, 6), DataError);
}

TEST(Manifest, RoundTripAndErrors) {
  const auto dir = scratch("manifest");
  ManifestEntry a{"b2", "wav/b2.wav", "hello there", {"sil", "HH", "AH0", "sil"}, "spk1", "align/b2.txt"};
  ManifestEntry b{"a1", "wav/a1.wav", "hi", {"HH", "AY1"}, "spk0", "align/a1.txt"};
  write_manifest(dir / "m.tsv", {a, b});
  const auto back = read_manifest(dir / "m.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "a1");
  EXPECT_EQ(back[1].phonemes, a.phonemes);
  EXPECT_EQ(back[1].text, "hello there");
  EXPECT_EQ(back[1].audio, dir / "wav/b2.wav");

  write_manifest(dir / "dup.tsv", {a, a});
  EXPECT_THROW(read_manifest(dir / "dup.tsv"), DataError);
  std::ofstream(dir / "bad.tsv") << "id=x\taudio=x.wav\n";
  EXPECT_THROW(read_manifest(dir / "bad.tsv"), DataError);
  EXPECT_THROW(read_manifest(dir / "absent.tsv"), DataError);
  fs::remove_all(dir);
}

TEST(Alignment, ReadsSpans) {
  const auto dir = scratch("align");
  std::ofstream(dir / "a.txt") << "sil 0 3\nAA1 3 7\n";
  const auto spans = read_alignment(dir / "a.txt");
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[1].phoneme, "AA1");
  EXPECT_EQ(spans[1].end - spans[1].start, 4);
  std::ofstream(dir / "b.txt") << "sil 3 1\n";
  EXPECT_THROW(read_alignment(dir / "b.txt"), DataError);
  fs::remove_all(dir);
}

TEST(Vocabulary, IdsAndUnknowns) {
  const std::vector<std::string> vocab = {"<pad>", "sil", "AA1"};
  EXPECT_EQ(phoneme_ids({"AA1", "sil"}, vocab), (std::vector<int>{2, 1}));
  EXPECT_THROW(phoneme_ids({"ZZ9"}, vocab), DataError);
}

TEST(Stats, SingleUtteranceChannelMeans) {
  const auto u = raw("s", {{1, 5, 2}, {3, 5, 4}, {5, 5, 9}}, {100, 0, 200});
  const auto s = compute_norm_stats({&u});
  EXPECT_NEAR(s.mel_mean[0], 3.0, 1e-12);
  EXPECT_NEAR(s.mel_mean[1], 5.0, 1e-12);
  EXPECT_NEAR(s.mel_mean[2], 5.0, 1e-12);
  EXPECT_EQ(s.mel_std[1], NormStats::kStdFloor);
  const auto n = normalize_mel(u.mel, s);
  for (int f = 0; f < 3; ++f) EXPECT_EQ(n[f * 3 + 1], 0.0);
  EXPECT_NEAR(s.speakers.at("s").pitch_mean, 0.5 * (std::log(100.0) + std::log(200.0)), 1e-12);
}

TEST(Stats, PooledOverUtterances) {
  const auto a = raw("s0", {{1, 2}, {3, -2}}, {100, 120});
  const auto b = raw("s0", {{0, 7}, {4, 1}, {2, 2}}, {0, 0, 150});
  const auto s = compute_norm_stats({&a, &b});
  const std::vector<std::vector<double>> cols = {{1, 3, 0, 4, 2}, {2, -2, 7, 1, 2}};
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (double v : cols[c]) mean += v / 5.0;
    double var = 0.0;
    for (double v : cols[c]) var += (v - mean) * (v - mean) / 5.0;
    EXPECT_NEAR(s.mel_mean[c], mean, 1e-12);
    EXPECT_NEAR(s.mel_std[c], std::sqrt(var), 1e-12);
  }
  const std::vector<double> logs = {std::log(100.0), std::log(120.0), std::log(150.0)};
  const double lm = (logs[0] + logs[1] + logs[2]) / 3.0;
  double lv = 0.0;
  for (double v : logs) lv += (v - lm) * (v - lm) / 3.0;
  EXPECT_NEAR(s.speakers.at("s0").pitch_mean, lm, 1e-12);
  EXPECT_NEAR(s.speakers.at("s0").pitch_std, std::sqrt(lv), 1e-12);

  const auto round = NormStats::from_json(s.to_json());
  EXPECT_EQ(round.mel_mean.size(), s.mel_mean.size());
  for (std::size_t i = 0; i < s.mel_mean.size(); ++i) EXPECT_NEAR(round.mel_mean[i], s.mel_mean[i], 1e-15);
}

TEST(Stats, NormalizeRoundTripAndUnvoicedPitch) {
  const auto a = raw("s0", {{1, 2}, {3, -2}, {0, 1}}, {100, 0, 140});
  const auto s = compute_norm_stats({&a});
  config::FeatureConfig feature;
  const auto frame = normalize_utterance(a, s, feature, "frame");
  EXPECT_EQ(frame.pitch[1], 0.0);
  EXPECT_NEAR(frame.pitch[0], -frame.pitch[2], 1e-12);
  const auto back = denormalize_mel(frame.mel, s);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], a.mel[i], 1e-12);
  const auto phon = normalize_utterance(a, s, feature, "phoneme");
  ASSERT_EQ(phon.pitch.size(), 1u);
  EXPECT_NEAR(phon.pitch[0], 0.0, 1e-12);
}

TEST(Split, SeededAndNonEmpty) {
  const auto [train, val] = split_indices(10, 3, 42);
  EXPECT_EQ(train.size(), 7u);
  EXPECT_EQ(val.size(), 3u);
  std::set<int> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(split_indices(10, 3, 42), split_indices(10, 3, 42));
  EXPECT_EQ(split_indices(2, 5, 1).first.size(), 1u);
}

TEST(Preprocess, ToyCorpusEndToEnd) {
  const auto dir = scratch("toy");
  const auto manifest = st::write_toy_corpus(dir / "src");
  config::RunConfig cfg;
  cfg.train.val_count = 2;
  const auto summary = preprocess(cfg, manifest, dir / "data", 3, 2);
  EXPECT_EQ(summary.utterances, 10);
  EXPECT_EQ(summary.train, 8);
  EXPECT_EQ(summary.validation, 2);
  EXPECT_EQ(summary.speakers, (std::vector<std::string>{"spk0", "spk1"}));

  const auto ds = load_dataset(dir / "data");
  ASSERT_EQ(ds.utterances.size(), 10u);
  EXPECT_EQ(ds.train.size(), 8u);
  for (const auto& u : ds.utterances) {
    int sum = 0;
    for (int d : u.durations) sum += d;
    EXPECT_EQ(sum, u.frames()) << u.id;
    EXPECT_EQ(u.mel.dim(1), 80);
    EXPECT_EQ(u.pitch.size(), u.phonemes.size());
    EXPECT_TRUE(u.mel.all_finite());
    EXPECT_TRUE(fs::exists(dir / "data" / "ref" / (u.id + ".wav")));
  }
  // statistics come from the training split only
  double mean0 = 0.0;
  long frames = 0;
  for (int i : ds.train) {
    const auto back = denormalize_mel(ds.utterances[i].mel, ds.stats);
    for (int f = 0; f < back.dim(0); ++f) mean0 += back[f * 80];
    frames += back.dim(0);
  }
  EXPECT_NEAR(mean0 / frames, ds.stats.mel_mean[0], 1e-7);

  // a second preprocess with the same seed is identical
  preprocess(cfg, manifest, dir / "again", 3, 1);
  const auto again = load_dataset(dir / "again");
  EXPECT_EQ(again.train, ds.train);
  EXPECT_EQ(again.utterances[4].mel.data, ds.utterances[4].mel.data);
  fs::remove_all(dir);
}

TEST(Preprocess, MissingAudioIsReported) {
  const auto dir = scratch("missing");
  auto manifest = st::write_toy_corpus(dir / "src", st::ToyCorpusSpec{.utterances = 3});
  fs::remove(dir / "src" / "wav" / "utt101.wav");
  config::RunConfig cfg;
  try {
    preprocess(cfg, manifest, dir / "data", 1, 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("utt101"), std::string::npos);
  }
  fs::remove_all(dir);
}
