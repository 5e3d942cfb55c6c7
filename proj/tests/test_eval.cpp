#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>

#include <json.hpp>

#include "specdiff/config/config.hpp"
#include "specdiff/data/corpus.hpp"
#include "specdiff/error.hpp"
#include "specdiff/eval/metrics.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_corpus.hpp"

using namespace specdiff;
using namespace specdiff::eval;
using nn::Tensor;
namespace fs = std::filesystem;
namespace st = specdiff::testing;

namespace {

Tensor matrix(int rows, int cols, const std::function<double(int, int)>& f) {
  Tensor t({rows, cols});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t[r * cols + c] = f(r, c);
  return t;
}

double frame_distance(const Tensor& a, int i, const Tensor& b, int j) {
  const int d = a.dim(1);
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += (a[i * d + k] - b[j * d + k]) * (a[i * d + k] - b[j * d + k]);
  return std::sqrt(s);
}

// Minimum over every monotone path, enumerated one by one.
double exhaustive_dtw(const Tensor& a, const Tensor& b) {
  const int n = a.dim(0), m = b.dim(0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, int, double)> walk = [&](int i, int j, double acc) {
    acc += frame_distance(a, i, b, j);
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

void expect_valid_path(const DtwResult& r, const Tensor& a, const Tensor& b) {
  ASSERT_FALSE(r.path.empty());
  EXPECT_EQ(r.path.front(), std::make_pair(0, 0));
  EXPECT_EQ(r.path.back(), std::make_pair(a.dim(0) - 1, b.dim(0) - 1));
  double cost = frame_distance(a, 0, b, 0);
  for (std::size_t k = 1; k < r.path.size(); ++k) {
    const int di = r.path[k].first - r.path[k - 1].first;
    const int dj = r.path[k].second - r.path[k - 1].second;
    EXPECT_TRUE((di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1));
    cost += frame_distance(a, r.path[k].first, b, r.path[k].second);
  }
  EXPECT_NEAR(cost, r.cost, 1e-12);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("specdiff_eval_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_script(const fs::path& dir, const std::string& name, const std::string& body) {
  const fs::path p = dir / name;
  std::ofstream(p) << "#!/bin/sh\n" << body << "\n";
  fs::permissions(p, fs::perms::owner_all);
  return p;
}

}  // namespace

TEST(Cepstrum, MatchesDirectCosineSum) {
  Rng rng(4);
  const int m = 80, order = 24;
  const Tensor mel = st::random_tensor({5, m}, rng, 6.0);
  const Tensor c = mel_cepstrum(mel, order);
  ASSERT_EQ(c.shape, (nn::Shape{5, order + 1}));
  for (int f = 0; f < 5; ++f) {
    for (int k = 0; k <= order; ++k) {
      double s = 0.0;
      for (int n = 0; n < m; ++n) s += mel[f * m + n] * std::cos(std::numbers::pi * k * (2 * n + 1) / (2.0 * m));
      s *= std::sqrt(2.0 / m) * (k == 0 ? 1.0 / std::sqrt(2.0) : 1.0);
      EXPECT_NEAR(c[f * (order + 1) + k], s, 1e-9);
    }
  }
}

TEST(Cepstrum, ConstantSpectrumAndLinearity) {
  const Tensor flat({3, 80}, -2.5);
  const Tensor c = mel_cepstrum(flat, 24);
  for (int f = 0; f < 3; ++f) {
    EXPECT_NEAR(c[f * 25], -2.5 * std::sqrt(80.0), 1e-9);
    for (int k = 1; k <= 24; ++k) EXPECT_NEAR(c[f * 25 + k], 0.0, 1e-12);
  }
  Rng rng(5);
  Tensor mel = st::random_tensor({4, 80}, rng);
  const Tensor base = mel_cepstrum(mel, 24);
  for (auto& v : mel.data) v *= 2.0;
  const Tensor twice = mel_cepstrum(mel, 24);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(twice[i], 2.0 * base[i], 1e-12);
  EXPECT_THROW(mel_cepstrum(Tensor({2, 10}), 24), ConfigError);
}

TEST(Mcd, HandCases) {
  const double k = 10.0 / std::log(10.0) * std::sqrt(2.0);
  Rng rng(6);
  const Tensor a = st::random_tensor({6, 25}, rng);
  EXPECT_EQ(metric_mcd(a, a, Alignment::kTruncate, true), 0.0);

  Tensor one({1, 25}), other({1, 25});
  other[3] = 1.0;
  EXPECT_NEAR(metric_mcd(one, other, Alignment::kTruncate, true), 6.1419, 1e-3);
  EXPECT_NEAR(metric_mcd(one, other, Alignment::kTruncate, true), k, 1e-12);

  // c0 differences only count when c0 is included
  Tensor c0({1, 25});
  c0[0] = 1.0;
  EXPECT_EQ(metric_mcd(one, c0, Alignment::kTruncate, true), 0.0);
  EXPECT_NEAR(metric_mcd(one, c0, Alignment::kTruncate, false), k, 1e-12);

  // two frames with the same per-frame value average to that value
  Tensor two_a({2, 25}), two_b({2, 25});
  two_b[1] = 1.0;
  two_b[25 + 7] = -1.0;
  EXPECT_NEAR(metric_mcd(two_a, two_b, Alignment::kTruncate, true), k, 1e-12);

  // truncation uses the shorter length
  Tensor longer({3, 25});
  longer[2 * 25 + 4] = 50.0;
  EXPECT_NEAR(metric_mcd(two_a, longer, Alignment::kTruncate, true), 0.0, 1e-12);
  EXPECT_THROW(metric_mcd(Tensor({0, 25}), two_a, Alignment::kTruncate, true), DataError);
}

TEST(F0Rmse, HandCases) {
  const std::vector<double> ref = {100, 200};
  EXPECT_EQ(*metric_f0_rmse(ref, ref).value, 0.0);
  EXPECT_EQ(*metric_f0_rmse(ref, {110, 190}).value, 10.0);

  const Score none = metric_f0_rmse(ref, {0, 0});
  EXPECT_FALSE(none.value);
  EXPECT_EQ(none.reason, "no jointly voiced frames");

  // unvoiced frames are ignored under the joint mask
  EXPECT_EQ(*metric_f0_rmse({100, 0, 200, 150}, {110, 120, 190, 0}).value, 10.0);
  EXPECT_THROW(metric_f0_rmse(ref, {100}), DataError);
}

TEST(Ssim, IdentityMonotonicityAndSign) {
  Rng rng(7);
  // log-mel-like levels, well away from zero
  Tensor ref = st::random_tensor({40, 80}, rng);
  for (auto& v : ref.data) v -= 6.0;
  EXPECT_EQ(metric_ssim(ref, ref), 1.0);

  double last = 1.0;
  for (double offset : {0.5, 1.0, 2.0}) {
    Tensor gen = ref;
    for (auto& v : gen.data) v += offset;
    const double s = metric_ssim(ref, gen);
    EXPECT_LT(s, last) << offset;
    last = s;
  }

  Tensor patch = st::random_tensor({7, 7}, rng);
  double mean = 0.0;
  for (double v : patch.data) mean += v / 49.0;
  for (auto& v : patch.data) v -= mean;
  Tensor neg = patch;
  for (auto& v : neg.data) v = -v;
  EXPECT_LT(metric_ssim(patch, neg), 0.0);
}

TEST(Ssim, SingleWindowMatchesFormula) {
  Rng rng(8);
  const Tensor a = st::random_tensor({7, 7}, rng);
  const Tensor b = st::random_tensor({7, 7}, rng);
  const double range = 2.0;
  std::vector<double> w(49);
  double wsum = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      w[i * 7 + j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / (2.0 * 1.5 * 1.5));
      wsum += w[i * 7 + j];
    }
  double ma = 0, mb = 0;
  for (int k = 0; k < 49; ++k) {
    ma += w[k] / wsum * a[k];
    mb += w[k] / wsum * b[k];
  }
  double va = 0, vb = 0, cov = 0;
  for (int k = 0; k < 49; ++k) {
    va += w[k] / wsum * (a[k] - ma) * (a[k] - ma);
    vb += w[k] / wsum * (b[k] - mb) * (b[k] - mb);
    cov += w[k] / wsum * (a[k] - ma) * (b[k] - mb);
  }
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  const double expect = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  EXPECT_NEAR(metric_ssim(a, b, range), expect, 1e-12);
}

TEST(Dtw, MatchesExhaustiveSearchOnBinarySequences) {
  // every pair of 0/1 sequences with lengths 1..6
  std::vector<Tensor> seqs;
  for (int n = 1; n <= 6; ++n)
    for (int bits = 0; bits < (1 << n); ++bits) seqs.push_back(matrix(n, 1, [&](int r, int) { return (bits >> r) & 1; }));
  for (const auto& a : seqs) {
    for (const auto& b : seqs) {
      const auto r = dtw_align(a, b);
      ASSERT_NEAR(r.cost, exhaustive_dtw(a, b), 1e-12);
    }
  }
}

TEST(Dtw, MatchesExhaustiveSearchOnRandomFrames) {
  Rng rng(9);
  for (int n = 1; n <= 6; ++n) {
    for (int m = 1; m <= 6; ++m) {
      for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = st::random_tensor({n, 3}, rng);
        const Tensor b = st::random_tensor({m, 3}, rng);
        const auto r = dtw_align(a, b);
        EXPECT_NEAR(r.cost, exhaustive_dtw(a, b), 1e-12);
        expect_valid_path(r, a, b);
      }
    }
  }
}

TEST(Dtw, DiagonalAndRepeatedFrame) {
  Rng rng(10);
  const Tensor a = st::random_tensor({6, 4}, rng);
  const auto same = dtw_align(a, a);
  ASSERT_EQ(same.path.size(), 6u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(same.path[i], std::make_pair(i, i));
  EXPECT_EQ(same.cost, 0.0);

  // frame 2 duplicated in the generated sequence
  const Tensor dup = matrix(7, 4, [&](int r, int c) { return a[(r <= 2 ? r : r - 1) * 4 + c]; });
  const auto r = dtw_align(a, dup);
  EXPECT_EQ(r.path.size(), 7u);
  EXPECT_EQ(r.cost, 0.0);
  int vertical = 0;
  for (std::size_t k = 1; k < r.path.size(); ++k)
    if (r.path[k].first == r.path[k - 1].first) ++vertical;
  EXPECT_EQ(vertical, 1);

  // both truncated to the shorter length, then compared frame by frame
  const Tensor b = st::random_tensor({9, 4}, rng);
  const Tensor b6 = matrix(6, 4, [&](int r, int c) { return b[r * 4 + c]; });
  double diag = 0.0;
  for (int i = 0; i < 6; ++i) diag += frame_distance(a, i, b, i);
  EXPECT_LE(dtw_align(a, b6).cost, diag + 1e-12);
}

TEST(Mcd, DtwAlignmentAbsorbsRepeats) {
  Rng rng(11);
  const Tensor a = st::random_tensor({5, 25}, rng);
  const Tensor dup = matrix(6, 25, [&](int r, int c) { return a[(r <= 1 ? r : r - 1) * 25 + c]; });
  EXPECT_EQ(metric_mcd(a, dup, Alignment::kDtw, true), 0.0);
  EXPECT_GT(metric_mcd(a, dup, Alignment::kTruncate, true), 0.0);
  EXPECT_EQ(parse_alignment("dtw"), Alignment::kDtw);
  EXPECT_EQ(parse_alignment("teacher"), Alignment::kTruncate);
  EXPECT_THROW(parse_alignment("nearest"), ConfigError);
}

TEST(ExternalTools, AdapterContract) {
  const auto dir = scratch("tools");
  const auto good = write_script(dir, "good.sh", "echo 0.87");
  const auto junk = write_script(dir, "junk.sh", "echo 'score: lots'");
  const auto fails = write_script(dir, "fails.sh", "exit 3");

  const auto ok = external_metric_adapter(good.string(), dir / "r.wav", dir / "g.wav");
  EXPECT_EQ(ok.status, ExternalResult::Status::kOk);
  EXPECT_DOUBLE_EQ(ok.value, 0.87);

  const auto bad = external_metric_adapter(junk.string(), dir / "r.wav", dir / "g.wav");
  EXPECT_EQ(bad.status, ExternalResult::Status::kSkipped);
  EXPECT_NE(bad.reason.find("parse"), std::string::npos) << bad.reason;

  EXPECT_EQ(external_metric_adapter(fails.string(), dir / "r.wav", dir / "g.wav").status,
            ExternalResult::Status::kSkipped);
  EXPECT_EQ(external_metric_adapter("", dir / "r.wav", dir / "g.wav").status, ExternalResult::Status::kOmitted);
  EXPECT_EQ(external_metric_adapter((dir / "missing.sh").string(), dir / "r.wav", dir / "g.wav").status,
            ExternalResult::Status::kOmitted);
  fs::remove_all(dir);
}

class CorpusEval : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("corpus"));
    config::RunConfig cfg;
    const auto manifest = st::write_toy_corpus(*root_ / "src");
    data::preprocess(cfg, manifest, *root_ / "data", 1, 1);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }
  static fs::path ref() { return *root_ / "data" / "ref"; }
  static fs::path* root_;
};
fs::path* CorpusEval::root_ = nullptr;

TEST_F(CorpusEval, IdentityScoresPerfectly) {
  config::RunConfig cfg;
  const auto report = evaluate_corpus(ref(), ref(), cfg);
  EXPECT_EQ(report.utterances.size(), 10u);
  EXPECT_TRUE(report.skipped.empty());
  EXPECT_TRUE(report.complete());
  EXPECT_EQ(report.means.at("ssim"), 1.0);
  EXPECT_EQ(report.means.at("mcd_db"), 0.0);
  EXPECT_EQ(report.means.at("f0_rmse_hz"), 0.0);
  const auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j.at("means").at("ssim").get<double>(), 1.0);
  EXPECT_NE(report.to_text().find("mcd_db"), std::string::npos);
}

TEST_F(CorpusEval, CorruptUtteranceIsSkipped) {
  const auto gen = *root_ / "gen_corrupt";
  fs::remove_all(gen);
  fs::create_directories(gen);
  Rng rng(12);
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(ref())) {
    if (e.path().extension() != ".bin") continue;
    const std::string id = e.path().stem().string();
    ids.push_back(id);
    Tensor mel = io::load_tensor(e.path());
    for (auto& v : mel.data) v += 0.3 * rng.normal();
    io::save_tensor(gen / (id + ".bin"), mel);
  }
  std::sort(ids.begin(), ids.end());
  std::ofstream(gen / (ids[4] + ".bin"), std::ios::trunc) << "garbage";

  config::RunConfig cfg;
  const auto report = evaluate_corpus(ref(), gen, cfg);
  EXPECT_EQ(report.utterances.size(), 9u);
  ASSERT_EQ(report.skipped.size(), 1u);
  EXPECT_EQ(report.skipped.begin()->first, ids[4]);
  EXPECT_FALSE(report.skipped.begin()->second.empty());
  EXPECT_TRUE(report.complete());

  for (const std::string metric : {"ssim", "mcd_db"}) {
    double sum = 0.0;
    int n = 0;
    for (const auto& u : report.utterances) {
      sum += u.values.at(metric);
      ++n;
    }
    EXPECT_EQ(n, 9);
    EXPECT_EQ(report.counts.at(metric), 9);
    EXPECT_NEAR(report.means.at(metric), sum / n, 1e-12) << metric;
  }
  EXPECT_LT(report.means.at("ssim"), 1.0);
  EXPECT_GT(report.means.at("mcd_db"), 0.0);
}

TEST_F(CorpusEval, ConfiguredToolsAddColumns) {
  const auto tools = *root_ / "tools";
  fs::create_directories(tools);
  config::RunConfig cfg;
  cfg.eval.metrics = {"ssim", "stoi", "pesq"};
  cfg.eval.stoi_tool = write_script(tools, "stoi.sh", "echo 0.91").string();
  const auto report = evaluate_corpus(ref(), ref(), cfg);
  EXPECT_DOUBLE_EQ(report.means.at("stoi"), 0.91);
  EXPECT_EQ(report.omitted, std::vector<std::string>{"pesq"});
  EXPECT_EQ(report.means.count("pesq"), 0u);
}

TEST_F(CorpusEval, NoSharedIdsIsAnError) {
  const auto empty = *root_ / "empty";
  fs::create_directories(empty);
  EXPECT_THROW(evaluate_corpus(ref(), empty, config::RunConfig{}), DataError);
}
