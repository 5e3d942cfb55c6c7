#include "specdiff/config/run_config.hpp"

#include "specdiff/error.hpp"

namespace specdiff::config {

std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kFull:
      return "full";
    case AblationMode::kNoSpecDiscSpkToDiff:
      return "no_spec_disc_spk_to_diff";
    case AblationMode::kNoSpecDiscNoSpk:
      return "no_spec_disc_no_spk";
  }
  return "full";
}

AblationMode parse_ablation(const std::string& s) {
  if (s == "full") return AblationMode::kFull;
  if (s == "no_spec_disc_spk_to_diff") return AblationMode::kNoSpecDiscSpkToDiff;
  if (s == "no_spec_disc_no_spk") return AblationMode::kNoSpecDiscNoSpk;
  throw ConfigError("train.ablation: '" + s + "' is not one of full, no_spec_disc_spk_to_diff, no_spec_disc_no_spk");
}

std::string to_string(FakeX0Mode m) { return m == FakeX0Mode::kRollout ? "rollout" : "one_shot"; }

FakeX0Mode parse_fake_x0(const std::string& s) {
  if (s == "one_shot") return FakeX0Mode::kOneShot;
  if (s == "rollout") return FakeX0Mode::kRollout;
  throw ConfigError("train.fake_x0: '" + s + "' is not one of one_shot, rollout");
}

std::vector<std::string> default_vocab() {
  std::vector<std::string> v = {"<pad>", "sil", "sp", "spn"};
  const char* vowels[] = {"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"};
  const char* consonants[] = {"B",  "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L",  "M", "N",
                              "NG", "P",  "R", "S",  "SH", "T", "TH", "V",  "W", "Y", "Z", "ZH"};
  for (const char* p : vowels)
    for (int stress = 0; stress < 3; ++stress) v.push_back(std::string(p) + std::to_string(stress));
  for (const char* p : consonants) v.emplace_back(p);
  return v;
}

}  // namespace specdiff::config
