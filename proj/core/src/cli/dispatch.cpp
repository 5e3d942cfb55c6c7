#include "specdiff/cli/dispatch.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "specdiff/config/config.hpp"
#include "specdiff/data/corpus.hpp"
#include "specdiff/diffusion/schedule.hpp"
#include "specdiff/error.hpp"
#include "specdiff/eval/metrics.hpp"
#include "specdiff/io/tensor_file.hpp"
#include "specdiff/synth/synthesis.hpp"
#include "specdiff/train/trainer.hpp"
#include "specdiff/version.hpp"

namespace specdiff::cli {

namespace fs = std::filesystem;

fs::path run_root() {
  const char* env = std::getenv("SPECDIFF_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string stamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  if (with_config) {
    cmd->add_option("--config", c.config_path, "INI run configuration");
    cmd->add_option("--set", c.overrides, "Override one key, section.key=value (repeatable)");
  }
  cmd->add_option("--seed", c.seed, "Random seed (recorded in the run provenance)");
}

config::RunConfig resolve_config(const Common& c) {
  config::RunConfig cfg = c.config_path.empty() ? config::RunConfig{} : config::validate_config(c.config_path);
  if (cfg.model.vocab.empty()) cfg.model.vocab = config::default_vocab();
  for (const auto& o : c.overrides) config::apply_override(cfg, o);
  if (c.seed) cfg.train.seed = *c.seed;
  config::validate(cfg);
  return cfg;
}

/// Run directory with the resolved config and a provenance record that is
/// rewritten with the exit status when the command finishes.
class RunRecord {
 public:
  RunRecord(const std::string& command, const std::vector<std::string>& argv) : command_(command) {
    const fs::path root = run_root();
    fs::create_directories(root);
    const std::string base = command + "-" + stamp() + "-" + std::to_string(::getpid());
    dir_ = root / base;
    for (int k = 1; fs::exists(dir_); ++k) dir_ = root / (base + "-" + std::to_string(k));
    fs::create_directories(dir_);
    prov_["command"] = command;
    prov_["argv"] = argv;
    prov_["version"] = kVersion;
    prov_["code_version"] = kCodeVersion;
    prov_["started"] = utc_now();
    write();
  }

  const fs::path& dir() const { return dir_; }

  void set_config(const config::RunConfig& cfg) {
    io::atomic_write(dir_ / "config.cfg", config::dump_config(cfg));
    prov_["seed"] = cfg.train.seed;
    write();
  }
  void set(const std::string& key, nlohmann::json value) {
    prov_[key] = std::move(value);
    write();
  }
  void finish(int code) {
    prov_["finished"] = utc_now();
    prov_["exit_code"] = code;
    write();
  }

 private:
  void write() { io::atomic_write(dir_ / "provenance.json", prov_.dump(2) + "\n"); }

  std::string command_;
  fs::path dir_;
  nlohmann::json prov_;
};

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"specdiff: adversarial few-step diffusion acoustic model"};
  app.name(args.empty() ? "specdiff" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kCodeVersion));

  Common common;

  auto* pre = app.add_subcommand("preprocess", "Extract features and statistics from a manifest");
  std::string manifest;
  std::string pre_out;
  int workers = 2;
  add_common(pre, common, true);
  pre->add_option("--manifest", manifest, "Manifest file (tab-separated key=value)")->required();
  pre->add_option("--out", pre_out, "Output directory (default paths.data)");
  pre->add_option("--workers", workers, "Feature extraction threads")->check(CLI::PositiveNumber);

  auto* trn = app.add_subcommand("train", "Train generator and discriminators");
  std::string data_dir;
  std::string train_out;
  std::string resume;
  add_common(trn, common, true);
  trn->add_option("--data", data_dir, "Preprocessed corpus (default paths.data)");
  trn->add_option("--out", train_out, "Checkpoint/log directory (default paths.output, else the run directory)");
  trn->add_option("--resume", resume, "Checkpoint to resume from");

  auto* syn = app.add_subcommand("synthesize", "Text to mel through the reverse process");
  std::string checkpoint;
  std::string phonemes;
  std::string speaker;
  std::string syn_out;
  std::string dump_dir;
  std::string wav_out;
  std::string durations;
  int rtf_reps = 0;
  std::string corpus_dir;
  std::string split = "validation";
  bool free_running = false;
  add_common(syn, common, false);
  syn->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  syn->add_option("--phonemes", phonemes, "Space-separated phoneme symbols");
  syn->add_option("--speaker", speaker, "Speaker id");
  syn->add_option("--out", syn_out, "Output mel container (single mode) or directory (corpus mode)");
  syn->add_option("--dump-steps", dump_dir, "Write every reverse step x_T..x_0 into this directory");
  syn->add_option("--wav", wav_out, "Griffin-Lim rendering of the output");
  syn->add_option("--durations", durations, "Space-separated frame counts per phoneme");
  syn->add_option("--rtf", rtf_reps, "Measure the real-time factor over N timed runs")->check(CLI::PositiveNumber);
  syn->add_option("--corpus", corpus_dir, "Synthesize every utterance of a preprocessed corpus");
  syn->add_option("--split", split, "Corpus split: train, validation or all")
      ->check(CLI::IsMember({"train", "validation", "all"}));
  syn->add_flag("--free-running", free_running, "Corpus mode: predicted instead of ground-truth durations");

  auto* evl = app.add_subcommand("evaluate", "Objective metrics between reference and generated mels");
  std::string ref_dir;
  std::string gen_dir;
  std::string metrics;
  std::string align;
  std::string report_out;
  std::string json_out;
  add_common(evl, common, true);
  evl->add_option("--ref", ref_dir, "Reference directory")->required();
  evl->add_option("--gen", gen_dir, "Generated directory")->required();
  evl->add_option("--metrics", metrics, "Comma-separated subset of ssim,mcd,f0rmse,stoi,pesq");
  evl->add_option("--align", align, "teacher or dtw")->check(CLI::IsMember({"teacher", "dtw"}));
  evl->add_option("--out", report_out, "Text report");
  evl->add_option("--json", json_out, "Machine-readable report");

  auto* sch = app.add_subcommand("schedule", "Print a noise schedule");
  int steps = 4;
  std::string spec = "vp:0.1:40";
  bool print = false;
  add_common(sch, common, false);
  sch->add_option("--T", steps, "Number of diffusion steps");
  sch->add_option("--spec", spec, "vp:<beta_min>:<beta_max> or explicit:<b1>,...");
  sch->add_flag("--print", print, "Print the coefficient table");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  CLI::App* chosen = app.get_subcommands().front();
  std::optional<RunRecord> record;
  int code = 0;
  try {
    record.emplace(chosen->get_name(), args);
    if (common.seed) record->set("seed", *common.seed);

    if (chosen == sch) {
      const auto s = diffusion::build_schedule(steps, diffusion::ScheduleSpec::parse(spec));
      record->set("schedule", spec);
      if (print) out << s.table();
    } else if (chosen == pre) {
      const auto cfg = resolve_config(common);
      record->set_config(cfg);
      const fs::path dest = pre_out.empty() ? fs::path(cfg.paths.data) : fs::path(pre_out);
      if (dest.empty()) throw UsageError("preprocess needs --out or paths.data");
      const auto summary = data::preprocess(cfg, manifest, dest, cfg.train.seed, workers);
      out << "utterances=" << summary.utterances << " train=" << summary.train
          << " validation=" << summary.validation << " speakers=" << summary.speakers.size() << " out=" << dest.string()
          << '\n';
    } else if (chosen == trn) {
      const auto cfg = resolve_config(common);
      record->set_config(cfg);
      const fs::path data = data_dir.empty() ? fs::path(cfg.paths.data) : fs::path(data_dir);
      if (data.empty()) throw UsageError("train needs --data or paths.data");
      const auto ds = data::load_dataset(data);
      train::TrainOptions opts;
      opts.out_dir = !train_out.empty() ? fs::path(train_out)
                     : !cfg.paths.output.empty() ? fs::path(cfg.paths.output)
                                                 : record->dir();
      if (!resume.empty()) opts.resume = resume;
      const auto result = train::run_training(cfg, ds, opts);
      record->set("checkpoint", result.final_checkpoint.string());
      out << "step=" << result.final_step << " checkpoint=" << result.final_checkpoint.string() << '\n';
      if (!result.reports.empty()) out << result.reports.back().to_log_line() << '\n';
    } else if (chosen == syn) {
      const std::uint64_t seed = common.seed.value_or(0);
      record->set("seed", seed);
      const synth::Synthesizer synth(checkpoint);
      record->set_config(synth.config());
      record->set("seed", seed);
      if (!corpus_dir.empty()) {
        if (syn_out.empty()) throw UsageError("corpus synthesis needs --out <dir>");
        const auto ds = data::load_dataset(corpus_dir);
        std::vector<int> idx;
        if (split == "train") {
          idx = ds.train;
        } else if (split == "validation") {
          idx = ds.validation;
        } else {
          for (int i = 0; i < static_cast<int>(ds.utterances.size()); ++i) idx.push_back(i);
        }
        synth::CorpusSynthesisOptions o;
        o.out_dir = syn_out;
        o.teacher_forced = !free_running;
        o.write_wav = true;
        o.seed = seed;
        const auto ids = synth::synthesize_corpus(synth, ds, idx, o);
        out << "synthesized=" << ids.size() << " out=" << syn_out << '\n';
      } else {
        if (phonemes.empty() || speaker.empty()) throw UsageError("synthesize needs --phonemes and --speaker");
        synth::SynthesisRequest req;
        req.phonemes = split_ws(phonemes);
        req.speaker = speaker;
        req.seed = seed;
        req.dump_steps = !dump_dir.empty();
        if (!durations.empty()) {
          std::vector<int> d;
          for (const auto& tok : split_ws(durations)) {
            try {
              d.push_back(std::stoi(tok));
            } catch (const std::exception&) {
              throw UsageError("--durations: '" + tok + "' is not an integer");
            }
          }
          req.duration_override = d;
        }
        const auto result = synth.synthesize(req);
        const auto& f = synth.config().feature;
        if (!syn_out.empty()) synth::export_mel(syn_out, result.mel, f);
        if (!dump_dir.empty()) {
          fs::create_directories(dump_dir);
          const int T = synth.schedule().steps;
          for (std::size_t k = 0; k < result.steps.size(); ++k) {
            io::save_tensor(fs::path(dump_dir) / ("step_" + std::to_string(k) + "_x" +
                                                  std::to_string(T - static_cast<int>(k)) + ".bin"),
                            result.steps[k]);
          }
        }
        if (!wav_out.empty()) synth::render_wav(wav_out, result.mel, f, synth.config().eval.griffin_lim_iters, seed);
        out << "frames=" << result.mel.dim(0) << " n_mels=" << result.mel.dim(1) << '\n';
        if (rtf_reps > 0) {
          const auto rtf = synth::measure_rtf(synth, req, rtf_reps);
          record->set("rtf", rtf.rtf);
          out << rtf.to_text() << '\n';
        }
      }
    } else if (chosen == evl) {
      auto cfg = resolve_config(common);
      if (!metrics.empty()) cfg.eval.metrics = split_csv(metrics);
      if (!align.empty()) cfg.eval.align = align;
      record->set_config(cfg);
      const auto report = eval::evaluate_corpus(ref_dir, gen_dir, cfg);
      const std::string text = report.to_text();
      if (!report_out.empty()) io::atomic_write(report_out, text);
      if (!json_out.empty()) io::atomic_write(json_out, report.to_json());
      io::atomic_write(record->dir() / "metrics.json", report.to_json());
      out << text;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    code = static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = static_cast<int>(ExitCode::kData);
  }
  if (record) {
    try {
      record->finish(code);
    } catch (const std::exception& e) {
      err << "warning: could not finalise run record: " << e.what() << '\n';
    }
  }
  return code;
}

int dispatch(int argc, char** argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace specdiff::cli
