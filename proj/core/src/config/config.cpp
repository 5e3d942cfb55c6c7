#include "specdiff/config/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "specdiff/diffusion/schedule.hpp"
#include "specdiff/error.hpp"

namespace specdiff::config {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const auto* first = t.data();
  const auto* last = t.data() + t.size();
  auto res = std::from_chars(first, last, v);
  if (t.empty() || res.ec != std::errc() || res.ptr != last) {
    throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": cannot parse '" + text + "' as a boolean");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& path, const std::string&)> set;
};

// Field builders over a member-pointer chain RunConfig::group -> Group::member.
template <typename Group, typename T>
Field make_field(std::string section, std::string key, Group RunConfig::*group, T Group::*member) {
  Field f{section, key, nullptr, nullptr};
  f.get = [group, member](const RunConfig& c) -> std::string {
    const T& v = c.*group.*member;
    if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(v);
    } else if constexpr (std::is_integral_v<T>) {
      return std::to_string(v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
      return out;
    } else if constexpr (std::is_same_v<T, AblationMode> || std::is_same_v<T, FakeX0Mode>) {
      return to_string(v);
    }
  };
  f.set = [group, member](RunConfig& c, const std::string& path, const std::string& text) {
    T& v = c.*group.*member;
    if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(path, text);
    } else if constexpr (std::is_arithmetic_v<T>) {
      v = parse_number<T>(path, text);
    } else if constexpr (std::is_same_v<T, std::string>) {
      v = trim(text);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      v = split(text, ',');
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      v.clear();
      for (const auto& item : split(text, ',')) v.push_back(parse_number<int>(path, item));
    } else if constexpr (std::is_same_v<T, AblationMode>) {
      v = parse_ablation(trim(text));
    } else if constexpr (std::is_same_v<T, FakeX0Mode>) {
      v = parse_fake_x0(trim(text));
    }
  };
  return f;
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    using R = RunConfig;
    std::vector<Field> s;
    s.push_back(make_field("feature", "sample_rate", &R::feature, &FeatureConfig::sample_rate));
    s.push_back(make_field("feature", "n_mels", &R::feature, &FeatureConfig::n_mels));
    s.push_back(make_field("feature", "hop", &R::feature, &FeatureConfig::hop));
    s.push_back(make_field("feature", "window", &R::feature, &FeatureConfig::window));
    s.push_back(make_field("feature", "n_fft", &R::feature, &FeatureConfig::n_fft));
    s.push_back(make_field("feature", "fmin", &R::feature, &FeatureConfig::fmin));
    s.push_back(make_field("feature", "fmax", &R::feature, &FeatureConfig::fmax));
    s.push_back(make_field("feature", "log_floor", &R::feature, &FeatureConfig::log_floor));
    s.push_back(make_field("feature", "normalize", &R::feature, &FeatureConfig::normalize));
    s.push_back(make_field("feature", "f0_min", &R::feature, &FeatureConfig::f0_min));
    s.push_back(make_field("feature", "f0_max", &R::feature, &FeatureConfig::f0_max));
    s.push_back(make_field("feature", "voicing_threshold", &R::feature, &FeatureConfig::voicing_threshold));

    s.push_back(make_field("diffusion", "steps", &R::diffusion, &DiffusionConfig::steps));
    s.push_back(make_field("diffusion", "schedule", &R::diffusion, &DiffusionConfig::schedule));

    s.push_back(make_field("model", "vocab", &R::model, &ModelConfig::vocab));
    s.push_back(make_field("model", "d_model", &R::model, &ModelConfig::d_model));
    s.push_back(make_field("model", "encoder_layers", &R::model, &ModelConfig::encoder_layers));
    s.push_back(make_field("model", "attention_heads", &R::model, &ModelConfig::attention_heads));
    s.push_back(make_field("model", "encoder_conv_kernel", &R::model, &ModelConfig::encoder_conv_kernel));
    s.push_back(make_field("model", "encoder_conv_filter", &R::model, &ModelConfig::encoder_conv_filter));
    s.push_back(make_field("model", "duration_kernel", &R::model, &ModelConfig::duration_kernel));
    s.push_back(make_field("model", "pitch_kernel", &R::model, &ModelConfig::pitch_kernel));
    s.push_back(make_field("model", "energy_kernel", &R::model, &ModelConfig::energy_kernel));
    s.push_back(make_field("model", "variance_filter", &R::model, &ModelConfig::variance_filter));
    s.push_back(make_field("model", "pitch_granularity", &R::model, &ModelConfig::pitch_granularity));
    s.push_back(make_field("model", "min_duration", &R::model, &ModelConfig::min_duration));
    s.push_back(make_field("model", "residual_blocks", &R::model, &ModelConfig::residual_blocks));
    s.push_back(make_field("model", "residual_channels", &R::model, &ModelConfig::residual_channels));
    s.push_back(make_field("model", "speaker_dim", &R::model, &ModelConfig::speaker_dim));
    s.push_back(make_field("model", "speaker_mode", &R::model, &ModelConfig::speaker_mode));
    s.push_back(make_field("model", "dd_blocks", &R::model, &ModelConfig::dd_blocks));
    s.push_back(make_field("model", "dd_kernel", &R::model, &ModelConfig::dd_kernel));
    s.push_back(make_field("model", "dd_base_channels", &R::model, &ModelConfig::dd_base_channels));
    s.push_back(make_field("model", "dd_max_channels", &R::model, &ModelConfig::dd_max_channels));
    s.push_back(make_field("model", "ds_channels", &R::model, &ModelConfig::ds_channels));
    s.push_back(make_field("model", "ds_strided_convs", &R::model, &ModelConfig::ds_strided_convs));
    s.push_back(make_field("model", "ds_plain_convs", &R::model, &ModelConfig::ds_plain_convs));
    s.push_back(make_field("model", "ds_kernel_sizes", &R::model, &ModelConfig::ds_kernel_sizes));
    s.push_back(make_field("model", "ds_stride_height", &R::model, &ModelConfig::ds_stride_height));
    s.push_back(make_field("model", "ds_stride_widths", &R::model, &ModelConfig::ds_stride_widths));
    s.push_back(make_field("model", "ds_padding_height", &R::model, &ModelConfig::ds_padding_height));
    s.push_back(make_field("model", "ds_padding_widths", &R::model, &ModelConfig::ds_padding_widths));

    s.push_back(make_field("train", "alpha", &R::train, &TrainConfig::alpha));
    s.push_back(make_field("train", "batch_size", &R::train, &TrainConfig::batch_size));
    s.push_back(make_field("train", "total_steps", &R::train, &TrainConfig::total_steps));
    s.push_back(make_field("train", "lr_g", &R::train, &TrainConfig::lr_g));
    s.push_back(make_field("train", "lr_d", &R::train, &TrainConfig::lr_d));
    s.push_back(make_field("train", "adam_beta1", &R::train, &TrainConfig::adam_beta1));
    s.push_back(make_field("train", "adam_beta2", &R::train, &TrainConfig::adam_beta2));
    s.push_back(make_field("train", "lr_decay", &R::train, &TrainConfig::lr_decay));
    s.push_back(make_field("train", "d_updates_per_g", &R::train, &TrainConfig::d_updates_per_g));
    s.push_back(make_field("train", "seed", &R::train, &TrainConfig::seed));
    s.push_back(make_field("train", "ablation", &R::train, &TrainConfig::ablation));
    s.push_back(make_field("train", "fake_x0", &R::train, &TrainConfig::fake_x0));
    s.push_back(make_field("train", "exact_t_sum", &R::train, &TrainConfig::exact_t_sum));
    s.push_back(make_field("train", "checkpoint_interval", &R::train, &TrainConfig::checkpoint_interval));
    s.push_back(make_field("train", "log_interval", &R::train, &TrainConfig::log_interval));
    s.push_back(make_field("train", "val_count", &R::train, &TrainConfig::val_count));
    s.push_back(make_field("train", "loader_workers", &R::train, &TrainConfig::loader_workers));

    s.push_back(make_field("eval", "metrics", &R::eval, &EvalConfig::metrics));
    s.push_back(make_field("eval", "align", &R::eval, &EvalConfig::align));
    s.push_back(make_field("eval", "mcd_order", &R::eval, &EvalConfig::mcd_order));
    s.push_back(make_field("eval", "mcd_exclude_c0", &R::eval, &EvalConfig::mcd_exclude_c0));
    s.push_back(make_field("eval", "stoi_tool", &R::eval, &EvalConfig::stoi_tool));
    s.push_back(make_field("eval", "pesq_tool", &R::eval, &EvalConfig::pesq_tool));
    s.push_back(make_field("eval", "griffin_lim_iters", &R::eval, &EvalConfig::griffin_lim_iters));

    s.push_back(make_field("paths", "data", &R::paths, &PathsConfig::data));
    s.push_back(make_field("paths", "output", &R::paths, &PathsConfig::output));
    s.push_back(make_field("paths", "speaker_embeddings", &R::paths, &PathsConfig::speaker_embeddings));
    return s;
  }();
  return fields;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : schema())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

std::string range_msg(const std::string& key, double v, const std::string& range) {
  return key + " = " + format_double(v) + " is outside the valid range " + range;
}

}  // namespace

KernelSize parse_kernel_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("kernel size '" + text + "' is not of the form HxW");
  KernelSize k{parse_number<int>("kernel height", text.substr(0, x)),
               parse_number<int>("kernel width", text.substr(x + 1))};
  if (k.height < 1 || k.width < 1) throw ConfigError("kernel size '" + text + "' must be positive");
  return k;
}

std::vector<std::string> schema_keys() {
  std::vector<std::string> keys;
  for (const auto& f : schema()) keys.push_back(f.section + "." + f.key);
  return keys;
}

namespace {

/// "4   ; note" -> "4". A comment marker must follow whitespace.
std::string strip_inline_comment(const std::string& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if ((v[i] == ';' || v[i] == '#') && std::isspace(static_cast<unsigned char>(v[i - 1]))) return trim(v.substr(0, i));
  }
  return v;
}

}  // namespace

RunConfig parse_config(const std::string& ini_text, const std::string& source) {
  boost::property_tree::ptree tree;
  std::istringstream is(ini_text);
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig cfg;
  cfg.model.vocab = default_vocab();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(source + ": key '" + section + "' appears outside any section");
    }
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (!f) throw ConfigError(source + ": unknown key " + section + "." + key);
      f->set(cfg, section + "." + key, strip_inline_comment(value.data()));
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig validate_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw UsageError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  const Field* f = find_field(section, key);
  if (!f) throw ConfigError("unknown key " + section + "." + key);
  f->set(cfg, section + "." + key, assignment.substr(eq + 1));
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& f : schema()) {
    if (f.section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << f.section << "]\n";
      current = f.section;
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

void validate(const RunConfig& c) {
  const auto& fe = c.feature;
  require(fe.sample_rate > 0, "feature.sample_rate must be positive");
  require(fe.n_mels >= 1, "feature.n_mels must be >= 1");
  require(fe.hop >= 1, "feature.hop must be >= 1");
  require(fe.hop < fe.window, "feature.hop must be smaller than feature.window");
  require(fe.window <= fe.n_fft, "feature.window must not exceed feature.n_fft");
  require(fe.fmin >= 0 && fe.fmin < fe.fmax, "feature.fmin must satisfy 0 <= fmin < fmax");
  require(fe.fmax <= fe.sample_rate / 2.0,
          range_msg("feature.fmax", fe.fmax, "(0, sample_rate/2 = " + format_double(fe.sample_rate / 2.0) + "]"));
  require(fe.log_floor > 0, "feature.log_floor must be positive");
  require(fe.f0_min > 0 && fe.f0_min < fe.f0_max, "feature.f0_min must satisfy 0 < f0_min < f0_max");
  require(fe.f0_max < fe.sample_rate / 2.0, "feature.f0_max must be below sample_rate/2");
  require(fe.voicing_threshold > 0 && fe.voicing_threshold < 1,
          range_msg("feature.voicing_threshold", fe.voicing_threshold, "(0, 1)"));

  require(c.diffusion.steps >= 1, "diffusion.steps must be >= 1, got " + std::to_string(c.diffusion.steps));
  diffusion::build_schedule(c.diffusion.steps, diffusion::ScheduleSpec::parse(c.diffusion.schedule));

  const auto& m = c.model;
  require(m.vocab.size() >= 2, "model.vocab must list the padding symbol and at least one phoneme");
  {
    std::set<std::string> seen;
    for (const auto& p : m.vocab) require(seen.insert(p).second, "model.vocab: duplicate symbol '" + p + "'");
  }
  require(m.d_model >= 1, "model.d_model must be >= 1");
  require(m.encoder_layers >= 1, "model.encoder_layers must be >= 1");
  require(m.attention_heads >= 1 && m.d_model % m.attention_heads == 0,
          "model.attention_heads must divide model.d_model");
  for (auto [name, k] : {std::pair{"model.encoder_conv_kernel", m.encoder_conv_kernel},
                         std::pair{"model.duration_kernel", m.duration_kernel},
                         std::pair{"model.pitch_kernel", m.pitch_kernel},
                         std::pair{"model.energy_kernel", m.energy_kernel}, std::pair{"model.dd_kernel", m.dd_kernel}}) {
    require(k >= 1 && k % 2 == 1, std::string(name) + " must be a positive odd number, got " + std::to_string(k));
  }
  require(m.encoder_conv_filter >= 1 && m.variance_filter >= 1, "model filter sizes must be >= 1");
  require(m.pitch_granularity == "phoneme" || m.pitch_granularity == "frame",
          "model.pitch_granularity must be phoneme or frame");
  require(m.min_duration >= 1, "model.min_duration must be >= 1");
  require(m.residual_blocks >= 1 && m.residual_channels >= 1, "model.residual_blocks and residual_channels must be >= 1");
  require(m.speaker_dim >= 1, "model.speaker_dim must be >= 1");
  require(m.speaker_mode == "lookup" || m.speaker_mode == "precomputed",
          "model.speaker_mode must be lookup or precomputed");
  require(m.speaker_mode != "precomputed" || !c.paths.speaker_embeddings.empty(),
          "paths.speaker_embeddings is required when model.speaker_mode = precomputed");
  require(m.dd_blocks >= 1, "model.dd_blocks must be >= 1");
  require(m.dd_base_channels >= 1 && m.dd_base_channels <= m.dd_max_channels,
          "model.dd_base_channels must satisfy 1 <= dd_base_channels <= dd_max_channels");
  require(m.ds_channels >= 1, "model.ds_channels must be >= 1");
  require(m.ds_strided_convs >= 0 && m.ds_plain_convs >= 0 && m.ds_strided_convs + m.ds_plain_convs >= 1,
          "model.ds_strided_convs + ds_plain_convs must be >= 1");
  require(m.ds_kernel_sizes.size() == 2, "model.ds_kernel_sizes must list exactly two kernels (plain, strided)");
  for (const auto& k : m.ds_kernel_sizes) parse_kernel_size(k);
  require(m.ds_stride_widths.size() == 2, "model.ds_stride_widths must list exactly two values (plain, strided)");
  require(m.ds_padding_widths.size() == 2, "model.ds_padding_widths must list exactly two values (plain, strided)");
  require(m.ds_stride_height >= 1 && m.ds_stride_widths[0] >= 1 && m.ds_stride_widths[1] >= 1,
          "model.ds strides must be >= 1");
  require(m.ds_padding_height >= 0 && m.ds_padding_widths[0] >= 0 && m.ds_padding_widths[1] >= 0,
          "model.ds paddings must be >= 0");

  const auto& t = c.train;
  require(t.alpha >= 0.0 && t.alpha <= 1.0, range_msg("train.alpha", t.alpha, "[0, 1]"));
  require(t.batch_size >= 1, "train.batch_size must be >= 1");
  require(t.total_steps >= 0, "train.total_steps must be >= 0");
  require(t.lr_g > 0 && t.lr_d > 0, "train.lr_g and train.lr_d must be positive");
  require(t.adam_beta1 >= 0 && t.adam_beta1 < 1, range_msg("train.adam_beta1", t.adam_beta1, "[0, 1)"));
  require(t.adam_beta2 >= 0 && t.adam_beta2 < 1, range_msg("train.adam_beta2", t.adam_beta2, "[0, 1)"));
  require(t.lr_decay > 0 && t.lr_decay <= 1, range_msg("train.lr_decay", t.lr_decay, "(0, 1]"));
  require(t.d_updates_per_g >= 1, "train.d_updates_per_g must be >= 1");
  require(t.checkpoint_interval >= 1 && t.log_interval >= 1, "train intervals must be >= 1");
  require(t.val_count >= 0, "train.val_count must be >= 0");
  require(t.loader_workers >= 0, "train.loader_workers must be >= 0");

  const auto& e = c.eval;
  for (const auto& metric : e.metrics) {
    require(metric == "ssim" || metric == "mcd" || metric == "f0rmse" || metric == "stoi" || metric == "pesq",
            "eval.metrics: unknown metric '" + metric + "'");
  }
  require(e.align == "teacher" || e.align == "dtw", "eval.align must be teacher or dtw");
  require(e.mcd_order >= 1 && e.mcd_order < fe.n_mels, "eval.mcd_order must be in [1, n_mels)");
  require(e.griffin_lim_iters >= 1, "eval.griffin_lim_iters must be >= 1");
}

}  // namespace specdiff::config
