#include "sst/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sst/mambaformer.hpp"
#include "sst/sst_model.hpp"

namespace sst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

struct Field {
  std::string section, key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(std::string section, std::string key, T RunConfig::*member) {
  Field f{section, key, {}, {}};
  if constexpr (std::is_same_v<T, std::string>) {
    f.set = [member](RunConfig& c, const std::string& v) { c.*member = v; };
    f.get = [member](const RunConfig& c) { return c.*member; };
  } else if constexpr (std::is_same_v<T, double>) {
    f.set = [member, key](RunConfig& c, const std::string& v) { c.*member = to_double(key, v); };
    f.get = [member](const RunConfig& c) { return fmt_double(c.*member); };
  } else {
    f.set = [member, key](RunConfig& c, const std::string& v) { c.*member = static_cast<T>(to_size(key, v)); };
    f.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
  }
  return f;
}

template <typename T>
Field synth(std::string key, T data::SyntheticSpec::*member) {
  Field f{"synthetic", key, {}, {}};
  if constexpr (std::is_same_v<T, double>) {
    f.set = [member, key](RunConfig& c, const std::string& v) { c.synthetic.*member = to_double(key, v); };
    f.get = [member](const RunConfig& c) { return fmt_double(c.synthetic.*member); };
  } else {
    f.set = [member, key](RunConfig& c, const std::string& v) {
      c.synthetic.*member = static_cast<T>(to_size(key, v));
    };
    f.get = [member](const RunConfig& c) { return std::to_string(c.synthetic.*member); };
  }
  return f;
}

const std::vector<Field>& fields() {
  using R = RunConfig;
  using S = data::SyntheticSpec;
  static const std::vector<Field> table{
      field("data", "dataset", &R::dataset),
      field("data", "split", &R::split),
      field("data", "steps_per_hour", &R::steps_per_hour),
      field("data", "train_stride", &R::train_stride),
      field("data", "eval_stride", &R::eval_stride),
      synth("length", &S::length),
      synth("trend_slope", &S::trend_slope),
      synth("period", &S::period),
      synth("amplitude", &S::amplitude),
      synth("spike_rate", &S::spike_rate),
      synth("spike_mag", &S::spike_mag),
      synth("noise_sigma", &S::noise_sigma),
      synth("seed", &S::seed),
      synth("variates", &S::variates),
      field("model", "variant", &R::variant),
      field("model", "embedding", &R::embedding),
      field("model", "depth", &R::depth),
      field("model", "positional", &R::positional),
      field("model", "lookback", &R::lookback),
      field("model", "short_len", &R::short_len),
      field("model", "horizon", &R::horizon),
      field("model", "long_patch", &R::long_patch),
      field("model", "long_stride", &R::long_stride),
      field("model", "short_patch", &R::short_patch),
      field("model", "short_stride", &R::short_stride),
      field("model", "pi_patch", &R::pi_patch),
      field("model", "pi_stride", &R::pi_stride),
      field("model", "d_model", &R::d_model),
      field("model", "state_size", &R::state_size),
      field("model", "expand", &R::expand),
      field("model", "conv_width", &R::conv_width),
      field("model", "mamba_blocks", &R::mamba_blocks),
      field("model", "heads", &R::heads),
      field("model", "window", &R::window),
      field("model", "lwt_layers", &R::lwt_layers),
      field("model", "ffn_mult", &R::ffn_mult),
      field("model", "attention_path", &R::attention_path),
      field("model", "dlinear_kernel", &R::dlinear_kernel),
      field("train", "lr", &R::lr),
      field("train", "beta1", &R::beta1),
      field("train", "beta2", &R::beta2),
      field("train", "eps_adam", &R::eps_adam),
      field("train", "batch_size", &R::batch_size),
      field("train", "max_epochs", &R::max_epochs),
      field("train", "patience", &R::patience),
      field("train", "seed", &R::seed),
      field("train", "loss", &R::loss),
      field("bench", "models", &R::bench_models),
      field("bench", "lengths", &R::bench_lengths),
      field("bench", "trials", &R::bench_trials),
      field("bench", "batch", &R::bench_batch),
      field("bench", "cap_mb", &R::bench_cap_mb),
      field("output", "out", &R::out),
  };
  return table;
}

const Field& find_field(const std::string& section, const std::string& key) {
  const Field* hit = nullptr;
  std::size_t matches = 0;
  for (const auto& f : fields()) {
    if (f.key != key) continue;
    if (!section.empty() && f.section != section) continue;
    hit = &f;
    ++matches;
  }
  if (matches == 0) {
    throw ConfigError("unknown key '" + (section.empty() ? key : section + "." + key) + "'");
  }
  if (matches > 1) throw ConfigError("key '" + key + "' is ambiguous; write it as section." + key);
  return *hit;
}

bool known_section(const std::string& s) {
  for (const auto& f : fields()) {
    if (f.section == s) return true;
  }
  return false;
}

}  // namespace

void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      find_field(section, key).set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config_text(cfg, in, path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must be key=value");
  std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  std::string section;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    section = key.substr(0, dot);
    key = key.substr(dot + 1);
    if (!known_section(section)) throw ConfigError("unknown section '" + section + "'");
  }
  find_field(section, key).set(cfg, value);
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

std::vector<std::string> known_variants() {
  std::vector<std::string> v{"sst", "sst_mamba_only", "sst_lwt_only", "sst_no_patcher", "sst_no_router"};
  for (const auto& n : family::variant_names()) v.push_back(n);
  v.push_back("dlinear");
  return v;
}

lwt::AttentionPath parse_attention_path(const std::string& s) {
  if (s == "banded") return lwt::AttentionPath::Banded;
  if (s == "dense") return lwt::AttentionPath::Dense;
  throw ConfigError("attention_path must be banded or dense, got '" + s + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : parse_name_list(s)) out.push_back(to_size("list", item));
  return out;
}

std::vector<std::string> parse_name_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void RunConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps_adam > 0.0)) throw ConfigError("eps_adam must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (train_stride < 1 || eval_stride < 1) throw ConfigError("window strides must be >= 1");
  if (loss != "mse") throw ConfigError("loss must be mse");
  if (split != "auto" && split != "ratio" && split != "calendar") {
    throw ConfigError("split must be auto, ratio or calendar");
  }
  if (positional != "auto" && positional != "true" && positional != "false") {
    throw ConfigError("positional must be auto, true or false");
  }
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  const auto names = known_variants();
  if (std::find(names.begin(), names.end(), variant) == names.end()) {
    throw ConfigError("unknown variant '" + variant + "'");
  }
  family::parse_embedding(embedding);
  parse_attention_path(attention_path);
}

std::unique_ptr<Forecaster> make_model(const RunConfig& cfg, std::size_t variates, std::uint64_t seed) {
  cfg.validate();
  if (cfg.variant.starts_with("sst")) {
    static const std::map<std::string, model::Ablation> ablations{
        {"sst", model::Ablation::Full},
        {"sst_mamba_only", model::Ablation::MambaOnly},
        {"sst_lwt_only", model::Ablation::LwtOnly},
        {"sst_no_patcher", model::Ablation::NoPatcher},
        {"sst_no_router", model::Ablation::NoRouter},
    };
    model::SstConfig sc;
    sc.lookback = cfg.lookback;
    sc.short_len = cfg.short_len;
    sc.horizon = cfg.horizon;
    sc.variates = variates;
    sc.long_patch = {cfg.long_patch, cfg.long_stride, cfg.lookback};
    sc.short_patch = {cfg.short_patch, cfg.short_stride, cfg.short_len};
    sc.d_model = cfg.d_model;
    sc.state_size = cfg.state_size;
    sc.expand = cfg.expand;
    sc.conv_width = cfg.conv_width;
    sc.mamba_blocks = cfg.mamba_blocks;
    sc.heads = cfg.heads;
    sc.window = cfg.window;
    sc.lwt_layers = cfg.lwt_layers;
    sc.attention_path = parse_attention_path(cfg.attention_path);
    sc.ablation = ablations.at(cfg.variant);
    return std::make_unique<model::SstModel>(sc, seed);
  }
  if (cfg.variant == "dlinear") {
    return std::make_unique<family::DLinear>(cfg.lookback, cfg.horizon, cfg.dlinear_kernel, seed);
  }
  family::VariantSpec spec;
  spec.name = cfg.variant;
  spec.embedding = family::parse_embedding(cfg.embedding);
  spec.depth = cfg.depth;
  if (cfg.positional != "auto") spec.use_positional = cfg.positional == "true";
  family::FamilyDims dims;
  dims.lookback = cfg.lookback;
  dims.horizon = cfg.horizon;
  dims.variates = variates;
  dims.d_model = cfg.d_model;
  dims.state_size = cfg.state_size;
  dims.expand = cfg.expand;
  dims.conv_width = cfg.conv_width;
  dims.heads = cfg.heads;
  dims.ffn_mult = cfg.ffn_mult;
  dims.patch = {cfg.pi_patch, cfg.pi_stride, cfg.lookback};
  return std::make_unique<family::VariantModel>(spec, dims, seed);
}

}  // namespace sst
