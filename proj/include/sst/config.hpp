#pragma once

#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sst/data.hpp"
#include "sst/forecaster.hpp"
#include "sst/lwt.hpp"

namespace sst {

/// Everything a run needs, fully resolved from file + overrides.
struct RunConfig {
  // [data]
  std::string dataset;  // CSV path; empty means generate from [synthetic]
  std::string split = "auto";  // auto | ratio | calendar
  std::size_t steps_per_hour = 1;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;

  data::SyntheticSpec synthetic;

  // [model]
  std::string variant = "sst";
  std::string embedding = "pi";
  std::size_t depth = 2;
  std::string positional = "auto";  // auto | true | false
  std::size_t lookback = 672;
  std::size_t short_len = 336;
  std::size_t horizon = 96;
  std::size_t long_patch = 48;
  std::size_t long_stride = 16;
  std::size_t short_patch = 16;
  std::size_t short_stride = 8;
  std::size_t pi_patch = 16;
  std::size_t pi_stride = 8;
  std::size_t d_model = 16;
  std::size_t state_size = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t mamba_blocks = 2;
  std::size_t heads = 4;
  std::size_t window = 9;
  std::size_t lwt_layers = 3;
  std::size_t ffn_mult = 4;
  std::string attention_path = "banded";  // banded | dense
  std::size_t dlinear_kernel = 25;

  // [train]
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::string loss = "mse";

  // [bench]
  std::string bench_models = "full_attention_transformer,patched_transformer,sst";
  std::string bench_lengths = "256,512,1024,2048,4096,8192";
  std::size_t bench_trials = 5;
  std::size_t bench_batch = 1;
  std::size_t bench_cap_mb = 0;  // 0 = unlimited

  std::string out = "out";

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Sectioned `key = value` text. '#' starts a comment. Unknown sections or
/// keys throw ConfigError.
void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& origin = "<config>");
void load_config_file(RunConfig& cfg, const std::string& path);

/// One override, `key=value` or `section.key=value`. A bare key must be
/// unambiguous across sections.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Resolved configuration in the file format, every key present.
std::string dump_config(const RunConfig& cfg);

/// Names accepted by `variant`.
std::vector<std::string> known_variants();

/// Builds the configured model for `variates` input series.
std::unique_ptr<Forecaster> make_model(const RunConfig& cfg, std::size_t variates, std::uint64_t seed);

lwt::AttentionPath parse_attention_path(const std::string& s);
std::vector<std::size_t> parse_size_list(const std::string& s);
std::vector<std::string> parse_name_list(const std::string& s);

}  // namespace sst
