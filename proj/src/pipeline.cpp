#include "sst/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sst/bench.hpp"

namespace fs = std::filesystem;

namespace sst {

PreparedData prepare_data(const RunConfig& cfg) {
  cfg.validate();
  PreparedData out;
  if (cfg.dataset.empty()) {
    out.dataset = data::synth_generate(cfg.synthetic).dataset;
  } else {
    out.dataset = data::load_csv(cfg.dataset);
  }
  data::SplitScheme scheme = data::SplitScheme::infer(out.dataset);
  if (cfg.split == "ratio") scheme = data::SplitScheme::ratio();
  if (cfg.split == "calendar") scheme = data::SplitScheme::ett_calendar(cfg.steps_per_hour);
  const auto split = data::split_dataset(out.dataset, scheme, cfg.lookback, cfg.horizon);
  out.train = train::prepare(data::make_windows(split.train, cfg.lookback, cfg.horizon, cfg.train_stride));
  out.val = train::prepare(data::make_windows(split.val, cfg.lookback, cfg.horizon, cfg.eval_stride));
  out.test = train::prepare(data::make_windows(split.test, cfg.lookback, cfg.horizon, cfg.eval_stride));
  return out;
}

train::TrainConfig train_config(const RunConfig& cfg) {
  train::TrainConfig t;
  t.lr = cfg.lr;
  t.beta1 = cfg.beta1;
  t.beta2 = cfg.beta2;
  t.eps = cfg.eps_adam;
  t.batch_size = cfg.batch_size;
  t.max_epochs = cfg.max_epochs;
  t.patience = cfg.patience;
  t.seed = cfg.seed;
  return t;
}

RunOutcome run_experiment(const RunConfig& cfg, const PreparedData& data, std::ostream* history) {
  RunOutcome out;
  out.model = make_model(cfg, data.dataset.variates(), cfg.seed);
  out.result = train::train(*out.model, data.train, data.val, train_config(cfg), [&](const train::EpochRecord& r) {
    if (history) *history << train::to_json_line(r) << '\n' << std::flush;
  });
  out.report = train::evaluate(*out.model, data.test, cfg.batch_size);
  return out;
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const auto series = data::synth_generate(cfg.synthetic);
  fs::create_directories(cfg.out);
  const fs::path path = fs::path(cfg.out) / "synthetic.csv";
  data::write_csv(path, series.dataset);
  write_file(fs::path(cfg.out) / "config.cfg", dump_config(cfg));
  out << "wrote " << path.string() << " (" << series.dataset.length() << " rows, " << series.dataset.variates()
      << " variates)\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const PreparedData data = prepare_data(cfg);
  fs::create_directories(cfg.out);
  const fs::path dir(cfg.out);
  write_file(dir / "config.cfg", dump_config(cfg));
  std::ofstream history(dir / "history.jsonl", std::ios::binary);
  const RunOutcome run = run_experiment(cfg, data, &history);
  save_checkpoint(dir / "checkpoint.bin", run.model->parameters());
  write_file(dir / "report.json", run.report.to_json());
  out << run.report.model << " horizon " << run.report.horizon << ": mse " << fixed(run.report.mse) << " mae "
      << fixed(run.report.mae) << " (best epoch " << run.result.best_epoch << ")\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out) {
  const fs::path dir(cfg.out);
  const fs::path ckpt = checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint '" + ckpt.string() + "' does not exist");
  const PreparedData data = prepare_data(cfg);
  auto model = make_model(cfg, data.dataset.variates(), cfg.seed);
  try {
    restore_into(load_checkpoint(ckpt), model->parameters());
  } catch (const DataError& e) {
    throw ConfigError("checkpoint does not match the configured model: " + std::string(e.what()));
  } catch (const DimensionError& e) {
    throw ConfigError("checkpoint does not match the configured model: " + std::string(e.what()));
  }
  const auto report = train::evaluate(*model, data.test, cfg.batch_size);
  fs::create_directories(dir);
  write_file(dir / "report.json", report.to_json());

  // denormalised forecasts, one block of F rows per test window
  std::ostringstream csv;
  csv << "window,step";
  for (const auto& n : data.dataset.variate_names) csv << ',' << n;
  csv << '\n';
  {
    NoGradScope no_grad;
    const std::size_t f = data.test.horizon, m = data.test.variates;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.test.count(); start += cfg.batch_size) {
      idx.clear();
      for (std::size_t i = start; i < std::min(data.test.count(), start + cfg.batch_size); ++i) idx.push_back(i);
      const Tensor pred = model->forward(train::gather(data.test, idx).first);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& st = data.test.stats[idx[b]];
        for (std::size_t t = 0; t < f; ++t) {
          csv << idx[b] << ',' << t;
          for (std::size_t v = 0; v < m; ++v) csv << ',' << pred.data()[(b * f + t) * m + v] * st.scale(v) + st.mean[v];
          csv << '\n';
        }
      }
    }
  }
  write_file(dir / "forecasts.csv", csv.str());
  out << report.model << " horizon " << report.horizon << ": mse " << fixed(report.mse) << " mae "
      << fixed(report.mae) << '\n';
  return 0;
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  bench::BenchConfig bc;
  bc.models = parse_name_list(cfg.bench_models);
  bc.lengths = parse_size_list(cfg.bench_lengths);
  bc.trials = cfg.bench_trials;
  bc.batch = cfg.bench_batch;
  bc.horizon = cfg.horizon;
  bc.d_model = cfg.d_model;
  bc.heads = cfg.heads;
  bc.cap_bytes = cfg.bench_cap_mb << 20;
  bc.seed = cfg.seed;
  if (bc.models.empty() || bc.lengths.empty()) throw ConfigError("bench needs at least one model and one length");
  for (const auto& m : bc.models) bench::make_bench_model(m, 256, bc);  // reject unknown names up front

  fs::create_directories(cfg.out);
  const fs::path dir(cfg.out);
  const auto records = bench::bench_scaling(bc, [&](const bench::ScalingRecord& r) {
    out << r.model << " L=" << r.length << " " << r.status << " " << fixed(r.forward_backward_ms, 3) << " ms "
        << r.peak_bytes << " B\n";
  });
  std::ostringstream jsonl, tsv;
  tsv << "model\tL\tforward_backward_ms\tpeak_bytes\tstatus\n";
  for (const auto& r : records) {
    jsonl << r.to_json_line() << '\n';
    tsv << r.model << '\t' << r.length << '\t' << r.forward_backward_ms << '\t' << r.peak_bytes << '\t' << r.status
        << '\n';
  }
  write_file(dir / "scaling.jsonl", jsonl.str());
  write_file(dir / "scaling.tsv", tsv.str());
  nlohmann::ordered_json slopes = nlohmann::ordered_json::array();
  for (const auto& m : bc.models) {
    const auto fit = bench::fit_slope(records, m);
    nlohmann::ordered_json j;
    j["model"] = m;
    j["points"] = fit.points;
    if (fit.sufficient) {
      j["slope"] = fit.slope;
    } else {
      j["slope"] = "insufficient";
    }
    j["first_oom"] = bench::first_oom(records, m);
    slopes.push_back(j);
    out << m << ": slope " << (fit.sufficient ? fixed(fit.slope, 3) : std::string("insufficient")) << " over "
        << fit.points << " points\n";
  }
  write_file(dir / "slopes.json", slopes.dump(2) + "\n");
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir, std::ostream& out) {
  if (dirs.empty()) throw ConfigError("report needs at least one run directory");
  struct Row {
    std::string dir;
    train::ForecastReport r;
  };
  std::vector<Row> rows;
  for (const auto& d : dirs) {
    const fs::path p = fs::path(d) / "report.json";
    if (!fs::exists(p)) throw DataError("missing report '" + p.string() + "'");
    rows.push_back({d, train::ForecastReport::from_json(read_file(p))});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.r.mse != b.r.mse) return a.r.mse < b.r.mse;
    if (a.r.model != b.r.model) return a.r.model < b.r.model;
    return a.dir < b.dir;
  });
  std::size_t wm = 5, wd = 3;
  for (const auto& row : rows) {
    wm = std::max(wm, row.r.model.size());
    wd = std::max(wd, row.dir.size());
  }
  std::ostringstream text, tsv;
  text << std::left << std::setw(static_cast<int>(wm)) << "model" << "  " << std::setw(7) << "horizon" << "  "
       << std::setw(10) << "mse" << "  " << std::setw(10) << "mae" << "  " << "run" << '\n';
  tsv << "model\thorizon\tmse\tmae\trun\n";
  for (const auto& row : rows) {
    text << std::left << std::setw(static_cast<int>(wm)) << row.r.model << "  " << std::setw(7) << row.r.horizon
         << "  " << std::setw(10) << fixed(row.r.mse) << "  " << std::setw(10) << fixed(row.r.mae) << "  " << row.dir
         << '\n';
    tsv << row.r.model << '\t' << row.r.horizon << '\t' << fixed(row.r.mse, 9) << '\t' << fixed(row.r.mae, 9) << '\t'
        << row.dir << '\n';
  }
  out << text.str();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "comparison.txt", text.str());
    write_file(fs::path(out_dir) / "comparison.tsv", tsv.str());
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale hybrid Mamba/Transformer forecasting toolkit", "sst"};
  app.require_subcommand(1);
  std::string config_path, out_dir, checkpoint;
  std::vector<std::string> overrides, run_dirs;
  std::optional<std::uint64_t> seed;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file");
    sub->add_option("--set", overrides, "override, key=value (repeatable, last wins)")->take_all();
    sub->add_option("--seed", seed, "training and initialisation seed");
    sub->add_option("--out", out_dir, "output directory");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write history, checkpoint and report");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  CLI::App* bench_cmd = app.add_subcommand("bench", "time and memory scaling against input length");
  CLI::App* synth_cmd = app.add_subcommand("synth", "write the synthetic series as CSV");
  CLI::App* report_cmd = app.add_subcommand("report", "compare reports from run directories");
  for (CLI::App* sub : {train_cmd, eval_cmd, bench_cmd, synth_cmd}) common(sub);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/checkpoint.bin)");
  report_cmd->add_option("runs", run_dirs, "run directories holding report.json")->required();
  report_cmd->add_option("--out", out_dir, "write comparison.txt and comparison.tsv here");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (report_cmd->parsed()) return cmd_report(run_dirs, out_dir, out);
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    cfg.validate();
    if (synth_cmd->parsed()) return cmd_synth(cfg, out);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint, out);
    return cmd_bench(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericDomainError& e) {
    err << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace sst
