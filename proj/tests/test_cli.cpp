#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sst/bench.hpp"
#include "sst/config.hpp"
#include "sst/pipeline.hpp"

using namespace sst;
namespace fs = std::filesystem;

namespace {

const std::string kToy = std::string(SST_CONFIG_DIR) + "/toy.cfg";

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sst_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream f(p);
  std::size_t n = 0;
  for (std::string line; std::getline(f, line);) ++n;
  return n;
}

RunConfig parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  apply_config_text(c, in, "test.cfg");
  return c;
}

}  // namespace

TEST(Config, DefaultsAreValid) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.lookback, 672u);
  EXPECT_EQ(c.short_len, 336u);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.patience, 5u);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.max_epochs, 100u);
}

TEST(Config, SectionsCommentsAndValues) {
  const RunConfig c = parse("# comment\n[model]\nwindow = 5  # trailing\nvariant=dlinear\n\n[train]\nlr = 0.003\n");
  EXPECT_EQ(c.window, 5u);
  EXPECT_EQ(c.variant, "dlinear");
  EXPECT_EQ(c.lr, 0.003);
}

TEST(Config, UnknownKeysAndSectionsRejectedWithLocation) {
  try {
    parse("[model]\nwindow = 5\nwidnow = 6\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("test.cfg:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("[modle]\nwindow = 5\n"), ConfigError);
  EXPECT_THROW(parse("[train]\nwindow = 5\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nwindow = five\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nwindow = -1\n"), ConfigError);
  EXPECT_THROW(parse("[model]\njust text\n"), ConfigError);
}

TEST(Config, OverridesAndPrecedence) {
  RunConfig c = parse("[model]\nwindow = 5\n");
  apply_override(c, "window=7");
  EXPECT_EQ(c.window, 7u);
  apply_override(c, "model.window=3");
  EXPECT_EQ(c.window, 3u);
  apply_override(c, "synthetic.seed=9");
  EXPECT_EQ(c.synthetic.seed, 9u);
  EXPECT_THROW(apply_override(c, "seed=1"), ConfigError);  // ambiguous between train and synthetic
  EXPECT_THROW(apply_override(c, "nonsense=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "window"), ConfigError);
}

TEST(Config, DumpRoundTrips) {
  RunConfig c;
  apply_override(c, "lr=0.000123456789");
  apply_override(c, "variant=mambaformer");
  apply_override(c, "synthetic.noise_sigma=0.3");
  const std::string text = dump_config(c);
  const RunConfig back = parse(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.lr, c.lr);
}

TEST(Config, ValidationCatchesBadValues) {
  for (const std::string& o : {"lr=0", "patience=0", "batch_size=0", "variant=rnn", "embedding=fourier",
                               "attention_path=sparse", "split=random", "positional=maybe", "beta1=1",
                               "train_stride=0", "loss=mae"}) {
    RunConfig c;
    apply_override(c, o);
    EXPECT_THROW(c.validate(), ConfigError) << o;
  }
}

TEST(Config, ModelFactoryCoversEveryVariant) {
  for (const auto& v : known_variants()) {
    RunConfig c;
    c.variant = v;
    c.lookback = 96;
    c.short_len = 48;
    c.horizon = 8;
    c.long_patch = 16;
    c.long_stride = 8;
    c.short_patch = 8;
    c.short_stride = 4;
    c.d_model = 8;
    c.heads = 2;
    c.depth = 1;
    c.mamba_blocks = 1;
    c.lwt_layers = 1;
    const auto m = make_model(c, 2, 0);
    EXPECT_EQ(m->lookback(), 96u);
    EXPECT_EQ(m->horizon(), 8u);
    NoGradScope ng;
    EXPECT_EQ(m->forward(Tensor({1, 96, 2}, 0.5)).shape(), (Shape{1, 8, 2})) << v;
  }
}

TEST(Config, ListParsing) {
  EXPECT_EQ(parse_size_list("256, 512,1024"), (std::vector<std::size_t>{256, 512, 1024}));
  EXPECT_EQ(parse_name_list("a, b"), (std::vector<std::string>{"a", "b"}));
  EXPECT_THROW(parse_size_list("256,x"), ConfigError);
}

TEST(Cli, TrainWritesArtifactsAndEvalReproducesReport) {
  const fs::path dir = scratch("train");
  const auto r = cli({"train", "--config", kToy, "--seed", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.cfg", "history.jsonl", "checkpoint.bin", "report.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const std::size_t epochs = line_count(dir / "history.jsonl");
  EXPECT_GE(epochs, 1u);
  EXPECT_LE(epochs, 5u);
  const auto first = nlohmann::json::parse(slurp(dir / "history.jsonl").substr(0, slurp(dir / "history.jsonl").find('\n')));
  EXPECT_EQ(first["epoch"], 1);
  const std::string report = slurp(dir / "report.json");
  EXPECT_NE(report.find("router_p_long_mean"), std::string::npos);

  const auto e = cli({"eval", "--config", kToy, "--seed", "1", "--out", dir.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(slurp(dir / "report.json"), report);
  EXPECT_TRUE(fs::exists(dir / "forecasts.csv"));
}

TEST(Cli, EvalWithoutCheckpointIsConfigError) {
  const fs::path dir = scratch("nockpt");
  const auto r = cli({"eval", "--config", kToy, "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos);
}

TEST(Cli, EvalWithMismatchedCheckpointIsConfigError) {
  const fs::path dir = scratch("mismatch");
  ASSERT_EQ(cli({"train", "--config", kToy, "--set", "max_epochs=1", "--out", dir.string()}).code, 0);
  const auto r = cli({"eval", "--config", kToy, "--set", "d_model=4", "--out", dir.string()});
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, SetOverridesFileLastWins) {
  const fs::path dir = scratch("synth");
  const auto r = cli({"synth", "--config", kToy, "--set", "length=300", "length=400", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "synthetic.csv"), 401u);
  EXPECT_NE(slurp(dir / "config.cfg").find("length = 400"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("codes");
  EXPECT_EQ(cli({"train", "--config", kToy, "--set", "bogus=1", "--out", dir.string()}).code, 2);
  EXPECT_EQ(cli({"train", "--config", (dir / "absent.cfg").string()}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"train", "--config", kToy, "--set", "dataset=" + (dir / "absent.csv").string(), "--out",
                 dir.string()})
                .code,
            3);
  EXPECT_EQ(cli({"train", "--config", kToy, "--set", "lr=1e308", "--out", dir.string()}).code, 4);
}

TEST(Cli, ReportSortsByMseAndIsByteDeterministic) {
  const fs::path root = scratch("report");
  auto write_report = [&](const std::string& name, const std::string& model, double mse) {
    fs::create_directories(root / name);
    train::ForecastReport r;
    r.model = model;
    r.horizon = 96;
    r.windows = 10;
    r.variates = 1;
    r.mse = mse;
    r.mae = mse / 2;
    std::ofstream(root / name / "report.json") << r.to_json();
  };
  write_report("a", "dlinear", 0.3);
  write_report("b", "sst", 0.1);
  const auto r1 = cli({"report", (root / "a").string(), (root / "b").string(), "--out", (root / "o1").string()});
  const auto r2 = cli({"report", (root / "b").string(), (root / "a").string(), "--out", (root / "o2").string()});
  ASSERT_EQ(r1.code, 0) << r1.err;
  EXPECT_LT(r1.out.find("sst"), r1.out.find("dlinear"));
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_EQ(slurp(root / "o1" / "comparison.tsv"), slurp(root / "o2" / "comparison.tsv"));
  EXPECT_EQ(line_count(root / "o1" / "comparison.tsv"), 3u);

  const auto single = cli({"report", (root / "a").string()});
  EXPECT_EQ(single.code, 0);
  EXPECT_NE(single.out.find("0.300000"), std::string::npos);

  fs::create_directories(root / "bad");
  std::ofstream(root / "bad" / "report.json") << "{ not json";
  EXPECT_EQ(cli({"report", (root / "bad").string()}).code, 3);
  EXPECT_EQ(cli({"report", (root / "missing").string()}).code, 3);
}

TEST(Cli, BenchWritesRecordsAndMarksShortFits) {
  const fs::path dir = scratch("bench");
  const auto r = cli({"bench", "--set", "bench.models=full_attention_transformer,sst", "bench.lengths=64,128",
                      "bench.trials=1", "horizon=8", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "scaling.jsonl"), 4u);
  const auto slopes = nlohmann::json::parse(slurp(dir / "slopes.json"));
  ASSERT_EQ(slopes.size(), 2u);
  EXPECT_EQ(slopes[0]["slope"], "insufficient");
  EXPECT_EQ(cli({"bench", "--set", "bench.models=lstm", "--out", dir.string()}).code, 2);
}

TEST(Bench, LogLogSlopeOfPowerLaw) {
  const std::vector<double> x{256, 512, 1024, 2048};
  std::vector<double> y;
  for (const double v : x) y.push_back(3.0 * v * v);
  EXPECT_NEAR(bench::loglog_slope(x, y), 2.0, 1e-12);
  EXPECT_THROW(bench::loglog_slope({1.0}, {1.0}), ContractError);
  EXPECT_THROW(bench::loglog_slope({1.0, 2.0}, {0.0, 1.0}), NumericDomainError);
}

TEST(Bench, FitUsesOnlyOkPointsAndNeedsFour) {
  std::vector<bench::ScalingRecord> recs;
  for (const std::size_t l : {256u, 512u, 1024u, 2048u, 4096u}) {
    recs.push_back({"a", l, static_cast<double>(l), 0, "ok"});
    recs.push_back({"b", l, static_cast<double>(l * l), 0, l >= 2048 ? "oom" : "ok"});
  }
  const auto a = bench::fit_slope(recs, "a");
  EXPECT_TRUE(a.sufficient);
  EXPECT_NEAR(a.slope, 1.0, 1e-12);
  const auto b = bench::fit_slope(recs, "b");
  EXPECT_FALSE(b.sufficient);
  EXPECT_EQ(b.points, 3u);
  EXPECT_EQ(bench::first_oom(recs, "b"), 2048u);
  EXPECT_EQ(bench::first_oom(recs, "a"), 0u);
}

TEST(Bench, CapMarksLargerLengthsOom) {
  bench::BenchConfig bc;
  bc.models = {"full_attention_transformer"};
  bc.lengths = {128, 64, 512, 256};
  bc.trials = 1;
  bc.horizon = 8;
  bc.cap_bytes = 8u << 20;
  const auto recs = bench::bench_scaling(bc);
  ASSERT_EQ(recs.size(), 4u);
  for (std::size_t i = 1; i < recs.size(); ++i) EXPECT_LT(recs[i - 1].length, recs[i].length);
  EXPECT_EQ(recs.front().status, "ok");
  EXPECT_GT(recs.front().forward_backward_ms, 0.0);
  EXPECT_GT(recs.front().peak_bytes, 0u);
  EXPECT_EQ(recs.back().status, "oom");
  bool seen_oom = false;
  for (const auto& r : recs) {
    if (seen_oom) EXPECT_EQ(r.status, "oom");
    seen_oom |= r.status == "oom";
  }
  EXPECT_EQ(recs.front().to_json_line().find("{\"model\":\"full_attention_transformer\",\"L\":64,"), 0u);
}
