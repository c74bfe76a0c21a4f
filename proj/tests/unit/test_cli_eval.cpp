#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kdc2/cli.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/eval.hpp"
#include "kdc2/metrics.hpp"

using namespace kdc2;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EpochRecord record(const std::string& phase, std::size_t epoch, double loss, std::uint64_t seed,
                   std::optional<double> acc = std::nullopt, double fraction = 1.0) {
  EpochRecord r;
  r.phase = phase;
  r.epoch = epoch;
  r.loss_total = loss;
  r.seed = seed;
  r.accuracy = acc;
  r.label_fraction = fraction;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("kdc2_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  void make_data() {
    const CliRun r = cli({"synth", "--out", path("d"), "--channels", "4", "--samples-per-class", "8", "--test-frac",
                       "0.25", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

}  // namespace

TEST(Eval, ConfusionAndAccuracy) {
  const std::vector<int> truth = {0, 0, 1, 2, 2, 2}, pred = {0, 1, 1, 2, 0, 2};
  const Evaluation e = score_predictions(truth, pred, 3);
  EXPECT_DOUBLE_EQ(e.accuracy, 4.0 / 6.0);
  EXPECT_EQ(e.confusion.at(0, 1), 1u);
  EXPECT_EQ(e.confusion.at(2, 0), 1u);
  EXPECT_EQ(e.confusion.trace(), 4u);
  EXPECT_EQ(e.confusion.total(), 6u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(e.confusion.row_sum(k), static_cast<std::size_t>(std::count(truth.begin(), truth.end(), k)));
  }
  const std::string text = format_confusion(e.confusion, {"a", "b", "c"});
  EXPECT_NE(text.find("a"), std::string::npos);
}

TEST(Eval, ConstantPredictorOnBalancedData) {
  std::vector<int> truth, pred;
  for (int i = 0; i < 30; ++i) truth.push_back(i % 3), pred.push_back(1);
  EXPECT_NEAR(score_predictions(truth, pred, 3).accuracy, 1.0 / 3.0, 1e-15);
}

TEST(Eval, Preconditions) {
  EXPECT_THROW(score_predictions(std::vector<int>{}, std::vector<int>{}, 3), ValidationError);
  EXPECT_THROW(score_predictions(std::vector<int>{0, 1}, std::vector<int>{0}, 3), ValidationError);
  EXPECT_THROW(score_predictions(std::vector<int>{0}, std::vector<int>{3}, 3), ValidationError);
}

TEST(Metrics, JsonLineRoundTrip) {
  EpochRecord r = record("finetune", 7, 0.125, 42, 0.9, 0.25);
  r.loss_inner = 1.0 / 3.0;
  r.sigma_ce = 1.7;
  r.train_acc = 0.5;
  r.seconds = 0.01;
  const std::string line = to_json_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(line.rfind("{\"phase\":\"finetune\",\"epoch\":7", 0), 0u) << line;
  const EpochRecord back = parse_metrics_line(line);
  EXPECT_EQ(back.phase, r.phase);
  EXPECT_EQ(back.loss_inner, r.loss_inner);
  EXPECT_EQ(back.sigma_ce, r.sigma_ce);
  EXPECT_EQ(back.train_acc, r.train_acc);
  EXPECT_EQ(back.accuracy, r.accuracy);
  EXPECT_EQ(back.seconds, r.seconds);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.label_fraction, 0.25);
  EXPECT_EQ(to_json_line(back), line);

  r.seconds.reset();
  EXPECT_NE(to_json_line(r).find("\"seconds\":null"), std::string::npos);
  EXPECT_FALSE(parse_metrics_line(to_json_line(r)).seconds.has_value());
}

TEST(Metrics, PositionedParseErrors) {
  const std::string good = to_json_line(record("pretrain", 1, 2.0, 0));
  const std::string text = good + "\n\n" + good + "\n{\"phase\": oops}\n";
  try {
    parse_metrics(text, "m.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    EXPECT_GE(e.offset(), 2 * good.size() + 3);
  }
  EXPECT_EQ(parse_metrics(good + "\n\n" + good + "\n", "m").size(), 2u);
  EXPECT_THROW(parse_metrics("{\"epoch\": 1}\n", "m"), ParseError);
}

TEST(Metrics, FormatNumberRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.0, -2.5}) EXPECT_EQ(std::stod(format_number(v)), v);
  EXPECT_EQ(format_number(0.5), "0.5");
}

TEST(Report, SingleRunVerbatim) {
  const Report rep = build_report({record("finetune", 1, 0.9, 0, 0.5), record("finetune", 2, 0.4, 0, 0.75)});
  EXPECT_FALSE(rep.multi_seed);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].epoch, 2u);
  EXPECT_EQ(rep.rows[0].loss_total, 0.4);
  EXPECT_EQ(rep.csv, "phase,seed,fraction,epoch,loss_total,accuracy\nfinetune,0,1.0,2,0.4,0.75\n");
  EXPECT_EQ(rep.text.find("median"), std::string::npos);
}

TEST(Report, MultiSeedMedian) {
  const Report rep = build_report({record("sweep", 5, 0.3, 0, 0.6, 0.5), record("sweep", 5, 0.1, 1, 0.9, 0.5),
                                   record("sweep", 5, 0.2, 2, 0.7, 0.5), record("sweep", 5, 0.2, 0, 0.8, 1.0)});
  EXPECT_TRUE(rep.multi_seed);
  const ReportRow& med = rep.rows.back();
  EXPECT_EQ(med.seed, "median");
  EXPECT_EQ(med.fraction, 0.5);
  EXPECT_DOUBLE_EQ(med.loss_total, 0.2);
  EXPECT_DOUBLE_EQ(*med.accuracy, 0.7);
  EXPECT_NE(rep.text.find("median_accuracy"), std::string::npos);
  EXPECT_THROW(build_report({}), ValidationError);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig rc;
  rc.command = "joint";
  rc.train.epochs = 7;
  rc.train.tau = 0.3;
  rc.train.augment.methods = {AugmentMethod::mask};
  rc.train.objective.center = true;
  rc.fractions = {0.5};
  rc.neighborhood = Neighborhood::eight;
  rc.synth.snr = 4.5;
  const std::string text = run_config_to_json(rc);
  const RunConfig back = run_config_from_json(text, RunConfig{});
  EXPECT_EQ(run_config_to_json(back), text);
  EXPECT_EQ(back.train.epochs, 7u);
  EXPECT_EQ(back.neighborhood, Neighborhood::eight);
  EXPECT_THROW(run_config_from_json("{\"bogus\": 1}", RunConfig{}), ValidationError);
  EXPECT_THROW(run_config_from_json("{\"seed\": ", RunConfig{}), ParseError);
}

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  const CliRun bad = cli({"pretrain", "--data", path("d"), "--out", path("o"), "--no-such-flag"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("error:"), std::string::npos);
  EXPECT_EQ(cli({"--config", path("missing.json")}).code, 1);
  EXPECT_EQ(cli({"pretrain", "--data", path("nothing"), "--out", path("o")}).code, 1);
  EXPECT_EQ(cli({}).code, 1);
}

TEST_F(CliTest, GradcheckPasses) {
  const CliRun r = cli({"gradcheck", "--instances", "2"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, PipelineAndSweep) {
  make_data();
  ASSERT_TRUE(fs::exists(path("d/train/recording.krec")));
  ASSERT_TRUE(fs::exists(path("d/test/labels.csv")));
  EXPECT_EQ(cli({"featurize", "--data", path("d/train")}).code, 0);
  EXPECT_TRUE(fs::exists(path("d/train/features.kfeat")));

  const std::vector<std::string> small = {"--epochs", "1", "--batch-size", "8", "--deterministic"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), small.begin(), small.end());
    return a;
  };
  CliRun r = cli(with({"pretrain", "--data", path("d/train"), "--out", path("p"), "--representation", "8"}));
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(path("p/params.kdc2")));
  ASSERT_TRUE(fs::exists(path("p/run_config.json")));

  r = cli(with({"finetune", "--data", path("d/train"), "--init", path("p/params.kdc2"), "--out", path("f")}));
  ASSERT_EQ(r.code, 0) << r.err;

  r = cli({"eval", "--data", path("d/test"), "--init", path("f/params.kdc2"), "--metrics", path("f/metrics.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy"), std::string::npos);
  const auto recs = read_metrics(path("f/metrics.jsonl"));
  EXPECT_EQ(recs.back().phase, "eval");
  ASSERT_TRUE(recs.back().accuracy.has_value());

  r = cli(with({"sweep-labels", "--data", path("d/train"), "--test", path("d/test"), "--init",
                path("p/params.kdc2"), "--out", path("s"), "--fractions", "0.5", "0.25"}));
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t sweeps = 0;
  for (const auto& rec : read_metrics(path("s/metrics.jsonl"))) {
    if (rec.phase == "sweep") {
      ++sweeps;
      EXPECT_TRUE(rec.accuracy.has_value());
    }
  }
  EXPECT_EQ(sweeps, 2u);

  r = cli({"report", path("s/metrics.jsonl"), "--csv", path("s/report.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("s/report.csv")).rfind("phase,seed,fraction", 0), 0u);

  // Replaying a stored config reproduces the artifact byte for byte.
  r = cli({"--config", path("p/run_config.json"), "--out", path("p2")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("p/params.kdc2")), slurp(path("p2/params.kdc2")));
  EXPECT_EQ(slurp(path("p/metrics.jsonl")), slurp(path("p2/metrics.jsonl")));
}

TEST_F(CliTest, EvalRejectsEncoderOnlyCheckpoint) {
  make_data();
  ASSERT_EQ(cli({"pretrain", "--data", path("d/train"), "--out", path("p"), "--epochs", "1", "--representation",
                 "8", "--batch-size", "8"})
                .code,
            0);
  EXPECT_EQ(cli({"eval", "--data", path("d/test"), "--init", path("p/params.kdc2")}).code, 1);
}
