#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "kdc2/datasets.hpp"
#include "kdc2/encoders.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/training.hpp"

using namespace kdc2;
namespace pn = kdc2::param_names;

namespace {

struct Synthetic {
  FeatureSet data;
  ViewContext ctx;
};

Synthetic small_synthetic(std::uint64_t seed, std::size_t per_class = 30, std::size_t channels = 6) {
  SynthSpec spec;
  spec.channels = channels;
  spec.samples_per_class = per_class;
  spec.seed = seed;
  const LabeledDataset ds = synth_generate(spec);
  return {featurize(ds), ViewContext::make(resolve_montage("tengrid-62", ds.channel_names))};
}

TrainConfig small_config(TrainMode mode, std::size_t epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.representation = 16;
  cfg.seed = seed;
  cfg.deterministic = true;
  return cfg;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterSet p;
  p.set("w", Tensor::vector({1.0, -2.0}));
  const ParameterSet before = p;
  ParameterSet g;
  g.set("w", Tensor({2}));
  Adam adam;
  adam.step(p, g);
  adam.step(p, g);
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet p;
  p.set("x", Tensor::scalar(0.0));
  ParameterSet g;
  g.set("x", Tensor::scalar(1.0));
  Adam adam;
  adam.step(p, g);
  // m_hat = 1, v_hat = 1 at t = 1.
  EXPECT_NEAR(p.get("x").item(), -0.01 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, MatchesReferenceTrajectory) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  ParameterSet p;
  p.set("a", Tensor::vector({0.3, -0.7, 1.1}));
  std::vector<double> x = {0.3, -0.7, 1.1}, m(3, 0.0), v(3, 0.0);
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam adam(cfg);
  for (int t = 1; t <= 25; ++t) {
    ParameterSet g;
    Tensor gt({3});
    for (auto& e : gt.values()) e = n(rng);
    g.set("a", gt);
    adam.step(p, g);
    for (std::size_t i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * gt[i];
      v[i] = 0.999 * v[i] + 0.001 * gt[i] * gt[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.get("a")[i], x[i], 1e-13);
  for (double e : adam.second_moment().get("a").values()) EXPECT_GE(e, 0.0);
}

TEST(Adam, NonFiniteGradientRejectedWithoutMutation) {
  ParameterSet p;
  p.set("good", Tensor::vector({1.0}));
  p.set("bad", Tensor::vector({1.0, 2.0}));
  const ParameterSet before = p;
  ParameterSet g;
  g.set("good", Tensor::vector({0.5}));
  g.set("bad", Tensor::vector({0.0, std::nan("")}));
  Adam adam;
  try {
    adam.step(p, g);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'bad'"), std::string::npos);
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.steps(), 0u);

  g.set("bad", Tensor::vector({0.0}));
  EXPECT_THROW(adam.step(p, g), DimensionError);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.augmentations = 1;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.mode = TrainMode::finetune;
  EXPECT_NO_THROW(cfg.validate());
  cfg.mode = TrainMode::joint;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.contrastive_weight = 0.0;
  EXPECT_NO_THROW(cfg.validate());
  cfg = TrainConfig{};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.label_fraction = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.label_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_EQ(default_epochs(TrainMode::finetune), 100u);
  EXPECT_EQ(default_epochs(TrainMode::pretrain), 50u);
  EXPECT_EQ(parse_train_mode("joint"), TrainMode::joint);
  EXPECT_THROW(parse_train_mode("fancy"), ValidationError);
}

TEST(FewLabel, Subsampling) {
  std::vector<int> labels;
  for (int i = 0; i < 900; ++i) labels.push_back(i % 3);
  std::vector<std::size_t> all(900);
  for (std::size_t i = 0; i < 900; ++i) all[i] = i;
  EXPECT_EQ(few_label_subsample(labels, 3, 1.0, 1), all);

  const auto quarter = few_label_subsample(labels, 3, 0.25, 1);
  std::map<int, int> per_class;
  for (auto i : quarter) per_class[labels[i]]++;
  EXPECT_EQ(per_class, (std::map<int, int>{{0, 75}, {1, 75}, {2, 75}}));
  EXPECT_TRUE(std::is_sorted(quarter.begin(), quarter.end()));
  EXPECT_EQ(quarter, few_label_subsample(labels, 3, 0.25, 1));
  EXPECT_NE(quarter, few_label_subsample(labels, 3, 0.25, 2));

  std::vector<int> big;
  for (int i = 0; i < 2700; ++i) big.push_back(i % 3);
  EXPECT_EQ(few_label_subsample(big, 3, 0.01, 3).size(), 27u);

  std::vector<int> hundred;
  for (int i = 0; i < 300; ++i) hundred.push_back(i % 3);
  EXPECT_EQ(few_label_subsample(hundred, 3, 0.001, 4).size(), 3u);

  EXPECT_THROW(few_label_subsample(std::vector<int>{0, 0, 2}, 3, 0.5, 5), ValidationError);
  EXPECT_THROW(few_label_subsample(labels, 3, 0.0, 5), ValidationError);
}

TEST(Pretrain, OneEpochLowersObjective) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Synthetic s = small_synthetic(100 + seed);
    const TrainConfig cfg = small_config(TrainMode::pretrain, 1, seed);
    ModelDims d;
    d.channels = s.data.channels();
    d.representation = cfg.representation;
    const ParameterSet init = init_params(seed, d);
    const TrainResult r = pretrain(s.data, s.ctx, cfg);
    improved += pretrain_objective(r.params, s.data, s.ctx, cfg, 999) <
                pretrain_objective(init, s.data, s.ctx, cfg, 999);
  }
  EXPECT_GE(improved, 9);
}

TEST(Pretrain, FifthEpochBelowFirst) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Synthetic s = small_synthetic(200 + seed);
    const TrainResult r = pretrain(s.data, s.ctx, small_config(TrainMode::pretrain, 5, seed));
    ASSERT_EQ(r.history.size(), 5u);
    improved += r.history[4].loss_pt < r.history[0].loss_pt;
  }
  EXPECT_GE(improved, 9);
}

TEST(Pretrain, RecordsAndDeterminism) {
  const Synthetic s = small_synthetic(7);
  const TrainConfig cfg = small_config(TrainMode::pretrain, 2, 3);
  std::vector<EpochRecord> seen;
  const TrainResult a = pretrain(s.data, s.ctx, cfg, {}, [&](const EpochRecord& r) { seen.push_back(r); });
  const TrainResult b = pretrain(s.data, s.ctx, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[0].phase, "pretrain");
  EXPECT_EQ(seen[1].epoch, 2u);
  EXPECT_FALSE(seen[0].seconds.has_value());
  EXPECT_NEAR(seen[0].loss_total, seen[0].loss_pt, 1e-12);
  EXPECT_FALSE(a.params.contains(pn::decoder_out_w));
}

TEST(Pretrain, RejectsBadInput) {
  const Synthetic s = small_synthetic(8);
  TrainConfig cfg = small_config(TrainMode::pretrain, 1, 0);
  cfg.augmentations = 1;
  EXPECT_THROW(pretrain(s.data, s.ctx, cfg), ValidationError);
  cfg.augmentations = 3;
  EXPECT_THROW(pretrain(FeatureSet{}, s.ctx, cfg), ValidationError);
}

TEST(Finetune, EncodersFrozenAndAccuracyHigh) {
  const Synthetic s = small_synthetic(9, 40);
  const TrainResult pre = pretrain(s.data, s.ctx, small_config(TrainMode::pretrain, 2, 1));
  const TrainResult ft = finetune(pre.params, s.data, s.ctx, small_config(TrainMode::finetune, 50, 1));
  for (const auto& [name, value] : pre.params.entries()) {
    if (is_encoder_param(name)) EXPECT_EQ(ft.params.get(name), value) << name;
  }
  ASSERT_TRUE(ft.params.contains(pn::decoder_out_w));
  ASSERT_TRUE(ft.history.back().train_acc.has_value());
  EXPECT_GE(*ft.history.back().train_acc, 0.95);
}

TEST(Finetune, SeparableRepresentationsReachHighAccuracy) {
  const Synthetic s = small_synthetic(10, 40);
  ModelDims d;
  d.channels = s.data.channels();
  d.representation = 16;
  const ParameterSet random_encoder = init_params(11, d);

  // Oracle: multinomial logistic regression by plain gradient descent on the
  // fused representations separates the training set.
  const Tensor reps = fused_representations(random_encoder, s.data, s.ctx);
  const std::size_t n = reps.dim(0), f = reps.dim(1), k = 3;
  std::vector<double> w(f * k, 0.0), b(k, 0.0);
  for (int it = 0; it < 3000; ++it) {
    std::vector<double> gw(f * k, 0.0), gb(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(k);
      double mx = -1e300;
      for (std::size_t c = 0; c < k; ++c) {
        z[c] = b[c];
        for (std::size_t j = 0; j < f; ++j) z[c] += reps.at({i, j}) * w[j * k + c];
        mx = std::max(mx, z[c]);
      }
      double sum = 0;
      for (auto& v : z) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double d = z[c] / sum - (static_cast<int>(c) == s.data.labels[i] ? 1.0 : 0.0);
        gb[c] += d;
        for (std::size_t j = 0; j < f; ++j) gw[j * k + c] += d * reps.at({i, j});
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.5 * gw[j] / n;
    for (std::size_t c = 0; c < k; ++c) b[c] -= 0.5 * gb[c] / n;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_z = -1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double z = b[c];
      for (std::size_t j = 0; j < f; ++j) z += reps.at({i, j}) * w[j * k + c];
      if (z > best_z) best_z = z, best = c;
    }
    correct += static_cast<int>(best) == s.data.labels[i];
  }
  ASSERT_EQ(correct, n) << "representations are not separable; the check below would be meaningless";

  const TrainResult ft = finetune(random_encoder, s.data, s.ctx, small_config(TrainMode::finetune, 50, 2));
  EXPECT_GE(*ft.history.back().train_acc, 0.95);
}

TEST(Finetune, ClassCountMismatchAndMissingLabels) {
  const Synthetic s = small_synthetic(12);
  ModelDims d;
  d.channels = s.data.channels();
  d.representation = 16;
  d.n_classes = 4;
  const ParameterSet p = init_params(1, d);
  EXPECT_THROW(finetune(p, s.data, s.ctx, small_config(TrainMode::finetune, 1, 0)), ValidationError);
  FeatureSet unlabeled = s.data;
  unlabeled.labels.clear();
  EXPECT_THROW(finetune(p, unlabeled, s.ctx, small_config(TrainMode::finetune, 1, 0)), ValidationError);
}

TEST(Finetune, LabelFractionShrinksTrainingSet) {
  const Synthetic s = small_synthetic(13, 30);
  ModelDims d;
  d.channels = s.data.channels();
  d.representation = 16;
  TrainConfig cfg = small_config(TrainMode::finetune, 1, 0);
  cfg.label_fraction = 0.1;
  cfg.batch_size = 256;
  const TrainResult r = finetune(init_params(2, d), s.data, s.ctx, cfg);
  EXPECT_EQ(r.history[0].label_fraction, 0.1);
  // 3 per class, so running accuracy moves in steps of 1/9.
  const double acc9 = *r.history[0].train_acc * 9.0;
  EXPECT_NEAR(acc9, std::round(acc9), 1e-9);
}

TEST(Joint, FirstStepIsUnweightedSum) {
  const Synthetic s = small_synthetic(14, 20);
  TrainConfig cfg = small_config(TrainMode::joint, 1, 4);
  cfg.batch_size = 256;  // one batch, so the epoch record is the first step
  const TrainResult r = joint_train(s.data, s.ctx, cfg);
  const EpochRecord& e = r.history[0];
  EXPECT_NEAR(e.loss_total, e.loss_pt + e.loss_ce, 1e-12);
  EXPECT_NEAR(e.loss_pt, e.loss_inner + e.loss_cross, 1e-12);
  for (const auto& name : {pn::log_sigma_s, pn::log_sigma_t, pn::log_sigma_pt, pn::log_sigma_ce}) {
    EXPECT_NE(r.params.get(name).item(), 0.0) << name;
  }
}

TEST(Joint, SupervisedOnlyAndDeterminism) {
  const Synthetic s = small_synthetic(15, 20);
  TrainConfig cfg = small_config(TrainMode::joint, 2, 5);
  cfg.contrastive_weight = 0.0;
  const TrainResult a = joint_train(s.data, s.ctx, cfg), b = joint_train(s.data, s.ctx, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.history[1].loss_pt, 0.0);
  EXPECT_EQ(a.params.get(pn::log_sigma_s).item(), 0.0);
}

TEST(Argmax, TiesGoLow) {
  EXPECT_EQ(argmax_rows(Tensor::matrix(3, 3, {1, 1, 0, 0, 2, 2, 5, 5, 5})), (std::vector<int>{0, 1, 0}));
}

TEST(FeatureSet, SubsetAndValidate) {
  const Synthetic s = small_synthetic(16, 5);
  const std::vector<std::size_t> idx = {4, 1};
  const FeatureSet sub = s.data.subset(idx);
  EXPECT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.labels[0], s.data.labels[4]);
  EXPECT_THROW(s.data.subset(std::vector<std::size_t>{100}), LookupError);
  FeatureSet bad = s.data;
  bad.labels[0] = 7;
  EXPECT_THROW(bad.validate(), ValidationError);
}
