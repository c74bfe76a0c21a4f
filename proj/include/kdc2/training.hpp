#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdc2/augment.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/objectives.hpp"
#include "kdc2/params.hpp"
#include "kdc2/signal.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are created lazily per parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// Updates every parameter that has an entry in `grads`. The whole step is
  /// rejected (nothing mutated) if any gradient is non-finite or misshaped.
  void step(ParameterSet& params, const ParameterSet& grads);

  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  const ParameterSet& first_moment() const noexcept { return m_; }
  const ParameterSet& second_moment() const noexcept { return v_; }

 private:
  AdamConfig config_;
  ParameterSet m_;
  ParameterSet v_;
  std::size_t t_ = 0;
};

/// Per-slice features plus optional labels.
struct FeatureSet {
  std::vector<PreliminaryFeatures> features;
  std::vector<int> labels;  // empty when unlabeled
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return features.size(); }
  bool labeled() const noexcept { return !labels.empty(); }
  std::size_t channels() const;
  FeatureSet subset(std::span<const std::size_t> indices) const;
  void validate() const;
};

/// Montage and the graph derived from it; shared by every batch.
struct ViewContext {
  Montage montage;
  TopologyGraph graph;

  static ViewContext make(Montage montage, Neighborhood neighborhood = Neighborhood::four);
};

enum class TrainMode { pretrain, finetune, joint };
std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);
std::size_t default_epochs(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double lr = 0.01;
  std::size_t augmentations = 3;    // m
  std::size_t representation = 128;  // h
  double tau = 0.1;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
  /// Joint mode only: multiplier on the pretraining loss. 0 skips the
  /// contrastive branch entirely (supervised-only).
  double contrastive_weight = 1.0;
  /// Omits wall-clock timings from metrics so reruns are byte-identical.
  bool deterministic = false;
  ObjectiveOptions objective;

  void validate() const;
};

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;
  double loss_inner = 0.0;
  double loss_cross = 0.0;
  double loss_pt = 0.0;
  double loss_ce = 0.0;
  double loss_total = 0.0;
  double sigma_s = 1.0;
  double sigma_t = 1.0;
  double sigma_pt = 1.0;
  double sigma_ce = 1.0;
  std::optional<double> train_acc;
  std::optional<double> accuracy;  // held-out accuracy, set by eval and sweep lines
  std::optional<double> seconds;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  ParameterSet params;
  std::vector<EpochRecord> history;
};

/// Raised when a loss or gradient goes non-finite. Carries the parameters from
/// before the failing step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, ParameterSet last_good, std::vector<EpochRecord> history)
      : NumericError(what), last_good_(std::move(last_good)), history_(std::move(history)) {}
  const ParameterSet& last_good() const noexcept { return last_good_; }
  const std::vector<EpochRecord>& history() const noexcept { return history_; }

 private:
  ParameterSet last_good_;
  std::vector<EpochRecord> history_;
};

/// Self-supervised training of both encoders and the two view log-sigmas.
/// Starts from `initial` when given, else from init_params(cfg.seed).
TrainResult pretrain(const FeatureSet& data, const ViewContext& ctx, const TrainConfig& cfg,
                     const ParameterSet& initial = {}, const EpochCallback& on_epoch = nullptr);

/// Trains only the decoder on frozen representations of the clean features.
/// Adds a fresh decoder when `params` has none.
TrainResult finetune(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr);

/// Encoders, decoder and all four log-sigmas against the joint loss.
TrainResult joint_train(const FeatureSet& data, const ViewContext& ctx, const TrainConfig& cfg,
                        const ParameterSet& initial = {}, const EpochCallback& on_epoch = nullptr);

/// Mean pretraining loss over the data with augmentations drawn from `seed`; no update.
double pretrain_objective(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx,
                          const TrainConfig& cfg, std::uint64_t seed);

/// Fused [N, 2h] representations of the clean features.
Tensor fused_representations(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

/// Per class keeps max(1, floor(fraction * n_k)) indices drawn uniformly with
/// `seed`. Returned indices are ascending.
std::vector<std::size_t> few_label_subsample(std::span<const int> labels, std::size_t n_classes, double fraction,
                                             std::uint64_t seed);

}  // namespace kdc2
