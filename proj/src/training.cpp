#include "kdc2/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "kdc2/encoders.hpp"
#include "kdc2/ops.hpp"

namespace kdc2 {
namespace {

namespace pn = param_names;

enum : std::uint32_t { kShuffleStream = 1, kAugmentStream = 2, kSubsampleStream = 3 };

Rng stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return Rng(seq);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng,
                                                   std::size_t min_last) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    const std::size_t end = std::min(n, i + batch_size);
    if (end - i < min_last) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

double sigma_of(const ParameterSet& p, const std::string& name) {
  return p.contains(name) ? std::exp(p.get(name).item()) : 1.0;
}

EpochRecord start_record(const std::string& phase, std::size_t epoch, const TrainConfig& cfg) {
  EpochRecord r;
  r.phase = phase;
  r.epoch = epoch;
  r.seed = cfg.seed;
  r.label_fraction = cfg.label_fraction;
  return r;
}

void finish_record(EpochRecord& r, const ParameterSet& p, std::chrono::steady_clock::time_point start,
                   const TrainConfig& cfg) {
  r.sigma_s = sigma_of(p, pn::log_sigma_s);
  r.sigma_t = sigma_of(p, pn::log_sigma_t);
  r.sigma_pt = sigma_of(p, pn::log_sigma_pt);
  r.sigma_ce = sigma_of(p, pn::log_sigma_ce);
  if (!cfg.deterministic) {
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
}

void check_context(const FeatureSet& data, const ViewContext& ctx, const char* op) {
  if (ctx.montage.channels() != data.channels() || ctx.graph.nodes() != data.channels()) {
    throw ValidationError(std::string(op) + ": montage has " + std::to_string(ctx.montage.channels()) +
                          " channels, features have " + std::to_string(data.channels()));
  }
}

std::vector<PreliminaryFeatures> gather(const FeatureSet& data, std::span<const std::size_t> idx) {
  std::vector<PreliminaryFeatures> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.features[i]);
  return out;
}

std::vector<int> gather_labels(const FeatureSet& data, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.labels[i]);
  return out;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

struct ContrastiveTerms {
  Var inner;
  Var cross;
};

ContrastiveTerms contrastive_terms(const FeatureSet& data, std::span<const std::size_t> batch, const ViewContext& ctx,
                                   const TrainConfig& cfg, Rng& rng, Tape& tape, const BoundParameters& p, Var lap) {
  const std::size_t m = cfg.augmentations;
  std::vector<std::vector<PreliminaryFeatures>> per_aug(m);
  for (auto& v : per_aug) v.reserve(batch.size());
  for (auto idx : batch) {
    auto draws = draw_augmentations(data.features[idx], m, cfg.augment, rng);
    for (std::size_t i = 0; i < m; ++i) per_aug[i].push_back(std::move(draws[i].features));
  }
  std::vector<Var> scalp, topo;
  for (std::size_t i = 0; i < m; ++i) {
    scalp.push_back(scalp_encode(tape.constant(scalp_view_batch(per_aug[i], ctx.montage)), p));
    topo.push_back(topo_encode(tape.constant(feature_batch(per_aug[i])), lap, p));
  }
  return {inner_view_loss(scalp, topo, cfg.objective), cross_view_infonce(scalp, topo, cfg.tau, cfg.objective)};
}

ParameterSet encoder_params(const ParameterSet& params) {
  ParameterSet out = params.with_prefix("scalp.");
  out.merge(params.with_prefix("topo."));
  return out;
}

ModelDims dims_of(const ParameterSet& params, const char* op) {
  try {
    return infer_dims(params);
  } catch (const LookupError& e) {
    throw ValidationError(std::string(op) + ": incomplete checkpoint: " + e.what());
  }
}

void check_initial(const ParameterSet& initial, const ModelDims& dims, const TrainConfig& cfg, const char* op) {
  ParameterSet expected = init_params(cfg.seed, dims);
  if (dims.n_classes == 0) {
    for (const auto& n : expected.names()) {
      if (is_decoder_param(n)) expected.erase(n);
    }
  }
  try {
    require_shapes(initial, expected);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(op) + ": " + e.what());
  }
}

}  // namespace

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.lr > 0.0) || !std::isfinite(config_.lr)) {
    throw ValidationError("adam: learning rate must be positive, got " + std::to_string(config_.lr));
  }
}

void Adam::step(ParameterSet& params, const ParameterSet& grads) {
  for (const auto& [name, g] : grads.entries()) {
    const Tensor& p = params.get(name);
    if (p.shape() != g.shape()) {
      throw DimensionError("adam: gradient for '" + name + "' has shape " + to_string(g.shape()) + ", parameter " +
                           to_string(p.shape()));
    }
    const auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      if (!std::isfinite(gv[i])) {
        throw NumericError("adam: non-finite gradient for parameter '" + name + "' at element " + std::to_string(i));
      }
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& [name, g] : grads.entries()) {
    if (!m_.contains(name)) {
      m_.set(name, Tensor(g.shape()));
      v_.set(name, Tensor(g.shape()));
    }
    auto m = m_.get(name).values();
    auto v = v_.get(name).values();
    auto p = params.get(name).values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * gv[i];
      v[i] = b2 * v[i] + (1.0 - b2) * gv[i] * gv[i];
      p[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

std::size_t FeatureSet::channels() const { return features.empty() ? 0 : features.front().channels(); }

FeatureSet FeatureSet::subset(std::span<const std::size_t> indices) const {
  FeatureSet out;
  out.n_classes = n_classes;
  for (auto i : indices) {
    if (i >= features.size()) throw LookupError("feature index " + std::to_string(i) + " out of range");
    out.features.push_back(features[i]);
    if (labeled()) out.labels.push_back(labels[i]);
  }
  return out;
}

void FeatureSet::validate() const {
  const std::size_t c = channels();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Tensor& v = features[i].values;
    if (v.rank() != 2 || v.dim(0) != c || v.dim(1) != kBandCount) {
      throw DimensionError("features[" + std::to_string(i) + "] has shape " + to_string(v.shape()) + ", expected [" +
                           std::to_string(c) + ",5]");
    }
  }
  if (!labels.empty()) {
    if (labels.size() != features.size()) {
      throw ValidationError(std::to_string(labels.size()) + " labels for " + std::to_string(features.size()) +
                            " samples");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
        throw ValidationError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                              " outside [0, " + std::to_string(n_classes) + ")");
      }
    }
  }
}

ViewContext ViewContext::make(Montage montage, Neighborhood neighborhood) {
  ViewContext ctx;
  ctx.graph = build_topology_graph(montage, neighborhood);
  ctx.montage = std::move(montage);
  return ctx;
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::joint: return "joint";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "pretrain") return TrainMode::pretrain;
  if (name == "finetune") return TrainMode::finetune;
  if (name == "joint") return TrainMode::joint;
  throw ValidationError("unknown training mode '" + name + "'");
}

std::size_t default_epochs(TrainMode mode) { return mode == TrainMode::finetune ? 100 : 50; }

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("epochs must be at least 1");
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2, got " + std::to_string(batch_size));
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive, got " + std::to_string(lr));
  const bool contrastive = mode == TrainMode::pretrain || (mode == TrainMode::joint && contrastive_weight > 0.0);
  if (contrastive && augmentations < 2) {
    throw ValidationError("m (augmentations) must be at least 2 for " + to_string(mode) + ", got " +
                          std::to_string(augmentations));
  }
  if (representation == 0) throw ValidationError("h (representation size) must be positive");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("tau must be positive, got " + std::to_string(tau));
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw ValidationError("label_fraction must lie in (0, 1], got " + std::to_string(label_fraction));
  }
  if (!(contrastive_weight >= 0.0) || !std::isfinite(contrastive_weight)) {
    throw ValidationError("contrastive_weight must be non-negative, got " + std::to_string(contrastive_weight));
  }
  if (!(objective.norm_floor > 0.0)) throw ValidationError("norm_floor must be positive");
  augment.validate();
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [B,K], got " + to_string(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits[b * K + k] > logits[b * K + best]) best = k;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

TrainResult pretrain(const FeatureSet& data, const ViewContext& ctx, const TrainConfig& cfg,
                     const ParameterSet& initial, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (data.size() < 2) throw ValidationError("pretrain: need at least 2 samples, got " + std::to_string(data.size()));
  check_context(data, ctx, "pretrain");
  ModelDims dims;
  dims.channels = data.channels();
  dims.representation = cfg.representation;

  TrainResult result;
  if (initial.size() > 0) {
    check_initial(initial, dims, cfg, "pretrain");
    result.params = initial;
  } else {
    result.params = init_params(cfg.seed, dims);
  }
  const auto trainable = [](const std::string& n) {
    return is_encoder_param(n) || n == pn::log_sigma_s || n == pn::log_sigma_t;
  };

  Adam adam({.lr = cfg.lr});
  Rng order_rng = stream(cfg.seed, kShuffleStream);
  Rng aug_rng = stream(cfg.seed, kAugmentStream);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec = start_record("pretrain", epoch, cfg);
    double seen = 0.0;
    for (const auto& batch : make_batches(data.size(), cfg.batch_size, &order_rng, 2)) {
      try {
        Tape tape;
        BoundParameters p(tape, result.params, trainable);
        Var lap = tape.constant(ctx.graph.laplacian);
        auto terms = contrastive_terms(data, batch, ctx, cfg, aug_rng, tape, p, lap);
        Var loss = pretrain_loss(terms.inner, terms.cross, p[pn::log_sigma_s], p[pn::log_sigma_t]);
        tape.backward(loss);
        adam.step(result.params, p.gradients());
        const double w = static_cast<double>(batch.size());
        rec.loss_inner += w * terms.inner.value().item();
        rec.loss_cross += w * terms.cross.value().item();
        rec.loss_pt += w * loss.value().item();
        seen += w;
      } catch (const NumericError& e) {
        throw TrainingAborted("pretrain: epoch " + std::to_string(epoch) + ": " + e.what(), result.params,
                              result.history);
      }
    }
    rec.loss_inner /= seen;
    rec.loss_cross /= seen;
    rec.loss_pt /= seen;
    rec.loss_total = rec.loss_pt;
    finish_record(rec, result.params, start, cfg);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

TrainResult finetune(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx,
                     const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (!data.labeled()) throw ValidationError("finetune: labels are required");
  check_context(data, ctx, "finetune");
  ModelDims dims = dims_of(params, "finetune");
  if (dims.channels != data.channels()) {
    throw ValidationError("finetune: checkpoint expects " + std::to_string(dims.channels) + " channels, data has " +
                          std::to_string(data.channels()));
  }
  TrainResult result;
  result.params = params;
  if (dims.n_classes > 0) {
    if (dims.n_classes != data.n_classes) {
      throw ValidationError("finetune: decoder predicts " + std::to_string(dims.n_classes) + " classes, data has " +
                            std::to_string(data.n_classes));
    }
  } else {
    dims.n_classes = data.n_classes;
    result.params.merge(init_decoder_params(cfg.seed, dims));
  }

  const auto keep = few_label_subsample(data.labels, data.n_classes, cfg.label_fraction, cfg.seed);
  const FeatureSet train = data.subset(keep);
  const Tensor reps = fused_representations(result.params, train, ctx);
  const std::size_t width = reps.dim(1);

  Adam adam({.lr = cfg.lr});
  Rng order_rng = stream(cfg.seed, kShuffleStream);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec = start_record("finetune", epoch, cfg);
    double seen = 0.0, correct = 0.0;
    for (const auto& batch : make_batches(train.size(), cfg.batch_size, &order_rng, 1)) {
      Tensor x({batch.size(), width});
      for (std::size_t r = 0; r < batch.size(); ++r) {
        std::copy_n(reps.raw() + batch[r] * width, width, x.raw() + r * width);
      }
      const auto labels = gather_labels(train, batch);
      try {
        Tape tape;
        BoundParameters p(tape, result.params.with_prefix("decoder."), [](const std::string&) { return true; });
        Var logits = decode(tape.constant(std::move(x)), p);
        Var loss = cross_entropy(logits, labels);
        tape.backward(loss);
        adam.step(result.params, p.gradients());
        const double w = static_cast<double>(batch.size());
        rec.loss_ce += w * loss.value().item();
        correct += static_cast<double>(count_correct(logits.value(), labels));
        seen += w;
      } catch (const NumericError& e) {
        throw TrainingAborted("finetune: epoch " + std::to_string(epoch) + ": " + e.what(), result.params,
                              result.history);
      }
    }
    rec.loss_ce /= seen;
    rec.loss_total = rec.loss_ce;
    rec.train_acc = correct / seen;
    finish_record(rec, result.params, start, cfg);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

TrainResult joint_train(const FeatureSet& data, const ViewContext& ctx, const TrainConfig& cfg,
                        const ParameterSet& initial, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (!data.labeled()) throw ValidationError("joint: labels are required");
  check_context(data, ctx, "joint");
  ModelDims dims;
  dims.channels = data.channels();
  dims.representation = cfg.representation;
  dims.n_classes = data.n_classes;

  TrainResult result;
  if (initial.size() > 0) {
    check_initial(initial, dims, cfg, "joint");
    result.params = initial;
  } else {
    result.params = init_params(cfg.seed, dims);
  }
  const auto keep = few_label_subsample(data.labels, data.n_classes, cfg.label_fraction, cfg.seed);
  const FeatureSet train = data.subset(keep);
  if (train.size() < 2) throw ValidationError("joint: need at least 2 samples, got " + std::to_string(train.size()));
  const bool contrastive = cfg.contrastive_weight > 0.0;

  Adam adam({.lr = cfg.lr});
  Rng order_rng = stream(cfg.seed, kShuffleStream);
  Rng aug_rng = stream(cfg.seed, kAugmentStream);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec = start_record("joint", epoch, cfg);
    double seen = 0.0, correct = 0.0;
    for (const auto& batch : make_batches(train.size(), cfg.batch_size, &order_rng, 2)) {
      const auto clean = gather(train, batch);
      const auto labels = gather_labels(train, batch);
      try {
        Tape tape;
        BoundParameters p(tape, result.params, [](const std::string&) { return true; });
        Var lap = tape.constant(ctx.graph.laplacian);
        Var rs = scalp_encode(tape.constant(scalp_view_batch(clean, ctx.montage)), p);
        Var rt = topo_encode(tape.constant(feature_batch(clean)), lap, p);
        Var logits = decode(fuse(rs, rt), p);
        Var ce = cross_entropy(logits, labels);
        Var weighted_pt = tape.constant(Tensor::scalar(0.0));
        const double w = static_cast<double>(batch.size());
        if (contrastive) {
          auto terms = contrastive_terms(train, batch, ctx, cfg, aug_rng, tape, p, lap);
          Var lpt = pretrain_loss(terms.inner, terms.cross, p[pn::log_sigma_s], p[pn::log_sigma_t]);
          weighted_pt = scale(lpt, cfg.contrastive_weight);
          rec.loss_inner += w * terms.inner.value().item();
          rec.loss_cross += w * terms.cross.value().item();
          rec.loss_pt += w * lpt.value().item();
        }
        Var total = joint_loss(weighted_pt, ce, p[pn::log_sigma_pt], p[pn::log_sigma_ce]);
        tape.backward(total);
        adam.step(result.params, p.gradients());
        rec.loss_ce += w * ce.value().item();
        rec.loss_total += w * total.value().item();
        correct += static_cast<double>(count_correct(logits.value(), labels));
        seen += w;
      } catch (const NumericError& e) {
        throw TrainingAborted("joint: epoch " + std::to_string(epoch) + ": " + e.what(), result.params,
                              result.history);
      }
    }
    rec.loss_inner /= seen;
    rec.loss_cross /= seen;
    rec.loss_pt /= seen;
    rec.loss_ce /= seen;
    rec.loss_total /= seen;
    rec.train_acc = correct / seen;
    finish_record(rec, result.params, start, cfg);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

double pretrain_objective(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx,
                          const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  data.validate();
  check_context(data, ctx, "pretrain_objective");
  Rng aug_rng = stream(seed, kAugmentStream);
  double total = 0.0, seen = 0.0;
  for (const auto& batch : make_batches(data.size(), cfg.batch_size, nullptr, 2)) {
    Tape tape;
    BoundParameters p(tape, params);
    Var lap = tape.constant(ctx.graph.laplacian);
    auto terms = contrastive_terms(data, batch, ctx, cfg, aug_rng, tape, p, lap);
    Var loss = pretrain_loss(terms.inner, terms.cross, p[pn::log_sigma_s], p[pn::log_sigma_t]);
    total += static_cast<double>(batch.size()) * loss.value().item();
    seen += static_cast<double>(batch.size());
  }
  if (seen == 0.0) throw ValidationError("pretrain_objective: need at least 2 samples");
  return total / seen;
}

Tensor fused_representations(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx) {
  data.validate();
  if (data.size() == 0) throw ValidationError("fused_representations: empty dataset");
  check_context(data, ctx, "fused_representations");
  const ParameterSet enc = encoder_params(params);
  const std::size_t h = dims_of(params, "fused_representations").representation;
  Tensor out({data.size(), 2 * h});
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto chunk = gather(data, idx);
    Tape tape;
    BoundParameters p(tape, enc);
    Var rs = scalp_encode(tape.constant(scalp_view_batch(chunk, ctx.montage)), p);
    Var rt = topo_encode(tape.constant(feature_batch(chunk)), tape.constant(ctx.graph.laplacian), p);
    const Tensor fused = fuse(rs, rt).value();
    std::copy(fused.raw(), fused.raw() + fused.size(), out.raw() + start * 2 * h);
  }
  return out;
}

std::vector<std::size_t> few_label_subsample(std::span<const int> labels, std::size_t n_classes, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("label fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(n_classes) + ")");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Rng rng = stream(seed, kSubsampleStream);
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < n_classes; ++k) {
    auto& idx = by_class[k];
    if (idx.empty()) throw ValidationError("class " + std::to_string(k) + " has no samples");
    // The epsilon keeps exact products such as 0.29 * 100 from flooring to 28.
    const auto want = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 1e-9));
    const std::size_t take = std::clamp<std::size_t>(want, 1, idx.size());
    if (take < idx.size()) std::shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

}  // namespace kdc2
