#include "kdc2/objectives.hpp"

#include <string>

#include "kdc2/errors.hpp"
#include "kdc2/ops.hpp"

namespace kdc2 {
namespace {

void check_rep_set(const char* op, const std::vector<Var>& reps) {
  if (reps.empty()) throw ContractError(std::string(op) + ": empty representation set");
  const Shape& first = reps.front().shape();
  if (first.size() != 2) throw DimensionError(std::string(op) + ": representations must be [B,h], got " + to_string(first));
  for (const auto& r : reps) {
    if (r.shape() != first) {
      throw DimensionError(std::string(op) + ": representation shapes " + to_string(first) + " and " +
                           to_string(r.shape()) + " differ");
    }
  }
}

Tensor centering_matrix(std::size_t b) {
  Tensor m({b, b});
  const double off = -1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) m[i * b + j] = (i == j ? 1.0 : 0.0) + off;
  }
  return m;
}

std::vector<Var> as_constants(Tape& tape, const std::vector<Tensor>& ts) {
  std::vector<Var> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(tape.constant(t));
  return out;
}

}  // namespace

Var cross_correlation(const std::vector<Var>& reps, const ObjectiveOptions& options) {
  check_rep_set("cross_correlation", reps);
  const std::size_t m = reps.size();
  const std::size_t B = reps.front().shape()[0];
  const std::size_t h = reps.front().shape()[1];
  if (B < 2) throw ContractError("cross_correlation: batch of " + std::to_string(B) + " (need >= 2)");
  if (m < 2) throw ContractError("cross_correlation: need at least 2 augmentations, got " + std::to_string(m));
  Tape& tape = reps.front().tape();

  // Per augmentation: columns as rows ([h, B]) and their norms ([h]).
  std::vector<Var> cols(m), norms(m);
  Var center = options.center ? tape.constant(centering_matrix(B)) : Var{};
  for (std::size_t p = 0; p < m; ++p) {
    Var r = options.center ? matmul(center, reps[p]) : reps[p];
    cols[p] = transpose(r);
    norms[p] = row_norms(cols[p], options.norm_floor);
  }

  Var total;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t q = p + 1; q < m; ++q) {
      Var numerator = matmul(cols[p], transpose(cols[q]));
      Var right = options.same_view_denominator ? norms[p] : norms[q];
      Var denominator = matmul(reshape(norms[p], {h, 1}), reshape(right, {1, h}));
      Var term = div(numerator, denominator);
      total = total.valid() ? add(total, term) : term;
    }
  }
  const double pairs = static_cast<double>(m * (m - 1) / 2);
  return scale(total, 1.0 / pairs);
}

Var barlow_twins_loss(Var correlation) {
  const Shape& s = correlation.shape();
  if (s.size() != 2 || s[0] != s[1]) {
    throw DimensionError("barlow_twins_loss: correlation must be square, got " + to_string(s));
  }
  const std::size_t h = s[0];
  Tape& tape = correlation.tape();
  Tensor identity({h, h});
  Tensor weights({h, h});
  const double on_diag = 1.0 / static_cast<double>(h);
  const double off_diag = h > 1 ? 1.0 / static_cast<double>(h * (h - 1)) : 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      identity[i * h + j] = i == j ? 1.0 : 0.0;
      weights[i * h + j] = i == j ? on_diag : off_diag;
    }
  }
  Var diff = sub(correlation, tape.constant(std::move(identity)));
  return sum(mul(mul(diff, diff), tape.constant(std::move(weights))));
}

Var inner_view_loss(const std::vector<Var>& scalp, const std::vector<Var>& topo, const ObjectiveOptions& options) {
  Var ls = barlow_twins_loss(cross_correlation(scalp, options));
  Var lt = barlow_twins_loss(cross_correlation(topo, options));
  return scale(add(ls, lt), 0.5);
}

Var cross_view_infonce(const std::vector<Var>& scalp, const std::vector<Var>& topo, double tau,
                       const ObjectiveOptions& options) {
  if (!(tau > 0.0)) throw ContractError("cross_view_infonce: temperature must be positive, got " + std::to_string(tau));
  check_rep_set("cross_view_infonce", scalp);
  check_rep_set("cross_view_infonce", topo);
  if (scalp.size() != topo.size() || scalp.front().shape() != topo.front().shape()) {
    throw DimensionError("cross_view_infonce: views hold " + std::to_string(scalp.size()) + " x " +
                         to_string(scalp.front().shape()) + " and " + std::to_string(topo.size()) + " x " +
                         to_string(topo.front().shape()) + " representations");
  }
  const std::size_t m = scalp.size();
  const std::size_t B = scalp.front().shape()[0];
  std::vector<Var> s(m), t(m);
  for (std::size_t i = 0; i < m; ++i) {
    s[i] = l2_normalize_rows(scalp[i], options.norm_floor);
    t[i] = l2_normalize_rows(topo[i], options.norm_floor);
  }
  auto logits = [&](std::size_t i, std::size_t j) { return scale(sum_last_axis(mul(s[i], t[j])), 1.0 / tau); };

  std::vector<Var> positives, all;
  for (std::size_t i = 0; i < m; ++i) positives.push_back(logits(i, i));
  all = positives;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      all.push_back(logits(i, j));
      if (options.symmetric_negatives) all.push_back(logits(j, i));
    }
  }
  // -log(pos / (pos + neg)) = logsumexp(all) - logsumexp(positives)
  Var log_pos = logsumexp(concat(positives));
  Var log_all = logsumexp(concat(all));
  return scale(sub(log_all, log_pos), 1.0 / static_cast<double>(B));
}

Var pretrain_loss(Var inner, Var cross, Var log_sigma_s, Var log_sigma_t) {
  Var weighted_inner = mul(inner, exp(scale(log_sigma_s, -2.0)));
  Var weighted_cross = mul(cross, exp(scale(log_sigma_t, -2.0)));
  return add(add(weighted_inner, weighted_cross), add(log_sigma_s, log_sigma_t));
}

Var joint_loss(Var pretrain, Var cross_entropy, Var log_sigma_pt, Var log_sigma_ce) {
  Var weighted_pt = mul(pretrain, exp(scale(log_sigma_pt, -2.0)));
  Var weighted_ce = mul(cross_entropy, exp(scale(log_sigma_ce, -2.0)));
  return add(add(weighted_pt, weighted_ce), add(log_sigma_pt, log_sigma_ce));
}

Var cross_entropy(Var logits, std::span<const int> labels) { return softmax_cross_entropy(logits, labels); }

Tensor cross_correlation(const std::vector<Tensor>& reps, const ObjectiveOptions& options) {
  Tape tape;
  return cross_correlation(as_constants(tape, reps), options).value();
}

double barlow_twins_loss(const Tensor& correlation) {
  Tape tape;
  return barlow_twins_loss(tape.constant(correlation)).value().item();
}

double inner_view_loss(const std::vector<Tensor>& scalp, const std::vector<Tensor>& topo,
                       const ObjectiveOptions& options) {
  Tape tape;
  return inner_view_loss(as_constants(tape, scalp), as_constants(tape, topo), options).value().item();
}

double cross_view_infonce(const std::vector<Tensor>& scalp, const std::vector<Tensor>& topo, double tau,
                          const ObjectiveOptions& options) {
  Tape tape;
  return cross_view_infonce(as_constants(tape, scalp), as_constants(tape, topo), tau, options).value().item();
}

double pretrain_loss(double inner, double cross, double log_sigma_s, double log_sigma_t) {
  Tape tape;
  return pretrain_loss(tape.constant(Tensor::scalar(inner)), tape.constant(Tensor::scalar(cross)),
                       tape.constant(Tensor::scalar(log_sigma_s)), tape.constant(Tensor::scalar(log_sigma_t)))
      .value()
      .item();
}

double joint_loss(double pretrain, double cross_entropy, double log_sigma_pt, double log_sigma_ce) {
  Tape tape;
  return joint_loss(tape.constant(Tensor::scalar(pretrain)), tape.constant(Tensor::scalar(cross_entropy)),
                    tape.constant(Tensor::scalar(log_sigma_pt)), tape.constant(Tensor::scalar(log_sigma_ce)))
      .value()
      .item();
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  Tape tape;
  return cross_entropy(tape.constant(logits), labels).value().item();
}

}  // namespace kdc2
