#pragma once

#include <span>
#include <vector>

#include "kdc2/autodiff.hpp"

namespace kdc2 {

struct ObjectiveOptions {
  /// Subtract per-dimension batch means before correlating (classic Barlow Twins).
  /// Off by default: raw second moments.
  bool center = false;
  /// Normalize pair (p, q) by ||r^p[:,i]|| * ||r^p[:,j]|| instead of ||r^p[:,i]|| * ||r^q[:,j]||.
  bool same_view_denominator = false;
  /// Also count (r_s^j, r_t^i), j > i, as negatives in the cross-view loss.
  bool symmetric_negatives = false;
  double norm_floor = 1e-12;
};

/// Batch cross-correlation averaged over the m(m-1)/2 augmentation pairs p < q:
/// C[i][j] = mean_pairs  sum_b r^p_b[i] r^q_b[j] / (||r^p[:,i]|| ||r^q[:,j]||).
/// Every rep is [B, h] with B >= 2; needs m >= 2. Result [h, h].
Var cross_correlation(const std::vector<Var>& reps, const ObjectiveOptions& options = {});

/// sum_i (1 - C_ii)^2 / h + sum_{i != j} C_ij^2 / (h (h - 1))
Var barlow_twins_loss(Var correlation);

/// Mean of the scalp and topology Barlow Twins losses.
Var inner_view_loss(const std::vector<Var>& scalp, const std::vector<Var>& topo,
                    const ObjectiveOptions& options = {});

/// Same-augmentation InfoNCE across views. With s(.,.) the cosine similarity,
///   pos = sum_b sum_i exp(s(r_s^i_b, r_t^i_b) / tau)
///   neg = sum_b sum_{i<j} exp(s(r_s^i_b, r_t^j_b) / tau)
///   loss = -(1/B) log(pos / (pos + neg))
/// evaluated in log-sum-exp form.
Var cross_view_infonce(const std::vector<Var>& scalp, const std::vector<Var>& topo, double tau,
                       const ObjectiveOptions& options = {});

/// inner / sigma_s^2 + cross / sigma_t^2 + log sigma_s + log sigma_t, sigmas given as logs.
Var pretrain_loss(Var inner, Var cross, Var log_sigma_s, Var log_sigma_t);

/// l_pt / sigma_pt^2 + l_ce / sigma_ce^2 + log(sigma_pt sigma_ce), sigmas given as logs.
Var joint_loss(Var pretrain, Var cross_entropy, Var log_sigma_pt, Var log_sigma_ce);

Var cross_entropy(Var logits, std::span<const int> labels);

// Value-only forms.
Tensor cross_correlation(const std::vector<Tensor>& reps, const ObjectiveOptions& options = {});
double barlow_twins_loss(const Tensor& correlation);
double inner_view_loss(const std::vector<Tensor>& scalp, const std::vector<Tensor>& topo,
                       const ObjectiveOptions& options = {});
double cross_view_infonce(const std::vector<Tensor>& scalp, const std::vector<Tensor>& topo, double tau,
                          const ObjectiveOptions& options = {});
double pretrain_loss(double inner, double cross, double log_sigma_s, double log_sigma_t);
double joint_loss(double pretrain, double cross_entropy, double log_sigma_pt, double log_sigma_ce);
double cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace kdc2
