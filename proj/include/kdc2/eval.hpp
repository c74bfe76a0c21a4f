#pragma once

#include <span>
#include <string>
#include <vector>

#include "kdc2/params.hpp"
#include "kdc2/training.hpp"

namespace kdc2 {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;  // n_classes x n_classes, row-major

  std::size_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t trace() const;
  std::size_t total() const;
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy; set by evaluate()
  ConfusionMatrix confusion;
};

Evaluation score_predictions(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes);

/// Argmax of the decoder logits on clean features; ties go to the lowest index.
std::vector<int> predict(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx);

/// Requires a decoder whose class count matches the data.
Evaluation evaluate(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx);

std::string format_confusion(const ConfusionMatrix& confusion, const std::vector<std::string>& class_names);

}  // namespace kdc2
