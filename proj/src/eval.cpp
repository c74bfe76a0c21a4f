#include "kdc2/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "kdc2/encoders.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/objectives.hpp"

namespace kdc2 {

std::size_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  if (truth >= n_classes || predicted >= n_classes) throw LookupError("confusion index out of range");
  return counts[truth * n_classes + predicted];
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < n_classes; ++k) s += at(k, k);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

Evaluation score_predictions(std::span<const int> truth, std::span<const int> predicted, std::size_t n_classes) {
  if (truth.empty()) throw ValidationError("evaluate: empty dataset");
  if (truth.size() != predicted.size()) {
    throw ValidationError("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(truth.size()) + " labels");
  }
  Evaluation e;
  e.confusion.n_classes = n_classes;
  e.confusion.counts.assign(n_classes * n_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(predicted[i]);
    if (truth[i] < 0 || predicted[i] < 0 || t >= n_classes || p >= n_classes) {
      throw ValidationError("evaluate: class id outside [0, " + std::to_string(n_classes) + ") at index " +
                            std::to_string(i));
    }
    ++e.confusion.counts[t * n_classes + p];
  }
  e.accuracy = static_cast<double>(e.confusion.trace()) / static_cast<double>(truth.size());
  return e;
}

std::vector<int> predict(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx) {
  if (!params.contains(param_names::decoder_out_w)) throw ValidationError("evaluate: checkpoint has no decoder");
  const Tensor reps = fused_representations(params, data, ctx);
  return argmax_rows(decode(reps, params.with_prefix("decoder.")));
}

Evaluation evaluate(const ParameterSet& params, const FeatureSet& data, const ViewContext& ctx) {
  if (data.size() == 0) throw ValidationError("evaluate: empty dataset");
  if (!data.labeled()) throw ValidationError("evaluate: labels are required");
  if (!params.contains(param_names::decoder_out_w)) throw ValidationError("evaluate: checkpoint has no decoder");
  const std::size_t k = params.get(param_names::decoder_out_w).dim(1);
  if (k != data.n_classes) {
    throw ValidationError("evaluate: decoder predicts " + std::to_string(k) + " classes, data has " +
                          std::to_string(data.n_classes));
  }
  const Tensor logits = decode(fused_representations(params, data, ctx), params.with_prefix("decoder."));
  Evaluation e = score_predictions(data.labels, argmax_rows(logits), k);
  e.loss = cross_entropy(logits, data.labels);
  return e;
}

std::string format_confusion(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  auto name = [&](std::size_t k) { return k < class_names.size() ? class_names[k] : std::to_string(k); };
  std::size_t width = 6;
  for (std::size_t k = 0; k < cm.n_classes; ++k) width = std::max(width, name(k).size() + 1);
  for (auto c : cm.counts) width = std::max(width, std::to_string(c).size() + 1);
  std::ostringstream out;
  out << std::setw(static_cast<int>(width)) << "true\\pred";
  for (std::size_t p = 0; p < cm.n_classes; ++p) out << std::setw(static_cast<int>(width)) << name(p);
  out << '\n';
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    out << std::setw(static_cast<int>(width)) << name(t);
    for (std::size_t p = 0; p < cm.n_classes; ++p) out << std::setw(static_cast<int>(width)) << cm.at(t, p);
    out << '\n';
  }
  return out.str();
}

}  // namespace kdc2
