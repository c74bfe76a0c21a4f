#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kdc2/autodiff.hpp"
#include "kdc2/params.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {

/// Layer widths. The scalp encoder runs conv(2x2) -> relu -> pool twice on the
/// 9x9 grid (9 -> 8 -> 4 -> 3 -> 1), so its fc input is conv2 wide.
struct ModelDims {
  std::size_t channels = 0;        // c, nodes of the topology graph
  std::size_t representation = 128;  // h
  std::size_t n_classes = 0;       // 0: no decoder
  std::size_t conv1 = 16;
  std::size_t conv2 = 32;
  std::size_t gcn1 = 32;
  std::size_t gcn2 = 32;
  std::size_t decoder_hidden = 64;

  void validate() const;
};

namespace param_names {
inline const std::string scalp_conv1_w = "scalp.conv1.weight";
inline const std::string scalp_conv1_b = "scalp.conv1.bias";
inline const std::string scalp_conv2_w = "scalp.conv2.weight";
inline const std::string scalp_conv2_b = "scalp.conv2.bias";
inline const std::string scalp_fc_w = "scalp.fc.weight";
inline const std::string scalp_fc_b = "scalp.fc.bias";
inline const std::string topo_gcn1_w = "topo.gcn1.weight";
inline const std::string topo_gcn2_w = "topo.gcn2.weight";
inline const std::string topo_fc_w = "topo.fc.weight";
inline const std::string topo_fc_b = "topo.fc.bias";
inline const std::string decoder_hidden_w = "decoder.hidden.weight";
inline const std::string decoder_hidden_b = "decoder.hidden.bias";
inline const std::string decoder_out_w = "decoder.out.weight";
inline const std::string decoder_out_b = "decoder.out.bias";
inline const std::string log_sigma_s = "loss.log_sigma_s";
inline const std::string log_sigma_t = "loss.log_sigma_t";
inline const std::string log_sigma_pt = "loss.log_sigma_pt";
inline const std::string log_sigma_ce = "loss.log_sigma_ce";
}  // namespace param_names

/// Encoders, decoder (when n_classes > 0) and the four log-sigmas.
/// Weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases and log-sigmas 0.
ParameterSet init_params(std::uint64_t seed, const ModelDims& dims);
ParameterSet init_decoder_params(std::uint64_t seed, const ModelDims& dims);

/// Reads the dimensions back from parameter shapes.
ModelDims infer_dims(const ParameterSet& params);

bool is_encoder_param(const std::string& name);
bool is_decoder_param(const std::string& name);

/// Tape bindings for a ParameterSet. Parameters selected by `trainable`
/// become leaves, the rest constants.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params,
                  const std::function<bool(const std::string&)>& trainable = nullptr);

  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const;

  /// Replaces the binding of an existing parameter, e.g. with a probe leaf.
  void rebind(const std::string& name, Var v);

  /// Gradients of the trainable parameters after tape.backward().
  ParameterSet gradients() const;

 private:
  Tape* tape_;
  std::vector<std::pair<std::string, Var>> vars_;
  std::vector<bool> trainable_;
};

/// Differentiable scalp-view rendering, [B, c, 5] -> [B, 9, 9, 5]. Same values
/// as scalp_view_batch, expressed as a product with a 0/1 placement matrix.
Var render_scalp_views(Var features, const Montage& montage);

/// [B, 9, 9, 5] -> [B, h]
Var scalp_encode(Var scalp_views, const BoundParameters& p);

/// Node features after both graph layers: relu(L relu(L X W1) W2). [B, c, 5] -> [B, c, gcn2]
Var topo_node_features(Var features, Var laplacian, const BoundParameters& p);
/// [B, c, 5] -> [B, h]
Var topo_encode(Var features, Var laplacian, const BoundParameters& p);

/// Scalp representation first, then topology. [B, h] x [B, h] -> [B, 2h]
Var fuse(Var scalp, Var topo);
std::vector<double> fuse(const std::vector<double>& scalp, const std::vector<double>& topo);

/// fc -> relu -> fc. [B, 2h] -> [B, n_classes] logits
Var decode(Var fused, const BoundParameters& p);

/// Forward-only helpers on a throwaway tape.
Tensor scalp_encode(const Tensor& scalp_views, const ParameterSet& params);
Tensor topo_encode(const Tensor& features, const Tensor& laplacian, const ParameterSet& params);
Tensor decode(const Tensor& fused, const ParameterSet& params);

}  // namespace kdc2
