#include "kdc2/encoders.hpp"

#include <cmath>
#include <random>

#include "kdc2/errors.hpp"
#include "kdc2/ops.hpp"
#include "kdc2/signal.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {
namespace {

namespace pn = param_names;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// Each tensor draws from its own stream so subsets (e.g. a fresh decoder) match
// the corresponding slice of a full initialization.
Tensor glorot(std::uint64_t seed, const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

void add_decoder(ParameterSet& p, std::uint64_t seed, const ModelDims& d) {
  const std::size_t in = 2 * d.representation;
  p.set(pn::decoder_hidden_w, glorot(seed, pn::decoder_hidden_w, {in, d.decoder_hidden}, in, d.decoder_hidden));
  p.set(pn::decoder_hidden_b, Tensor({d.decoder_hidden}));
  p.set(pn::decoder_out_w,
        glorot(seed, pn::decoder_out_w, {d.decoder_hidden, d.n_classes}, d.decoder_hidden, d.n_classes));
  p.set(pn::decoder_out_b, Tensor({d.n_classes}));
}

}  // namespace

void ModelDims::validate() const {
  if (channels == 0) throw ValidationError("model: channel count must be positive");
  if (channels > kGridSize * kGridSize) throw ValidationError("model: more than 81 channels");
  if (representation == 0 || conv1 == 0 || conv2 == 0 || gcn1 == 0 || gcn2 == 0 || decoder_hidden == 0) {
    throw ValidationError("model: layer widths must be positive");
  }
}

ParameterSet init_params(std::uint64_t seed, const ModelDims& d) {
  d.validate();
  const std::size_t h = d.representation;
  ParameterSet p;
  p.set(pn::scalp_conv1_w, glorot(seed, pn::scalp_conv1_w, {2, 2, kBandCount, d.conv1}, 4 * kBandCount, 4 * d.conv1));
  p.set(pn::scalp_conv1_b, Tensor({d.conv1}));
  p.set(pn::scalp_conv2_w, glorot(seed, pn::scalp_conv2_w, {2, 2, d.conv1, d.conv2}, 4 * d.conv1, 4 * d.conv2));
  p.set(pn::scalp_conv2_b, Tensor({d.conv2}));
  p.set(pn::scalp_fc_w, glorot(seed, pn::scalp_fc_w, {d.conv2, h}, d.conv2, h));
  p.set(pn::scalp_fc_b, Tensor({h}));
  p.set(pn::topo_gcn1_w, glorot(seed, pn::topo_gcn1_w, {kBandCount, d.gcn1}, kBandCount, d.gcn1));
  p.set(pn::topo_gcn2_w, glorot(seed, pn::topo_gcn2_w, {d.gcn1, d.gcn2}, d.gcn1, d.gcn2));
  p.set(pn::topo_fc_w, glorot(seed, pn::topo_fc_w, {d.channels * d.gcn2, h}, d.channels * d.gcn2, h));
  p.set(pn::topo_fc_b, Tensor({h}));
  if (d.n_classes > 0) add_decoder(p, seed, d);
  p.set(pn::log_sigma_s, Tensor::scalar(0.0));
  p.set(pn::log_sigma_t, Tensor::scalar(0.0));
  p.set(pn::log_sigma_pt, Tensor::scalar(0.0));
  p.set(pn::log_sigma_ce, Tensor::scalar(0.0));
  return p;
}

ParameterSet init_decoder_params(std::uint64_t seed, const ModelDims& d) {
  d.validate();
  if (d.n_classes == 0) throw ValidationError("model: decoder needs at least one class");
  ParameterSet p;
  add_decoder(p, seed, d);
  return p;
}

ModelDims infer_dims(const ParameterSet& p) {
  ModelDims d;
  const Tensor& c1 = p.get(pn::scalp_conv1_w);
  const Tensor& c2 = p.get(pn::scalp_conv2_w);
  const Tensor& g1 = p.get(pn::topo_gcn1_w);
  const Tensor& g2 = p.get(pn::topo_gcn2_w);
  const Tensor& tfc = p.get(pn::topo_fc_w);
  d.conv1 = c1.dim(3);
  d.conv2 = c2.dim(3);
  d.gcn1 = g1.dim(1);
  d.gcn2 = g2.dim(1);
  d.representation = tfc.dim(1);
  d.channels = tfc.dim(0) / d.gcn2;
  if (p.contains(pn::decoder_out_w)) {
    d.decoder_hidden = p.get(pn::decoder_hidden_w).dim(1);
    d.n_classes = p.get(pn::decoder_out_w).dim(1);
  } else {
    d.n_classes = 0;
  }
  return d;
}

bool is_encoder_param(const std::string& name) { return name.starts_with("scalp.") || name.starts_with("topo."); }
bool is_decoder_param(const std::string& name) { return name.starts_with("decoder."); }

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params,
                                 const std::function<bool(const std::string&)>& trainable)
    : tape_(&tape) {
  for (const auto& [name, value] : params.entries()) {
    const bool train = trainable && trainable(name);
    vars_.emplace_back(name, train ? tape.leaf(value) : tape.constant(value));
    trainable_.push_back(train);
  }
}

Var BoundParameters::operator[](const std::string& name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return v;
  }
  throw LookupError("no parameter named '" + name + "' bound to the tape");
}

bool BoundParameters::contains(const std::string& name) const {
  for (const auto& e : vars_) {
    if (e.first == name) return true;
  }
  return false;
}

void BoundParameters::rebind(const std::string& name, Var v) {
  for (auto& [n, var] : vars_) {
    if (n == name) {
      if (var.shape() != v.shape()) {
        throw DimensionError("rebind '" + name + "': shape " + to_string(v.shape()) + " for " + to_string(var.shape()));
      }
      var = v;
      return;
    }
  }
  throw LookupError("no parameter named '" + name + "' bound to the tape");
}

ParameterSet BoundParameters::gradients() const {
  ParameterSet out;
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (trainable_[i]) out.set(vars_[i].first, tape_->grad(vars_[i].second));
  }
  return out;
}

Var render_scalp_views(Var features, const Montage& montage) {
  const Shape& s = features.shape();
  if (s.size() != 3 || s[1] != montage.channels() || s[2] != kBandCount) {
    throw DimensionError("render_scalp_views: expected [B," + std::to_string(montage.channels()) + ",5], got " +
                         to_string(s));
  }
  const std::size_t c = s[1], cells = kGridSize * kGridSize * kBandCount;
  Tensor place({c * kBandCount, cells});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto& e = montage.electrodes()[ch];
    for (std::size_t b = 0; b < kBandCount; ++b) place[(ch * kBandCount + b) * cells + (e.row * kGridSize + e.col) * kBandCount + b] = 1.0;
  }
  Var flat = reshape(features, {s[0], c * kBandCount});
  Var grid = matmul(flat, features.tape().constant(std::move(place)));
  return reshape(grid, {s[0], kGridSize, kGridSize, kBandCount});
}

Var scalp_encode(Var x, const BoundParameters& p) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != kGridSize || s[2] != kGridSize || s[3] != kBandCount) {
    throw DimensionError("scalp_encode: expected [B,9,9,5], got " + to_string(s));
  }
  if (s[0] == 0) throw DimensionError("scalp_encode: empty batch");
  Var y = max_pool2x2(relu(conv2d(x, p[pn::scalp_conv1_w], p[pn::scalp_conv1_b])));
  y = max_pool2x2(relu(conv2d(y, p[pn::scalp_conv2_w], p[pn::scalp_conv2_b])));
  const Shape& ys = y.shape();
  y = reshape(y, {ys[0], ys[1] * ys[2] * ys[3]});
  return linear(y, p[pn::scalp_fc_w], p[pn::scalp_fc_b]);
}

Var topo_node_features(Var x, Var laplacian, const BoundParameters& p) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != kBandCount) throw DimensionError("topo_encode: expected [B,c,5], got " + to_string(s));
  if (s[0] == 0) throw DimensionError("topo_encode: empty batch");
  if (laplacian.shape() != Shape{s[1], s[1]}) {
    throw DimensionError("topo_encode: graph of shape " + to_string(laplacian.shape()) + " for " +
                         std::to_string(s[1]) + " channels");
  }
  const std::size_t B = s[0], c = s[1];
  auto layer = [&](Var g, const std::string& weight) {
    const std::size_t in = g.shape()[2];
    Var w = p[weight];
    // (L g) W == L (g W); apply W on the flattened node axis, then mix nodes.
    Var gw = reshape(matmul(reshape(g, {B * c, in}), w), {B, c, w.shape()[1]});
    return relu(graph_propagate(laplacian, gw));
  };
  return layer(layer(x, pn::topo_gcn1_w), pn::topo_gcn2_w);
}

Var topo_encode(Var x, Var laplacian, const BoundParameters& p) {
  Var nodes = topo_node_features(x, laplacian, p);
  const Shape& s = nodes.shape();
  return linear(reshape(nodes, {s[0], s[1] * s[2]}), p[pn::topo_fc_w], p[pn::topo_fc_b]);
}

Var fuse(Var scalp, Var topo) {
  if (scalp.shape() != topo.shape()) {
    throw DimensionError("fuse: representation shapes " + to_string(scalp.shape()) + " and " +
                         to_string(topo.shape()) + " differ");
  }
  return concat({scalp, topo});
}

std::vector<double> fuse(const std::vector<double>& scalp, const std::vector<double>& topo) {
  if (scalp.size() != topo.size()) {
    throw DimensionError("fuse: representation lengths " + std::to_string(scalp.size()) + " and " +
                         std::to_string(topo.size()) + " differ");
  }
  std::vector<double> out(scalp);
  out.insert(out.end(), topo.begin(), topo.end());
  return out;
}

Var decode(Var fused, const BoundParameters& p) {
  Var hidden = relu(linear(fused, p[pn::decoder_hidden_w], p[pn::decoder_hidden_b]));
  return linear(hidden, p[pn::decoder_out_w], p[pn::decoder_out_b]);
}

Tensor scalp_encode(const Tensor& scalp_views, const ParameterSet& params) {
  Tape tape;
  BoundParameters p(tape, params);
  return scalp_encode(tape.constant(scalp_views), p).value();
}

Tensor topo_encode(const Tensor& features, const Tensor& laplacian, const ParameterSet& params) {
  Tape tape;
  BoundParameters p(tape, params);
  return topo_encode(tape.constant(features), tape.constant(laplacian), p).value();
}

Tensor decode(const Tensor& fused, const ParameterSet& params) {
  Tape tape;
  BoundParameters p(tape, params);
  return decode(tape.constant(fused), p).value();
}

}  // namespace kdc2
