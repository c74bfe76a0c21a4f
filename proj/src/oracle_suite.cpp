#include "kdc2/oracle_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "kdc2/augment.hpp"
#include "kdc2/encoders.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/grad_check.hpp"
#include "kdc2/objectives.hpp"
#include "kdc2/ops.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {
namespace {

namespace pn = param_names;

using Reports = std::vector<GradCheckReport>;

Tensor normal(Shape shape, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::vector<Tensor> rep_set(std::size_t m, std::size_t B, std::size_t h, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(normal({B, h}, rng));
  return out;
}

std::vector<int> random_labels(std::size_t B, std::size_t K, Rng& rng) {
  std::uniform_int_distribution<int> dist(0, static_cast<int>(K) - 1);
  std::vector<int> out(B);
  for (auto& l : out) l = dist(rng);
  return out;
}

/// Binds `reps` as constants, except entry `probe` which becomes `x`.
std::vector<Var> bind_reps(Tape& t, const std::vector<Tensor>& reps, std::size_t probe, Var x) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < reps.size(); ++i) out.push_back(i == probe ? x : t.constant(reps[i]));
  return out;
}

constexpr std::size_t kNoProbe = static_cast<std::size_t>(-1);

ParameterSet random_params(Rng& rng, const ModelDims& dims) {
  ParameterSet p = init_params(rng(), dims);
  for (const auto& name : p.names()) {
    Tensor& t = p.get(name);
    if (name.ends_with(".bias")) t = normal(t.shape(), rng, 0.1);
    if (name.starts_with("loss.")) t = Tensor::scalar(uniform(rng, -0.5, 0.5));
  }
  return p;
}

struct Context {
  OracleSuiteOptions o;
  GradCheckOptions gc;
  Montage montage;
  TopologyGraph graph;
  ModelDims dims;
};

Reports check_barlow_twins(Rng& rng, const Context& c) {
  const auto reps = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  Reports out;
  for (std::size_t p = 0; p < reps.size(); ++p) {
    out.push_back(grad_check(
        [&](Tape& t, Var x) { return barlow_twins_loss(cross_correlation(bind_reps(t, reps, p, x))); }, reps[p],
        c.gc));
  }
  return out;
}

template <typename Loss>
Reports check_two_view(Rng& rng, const Context& c, Loss loss) {
  const auto scalp = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  const auto topo = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  Reports out;
  for (std::size_t view = 0; view < 2; ++view) {
    for (std::size_t p = 0; p < scalp.size(); ++p) {
      const Tensor& at = view == 0 ? scalp[p] : topo[p];
      out.push_back(grad_check(
          [&](Tape& t, Var x) {
            return loss(bind_reps(t, scalp, view == 0 ? p : kNoProbe, x),
                        bind_reps(t, topo, view == 1 ? p : kNoProbe, x));
          },
          at, c.gc));
    }
  }
  return out;
}

Reports check_inner_view(Rng& rng, const Context& c) {
  return check_two_view(rng, c, [](const std::vector<Var>& s, const std::vector<Var>& t) {
    return inner_view_loss(s, t);
  });
}

Reports check_cross_view(Rng& rng, const Context& c) {
  return check_two_view(rng, c, [](const std::vector<Var>& s, const std::vector<Var>& t) {
    return cross_view_infonce(s, t, 0.1);
  });
}

Reports check_pretrain_loss(Rng& rng, const Context& c) {
  const auto scalp = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  const auto topo = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  const Tensor ls = Tensor::scalar(uniform(rng, -0.5, 0.5));
  const Tensor lt = Tensor::scalar(uniform(rng, -0.5, 0.5));
  // probe: 0 log_sigma_s, 1 log_sigma_t, 2 scalp rep 0, 3 topo rep 0
  auto build = [&](Tape& t, Var x, int probe) {
    auto s = bind_reps(t, scalp, probe == 2 ? 0 : kNoProbe, x);
    auto v = bind_reps(t, topo, probe == 3 ? 0 : kNoProbe, x);
    return pretrain_loss(inner_view_loss(s, v), cross_view_infonce(s, v, 0.1), probe == 0 ? x : t.constant(ls),
                         probe == 1 ? x : t.constant(lt));
  };
  Reports out;
  const Tensor* at[] = {&ls, &lt, &scalp[0], &topo[0]};
  for (int probe = 0; probe < 4; ++probe) {
    out.push_back(grad_check([&](Tape& t, Var x) { return build(t, x, probe); }, *at[probe], c.gc));
  }
  return out;
}

Reports check_joint_loss(Rng& rng, const Context& c) {
  const std::size_t K = 3;
  const auto scalp = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  const auto topo = rep_set(c.o.augmentations, c.o.batch, c.o.representation, rng);
  const Tensor logits = normal({c.o.batch, K}, rng);
  const auto labels = random_labels(c.o.batch, K, rng);
  Tensor sig[4];
  for (auto& s : sig) s = Tensor::scalar(uniform(rng, -0.5, 0.5));
  // probe: 0 log_sigma_pt, 1 log_sigma_ce, 2 logits, 3 scalp rep 1
  auto build = [&](Tape& t, Var x, int probe) {
    auto s = bind_reps(t, scalp, probe == 3 ? 1 : kNoProbe, x);
    auto v = bind_reps(t, topo, kNoProbe, x);
    Var lpt = pretrain_loss(inner_view_loss(s, v), cross_view_infonce(s, v, 0.1), t.constant(sig[0]),
                            t.constant(sig[1]));
    Var ce = cross_entropy(probe == 2 ? x : t.constant(logits), labels);
    return joint_loss(lpt, ce, probe == 0 ? x : t.constant(sig[2]), probe == 1 ? x : t.constant(sig[3]));
  };
  Reports out;
  const Tensor* at[] = {&sig[2], &sig[3], &logits, &scalp[1]};
  for (int probe = 0; probe < 4; ++probe) {
    out.push_back(grad_check([&](Tape& t, Var x) { return build(t, x, probe); }, *at[probe], c.gc));
  }
  return out;
}

/// Probes the input and every parameter whose name starts with `prefix`.
template <typename Encode>
Reports check_encoder(Rng& rng, const Context& c, const std::string& prefix, const Tensor& input, Encode encode) {
  const ParameterSet params = random_params(rng, c.dims);
  const Tensor weights = normal({c.o.batch, c.o.representation}, rng);
  auto objective = [&](Tape& t, Var in, const BoundParameters& p) { return sum(mul(encode(t, in, p), t.constant(weights))); };
  Reports out;
  out.push_back(grad_check(
      [&](Tape& t, Var x) {
        BoundParameters p(t, params);
        return objective(t, x, p);
      },
      input, c.gc));
  for (const auto& [name, value] : params.entries()) {
    if (!name.starts_with(prefix)) continue;
    out.push_back(grad_check(
        [&, name = name](Tape& t, Var x) {
          BoundParameters p(t, params);
          p.rebind(name, x);
          return objective(t, t.constant(input), p);
        },
        value, c.gc));
  }
  return out;
}

Reports check_scalp_encoder(Rng& rng, const Context& c) {
  const Tensor views = normal({c.o.batch, kGridSize, kGridSize, kBandCount}, rng);
  return check_encoder(rng, c, "scalp.", views,
                       [](Tape&, Var in, const BoundParameters& p) { return scalp_encode(in, p); });
}

Reports check_topology_encoder(Rng& rng, const Context& c) {
  const Tensor features = normal({c.o.batch, c.o.channels, kBandCount}, rng);
  return check_encoder(rng, c, "topo.", features, [&](Tape& t, Var in, const BoundParameters& p) {
    return topo_encode(in, t.constant(c.graph.laplacian), p);
  });
}

Reports check_full_pipeline(Rng& rng, const Context& c) {
  const std::size_t K = c.dims.n_classes;
  const ParameterSet params = random_params(rng, c.dims);
  const Tensor features = normal({c.o.batch, c.o.channels, kBandCount}, rng);
  const auto labels = random_labels(c.o.batch, K, rng);
  // Channel masking is elementwise, so the augmented inputs stay differentiable.
  std::vector<Tensor> masks;
  for (std::size_t i = 0; i < c.o.augmentations; ++i) {
    Tensor mask({c.o.batch, c.o.channels, kBandCount});
    for (std::size_t b = 0; b < c.o.batch; ++b) {
      PreliminaryFeatures ones{Tensor::full({c.o.channels, kBandCount}, 1.0)};
      const auto masked = mask_channels(ones, 0.25, rng);
      std::copy(masked.values.raw(), masked.values.raw() + masked.values.size(),
                mask.raw() + b * c.o.channels * kBandCount);
    }
    masks.push_back(std::move(mask));
  }
  auto f = [&](Tape& t, Var x) {
    BoundParameters p(t, params);
    Var lap = t.constant(c.graph.laplacian);
    Var logits = decode(fuse(scalp_encode(render_scalp_views(x, c.montage), p), topo_encode(x, lap, p)), p);
    Var ce = cross_entropy(logits, labels);
    std::vector<Var> rs, rt;
    for (const auto& m : masks) {
      Var xi = mul(x, t.constant(m));
      rs.push_back(scalp_encode(render_scalp_views(xi, c.montage), p));
      rt.push_back(topo_encode(xi, lap, p));
    }
    Var lpt = pretrain_loss(inner_view_loss(rs, rt), cross_view_infonce(rs, rt, 0.1), p[pn::log_sigma_s],
                            p[pn::log_sigma_t]);
    return joint_loss(lpt, ce, p[pn::log_sigma_pt], p[pn::log_sigma_ce]);
  };
  return {grad_check(f, features, c.gc)};
}

struct Check {
  const char* name;
  Reports (*run)(Rng&, const Context&);
};

const std::vector<Check>& checks() {
  static const std::vector<Check> all = {
      {"barlow_twins", check_barlow_twins},
      {"inner_view", check_inner_view},
      {"cross_view_infonce", check_cross_view},
      {"pretrain_loss", check_pretrain_loss},
      {"joint_loss", check_joint_loss},
      {"scalp_encoder", check_scalp_encoder},
      {"topology_encoder", check_topology_encoder},
      {"full_pipeline", check_full_pipeline},
  };
  return all;
}

}  // namespace

std::vector<std::string> oracle_check_names() {
  std::vector<std::string> out;
  for (const auto& c : checks()) out.emplace_back(c.name);
  return out;
}

std::vector<OracleCheckResult> run_oracle_suite(const OracleSuiteOptions& options) {
  Context ctx;
  ctx.o = options;
  ctx.gc.step = options.step;
  ctx.gc.tolerance = options.tolerance;
  ctx.montage = default_montage("grid-demo-4");
  if (options.channels != ctx.montage.channels()) {
    throw ValidationError("oracle suite: the grid-demo-4 montage has 4 channels, asked for " +
                          std::to_string(options.channels));
  }
  ctx.graph = build_topology_graph(ctx.montage);
  ctx.dims.channels = options.channels;
  ctx.dims.representation = options.representation;
  ctx.dims.n_classes = 3;

  std::vector<OracleCheckResult> results;
  std::uint32_t index = 0;
  for (const auto& check : checks()) {
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      ++index};
    Rng rng(seq);
    OracleCheckResult r;
    r.name = check.name;
    bool ok = true;
    const std::size_t max_draws = 10 * options.instances + 10;
    for (std::size_t draws = 0; r.instances < options.instances && draws < max_draws; ++draws) {
      const Reports reports = check.run(rng, ctx);
      const bool crossed = std::any_of(reports.begin(), reports.end(),
                                       [](const GradCheckReport& g) { return g.branch_changes > 0; });
      if (crossed) {
        ++r.resampled;
        continue;
      }
      ++r.instances;
      for (const auto& g : reports) {
        r.gradients_checked += g.analytic.size();
        r.max_rel_error = std::max(r.max_rel_error, g.max_rel_error);
        ok = ok && g.passed;
      }
    }
    r.passed = ok && r.instances == options.instances;
    results.push_back(r);
  }
  return results;
}

}  // namespace kdc2
