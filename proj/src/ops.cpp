#include "kdc2/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdc2/errors.hpp"

namespace kdc2 {
namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(const char* op, const std::string& expected, const Shape& got) {
  throw DimensionError(std::string(op) + ": expected " + expected + ", got " + to_string(got));
}

void require_same_tape(const char* op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::none;
  if (a.empty()) return Broadcast::left_scalar;
  if (b.empty()) return Broadcast::right_scalar;
  shape_error(op, a, b);
}

// Shared skeleton for elementwise binary ops. `f` computes the value,
// `da`/`db` the partial derivatives given (a, b).
template <typename F, typename DA, typename DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  require_same_tape(op, a, b);
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(op, av.shape(), bv.shape());
  const Shape out_shape = kind == Broadcast::left_scalar ? bv.shape() : av.shape();
  const std::size_t n = numel(out_shape);
  Tensor out(out_shape);
  auto aval = [&](std::size_t i) { return kind == Broadcast::left_scalar ? av[0] : av[i]; };
  auto bval = [&](std::size_t i) { return kind == Broadcast::right_scalar ? bv[0] : bv[i]; };
  for (std::size_t i = 0; i < n; ++i) out[i] = f(aval(i), bval(i));
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(op, std::move(out), {a, b}, [ia, ib, kind, n, da, db](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    auto aval = [&](std::size_t i) { return kind == Broadcast::left_scalar ? av[0] : av[i]; };
    auto bval = [&](std::size_t i) { return kind == Broadcast::right_scalar ? bv[0] : bv[i]; };
    if (t.wants_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) {
        ga[kind == Broadcast::left_scalar ? 0 : i] += g[i] * da(aval(i), bval(i));
      }
    }
    if (t.wants_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) {
        gb[kind == Broadcast::right_scalar ? 0 : i] += g[i] * db(aval(i), bval(i));
      }
    }
  });
}

template <typename F, typename D>
Var unary(const char* op, Var x, F f, D d) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t ix = x.id();
  return tape.record(op, std::move(out), {x}, [ix, d](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * d(xv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Var relu(Var x) {
  Tape& tape = x.tape();
  if (tape.requires_grad(x)) {
    double margin = std::numeric_limits<double>::infinity();
    for (double v : x.value().values()) margin = std::min(margin, std::abs(v));
    tape.note_kink(margin);
  }
  if (tape.tracing_branches()) {
    for (double v : x.value().values()) tape.note_branch(v > 0.0 ? 1 : 0);
  }
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
  const std::size_t ix = x.id();
  // exp' = exp, so backward reads this node's own output.
  const std::size_t iy = tape.size();
  return tape.record("exp", std::move(out), {x}, [ix, iy](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(iy);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < yv.size(); ++i) gx[i] += g[i] * yv[i];
  });
}

Var log(Var x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var sum(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const std::size_t ix = x.id();
  return tape.record("sum", Tensor::scalar(s), {x}, [ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_last_axis(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() < 1) shape_error("sum_last_axis", "rank >= 1", xv.shape());
  const std::size_t d = xv.shape().back();
  Shape out_shape(xv.shape().begin(), xv.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += xv[r * d + k];
    out[r] = s;
  }
  const std::size_t ix = x.id();
  return tape.record("sum_last_axis", std::move(out), {x}, [ix, d](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < g.size(); ++r) {
      for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += g[r];
    }
  });
}

Var logsumexp(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.size() == 0) throw DimensionError("logsumexp: empty tensor");
  const double mx = *std::max_element(xv.values().begin(), xv.values().end());
  double s = 0.0;
  for (double v : xv.values()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  const std::size_t ix = x.id();
  return tape.record("logsumexp", Tensor::scalar(lse), {x}, [ix, lse](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[0] * std::exp(xv[i] - lse);
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return tape.record("reshape", std::move(out), {x}, [ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var transpose(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2) shape_error("transpose", "rank 2", xv.shape());
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = xv[i * m + j];
  }
  const std::size_t ix = x.id();
  return tape.record("transpose", std::move(out), {x}, [ix, n, m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  Tape& tape = parts.front().tape();
  const Shape& first = parts.front().shape();
  if (first.empty()) shape_error("concat", "rank >= 1", first);
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw ContractError("concat: operands live on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      shape_error("concat", first, s);
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.raw() + r * widths[k], widths[k], out.raw() + r * total + offset);
    }
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return tape.record("concat", std::move(out), parts, [ids, widths, rows, total](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.wants_grad(ids[k])) {
        Tensor& gp = t.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * total + offset + c];
        }
      }
      offset += widths[k];
    }
  });
}

namespace {

// out[n,m] += a[n,k] * b[k,m]
void gemm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

// ga[n,k] += g[n,m] * b[k,m]^T
void gemm_nt(const double* g, const double* b, double* ga, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      ga[i * k + p] += s;
    }
  }
}

// gb[k,m] += a[n,k]^T * g[n,m]
void gemm_tn(const double* a, const double* g, double* gb, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* grow = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* brow = gb + p * m;
      for (std::size_t j = 0; j < m; ++j) brow[j] += av * grow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out({n, m});
  gemm_nn(av.raw(), bv.raw(), out.raw(), n, k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("matmul", std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, const Tensor& g) {
    if (t.wants_grad(ia)) gemm_nt(g.raw(), t.value(ib).raw(), t.grad_buffer(ia).raw(), n, k, m);
    if (t.wants_grad(ib)) gemm_tn(t.value(ia).raw(), g.raw(), t.grad_buffer(ib).raw(), n, k, m);
  });
}

Var linear(Var x, Var w, Var b) {
  require_same_tape("linear", x, w);
  require_same_tape("linear", x, b);
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) shape_error("linear", xv.shape(), wv.shape());
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) shape_error("linear", wv.shape(), bv.shape());
  const std::size_t n = xv.dim(0), k = xv.dim(1), m = wv.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(bv.raw(), m, out.raw() + i * m);
  gemm_nn(xv.raw(), wv.raw(), out.raw(), n, k, m);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return tape.record("linear", std::move(out), {x, w, b}, [ix, iw, ib, n, k, m](Tape& t, const Tensor& g) {
    if (t.wants_grad(ix)) gemm_nt(g.raw(), t.value(iw).raw(), t.grad_buffer(ix).raw(), n, k, m);
    if (t.wants_grad(iw)) gemm_tn(t.value(ix).raw(), g.raw(), t.grad_buffer(iw).raw(), n, k, m);
    if (t.wants_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    }
  });
}

Var conv2d(Var x, Var w, Var b) {
  require_same_tape("conv2d", x, w);
  require_same_tape("conv2d", x, b);
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 4) shape_error("conv2d", "input [B,H,W,C]", xv.shape());
  if (wv.rank() != 4 || wv.dim(2) != xv.dim(3)) shape_error("conv2d", xv.shape(), wv.shape());
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(3)) shape_error("conv2d", wv.shape(), bv.shape());
  const std::size_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const std::size_t KH = wv.dim(0), KW = wv.dim(1), O = wv.dim(3);
  if (H < KH || W < KW) shape_error("conv2d", xv.shape(), wv.shape());
  const std::size_t OH = H - KH + 1, OW = W - KW + 1;
  Tensor out({B, OH, OW, O});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double* orow = out.raw() + ((n * OH + oy) * OW + ox) * O;
        std::copy_n(bv.raw(), O, orow);
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double* in = xv.raw() + ((n * H + oy + ky) * W + ox + kx) * C;
            const double* wk = wv.raw() + (ky * KW + kx) * C * O;
            for (std::size_t ci = 0; ci < C; ++ci) {
              const double v = in[ci];
              if (v == 0.0) continue;
              const double* wrow = wk + ci * O;
              for (std::size_t o = 0; o < O; ++o) orow[o] += v * wrow[o];
            }
          }
        }
      }
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return tape.record("conv2d", std::move(out), {x, w, b},
                     [=](Tape& t, const Tensor& g) {
                       const Tensor& xv = t.value(ix);
                       const Tensor& wv = t.value(iw);
                       const bool want_x = t.wants_grad(ix), want_w = t.wants_grad(iw);
                       double* gx = want_x ? t.grad_buffer(ix).raw() : nullptr;
                       double* gw = want_w ? t.grad_buffer(iw).raw() : nullptr;
                       if (t.wants_grad(ib)) {
                         Tensor& gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < B * OH * OW; ++i) {
                           for (std::size_t o = 0; o < O; ++o) gb[o] += g[i * O + o];
                         }
                       }
                       if (!want_x && !want_w) return;
                       for (std::size_t n = 0; n < B; ++n) {
                         for (std::size_t oy = 0; oy < OH; ++oy) {
                           for (std::size_t ox = 0; ox < OW; ++ox) {
                             const double* grow = g.raw() + ((n * OH + oy) * OW + ox) * O;
                             for (std::size_t ky = 0; ky < KH; ++ky) {
                               for (std::size_t kx = 0; kx < KW; ++kx) {
                                 const std::size_t in_off = ((n * H + oy + ky) * W + ox + kx) * C;
                                 const std::size_t w_off = (ky * KW + kx) * C * O;
                                 for (std::size_t ci = 0; ci < C; ++ci) {
                                   const double* wrow = wv.raw() + w_off + ci * O;
                                   if (want_x) {
                                     double s = 0.0;
                                     for (std::size_t o = 0; o < O; ++o) s += wrow[o] * grow[o];
                                     gx[in_off + ci] += s;
                                   }
                                   if (want_w) {
                                     const double v = xv[in_off + ci];
                                     if (v == 0.0) continue;
                                     double* gwrow = gw + w_off + ci * O;
                                     for (std::size_t o = 0; o < O; ++o) gwrow[o] += v * grow[o];
                                   }
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

Var max_pool2x2(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 4) shape_error("max_pool2x2", "input [B,H,W,C]", xv.shape());
  const std::size_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (H < 2 || W < 2) shape_error("max_pool2x2", "H, W >= 2", xv.shape());
  const std::size_t OH = H / 2, OW = W / 2;
  Tensor out({B, OH, OW, C});
  std::vector<std::size_t> winner(out.size());
  const bool track = tape.requires_grad(x);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = 0;
          double best_v = -std::numeric_limits<double>::infinity();
          double runner_up = -std::numeric_limits<double>::infinity();
          // Row-major window scan visits flat indices in increasing order.
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((n * H + 2 * oy + dy) * W + 2 * ox + dx) * C + c;
              const double v = xv[idx];
              if (v > best_v) {
                runner_up = best_v;
                best_v = v;
                best = idx;
              } else if (v > runner_up) {
                runner_up = v;
              }
            }
          }
          const std::size_t o = ((n * OH + oy) * OW + ox) * C + c;
          out[o] = best_v;
          winner[o] = best;
          if (track) margin = std::min(margin, best_v - runner_up);
          if (tape.tracing_branches()) tape.note_branch(best);
        }
      }
    }
  }
  if (track) tape.note_kink(margin);
  const std::size_t ix = x.id();
  return tape.record("max_pool2x2", std::move(out), {x}, [ix, winner = std::move(winner)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t o = 0; o < winner.size(); ++o) gx[winner[o]] += g[o];
  });
}

Var graph_propagate(Var a, Var x) {
  require_same_tape("graph_propagate", a, x);
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  if (av.rank() != 2 || av.dim(0) != av.dim(1)) shape_error("graph_propagate", "square operator", av.shape());
  if (xv.rank() != 3 || xv.dim(1) != av.dim(0)) shape_error("graph_propagate", av.shape(), xv.shape());
  const std::size_t B = xv.dim(0), c = xv.dim(1), F = xv.dim(2);
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < B; ++n) {
    gemm_nn(av.raw(), xv.raw() + n * c * F, out.raw() + n * c * F, c, c, F);
  }
  const std::size_t ia = a.id(), ix = x.id();
  return tape.record("graph_propagate", std::move(out), {a, x}, [ia, ix, B, c, F](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& xv = t.value(ix);
    for (std::size_t n = 0; n < B; ++n) {
      const double* gn = g.raw() + n * c * F;
      if (t.wants_grad(ix)) gemm_tn(av.raw(), gn, t.grad_buffer(ix).raw() + n * c * F, c, c, F);
      if (t.wants_grad(ia)) gemm_nt(gn, xv.raw() + n * c * F, t.grad_buffer(ia).raw(), c, c, F);
    }
  });
}

Var row_norms(Var x, double floor) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2) shape_error("row_norms", "rank 2", xv.shape());
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({n});
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += xv[i * d + k] * xv[i * d + k];
    raw[i] = std::sqrt(s);
    out[i] = std::max(raw[i], floor);
  }
  const std::size_t ix = x.id();
  return tape.record("row_norms", std::move(out), {x}, [ix, n, d, floor, raw](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) {
      if (raw[i] <= floor) continue;
      for (std::size_t k = 0; k < d; ++k) gx[i * d + k] += g[i] * xv[i * d + k] / raw[i];
    }
  });
}

Var l2_normalize_rows(Var x, double floor) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2) shape_error("l2_normalize_rows", "rank 2", xv.shape());
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out(xv.shape());
  std::vector<double> norms(n);
  std::vector<bool> floored(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += xv[i * d + k] * xv[i * d + k];
    const double norm = std::sqrt(s);
    floored[i] = norm <= floor;
    norms[i] = floored[i] ? floor : norm;
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = xv[i * d + k] / norms[i];
  }
  const std::size_t ix = x.id();
  const std::size_t iy = tape.size();
  return tape.record("l2_normalize_rows", std::move(out), {x}, [ix, iy, n, d, norms, floored](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(iy);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) {
      const double* yr = yv.raw() + i * d;
      const double* gr = g.raw() + i * d;
      double dot = 0.0;
      if (!floored[i]) {
        for (std::size_t k = 0; k < d; ++k) dot += yr[k] * gr[k];
      }
      for (std::size_t k = 0; k < d; ++k) gx[i * d + k] += (gr[k] - yr[k] * dot) / norms[i];
    }
  });
}

Var cosine_similarity_rows(Var a, Var b, double floor) {
  if (a.shape() != b.shape()) shape_error("cosine_similarity_rows", a.shape(), b.shape());
  return sum_last_axis(mul(l2_normalize_rows(a, floor), l2_normalize_rows(b, floor)));
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = logits.tape();
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) shape_error("softmax_cross_entropy", "logits [B,K]", lv.shape());
  const std::size_t B = lv.dim(0), K = lv.dim(1);
  if (labels.size() != B) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(lv.shape()));
  }
  if (B == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  std::vector<double> probs(B * K);
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(K) + ")");
    }
    const double* row = lv.raw() + i * K;
    const double mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    const double log_z = mx + std::log(s);
    for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(row[k] - log_z);
    total += log_z - row[labels[i]];
  }
  std::vector<int> y(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return tape.record("softmax_cross_entropy", Tensor::scalar(total / static_cast<double>(B)), {logits},
                     [il, B, K, probs = std::move(probs), y = std::move(y)](Tape& t, const Tensor& g) {
                       Tensor& gl = t.grad_buffer(il);
                       const double w = g[0] / static_cast<double>(B);
                       for (std::size_t i = 0; i < B; ++i) {
                         for (std::size_t k = 0; k < K; ++k) {
                           const double target = static_cast<int>(k) == y[i] ? 1.0 : 0.0;
                           gl[i * K + k] += w * (probs[i * K + k] - target);
                         }
                       }
                     });
}

}  // namespace kdc2
