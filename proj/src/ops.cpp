#include "imac/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imac/error.hpp"

namespace imac::ops {
namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
                       " and " + shape_to_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(a.shape()));
  }
}

Graph& graph_of(Var a) {
  if (!a.graph) throw ContractError("op applied to an unbound Var");
  return *a.graph;
}

void check_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("op operands belong to different graphs");
}

// b broadcasts over a when b's shape is a suffix of a's.
bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

enum class Binary { kAdd, kSub, kMul };

Var binary(const char* name, Binary kind, Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!broadcastable(av.shape(), bv.shape())) shape_error(name, av, bv);
  const std::size_t n = av.size();
  const std::size_t m = bv.size();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    const double y = bv[i % m];
    out[i] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
  }
  const int ia = a.id, ib = b.id;
  return graph_of(a).record(std::move(out), {ia, ib}, [ia, ib, kind, n, m](Graph& g, const Tensor& go) {
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      if (kind == Binary::kMul) {
        const Tensor& bv = g.value(ib);
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * bv[i % m];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      if (kind == Binary::kMul) {
        const Tensor& av = g.value(ia);
        for (std::size_t i = 0; i < n; ++i) gb[i % m] += go[i] * av[i];
      } else {
        const double sign = kind == Binary::kSub ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) gb[i % m] += sign * go[i];
      }
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) shape_error("matmul", av, bv);
  Tensor out({m, n});
  const double* A = av.values().data();
  const double* B = bv.values().data();
  double* C = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double x = A[i * k + t];
      if (x == 0.0) continue;
      const double* brow = B + t * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += x * brow[j];
    }
  }
  const int ia = a.id, ib = b.id;
  return graph_of(a).record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, const Tensor& go) {
    const double* G = go.values().data();
    if (g.requires_grad(ia)) {
      // dA = G * B^T
      const double* B = g.value(ib).values().data();
      double* GA = g.grad_buffer(ia).values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          const double* brow = B + t * n;
          const double* grow = G + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          GA[i * k + t] += s;
        }
      }
    }
    if (g.requires_grad(ib)) {
      // dB = A^T * G
      const double* A = g.value(ia).values().data();
      double* GB = g.grad_buffer(ib).values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          const double x = A[i * k + t];
          if (x == 0.0) continue;
          const double* grow = G + i * n;
          double* gbrow = GB + t * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_matrix("transpose", av);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia, m, n](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
  });
}

Var add(Var a, Var b) { return binary("add", Binary::kAdd, a, b); }
Var sub(Var a, Var b) { return binary("sub", Binary::kSub, a, b); }
Var mul(Var a, Var b) { return binary("mul", Binary::kMul, a, b); }

Var scale(Var a, double s) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia, s](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
  });
}

Var add_scalar(Var a, double s) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(ia);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (av[i] > 0.0) ga[i] += go[i];
  });
}

Var log_clamped(Var a, double floor) {
  if (!(floor > 0.0)) throw ContractError("log_clamped: floor must be positive");
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::log(std::max(av[i], floor));
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia, floor](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(ia);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (av[i] > floor) ga[i] += go[i] / av[i];
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  require_matrix("softmax_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.values().data() + i * n;
    double* o = out.values().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  const int ix = x.id;
  const int self = static_cast<int>(graph_of(x).size());
  return graph_of(x).record(std::move(out), {ix}, [ix, self, m, n](Graph& g, const Tensor& go) {
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (go[i * n + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_graph(x, gain);
  check_same_graph(x, bias);
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  require_matrix("layer_norm", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n) shape_error("layer_norm(gain)", xv, gain.value());
  if (bias.value().size() != n) shape_error("layer_norm(bias)", xv, bias.value());
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[i * n + j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return graph_of(x).record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, const Tensor& go) {
        if (g.requires_grad(ig)) {
          Tensor& gg = g.grad_buffer(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += go[i * n + j] * xhat[i * n + j];
        }
        if (g.requires_grad(ib)) {
          Tensor& gb = g.grad_buffer(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
        }
        if (g.requires_grad(ix)) {
          const Tensor& gv = g.value(ig);
          Tensor& gx = g.grad_buffer(ix);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_gh = 0.0, mean_ghx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = go[i * n + j] * gv[j];
              mean_gh += gh;
              mean_ghx += gh * xhat[i * n + j];
            }
            mean_gh *= inv_n;
            mean_ghx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = go[i * n + j] * gv[j];
              gx[i * n + j] += inv_std[i] * (gh - mean_gh - xhat[i * n + j] * mean_ghx);
            }
          }
        }
      });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  const int ia = a.id;
  return graph_of(a).record(Tensor::scalar(s), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var pick(Var a, std::size_t flat_index) {
  const Tensor& av = a.value();
  if (flat_index >= av.size()) {
    throw DimensionError("pick: index " + std::to_string(flat_index) + " outside " +
                         shape_to_string(av.shape()));
  }
  const int ia = a.id;
  return graph_of(a).record(Tensor::scalar(av[flat_index]), {ia},
                            [ia, flat_index](Graph& g, const Tensor& go) {
                              g.grad_buffer(ia)[flat_index] += go[0];
                            });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix("slice_rows", av);
  const std::size_t m = av.rows(), n = av.cols();
  if (begin >= end || end > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_to_string(av.shape()));
  }
  std::vector<double> v(av.values().begin() + begin * n, av.values().begin() + end * n);
  const int ia = a.id;
  return graph_of(a).record(Tensor({end - begin, n}, std::move(v)), {ia},
                            [ia, begin, n](Graph& g, const Tensor& go) {
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t i = 0; i < go.size(); ++i) ga[begin * n + i] += go[i];
                            });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix("slice_cols", av);
  const std::size_t m = av.rows(), n = av.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_to_string(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + begin + j];
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia, begin, m, n, w](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += go[i * w + j];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Graph& g0 = graph_of(parts[0]);
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    check_same_graph(parts[0], p);
    require_matrix("concat_rows", p.value());
    if (p.value().cols() != n) shape_error("concat_rows", parts[0].value(), p.value());
    ids.push_back(p.id);
    offsets.push_back(m * n);
    m += p.value().rows();
  }
  std::vector<double> v;
  v.reserve(m * n);
  for (const Var& p : parts) v.insert(v.end(), p.value().values().begin(), p.value().values().end());
  return g0.record(Tensor({m, n}, std::move(v)), ids, [ids, offsets](Graph& g, const Tensor& go) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.requires_grad(ids[k])) continue;
      Tensor& gp = g.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[offsets[k] + i];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Graph& g0 = graph_of(parts[0]);
  const std::size_t m = parts[0].value().rows();
  std::size_t n = 0;
  std::vector<int> ids;
  std::vector<std::size_t> col_off, widths;
  for (const Var& p : parts) {
    check_same_graph(parts[0], p);
    require_matrix("concat_cols", p.value());
    if (p.value().rows() != m) shape_error("concat_cols", parts[0].value(), p.value());
    ids.push_back(p.id);
    col_off.push_back(n);
    widths.push_back(p.value().cols());
    n += p.value().cols();
  }
  Tensor out({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * n + col_off[k] + j] = pv[i * widths[k] + j];
  }
  return g0.record(std::move(out), ids, [ids, col_off, widths, m, n](Graph& g, const Tensor& go) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.requires_grad(ids[k])) continue;
      Tensor& gp = g.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += go[i * n + col_off[k] + j];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const int ia = a.id;
  return graph_of(a).record(std::move(out), {ia}, [ia](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Var select_rows(const std::vector<bool>& take_b, Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("select_rows", av);
  if (av.shape() != bv.shape()) shape_error("select_rows", av, bv);
  const std::size_t m = av.rows(), n = av.cols();
  if (take_b.size() != m) {
    throw DimensionError("select_rows: mask has " + std::to_string(take_b.size()) + " rows, operands " +
                         shape_to_string(av.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const Tensor& src = take_b[i] ? bv : av;
    std::copy_n(src.values().begin() + i * n, n, out.values().begin() + i * n);
  }
  const int ia = a.id, ib = b.id;
  return graph_of(a).record(std::move(out), {ia, ib}, [ia, ib, take_b, m, n](Graph& g, const Tensor& go) {
    for (std::size_t i = 0; i < m; ++i) {
      const int target = take_b[i] ? ib : ia;
      if (!g.requires_grad(target)) continue;
      Tensor& gt = g.grad_buffer(target);
      for (std::size_t j = 0; j < n; ++j) gt[i * n + j] += go[i * n + j];
    }
  });
}

Var conv_rows(Var x, Var w) {
  check_same_graph(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_matrix("conv_rows", xv);
  require_matrix("conv_rows", wv);
  const std::size_t T = xv.rows(), M = xv.cols();
  const std::size_t K = wv.rows(), WM = wv.cols();
  if (WM != M && WM != 1) shape_error("conv_rows", xv, wv);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(K / 2);
  auto wcol = [WM](std::size_t m) { return WM == 1 ? 0 : m; };

  Tensor out({T, M});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - off;
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t m = 0; m < M; ++m) out[t * M + m] += wv[k * WM + wcol(m)] * xv[s * M + m];
    }
  }
  const int ix = x.id, iw = w.id;
  return graph_of(x).record(std::move(out), {ix, iw}, [=](Graph& g, const Tensor& go) {
    const Tensor& xv = g.value(ix);
    const Tensor& wv = g.value(iw);
    const bool gx_on = g.requires_grad(ix), gw_on = g.requires_grad(iw);
    Tensor* gx = gx_on ? &g.grad_buffer(ix) : nullptr;
    Tensor* gw = gw_on ? &g.grad_buffer(iw) : nullptr;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - off;
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t m = 0; m < M; ++m) {
          const double gval = go[t * M + m];
          if (gx) (*gx)[s * M + m] += gval * wv[k * WM + wcol(m)];
          if (gw) (*gw)[k * WM + wcol(m)] += gval * xv[s * M + m];
        }
      }
    }
  });
}

Var avg_pool_rows(Var x, std::size_t window) {
  const Tensor& xv = x.value();
  require_matrix("avg_pool_rows", xv);
  const std::size_t T = xv.rows(), M = xv.cols();
  if (window == 0 || T % window != 0) {
    throw DimensionError("avg_pool_rows: window " + std::to_string(window) + " does not tile " +
                         shape_to_string(xv.shape()));
  }
  const std::size_t R = T / window;
  const double inv = 1.0 / static_cast<double>(window);
  Tensor out({R, M});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t m = 0; m < M; ++m) out[(t / window) * M + m] += xv[t * M + m] * inv;
  const int ix = x.id;
  return graph_of(x).record(std::move(out), {ix}, [ix, T, M, window, inv](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t m = 0; m < M; ++m) gx[t * M + m] += go[(t / window) * M + m] * inv;
  });
}

Var cosine_similarity(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) shape_error("cosine_similarity", av, bv);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na += av[i] * av[i];
    nb += bv[i] * bv[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericalError("cosine_similarity: zero-norm operand");
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const double c = dot / (na * nb);
  const int ia = a.id, ib = b.id;
  return graph_of(a).record(Tensor::scalar(c), {ia, ib}, [=](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < av.size(); ++i)
        ga[i] += go[0] * (bv[i] / (na * nb) - c * av[i] / (na * na));
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < bv.size(); ++i)
        gb[i] += go[0] * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
    }
  });
}

}  // namespace imac::ops
