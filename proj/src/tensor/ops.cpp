#include "sat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sat {

using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank_at_least(const Tensor& x, std::size_t r, const char* op) {
  if (x.rank() < r) {
    throw DimensionError(std::string(op) + ": expected rank >= " +
                         std::to_string(r) + ", got " + shape_str(x.shape()));
  }
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[M,K] += dC[M,N] * B[K,N]^T, via a transposed copy of B so the inner
// loop is a contiguous axpy like gemm_acc.
void gemm_acc_nt(const double* dc, const double* b, double* da, std::size_t m,
                 std::size_t k, std::size_t n) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_acc(dc, bt.data(), da, m, n, k);
}

// dB[K,N] += A[M,K]^T * dC[M,N]
void gemm_acc_tn(const double* a, const double* dc, double* db, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
    }
  }
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank_at_least(a, 2, "matmul");
  require_rank_at_least(b, 2, "matmul");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  const bool shared_b = bs.size() == 2;
  bool ok = bs[bs.size() - 2] == k;
  if (!shared_b) {
    ok = ok && as.size() == bs.size() &&
         std::equal(as.begin(), as.end() - 2, bs.begin());
  }
  if (!ok) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) +
                         " and " + shape_str(bs));
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  if (shared_b) {
    gemm_acc(ad, bd, out.data(), batch * m, k, n);
  } else {
    for (std::size_t t = 0; t < batch; ++t) {
      gemm_acc(ad + t * m * k, bd + t * k * n, out.data() + t * m * n, m, k, n);
    }
  }

  return make_result(
      std::move(out_shape), std::move(out), {a, b},
      [batch, m, k, n, shared_b](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        const double* g = self.grad.data();
        if (na.requires_grad) {
          double* ga = na.grad_buffer().data();
          if (shared_b) {
            gemm_acc_nt(g, nb.data.data(), ga, batch * m, k, n);
          } else {
            for (std::size_t t = 0; t < batch; ++t) {
              gemm_acc_nt(g + t * m * n, nb.data.data() + t * k * n,
                          ga + t * m * k, m, k, n);
            }
          }
        }
        if (nb.requires_grad) {
          double* gb = nb.grad_buffer().data();
          if (shared_b) {
            gemm_acc_tn(na.data.data(), g, gb, batch * m, k, n);
          } else {
            for (std::size_t t = 0; t < batch; ++t) {
              gemm_acc_tn(na.data.data() + t * m * k, g + t * m * n,
                          gb + t * k * n, m, k, n);
            }
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank_at_least(x, 2, "transpose");
  const auto& s = x.shape();
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t batch = x.numel() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        out[t * r * c + j * r + i] = xd[t * r * c + i * c + j];
      }
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [batch, r, c](Node& self) {
                       auto& gx = self.parents[0]->grad_buffer();
                       for (std::size_t t = 0; t < batch; ++t) {
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) {
                             gx[t * r * c + i * c + j] +=
                                 self.grad[t * r * c + j * r + i];
                           }
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_rank_at_least(x, 1, "add_row");
  const std::size_t d = x.shape().back();
  if (row.numel() != d) {
    throw DimensionError("add_row: row of shape " + shape_str(row.shape()) +
                         " does not fit " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  const double* rd = row.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + rd[i % d];
  return make_result(x.shape(), std::move(out), {x, row}, [d](Node& self) {
    Node& nx = *self.parents[0];
    Node& nr = *self.parents[1];
    if (nx.requires_grad) {
      auto& g = nx.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nr.requires_grad) {
      auto& g = nr.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    out[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& nx = *self.parents[0];
    auto& g = nx.grad_buffer();
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = nx.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor masked_softmax(const Tensor& logits, const Tensor& bias) {
  require_same_shape(logits, bias, "masked_softmax");
  require_rank_at_least(logits, 1, "masked_softmax");
  const std::size_t n = logits.shape().back();
  const std::size_t rows = n == 0 ? 0 : logits.numel() / n;
  std::vector<double> out(logits.numel(), 0.0);
  const double* ld = logits.data().data();
  const double* bd = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = ld + r * n;
    const double* b = bd + r * n;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (b[j] == kMasked) continue;
      any = true;
      mx = std::max(mx, l[j] + b[j]);
    }
    if (!any) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (b[j] == kMasked) continue;
      o[j] = std::exp(l[j] + b[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_result(
      logits.shape(), std::move(out), {logits, bias}, [n, rows](Node& self) {
        std::vector<double> dz(self.data.size());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.data.data() + r * n;
          const double* g = self.grad.data() + r * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
          for (std::size_t j = 0; j < n; ++j) dz[r * n + j] = y[j] * (g[j] - dot);
        }
        for (auto& p : self.parents) {
          if (!p->requires_grad) continue;
          auto& gp = p->grad_buffer();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += dz[i];
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps) {
  require_rank_at_least(x, 1, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || shift.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) +
                         " / shift " + shape_str(shift.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  if (d == 1 && eps <= 0.0) {
    throw std::domain_error(
        "layer_norm: last axis of size 1 with eps <= 0 divides by zero");
  }
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  const double* xd = x.data().data();
  const double* gd = gain.data().data();
  const double* sd = shift.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = xd + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += v[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (v[j] - mu) * (v[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (v[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gd[j] + sd[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, shift},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& nx = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& ns = *self.parents[2];
        const double* g = self.grad.data();
        if (ng.requires_grad) {
          auto& gg = ng.grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (ns.requires_grad) {
          auto& gs = ns.grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gs[i % d] += g[i];
        }
        if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[r * d + j] * ng.data[j];
              m1 += dxh;
              m2 += dxh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[r * d + j] * ng.data[j];
              gx[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding: table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(ids[r]) +
                           " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + ids[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table},
                     [d, rows = std::move(rows)](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t r = 0; r < rows.size(); ++r) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[rows[r] * d + j] += self.grad[r * d + j];
                         }
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t d = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != d) {
      throw DimensionError("concat_rows: cannot stack " + shape_str(p.shape()) +
                           " under " + shape_str(parts.front().shape()));
    }
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * d);
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return make_result({rows, d}, std::move(out), parts,
                     [sizes = std::move(sizes)](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (p.requires_grad) {
                           auto& g = p.grad_buffer();
                           for (std::size_t i = 0; i < sizes[k]; ++i) {
                             g[i] += self.grad[off + i];
                           }
                         }
                         off += sizes[k];
                       }
                     });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: cannot join " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t rows = a.dim(0);
  const std::size_t ca = a.dim(1);
  const std::size_t cb = b.dim(1);
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.data().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return make_result({rows, ca + cb}, std::move(out), {a, b},
                     [rows, ca, cb](Node& self) {
                       const std::size_t w = ca + cb;
                       Node& na = *self.parents[0];
                       Node& nb = *self.parents[1];
                       if (na.requires_grad) {
                         auto& g = na.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < ca; ++j) {
                             g[r * ca + j] += self.grad[r * w + j];
                           }
                         }
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < cb; ++j) {
                             g[r * cb + j] += self.grad[r * w + ca + j];
                           }
                         }
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() != 2 || start + count > x.dim(0)) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " +
                         shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  std::vector<double> out(x.data().begin() + static_cast<long>(start * d),
                          x.data().begin() + static_cast<long>((start + count) * d));
  return make_result({count, d}, std::move(out), {x},
                     [off = start * d](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         g[off + i] += self.grad[i];
                       }
                     });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) +
                         " into " + std::to_string(heads) + " heads");
  }
  const std::size_t n = x.dim(0);
  const std::size_t dh = x.dim(1) / heads;
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::copy_n(xd + i * heads * dh + h * dh, dh, out.data() + (h * n + i) * dh);
    }
  }
  return make_result({heads, n, dh}, std::move(out), {x},
                     [n, heads, dh](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           for (std::size_t j = 0; j < dh; ++j) {
                             g[i * heads * dh + h * dh + j] +=
                                 self.grad[(h * n + i) * dh + j];
                           }
                         }
                       }
                     });
}

Tensor merge_heads(const Tensor& x) {
  if (x.rank() != 3) {
    throw DimensionError("merge_heads: expected [H, N, dh], got " +
                         shape_str(x.shape()));
  }
  const std::size_t heads = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t dh = x.dim(2);
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(xd + (h * n + i) * dh, dh, out.data() + i * heads * dh + h * dh);
    }
  }
  return make_result({n, heads * dh}, std::move(out), {x},
                     [n, heads, dh](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t h = 0; h < heads; ++h) {
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < dh; ++j) {
                             g[(h * n + i) * dh + j] +=
                                 self.grad[i * heads * dh + h * dh + j];
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> step_mask) {
  if (logits.rank() != 2 || targets.size() != logits.numel() ||
      step_mask.size() != logits.dim(0)) {
    throw DimensionError("bce_with_logits: logits " + shape_str(logits.shape()) +
                         " with " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(step_mask.size()) +
                         " step flags");
  }
  const std::size_t steps = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  double active = 0.0;
  for (double m : step_mask) active += m;
  const double denom = std::max(active, 1.0);
  double total = 0.0;
  const double* x = logits.data().data();
  for (std::size_t t = 0; t < steps; ++t) {
    if (step_mask[t] == 0.0) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = x[t * classes + c];
      total += std::max(v, 0.0) - v * targets[t * classes + c] +
               std::log1p(std::exp(-std::abs(v)));
    }
  }
  std::vector<double> tgt(targets.begin(), targets.end());
  std::vector<double> mask(step_mask.begin(), step_mask.end());
  return make_result(
      {}, {total / denom}, {logits},
      [classes, denom, tgt = std::move(tgt), mask = std::move(mask)](Node& self) {
        Node& nx = *self.parents[0];
        auto& g = nx.grad_buffer();
        const double up = self.grad[0] / denom;
        for (std::size_t t = 0; t < mask.size(); ++t) {
          if (mask[t] == 0.0) continue;
          for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t i = t * classes + c;
            const double sig = 1.0 / (1.0 + std::exp(-nx.data[i]));
            g[i] += up * (sig - tgt[i]);
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> factor(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    factor[i] = uniform01(rng) < p ? 0.0 : keep;
    out[i] = x.at(i) * factor[i];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [factor = std::move(factor)](Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i] * factor[i];
                       }
                     });
}

Tensor relation_bias(const Tensor& beta, std::span<const double> mask,
                     std::span<const int> type_index, std::size_t heads,
                     std::size_t n) {
  const std::size_t total = heads * n * n;
  if (beta.rank() != 2 || beta.dim(0) != heads || mask.size() != total ||
      type_index.size() != total) {
    throw DimensionError("relation_bias: beta " + shape_str(beta.shape()) +
                         " incompatible with " + std::to_string(heads) +
                         " heads over " + std::to_string(n) + " tokens");
  }
  const std::size_t types = beta.dim(1);
  std::vector<double> out(mask.begin(), mask.end());
  std::vector<int> idx(type_index.begin(), type_index.end());
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t e = 0; e < n * n; ++e) {
      const std::size_t i = h * n * n + e;
      if (out[i] == kMasked || idx[i] < 0) continue;
      if (static_cast<std::size_t>(idx[i]) >= types) {
        throw DimensionError("relation_bias: type index out of range");
      }
      out[i] += beta.at(h * types + static_cast<std::size_t>(idx[i]));
    }
  }
  return make_result(
      {heads, n, n}, std::move(out), {beta},
      [heads, n, types, idx = std::move(idx)](Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t e = 0; e < n * n; ++e) {
            const std::size_t i = h * n * n + e;
            if (self.data[i] == kMasked || idx[i] < 0) continue;
            g[h * types + static_cast<std::size_t>(idx[i])] += self.grad[i];
          }
        }
      });
}

std::vector<double> log_softmax(std::span<const double> scores) {
  std::vector<double> out(scores.begin(), scores.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double v : out) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  for (double& v : out) v -= lse;
  return out;
}

}  // namespace sat
