#include "mbatf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mbatf {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kEncoder:
      return "encoder";
    case Role::kDiscriminator:
      return "discriminator";
    case Role::kScorer:
      return "scorer";
  }
  return "unknown";
}

Role role_from_name(std::string_view name) {
  if (name == "encoder") return Role::kEncoder;
  if (name == "discriminator") return Role::kDiscriminator;
  if (name == "scorer") return Role::kScorer;
  throw ContractError("unknown parameter role '" + std::string(name) + "'");
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace

template <typename Real>
typename Tape<Real>::Var Tape<Real>::push(Tensor<Real> value, std::initializer_list<Var> inputs,
                                          std::function<void(Tape&, std::size_t)> backward) {
  Node node;
  node.value = std::move(value);
  for (Var v : inputs) node.requires_grad = node.requires_grad || needs(v);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

template <typename Real>
const Tensor<Real>& Tape<Real>::val(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param ? *n.param : n.value;
}

template <typename Real>
const Tensor<Real>& Tape<Real>::value(Var v) const {
  require(v.id_ < nodes_.size(), "tape: variable does not belong to this tape");
  return val(v.id_);
}

template <typename Real>
Real Tape<Real>::scalar(Var v) const {
  const auto& t = value(v);
  require(t.size() == 1, "tape: scalar() on tensor of shape " + shape_to_string(t.shape()));
  return t[0];
}

template <typename Real>
std::span<Real> Tape<Real>::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad();
  if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
  return n.grad;
}

template <typename Real>
void Tape<Real>::mix_signature(std::uint64_t bits) {
  signature_ ^= bits;
  signature_ *= 1099511628211ULL;
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::parameter(ParameterStore<Real>& store, const std::string& name) {
  Tensor<Real>& t = store.at(name);
  if (std::find(stores_.begin(), stores_.end(), &store) == stores_.end()) stores_.push_back(&store);
  Node node;
  node.param = &t;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::constant(Tensor<Real> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::gather_rows(Var table, std::span<const int> ids) {
  const auto& tv = val(table.id_);
  require(tv.rank() == 2, "gather_rows: table must be rank 2");
  const std::size_t rows = tv.dim(0);
  const std::size_t d = tv.dim(1);
  Tensor<Real> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return push(std::move(out), {table}, [table, idx = std::move(idx), d](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    auto gt = t.grad_of(table.id_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Real* dst = gt.data() + static_cast<std::size_t>(idx[i]) * d;
      const Real* src = g.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = val(parts[0].id_).dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const auto& v = val(p.id_);
    require(v.rank() == 2 && v.dim(0) == n, "concat_cols: inputs must be [n, d_i] with equal n");
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor<Real> out({n, total});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = val(parts[p].id_);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    }
    offset += widths[p];
  }
  Node node;
  node.value = std::move(out);
  for (Var p : parts) node.requires_grad = node.requires_grad || needs(p);
  if (node.requires_grad) {
    std::vector<Var> ins(parts.begin(), parts.end());
    node.backward = [ins, widths, n, total](Tape& t, std::size_t self) {
      auto g = t.grad_view(self);
      std::size_t off = 0;
      for (std::size_t p = 0; p < ins.size(); ++p) {
        if (t.needs(ins[p])) {
          auto gp = t.grad_of(ins[p].id_);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < widths[p]; ++j) gp[r * widths[p] + j] += g[r * total + off + j];
          }
        }
        off += widths[p];
      }
    };
  }
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::reshape(Var x, Shape shape) {
  Tensor<Real> out = val(x.id_);
  out.reshape(std::move(shape));
  return push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    auto gx = t.grad_of(x.id_);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::matmul(Var a, Var b) {
  const auto& av = val(a.id_);
  const auto& bv = val(b.id_);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: incompatible shapes " + shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<Real> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    Real* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = av[i * k + p];
      const Real* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return push(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    const auto& av = t.val(a.id_);
    const auto& bv = t.val(b.id_);
    if (t.needs(a)) {
      auto ga = t.grad_of(a.id_);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.needs(b)) {
      auto gb = t.grad_of(b.id_);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const Real aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::add_bias(Var x, Var bias) {
  const auto& xv = val(x.id_);
  const auto& bv = val(bias.id_);
  require(bv.rank() == 1 && xv.rank() >= 1 && xv.shape().back() == bv.dim(0),
          "add_bias: bias " + shape_to_string(bv.shape()) + " does not match " + shape_to_string(xv.shape()));
  const std::size_t n = bv.dim(0);
  Tensor<Real> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return push(std::move(out), {x, bias}, [x, bias, n](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    if (t.needs(x)) {
      auto gx = t.grad_of(x.id_);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.needs(bias)) {
      auto gb = t.grad_of(bias.id_);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::add(Var a, Var b) {
  const auto& av = val(a.id_);
  const auto& bv = val(b.id_);
  require(av.shape() == bv.shape(), "add: shape mismatch");
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    for (Var v : {a, b}) {
      if (!t.needs(v)) continue;
      auto gv = t.grad_of(v.id_);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::sub(Var a, Var b) {
  const auto& av = val(a.id_);
  const auto& bv = val(b.id_);
  require(av.shape() == bv.shape(), "sub: shape mismatch");
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    if (t.needs(a)) {
      auto ga = t.grad_of(a.id_);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(b)) {
      auto gb = t.grad_of(b.id_);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::mul(Var a, Var b) {
  const auto& av = val(a.id_);
  const auto& bv = val(b.id_);
  require(av.shape() == bv.shape(), "mul: shape mismatch");
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    const auto& av = t.val(a.id_);
    const auto& bv = t.val(b.id_);
    if (t.needs(a)) {
      auto ga = t.grad_of(a.id_);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs(b)) {
      auto gb = t.grad_of(b.id_);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::scale(Var x, Real factor) {
  Tensor<Real> out = val(x.id_);
  for (auto& v : out.values()) v *= factor;
  return push(std::move(out), {x}, [x, factor](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    auto gx = t.grad_of(x.id_);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::relu(Var x) {
  Tensor<Real> out = val(x.id_);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = out[i] > Real(0);
    if (!on) out[i] = Real(0);
    bits = (bits << 1) | static_cast<std::uint64_t>(on);
    if ((i & 63) == 63) {
      mix_signature(bits);
      bits = 0;
    }
  }
  mix_signature(bits);
  return push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    const auto& xv = t.val(x.id_);
    auto gx = t.grad_of(x.id_);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > Real(0)) gx[i] += g[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::square(Var x) {
  Tensor<Real> out = val(x.id_);
  for (auto& v : out.values()) v *= v;
  return push(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    const auto& xv = t.val(x.id_);
    auto gx = t.grad_of(x.id_);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += Real(2) * xv[i] * g[i];
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::sum(Var x) {
  const auto& xv = val(x.id_);
  Real acc = 0;
  for (Real v : xv.values()) acc += v;
  return push(Tensor<Real>({1}, {acc}), {x}, [x](Tape& t, std::size_t self) {
    const Real g = t.grad_view(self)[0];
    auto gx = t.grad_of(x.id_);
    for (auto& v : gx) v += g;
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::mean(Var x) {
  const auto& xv = val(x.id_);
  require(xv.size() > 0, "mean: empty tensor");
  Real acc = 0;
  for (Real v : xv.values()) acc += v;
  const Real inv = Real(1) / static_cast<Real>(xv.size());
  return push(Tensor<Real>({1}, {acc * inv}), {x}, [x, inv](Tape& t, std::size_t self) {
    const Real g = t.grad_view(self)[0] * inv;
    auto gx = t.grad_of(x.id_);
    for (auto& v : gx) v += g;
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::dot(Var a, Var b) {
  const auto& av = val(a.id_);
  const auto& bv = val(b.id_);
  require(av.size() == bv.size(), "dot: length mismatch");
  Real acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return push(Tensor<Real>({1}, {acc}), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Real g = t.grad_view(self)[0];
    const auto& av = t.val(a.id_);
    const auto& bv = t.val(b.id_);
    if (t.needs(a)) {
      auto ga = t.grad_of(a.id_);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
    }
    if (t.needs(b)) {
      auto gb = t.grad_of(b.id_);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::conv1d_same(Var x, Var weight, Var bias, std::span<const std::size_t> lengths) {
  const auto& xv = val(x.id_);
  const auto& wv = val(weight.id_);
  const auto& bv = val(bias.id_);
  require(xv.rank() == 3, "conv1d_same: input must be [B, L, C]");
  const std::size_t batch = xv.dim(0), len = xv.dim(1), cin = xv.dim(2);
  require(wv.rank() == 2 && wv.dim(1) % cin == 0, "conv1d_same: weight must be [Cout, window * Cin]");
  const std::size_t cout = wv.dim(0), window = wv.dim(1) / cin, span_w = wv.dim(1);
  require(window % 2 == 1, "conv1d_same: window must be odd");
  require(bv.rank() == 1 && bv.dim(0) == cout, "conv1d_same: bias must be [Cout]");
  require(lengths.size() == batch, "conv1d_same: one length per batch row required");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);

  std::vector<std::size_t> eff(batch);
  for (std::size_t b = 0; b < batch; ++b) eff[b] = std::clamp<std::size_t>(lengths[b], 1, len);

  // Window column for (b, t); zero outside [0, eff[b]).
  auto fill_col = [&xv, len, cin, window, half](std::size_t b, std::size_t t, std::size_t valid, Real* col) {
    for (std::size_t k = 0; k < window; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
      Real* dst = col + k * cin;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(valid)) {
        std::fill_n(dst, cin, Real(0));
      } else {
        std::copy_n(xv.data() + (b * len + static_cast<std::size_t>(src)) * cin, cin, dst);
      }
    }
  };

  Tensor<Real> out({batch, len, cout});
  std::vector<Real> col(span_w);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < eff[b]; ++t) {
      fill_col(b, t, eff[b], col.data());
      Real* o = out.data() + (b * len + t) * cout;
      for (std::size_t c = 0; c < cout; ++c) {
        const Real* w = wv.data() + c * span_w;
        Real acc = bv[c];
        for (std::size_t j = 0; j < span_w; ++j) acc += w[j] * col[j];
        o[c] = acc;
      }
    }
  }
  return push(std::move(out), {x, weight, bias},
              [x, weight, bias, eff, batch, len, cin, cout, window, span_w, half](Tape& t, std::size_t self) {
                auto g = t.grad_view(self);
                const auto& xv = t.val(x.id_);
                const auto& wv = t.val(weight.id_);
                const bool need_x = t.needs(x), need_w = t.needs(weight), need_b = t.needs(bias);
                std::span<Real> gx, gw, gb;
                if (need_x) gx = t.grad_of(x.id_);
                if (need_w) gw = t.grad_of(weight.id_);
                if (need_b) gb = t.grad_of(bias.id_);
                std::vector<Real> col(span_w), dcol(span_w);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t step = 0; step < eff[b]; ++step) {
                    const Real* go = g.data() + (b * len + step) * cout;
                    for (std::size_t k = 0; k < window; ++k) {
                      const std::ptrdiff_t src =
                          static_cast<std::ptrdiff_t>(step) + static_cast<std::ptrdiff_t>(k) - half;
                      const bool inside = src >= 0 && src < static_cast<std::ptrdiff_t>(eff[b]);
                      for (std::size_t c = 0; c < cin; ++c) {
                        col[k * cin + c] = inside ? xv[(b * len + static_cast<std::size_t>(src)) * cin + c] : Real(0);
                      }
                    }
                    std::fill(dcol.begin(), dcol.end(), Real(0));
                    for (std::size_t c = 0; c < cout; ++c) {
                      const Real gc = go[c];
                      if (gc == Real(0)) continue;
                      if (need_b) gb[c] += gc;
                      const Real* w = wv.data() + c * span_w;
                      if (need_w) {
                        Real* dw = gw.data() + c * span_w;
                        for (std::size_t j = 0; j < span_w; ++j) dw[j] += gc * col[j];
                      }
                      if (need_x) {
                        for (std::size_t j = 0; j < span_w; ++j) dcol[j] += gc * w[j];
                      }
                    }
                    if (!need_x) continue;
                    for (std::size_t k = 0; k < window; ++k) {
                      const std::ptrdiff_t src =
                          static_cast<std::ptrdiff_t>(step) + static_cast<std::ptrdiff_t>(k) - half;
                      if (src < 0 || src >= static_cast<std::ptrdiff_t>(eff[b])) continue;
                      Real* dx = gx.data() + (b * len + static_cast<std::size_t>(src)) * cin;
                      for (std::size_t c = 0; c < cin; ++c) dx[c] += dcol[k * cin + c];
                    }
                  }
                }
              });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::max_over_time(Var x, std::span<const std::size_t> lengths) {
  const auto& xv = val(x.id_);
  require(xv.rank() == 3, "max_over_time: input must be [B, L, C]");
  const std::size_t batch = xv.dim(0), len = xv.dim(1), ch = xv.dim(2);
  require(lengths.size() == batch, "max_over_time: one length per batch row required");
  Tensor<Real> out({batch, ch});
  std::vector<std::size_t> argmax(batch * ch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t valid = std::clamp<std::size_t>(lengths[b], 1, len);
    for (std::size_t c = 0; c < ch; ++c) {
      std::size_t best = 0;
      Real best_v = xv[(b * len) * ch + c];
      for (std::size_t step = 1; step < valid; ++step) {
        const Real v = xv[(b * len + step) * ch + c];
        if (v > best_v) {
          best_v = v;
          best = step;
        }
      }
      out[b * ch + c] = best_v;
      argmax[b * ch + c] = best;
      mix_signature(best);
    }
  }
  return push(std::move(out), {x}, [x, argmax = std::move(argmax), len, ch](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    auto gx = t.grad_of(x.id_);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t b = i / ch, c = i % ch;
      gx[(b * len + argmax[i]) * ch + c] += g[i];
    }
  });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::conv2d_column(Var x, Var weight, Var bias, std::size_t pad) {
  const auto& xv = val(x.id_);
  const auto& wv = val(weight.id_);
  const auto& bv = val(bias.id_);
  require(xv.rank() == 4, "conv2d_column: input must be [N, Cin, H, W]");
  require(wv.rank() == 3, "conv2d_column: weight must be [Cout, Cin, kh]");
  const std::size_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = wv.dim(0), kh = wv.dim(2);
  require(wv.dim(1) == cin, "conv2d_column: weight expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                                std::to_string(cin));
  require(bv.rank() == 1 && bv.dim(0) == cout, "conv2d_column: bias must be [Cout]");
  require(h + 2 * pad >= kh, "conv2d_column: kernel taller than padded input");
  const std::size_t hout = h + 2 * pad - kh + 1;

  Tensor<Real> out({n, cout, hout, w});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < cout; ++o) {
      Real* plane = out.data() + ((s * cout + o) * hout) * w;
      for (std::size_t i = 0; i < hout * w; ++i) plane[i] = bv[o];
      for (std::size_t c = 0; c < cin; ++c) {
        const Real* in = xv.data() + ((s * cin + c) * h) * w;
        for (std::size_t k = 0; k < kh; ++k) {
          const Real wk = wv[(o * cin + c) * kh + k];
          for (std::size_t r = 0; r < hout; ++r) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(r + k) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(h)) continue;
            const Real* in_row = in + static_cast<std::size_t>(src) * w;
            Real* out_row = plane + r * w;
            for (std::size_t col = 0; col < w; ++col) out_row[col] += wk * in_row[col];
          }
        }
      }
    }
  }
  return push(std::move(out), {x, weight, bias},
              [x, weight, bias, n, cin, h, w, cout, kh, pad, hout](Tape& t, std::size_t self) {
                auto g = t.grad_view(self);
                const auto& xv = t.val(x.id_);
                const auto& wv = t.val(weight.id_);
                const bool need_x = t.needs(x), need_w = t.needs(weight), need_b = t.needs(bias);
                std::span<Real> gx, gw, gb;
                if (need_x) gx = t.grad_of(x.id_);
                if (need_w) gw = t.grad_of(weight.id_);
                if (need_b) gb = t.grad_of(bias.id_);
                for (std::size_t s = 0; s < n; ++s) {
                  for (std::size_t o = 0; o < cout; ++o) {
                    const Real* gplane = g.data() + ((s * cout + o) * hout) * w;
                    if (need_b) {
                      for (std::size_t i = 0; i < hout * w; ++i) gb[o] += gplane[i];
                    }
                    for (std::size_t c = 0; c < cin; ++c) {
                      const std::size_t in_off = ((s * cin + c) * h) * w;
                      for (std::size_t k = 0; k < kh; ++k) {
                        const std::size_t widx = (o * cin + c) * kh + k;
                        const Real wk = wv[widx];
                        Real acc = 0;
                        for (std::size_t r = 0; r < hout; ++r) {
                          const std::ptrdiff_t src =
                              static_cast<std::ptrdiff_t>(r + k) - static_cast<std::ptrdiff_t>(pad);
                          if (src < 0 || src >= static_cast<std::ptrdiff_t>(h)) continue;
                          const std::size_t row = in_off + static_cast<std::size_t>(src) * w;
                          const Real* grow = gplane + r * w;
                          for (std::size_t col = 0; col < w; ++col) {
                            acc += grow[col] * xv[row + col];
                            if (need_x) gx[row + col] += wk * grow[col];
                          }
                        }
                        if (need_w) gw[widx] += acc;
                      }
                    }
                  }
                }
              });
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::weighted_sq_distance(Var x, Var centers, std::optional<Var> weights) {
  const auto& xv = val(x.id_);
  const auto& cv = val(centers.id_);
  require(xv.rank() == 2 && cv.rank() == 2 && xv.dim(1) == cv.dim(1),
          "weighted_sq_distance: x " + shape_to_string(xv.shape()) + " and centers " +
              shape_to_string(cv.shape()) + " must share width");
  const std::size_t batch = xv.dim(0), classes = cv.dim(0), d = xv.dim(1);
  const Tensor<Real>* wv = nullptr;
  if (weights) {
    wv = &val(weights->id_);
    require(wv->shape() == cv.shape(), "weighted_sq_distance: weights must match centers");
  }
  Tensor<Real> out({batch, classes});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < classes; ++r) {
      Real acc = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const Real diff = xv[b * d + i] - cv[r * d + i];
        acc += (wv ? (*wv)[r * d + i] : Real(1)) * diff * diff;
      }
      out[b * classes + r] = acc;
    }
  }
  const Var wvar = weights.value_or(Var());
  const bool has_w = weights.has_value();
  auto backward = [x, centers, wvar, has_w, batch, classes, d](Tape& t, std::size_t self) {
    auto g = t.grad_view(self);
    const auto& xv = t.val(x.id_);
    const auto& cv = t.val(centers.id_);
    const Tensor<Real>* wv = has_w ? &t.val(wvar.id_) : nullptr;
    const bool need_x = t.needs(x), need_c = t.needs(centers), need_w = has_w && t.needs(wvar);
    std::span<Real> gx, gc, gw;
    if (need_x) gx = t.grad_of(x.id_);
    if (need_c) gc = t.grad_of(centers.id_);
    if (need_w) gw = t.grad_of(wvar.id_);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < classes; ++r) {
        const Real gbr = g[b * classes + r];
        for (std::size_t i = 0; i < d; ++i) {
          const Real diff = xv[b * d + i] - cv[r * d + i];
          const Real wi = wv ? (*wv)[r * d + i] : Real(1);
          const Real dd = Real(2) * wi * diff * gbr;
          if (need_x) gx[b * d + i] += dd;
          if (need_c) gc[r * d + i] -= dd;
          if (need_w) gw[r * d + i] += diff * diff * gbr;
        }
      }
    }
  };
  if (has_w) return push(std::move(out), {x, centers, wvar}, std::move(backward));
  return push(std::move(out), {x, centers}, std::move(backward));
}

template <typename Real>
typename Tape<Real>::Var Tape<Real>::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const auto& lv = val(logits.id_);
  require(lv.rank() == 2, "softmax_cross_entropy: logits must be [B, C]");
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  require(batch > 0, "softmax_cross_entropy: empty batch");
  require(classes > 0, "softmax_cross_entropy: no classes");
  require(labels.size() == batch, "softmax_cross_entropy: one label per row required");
  std::vector<Real> probs(batch * classes);
  Real loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < classes,
            "softmax_cross_entropy: label " + std::to_string(labels[b]) + " out of range");
    const Real* row = lv.data() + b * classes;
    const Real mx = *std::max_element(row, row + classes);
    Real z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const Real log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - log_z);
    loss += log_z - row[labels[b]];
  }
  loss /= static_cast<Real>(batch);
  std::vector<int> lab(labels.begin(), labels.end());
  return push(Tensor<Real>({1}, {loss}), {logits},
              [logits, probs = std::move(probs), lab = std::move(lab), batch, classes](Tape& t, std::size_t self) {
                const Real g = t.grad_view(self)[0] / static_cast<Real>(batch);
                auto gl = t.grad_of(logits.id_);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t c = 0; c < classes; ++c) {
                    const Real target = static_cast<int>(c) == lab[b] ? Real(1) : Real(0);
                    gl[b * classes + c] += g * (probs[b * classes + c] - target);
                  }
                }
              });
}

template <typename Real>
void Tape<Real>::backward(Var loss) {
  require(loss.id_ < nodes_.size(), "backward: variable does not belong to this tape");
  const auto& lv = val(loss.id_);
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_to_string(lv.shape()));
  }
  for (auto* store : stores_) store->zero_grads();
  for (auto& node : nodes_) node.grad.clear();
  if (!nodes_[loss.id_].requires_grad) return;
  grad_of(loss.id_)[0] = Real(1);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mbatf
