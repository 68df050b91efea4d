#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbatf/tensor.hpp"

namespace mbatf {

// Records one computation over ParameterStore entries and replays it backwards.
//
// Parameter leaves alias the store tensor (no copy), so the store must not gain or
// lose entries while a tape that references it is alive. Constants are copied.
// The op set is closed: everything the encoder, scorer, discriminator and losses need.
template <typename Real>
class Tape {
 public:
  class Var {
   public:
    Var() = default;
    std::size_t id() const { return id_; }

   private:
    friend class Tape;
    explicit Var(std::size_t id) : id_(id) {}
    std::size_t id_ = static_cast<std::size_t>(-1);
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(ParameterStore<Real>& store, const std::string& name);
  Var constant(Tensor<Real> value);

  const Tensor<Real>& value(Var v) const;
  Real scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Rows of `table` [V, d] picked by `ids` -> [ids.size(), d].
  Var gather_rows(Var table, std::span<const int> ids);
  // Column-wise concatenation of [n, d_i] blocks -> [n, sum d_i].
  Var concat_cols(std::span<const Var> parts);
  Var reshape(Var x, Shape shape);

  // [m, k] x [k, n] -> [m, n].
  Var matmul(Var a, Var b);
  // Adds bias [n] to every length-n row of x.
  Var add_bias(Var x, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, Real factor);
  // max(x, 0); the subgradient at 0 is 0.
  Var relu(Var x);
  Var square(Var x);
  Var sum(Var x);
  Var mean(Var x);
  Var dot(Var a, Var b);

  // Same-padded 1-D convolution over time.
  // x [B, L, Cin], weight [Cout, window * Cin] (tap-major), bias [Cout].
  // Steps t >= lengths[b] read as zeros and produce zero output; a length of 0 counts as 1.
  Var conv1d_same(Var x, Var weight, Var bias, std::span<const std::size_t> lengths);
  // Max over the first max(lengths[b], 1) steps of x [B, L, C] -> [B, C].
  Var max_over_time(Var x, std::span<const std::size_t> lengths);
  // 2-D convolution with a (kh, 1) kernel and zero padding `pad` on the height axis.
  // x [N, Cin, H, W], weight [Cout, Cin, kh], bias [Cout] -> [N, Cout, H + 2 pad - kh + 1, W].
  Var conv2d_column(Var x, Var weight, Var bias, std::size_t pad);

  // out[b, r] = sum_i w[r, i] * (x[b, i] - c[r, i])^2 with x [B, d], c [N, d], w [N, d].
  // Without weights every w[r, i] is 1.
  Var weighted_sq_distance(Var x, Var centers, std::optional<Var> weights);

  // Mean over rows of -log softmax(logits)[row, labels[row]]; logits [B, C].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);

  // Fills the gradient of every parameter of every store referenced by this tape:
  // d loss / d param where reachable, zero elsewhere. May be called repeatedly with
  // different scalar losses; each call starts from zeroed gradients.
  void backward(Var loss);

  // Hash of every branch decision taken so far (ReLU signs, max-pool argmaxes).
  // Two evaluations with equal signatures lie on the same smooth piece.
  std::uint64_t branch_signature() const { return signature_; }

 private:
  struct Node {
    Tensor<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    Tensor<Real>* param = nullptr;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor<Real> value, std::initializer_list<Var> inputs,
           std::function<void(Tape&, std::size_t)> backward);
  std::span<Real> grad_of(std::size_t id);
  std::span<const Real> grad_view(std::size_t id) const { return nodes_[id].grad; }
  const Tensor<Real>& val(std::size_t id) const;
  bool needs(Var v) const { return nodes_[v.id_].requires_grad; }
  void mix_signature(std::uint64_t bits);

  std::vector<Node> nodes_;
  std::vector<ParameterStore<Real>*> stores_;
  std::uint64_t signature_ = 1469598103934665603ULL;
};

}  // namespace mbatf
