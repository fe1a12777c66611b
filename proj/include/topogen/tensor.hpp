#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace topogen::nn {

/// NCHW tensor shape.  Vectors use {n, features, 1, 1}; parameters reuse
/// the fields as documented at each op.
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;
  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// A named trainable tensor with its gradient accumulator.  Parameters live
/// outside the tape (in a ParamStore) and are bound into each step's graph.
template <class T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, const Shape& s)
      : name(std::move(n)), shape(s), value(s.numel(), T(0)), grad(s.numel(), T(0)) {}
};

/// Reverse-mode autodiff over a per-step graph ("tape").  Usage:
///   build leafs/ops forward, call backward(root) once, read grads.
/// The tape owns all intermediate values; parameters accumulate their
/// gradients into Parameter::grad.  backward() may be called once per tape
/// (no higher-order gradients); a second call throws.
///
/// backward() accepts gradient injections: extra dL/dy contributions at
/// intermediate nodes, added before the sweep.  This is how the externally
/// computed topology-loss gradient (at the predicted clean image) joins the
/// network gradient without being part of the graph.
template <class T>
class Tape {
 public:
  struct Ref {
    std::int32_t id = -1;
  };

  // -- leaves ---------------------------------------------------------
  Ref input(const Shape& s, std::vector<T> data);  // constant, never differentiated
  Ref param(Parameter<T>& p);                      // differentiable leaf

  // -- ops ------------------------------------------------------------
  /// 2D convolution, stride 1, square kernel, zero padding `pad`.
  /// x: [n, cin, h, w]; w: [cout, cin, k, k]; b: [1, cout, 1, 1].
  Ref conv2d(Ref x, Ref w, Ref b, int pad);

  /// GroupNorm over channel groups. gamma/beta: [1, c, 1, 1].
  Ref group_norm(Ref x, Ref gamma, Ref beta, int groups, T eps = T(1e-5));

  Ref silu(Ref x);  // x * sigmoid(x), elementwise

  /// Fully connected: x [n, in, 1, 1] * w [out, in, 1, 1]^T + b [1, out, 1, 1].
  Ref linear(Ref x, Ref w, Ref b);

  /// Row lookup: table [rows, dim, 1, 1] -> out [ids.size(), dim, 1, 1].
  Ref embedding(Ref table, std::vector<int> ids);

  Ref add(Ref a, Ref b);  // same shape

  /// Broadcast-add a per-(sample, channel) bias: x [n,c,h,w] + e [n,c,1,1].
  Ref add_channel_bias(Ref x, Ref e);

  Ref avg_pool2(Ref x);          // 2x2 mean, h and w must be even
  Ref upsample_nearest2(Ref x);  // 2x nearest-neighbor

  /// Per-sample affine mix: out[i] = a[i]*x[i] + b[i]*y[i] (i = sample).
  /// Recovers the predicted clean image from (x_t, predicted noise) inside
  /// the graph so injected gradients flow back through the prediction.
  Ref affine_per_sample(Ref x, Ref y, std::vector<T> a, std::vector<T> b);

  Ref mse(Ref x, Ref target);               // scalar: mean squared difference
  Ref sum(Ref x);                           // scalar
  Ref weighted_sum(Ref x, std::vector<T> w);// scalar dot product
  Ref scale(Ref x, T s);

  // -- access ----------------------------------------------------------
  const Shape& shape(Ref r) const;
  const std::vector<T>& value(Ref r) const;
  /// Gradient at a node (valid after backward; throws if none was stored).
  const std::vector<T>& grad(Ref r) const;

  /// Reverse sweep from a scalar root.  Each injection adds dL/dnode to the
  /// named intermediate before propagation.  Throws UsageError on a second
  /// call or a non-scalar root, NumericalError if the root value is not
  /// finite.
  void backward(Ref root,
                const std::vector<std::pair<Ref, std::vector<T>>>& injections = {});

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    input, param, conv2d, group_norm, silu, linear, embedding, add,
    add_channel_bias, avg_pool2, upsample_nearest2, affine_per_sample,
    mse, sum, weighted_sum, scale,
  };

  struct Node {
    Op op;
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // allocated on demand during backward
    bool needs_grad = false;
    std::int32_t a = -1, b = -1, c = -1;
    Parameter<T>* bound = nullptr;
    int i0 = 0, i1 = 0;    // op ints (pad, groups, kernel, ...)
    T f0 = T(0);           // op scalar (eps, scale factor)
    std::vector<T> aux;    // saved buffers for backward
    std::vector<int> ids;  // embedding row indices
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  Node& node(Ref r);
  const Node& node(Ref r) const;
  Ref push(Node n);
  void ensure_grad(std::int32_t id);
  void backward_node(std::int32_t id);
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template struct Parameter<float>;
extern template struct Parameter<double>;

}  // namespace topogen::nn
