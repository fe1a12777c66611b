#include "topogen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "topogen/errors.hpp"

namespace topogen::nn {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << n << "," << c << "," << h << "," << w << "]";
  return os.str();
}

namespace {

// ---- dense kernels --------------------------------------------------
// Plain loops in i-k-j order: the inner j loop has no cross-iteration
// dependency, so the compiler vectorizes it without reassociation.

template <class T>
void gemm_acc(int M, int N, int K, const T* A, const T* B, T* C) {
  for (int i = 0; i < M; ++i) {
    const T* arow = A + static_cast<std::size_t>(i) * K;
    T* crow = C + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* brow = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

template <class T>
void transpose(int rows, int cols, const T* src, T* dst) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

/// col has K = cin*k*k rows and M = oh*ow columns; row (ci, kr, kc) holds
/// the input pixel that lands under kernel tap (kr, kc) for each output
/// position, zero where the tap falls outside the image.
template <class T>
void im2col(const T* x, int cin, int h, int w, int k, int pad, int oh, int ow, T* col) {
  for (int ci = 0; ci < cin; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int kr = 0; kr < k; ++kr) {
      for (int kc = 0; kc < k; ++kc) {
        T* dst = col + (static_cast<std::size_t>(ci) * k * k + static_cast<std::size_t>(kr) * k +
                        kc) * static_cast<std::size_t>(oh) * ow;
        for (int oi = 0; oi < oh; ++oi) {
          const int row = oi - pad + kr;
          T* drow = dst + static_cast<std::size_t>(oi) * ow;
          if (row < 0 || row >= h) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* xrow = xc + static_cast<std::size_t>(row) * w;
          const int j0 = std::max(0, pad - kc);
          const int j1 = std::min(ow, w + pad - kc);
          std::fill(drow, drow + std::min(j0, ow), T(0));
          for (int oj = j0; oj < j1; ++oj) drow[oj] = xrow[oj - pad + kc];
          if (j1 < ow) std::fill(drow + std::max(j1, 0), drow + ow, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_acc(const T* col, int cin, int h, int w, int k, int pad, int oh, int ow, T* dx) {
  for (int ci = 0; ci < cin; ++ci) {
    T* xc = dx + static_cast<std::size_t>(ci) * h * w;
    for (int kr = 0; kr < k; ++kr) {
      for (int kc = 0; kc < k; ++kc) {
        const T* src = col + (static_cast<std::size_t>(ci) * k * k +
                              static_cast<std::size_t>(kr) * k + kc) *
                                 static_cast<std::size_t>(oh) * ow;
        for (int oi = 0; oi < oh; ++oi) {
          const int row = oi - pad + kr;
          if (row < 0 || row >= h) continue;
          const T* srow = src + static_cast<std::size_t>(oi) * ow;
          T* xrow = xc + static_cast<std::size_t>(row) * w;
          const int j0 = std::max(0, pad - kc);
          const int j1 = std::min(ow, w + pad - kc);
          for (int oj = j0; oj < j1; ++oj) xrow[oj - pad + kc] += srow[oj];
        }
      }
    }
  }
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <class T>
typename Tape<T>::Node& Tape<T>::node(Ref r) {
  if (r.id < 0 || r.id >= static_cast<std::int32_t>(nodes_.size()))
    throw UsageError("tape: invalid node reference");
  return nodes_[r.id];
}

template <class T>
const typename Tape<T>::Node& Tape<T>::node(Ref r) const {
  if (r.id < 0 || r.id >= static_cast<std::int32_t>(nodes_.size()))
    throw UsageError("tape: invalid node reference");
  return nodes_[r.id];
}

template <class T>
typename Tape<T>::Ref Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Ref{static_cast<std::int32_t>(nodes_.size()) - 1};
}

template <class T>
const Shape& Tape<T>::shape(Ref r) const {
  return node(r).shape;
}

template <class T>
const std::vector<T>& Tape<T>::value(Ref r) const {
  return node(r).val;
}

template <class T>
const std::vector<T>& Tape<T>::grad(Ref r) const {
  const Node& nd = node(r);
  if (nd.grad.empty()) throw UsageError("tape: node has no gradient (did backward run?)");
  return nd.grad;
}

template <class T>
typename Tape<T>::Ref Tape<T>::input(const Shape& s, std::vector<T> data) {
  if (data.size() != s.numel())
    throw ValidationError("tape input: data size does not match shape " + s.str());
  Node n;
  n.op = Op::input;
  n.shape = s;
  n.val = std::move(data);
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::param(Parameter<T>& p) {
  if (p.value.size() != p.shape.numel() || p.grad.size() != p.shape.numel())
    throw ValidationError("tape param: inconsistent parameter " + p.name);
  Node n;
  n.op = Op::param;
  n.shape = p.shape;
  n.val = p.value;  // copy so later optimizer updates cannot corrupt the graph
  n.needs_grad = true;
  n.bound = &p;
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::conv2d(Ref x, Ref w, Ref b, int pad) {
  const Node& nx = node(x);
  const Node& nw = node(w);
  const Node& nb = node(b);
  const int k = nw.shape.h;
  if (nw.shape.w != k) throw ValidationError("conv2d: kernel must be square");
  if (nw.shape.c != nx.shape.c)
    throw ValidationError("conv2d: weight expects " + std::to_string(nw.shape.c) +
                          " input channels, got " + nx.shape.str());
  if (nb.shape.c != nw.shape.n || nb.shape.numel() != static_cast<std::size_t>(nw.shape.n))
    throw ValidationError("conv2d: bias shape mismatch");
  if (pad < 0) throw ValidationError("conv2d: negative padding");
  const int oh = nx.shape.h + 2 * pad - k + 1;
  const int ow = nx.shape.w + 2 * pad - k + 1;
  if (oh < 1 || ow < 1) throw ValidationError("conv2d: kernel larger than padded input");

  const int N = nx.shape.n, cin = nx.shape.c, cout = nw.shape.n;
  const std::size_t K = static_cast<std::size_t>(cin) * k * k;
  const std::size_t M = static_cast<std::size_t>(oh) * ow;

  Node n;
  n.op = Op::conv2d;
  n.shape = {N, cout, oh, ow};
  n.val.resize(n.shape.numel());
  n.a = x.id;
  n.b = w.id;
  n.c = b.id;
  n.i0 = pad;
  n.i1 = k;
  n.needs_grad = nx.needs_grad || nw.needs_grad || nb.needs_grad;
  n.aux.resize(static_cast<std::size_t>(N) * K * M);  // im2col buffers, reused in backward

  for (int s = 0; s < N; ++s) {
    T* col = n.aux.data() + static_cast<std::size_t>(s) * K * M;
    im2col(nx.val.data() + static_cast<std::size_t>(s) * cin * nx.shape.h * nx.shape.w, cin,
           nx.shape.h, nx.shape.w, k, pad, oh, ow, col);
    T* out = n.val.data() + static_cast<std::size_t>(s) * cout * M;
    for (int co = 0; co < cout; ++co) {
      T* orow = out + static_cast<std::size_t>(co) * M;
      std::fill(orow, orow + M, nb.val[co]);
    }
    gemm_acc(cout, static_cast<int>(M), static_cast<int>(K), nw.val.data(), col, out);
  }
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::group_norm(Ref x, Ref gamma, Ref beta, int groups, T eps) {
  const Node& nx = node(x);
  const Node& ng = node(gamma);
  const Node& nbt = node(beta);
  const int C = nx.shape.c;
  if (groups < 1 || C % groups != 0)
    throw ValidationError("group_norm: channels not divisible by groups");
  if (ng.shape.numel() != static_cast<std::size_t>(C) ||
      nbt.shape.numel() != static_cast<std::size_t>(C))
    throw ValidationError("group_norm: gamma/beta must have one entry per channel");

  const int N = nx.shape.n, H = nx.shape.h, W = nx.shape.w;
  const int cpg = C / groups;
  const std::size_t L = static_cast<std::size_t>(cpg) * H * W;

  Node n;
  n.op = Op::group_norm;
  n.shape = nx.shape;
  n.val.resize(nx.val.size());
  n.a = x.id;
  n.b = gamma.id;
  n.c = beta.id;
  n.i0 = groups;
  n.f0 = eps;
  n.needs_grad = nx.needs_grad || ng.needs_grad || nbt.needs_grad;
  n.aux.resize(static_cast<std::size_t>(N) * groups * 2);  // (mean, invstd) per group

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int s = 0; s < N; ++s) {
    for (int g = 0; g < groups; ++g) {
      const T* xg = nx.val.data() + (static_cast<std::size_t>(s) * C + g * cpg) * plane;
      T mean = T(0);
      for (std::size_t i = 0; i < L; ++i) mean += xg[i];
      mean /= static_cast<T>(L);
      T var = T(0);
      for (std::size_t i = 0; i < L; ++i) var += (xg[i] - mean) * (xg[i] - mean);
      var /= static_cast<T>(L);
      const T inv = T(1) / std::sqrt(var + eps);
      n.aux[(static_cast<std::size_t>(s) * groups + g) * 2 + 0] = mean;
      n.aux[(static_cast<std::size_t>(s) * groups + g) * 2 + 1] = inv;
      T* yg = n.val.data() + (static_cast<std::size_t>(s) * C + g * cpg) * plane;
      for (int cc = 0; cc < cpg; ++cc) {
        const T gm = ng.val[g * cpg + cc];
        const T bt = nbt.val[g * cpg + cc];
        const T* xc = xg + static_cast<std::size_t>(cc) * plane;
        T* yc = yg + static_cast<std::size_t>(cc) * plane;
        for (std::size_t i = 0; i < plane; ++i) yc[i] = gm * (xc[i] - mean) * inv + bt;
      }
    }
  }
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::silu(Ref x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::silu;
  n.shape = nx.shape;
  n.val.resize(nx.val.size());
  n.a = x.id;
  n.needs_grad = nx.needs_grad;
  for (std::size_t i = 0; i < nx.val.size(); ++i) n.val[i] = nx.val[i] * sigmoid(nx.val[i]);
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::linear(Ref x, Ref w, Ref b) {
  const Node& nx = node(x);
  const Node& nw = node(w);
  const Node& nb = node(b);
  if (nx.shape.h != 1 || nx.shape.w != 1)
    throw ValidationError("linear: input must be [n, features, 1, 1]");
  const int in = nx.shape.c, out = nw.shape.n, N = nx.shape.n;
  if (nw.shape.c != in) throw ValidationError("linear: weight expects " +
                                              std::to_string(nw.shape.c) + " inputs, got " +
                                              std::to_string(in));
  if (nb.shape.numel() != static_cast<std::size_t>(out))
    throw ValidationError("linear: bias size mismatch");

  Node n;
  n.op = Op::linear;
  n.shape = {N, out, 1, 1};
  n.val.resize(n.shape.numel());
  n.a = x.id;
  n.b = w.id;
  n.c = b.id;
  n.needs_grad = nx.needs_grad || nw.needs_grad || nb.needs_grad;
  for (int s = 0; s < N; ++s) {
    const T* xs = nx.val.data() + static_cast<std::size_t>(s) * in;
    T* ys = n.val.data() + static_cast<std::size_t>(s) * out;
    for (int o = 0; o < out; ++o) {
      const T* wrow = nw.val.data() + static_cast<std::size_t>(o) * in;
      T acc = nb.val[o];
      for (int i = 0; i < in; ++i) acc += wrow[i] * xs[i];
      ys[o] = acc;
    }
  }
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::embedding(Ref table, std::vector<int> ids) {
  const Node& nt = node(table);
  const int rows = nt.shape.n, dim = nt.shape.c;
  if (nt.shape.h != 1 || nt.shape.w != 1)
    throw ValidationError("embedding: table must be [rows, dim, 1, 1]");
  for (int id : ids)
    if (id < 0 || id >= rows)
      throw ValidationError("embedding: index " + std::to_string(id) + " out of range [0, " +
                            std::to_string(rows) + ")");
  Node n;
  n.op = Op::embedding;
  n.shape = {static_cast<int>(ids.size()), dim, 1, 1};
  n.val.resize(n.shape.numel());
  n.a = table.id;
  n.needs_grad = nt.needs_grad;
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(nt.val.data() + static_cast<std::size_t>(ids[r]) * dim, dim,
                n.val.data() + r * dim);
  n.ids = std::move(ids);
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::add(Ref a, Ref b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (!(na.shape == nb.shape))
    throw ValidationError("add: shape mismatch " + na.shape.str() + " vs " + nb.shape.str());
  Node n;
  n.op = Op::add;
  n.shape = na.shape;
  n.val.resize(na.val.size());
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  for (std::size_t i = 0; i < na.val.size(); ++i) n.val[i] = na.val[i] + nb.val[i];
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::add_channel_bias(Ref x, Ref e) {
  const Node& nx = node(x);
  const Node& ne = node(e);
  if (ne.shape.n != nx.shape.n || ne.shape.c != nx.shape.c || ne.shape.h != 1 || ne.shape.w != 1)
    throw ValidationError("add_channel_bias: bias must be [n, c, 1, 1] matching the input");
  Node n;
  n.op = Op::add_channel_bias;
  n.shape = nx.shape;
  n.val.resize(nx.val.size());
  n.a = x.id;
  n.b = e.id;
  n.needs_grad = nx.needs_grad || ne.needs_grad;
  const std::size_t plane = static_cast<std::size_t>(nx.shape.h) * nx.shape.w;
  for (int s = 0; s < nx.shape.n; ++s)
    for (int c = 0; c < nx.shape.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(s) * nx.shape.c + c) * plane;
      const T bias = ne.val[static_cast<std::size_t>(s) * nx.shape.c + c];
      for (std::size_t i = 0; i < plane; ++i) n.val[base + i] = nx.val[base + i] + bias;
    }
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::avg_pool2(Ref x) {
  const Node& nx = node(x);
  if (nx.shape.h % 2 != 0 || nx.shape.w % 2 != 0)
    throw ValidationError("avg_pool2: spatial dims must be even, got " + nx.shape.str());
  Node n;
  n.op = Op::avg_pool2;
  n.shape = {nx.shape.n, nx.shape.c, nx.shape.h / 2, nx.shape.w / 2};
  n.val.resize(n.shape.numel());
  n.a = x.id;
  n.needs_grad = nx.needs_grad;
  const int H = nx.shape.h, W = nx.shape.w, oh = H / 2, ow = W / 2;
  const int planes = nx.shape.n * nx.shape.c;
  for (int p = 0; p < planes; ++p) {
    const T* src = nx.val.data() + static_cast<std::size_t>(p) * H * W;
    T* dst = n.val.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        dst[static_cast<std::size_t>(i) * ow + j] =
            (src[static_cast<std::size_t>(2 * i) * W + 2 * j] +
             src[static_cast<std::size_t>(2 * i) * W + 2 * j + 1] +
             src[static_cast<std::size_t>(2 * i + 1) * W + 2 * j] +
             src[static_cast<std::size_t>(2 * i + 1) * W + 2 * j + 1]) /
            T(4);
  }
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::upsample_nearest2(Ref x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::upsample_nearest2;
  n.shape = {nx.shape.n, nx.shape.c, nx.shape.h * 2, nx.shape.w * 2};
  n.val.resize(n.shape.numel());
  n.a = x.id;
  n.needs_grad = nx.needs_grad;
  const int H = nx.shape.h, W = nx.shape.w;
  const int planes = nx.shape.n * nx.shape.c;
  for (int p = 0; p < planes; ++p) {
    const T* src = nx.val.data() + static_cast<std::size_t>(p) * H * W;
    T* dst = n.val.data() + static_cast<std::size_t>(p) * 4 * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const T v = src[static_cast<std::size_t>(i) * W + j];
        T* d0 = dst + static_cast<std::size_t>(2 * i) * 2 * W + 2 * j;
        d0[0] = v;
        d0[1] = v;
        d0[2 * W] = v;
        d0[2 * W + 1] = v;
      }
  }
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::affine_per_sample(Ref x, Ref y, std::vector<T> a,
                                                 std::vector<T> b) {
  const Node& nx = node(x);
  const Node& ny = node(y);
  if (!(nx.shape == ny.shape)) throw ValidationError("affine_per_sample: shape mismatch");
  if (a.size() != static_cast<std::size_t>(nx.shape.n) || b.size() != a.size())
    throw ValidationError("affine_per_sample: need one (a, b) pair per sample");
  Node n;
  n.op = Op::affine_per_sample;
  n.shape = nx.shape;
  n.val.resize(nx.val.size());
  n.a = x.id;
  n.b = y.id;
  n.needs_grad = nx.needs_grad || ny.needs_grad;
  const std::size_t per = nx.shape.numel() / nx.shape.n;
  for (int s = 0; s < nx.shape.n; ++s) {
    const std::size_t base = static_cast<std::size_t>(s) * per;
    for (std::size_t i = 0; i < per; ++i)
      n.val[base + i] = a[s] * nx.val[base + i] + b[s] * ny.val[base + i];
  }
  n.aux.reserve(a.size() * 2);
  n.aux.insert(n.aux.end(), a.begin(), a.end());
  n.aux.insert(n.aux.end(), b.begin(), b.end());
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::mse(Ref x, Ref target) {
  const Node& nx = node(x);
  const Node& nt = node(target);
  if (!(nx.shape == nt.shape)) throw ValidationError("mse: shape mismatch");
  Node n;
  n.op = Op::mse;
  n.shape = {1, 1, 1, 1};
  n.a = x.id;
  n.b = target.id;
  n.needs_grad = nx.needs_grad || nt.needs_grad;
  T acc = T(0);
  for (std::size_t i = 0; i < nx.val.size(); ++i) {
    const T d = nx.val[i] - nt.val[i];
    acc += d * d;
  }
  n.val = {acc / static_cast<T>(nx.val.size())};
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::sum(Ref x) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::sum;
  n.shape = {1, 1, 1, 1};
  n.a = x.id;
  n.needs_grad = nx.needs_grad;
  T acc = T(0);
  for (T v : nx.val) acc += v;
  n.val = {acc};
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::weighted_sum(Ref x, std::vector<T> w) {
  const Node& nx = node(x);
  if (w.size() != nx.val.size()) throw ValidationError("weighted_sum: weight size mismatch");
  Node n;
  n.op = Op::weighted_sum;
  n.shape = {1, 1, 1, 1};
  n.a = x.id;
  n.needs_grad = nx.needs_grad;
  T acc = T(0);
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * nx.val[i];
  n.val = {acc};
  n.aux = std::move(w);
  return push(std::move(n));
}

template <class T>
typename Tape<T>::Ref Tape<T>::scale(Ref x, T s) {
  const Node& nx = node(x);
  Node n;
  n.op = Op::scale;
  n.shape = nx.shape;
  n.val.resize(nx.val.size());
  n.a = x.id;
  n.f0 = s;
  n.needs_grad = nx.needs_grad;
  for (std::size_t i = 0; i < nx.val.size(); ++i) n.val[i] = s * nx.val[i];
  return push(std::move(n));
}

template <class T>
void Tape<T>::ensure_grad(std::int32_t id) {
  Node& nd = nodes_[id];
  if (nd.grad.empty()) nd.grad.assign(nd.val.size(), T(0));
}

template <class T>
void Tape<T>::backward(Ref root, const std::vector<std::pair<Ref, std::vector<T>>>& injections) {
  if (backward_done_)
    throw UsageError("tape: backward already ran; gradients are single-shot per graph");
  const Node& rn = node(root);
  if (rn.shape.numel() != 1) throw UsageError("tape: backward root must be a scalar");
  if (!std::isfinite(static_cast<double>(rn.val[0])))
    throw NumericalError("tape: loss is not finite");

  ensure_grad(root.id);
  nodes_[root.id].grad[0] = T(1);
  for (const auto& [ref, g] : injections) {
    Node& nd = node(ref);
    if (g.size() != nd.val.size())
      throw ValidationError("tape: injected gradient size mismatch at node " +
                            std::to_string(ref.id));
    ensure_grad(ref.id);
    for (std::size_t i = 0; i < g.size(); ++i) nd.grad[i] += g[i];
  }

  for (std::int32_t id = static_cast<std::int32_t>(nodes_.size()) - 1; id >= 0; --id)
    backward_node(id);

  for (Node& nd : nodes_)
    if (nd.op == Op::param && nd.bound && !nd.grad.empty())
      for (std::size_t i = 0; i < nd.grad.size(); ++i) nd.bound->grad[i] += nd.grad[i];

  backward_done_ = true;
}

template <class T>
void Tape<T>::backward_node(std::int32_t id) {
  Node& nd = nodes_[id];
  if (nd.grad.empty()) return;

  const auto wants = [&](std::int32_t in) {
    return in >= 0 && nodes_[in].needs_grad;
  };
  const auto gbuf = [&](std::int32_t in) -> std::vector<T>& {
    ensure_grad(in);
    return nodes_[in].grad;
  };

  switch (nd.op) {
    case Op::input:
    case Op::param:
      return;

    case Op::conv2d: {
      const Node& nx = nodes_[nd.a];
      const Node& nw = nodes_[nd.b];
      const int pad = nd.i0, k = nd.i1;
      const int N = nx.shape.n, cin = nx.shape.c, cout = nw.shape.n;
      const int oh = nd.shape.h, ow = nd.shape.w;
      const std::size_t K = static_cast<std::size_t>(cin) * k * k;
      const std::size_t M = static_cast<std::size_t>(oh) * ow;

      std::vector<T> colT;
      if (wants(nd.b)) colT.resize(K * M);
      std::vector<T> wT, dcol;
      if (wants(nd.a)) {
        wT.resize(K * cout);
        transpose(cout, static_cast<int>(K), nw.val.data(), wT.data());
        dcol.resize(K * M);
      }
      for (int s = 0; s < N; ++s) {
        const T* col = nd.aux.data() + static_cast<std::size_t>(s) * K * M;
        const T* dy = nd.grad.data() + static_cast<std::size_t>(s) * cout * M;
        if (wants(nd.b)) {
          transpose(static_cast<int>(K), static_cast<int>(M), col, colT.data());
          gemm_acc(cout, static_cast<int>(K), static_cast<int>(M), dy, colT.data(),
                   gbuf(nd.b).data());
        }
        if (wants(nd.c)) {
          T* db = gbuf(nd.c).data();
          for (int co = 0; co < cout; ++co) {
            const T* row = dy + static_cast<std::size_t>(co) * M;
            T acc = T(0);
            for (std::size_t i = 0; i < M; ++i) acc += row[i];
            db[co] += acc;
          }
        }
        if (wants(nd.a)) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          gemm_acc(static_cast<int>(K), static_cast<int>(M), cout, wT.data(), dy, dcol.data());
          col2im_acc(dcol.data(), cin, nx.shape.h, nx.shape.w, k, pad, oh, ow,
                     gbuf(nd.a).data() +
                         static_cast<std::size_t>(s) * cin * nx.shape.h * nx.shape.w);
        }
      }
      return;
    }

    case Op::group_norm: {
      const Node& nx = nodes_[nd.a];
      const Node& ng = nodes_[nd.b];
      const int groups = nd.i0;
      const int N = nx.shape.n, C = nx.shape.c, H = nx.shape.h, W = nx.shape.w;
      const int cpg = C / groups;
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      const std::size_t L = static_cast<std::size_t>(cpg) * plane;

      for (int s = 0; s < N; ++s) {
        for (int g = 0; g < groups; ++g) {
          const T mean = nd.aux[(static_cast<std::size_t>(s) * groups + g) * 2 + 0];
          const T inv = nd.aux[(static_cast<std::size_t>(s) * groups + g) * 2 + 1];
          const std::size_t base = (static_cast<std::size_t>(s) * C + g * cpg) * plane;
          const T* xg = nx.val.data() + base;
          const T* dyg = nd.grad.data() + base;

          // Channel-parameter grads plus the two reductions the input grad
          // needs: mean(dxhat) and mean(dxhat * xhat).
          T s1 = T(0), s2 = T(0);
          for (int cc = 0; cc < cpg; ++cc) {
            const T gm = ng.val[g * cpg + cc];
            const T* xc = xg + static_cast<std::size_t>(cc) * plane;
            const T* dyc = dyg + static_cast<std::size_t>(cc) * plane;
            T dg = T(0), db = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
              const T xhat = (xc[i] - mean) * inv;
              const T dxhat = dyc[i] * gm;
              s1 += dxhat;
              s2 += dxhat * xhat;
              dg += dyc[i] * xhat;
              db += dyc[i];
            }
            if (wants(nd.b)) gbuf(nd.b)[g * cpg + cc] += dg;
            if (wants(nd.c)) gbuf(nd.c)[g * cpg + cc] += db;
          }
          if (wants(nd.a)) {
            const T m1 = s1 / static_cast<T>(L);
            const T m2 = s2 / static_cast<T>(L);
            T* dxg = gbuf(nd.a).data() + base;
            for (int cc = 0; cc < cpg; ++cc) {
              const T gm = ng.val[g * cpg + cc];
              const T* xc = xg + static_cast<std::size_t>(cc) * plane;
              const T* dyc = dyg + static_cast<std::size_t>(cc) * plane;
              T* dxc = dxg + static_cast<std::size_t>(cc) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const T xhat = (xc[i] - mean) * inv;
                dxc[i] += inv * (dyc[i] * gm - m1 - xhat * m2);
              }
            }
          }
        }
      }
      return;
    }

    case Op::silu: {
      if (!wants(nd.a)) return;
      const Node& nx = nodes_[nd.a];
      T* dx = gbuf(nd.a).data();
      for (std::size_t i = 0; i < nd.grad.size(); ++i) {
        const T sg = sigmoid(nx.val[i]);
        dx[i] += nd.grad[i] * sg * (T(1) + nx.val[i] * (T(1) - sg));
      }
      return;
    }

    case Op::linear: {
      const Node& nx = nodes_[nd.a];
      const Node& nw = nodes_[nd.b];
      const int N = nx.shape.n, in = nx.shape.c, out = nd.shape.c;
      for (int s = 0; s < N; ++s) {
        const T* dy = nd.grad.data() + static_cast<std::size_t>(s) * out;
        const T* xs = nx.val.data() + static_cast<std::size_t>(s) * in;
        if (wants(nd.a)) {
          T* dx = gbuf(nd.a).data() + static_cast<std::size_t>(s) * in;
          for (int o = 0; o < out; ++o) {
            const T a = dy[o];
            const T* wrow = nw.val.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) dx[i] += a * wrow[i];
          }
        }
        if (wants(nd.b)) {
          T* dw = gbuf(nd.b).data();
          for (int o = 0; o < out; ++o) {
            const T a = dy[o];
            T* wrow = dw + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) wrow[i] += a * xs[i];
          }
        }
        if (wants(nd.c)) {
          T* db = gbuf(nd.c).data();
          for (int o = 0; o < out; ++o) db[o] += dy[o];
        }
      }
      return;
    }

    case Op::embedding: {
      if (!wants(nd.a)) return;
      const int dim = nd.shape.c;
      T* dt = gbuf(nd.a).data();
      for (std::size_t r = 0; r < nd.ids.size(); ++r) {
        const T* dy = nd.grad.data() + r * dim;
        T* drow = dt + static_cast<std::size_t>(nd.ids[r]) * dim;
        for (int i = 0; i < dim; ++i) drow[i] += dy[i];
      }
      return;
    }

    case Op::add: {
      for (std::int32_t in : {nd.a, nd.b}) {
        if (!wants(in)) continue;
        T* dst = gbuf(in).data();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) dst[i] += nd.grad[i];
      }
      return;
    }

    case Op::add_channel_bias: {
      if (wants(nd.a)) {
        T* dx = gbuf(nd.a).data();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) dx[i] += nd.grad[i];
      }
      if (wants(nd.b)) {
        const int N = nd.shape.n, C = nd.shape.c;
        const std::size_t plane = static_cast<std::size_t>(nd.shape.h) * nd.shape.w;
        T* de = gbuf(nd.b).data();
        for (int s = 0; s < N; ++s)
          for (int c = 0; c < C; ++c) {
            const T* dy = nd.grad.data() + (static_cast<std::size_t>(s) * C + c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += dy[i];
            de[static_cast<std::size_t>(s) * C + c] += acc;
          }
      }
      return;
    }

    case Op::avg_pool2: {
      if (!wants(nd.a)) return;
      const Node& nx = nodes_[nd.a];
      const int H = nx.shape.h, W = nx.shape.w, oh = nd.shape.h, ow = nd.shape.w;
      const int planes = nd.shape.n * nd.shape.c;
      T* dx = gbuf(nd.a).data();
      for (int p = 0; p < planes; ++p) {
        const T* dy = nd.grad.data() + static_cast<std::size_t>(p) * oh * ow;
        T* dxp = dx + static_cast<std::size_t>(p) * H * W;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            const T g = dy[static_cast<std::size_t>(i) * ow + j] / T(4);
            T* d0 = dxp + static_cast<std::size_t>(2 * i) * W + 2 * j;
            d0[0] += g;
            d0[1] += g;
            d0[W] += g;
            d0[W + 1] += g;
          }
      }
      return;
    }

    case Op::upsample_nearest2: {
      if (!wants(nd.a)) return;
      const Node& nx = nodes_[nd.a];
      const int H = nx.shape.h, W = nx.shape.w;
      const int planes = nd.shape.n * nd.shape.c;
      T* dx = gbuf(nd.a).data();
      for (int p = 0; p < planes; ++p) {
        const T* dy = nd.grad.data() + static_cast<std::size_t>(p) * 4 * H * W;
        T* dxp = dx + static_cast<std::size_t>(p) * H * W;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const T* s0 = dy + static_cast<std::size_t>(2 * i) * 2 * W + 2 * j;
            dxp[static_cast<std::size_t>(i) * W + j] += s0[0] + s0[1] + s0[2 * W] + s0[2 * W + 1];
          }
      }
      return;
    }

    case Op::affine_per_sample: {
      const int N = nd.shape.n;
      const std::size_t per = nd.shape.numel() / N;
      const T* a = nd.aux.data();
      const T* b = nd.aux.data() + N;
      for (int s = 0; s < N; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * per;
        if (wants(nd.a)) {
          T* dx = gbuf(nd.a).data();
          for (std::size_t i = 0; i < per; ++i) dx[base + i] += a[s] * nd.grad[base + i];
        }
        if (wants(nd.b)) {
          T* dy = gbuf(nd.b).data();
          for (std::size_t i = 0; i < per; ++i) dy[base + i] += b[s] * nd.grad[base + i];
        }
      }
      return;
    }

    case Op::mse: {
      const Node& nx = nodes_[nd.a];
      const Node& nt = nodes_[nd.b];
      const T g = nd.grad[0] * T(2) / static_cast<T>(nx.val.size());
      if (wants(nd.a)) {
        T* dx = gbuf(nd.a).data();
        for (std::size_t i = 0; i < nx.val.size(); ++i) dx[i] += g * (nx.val[i] - nt.val[i]);
      }
      if (wants(nd.b)) {
        T* dt = gbuf(nd.b).data();
        for (std::size_t i = 0; i < nx.val.size(); ++i) dt[i] -= g * (nx.val[i] - nt.val[i]);
      }
      return;
    }

    case Op::sum: {
      if (!wants(nd.a)) return;
      T* dx = gbuf(nd.a).data();
      const T g = nd.grad[0];
      for (std::size_t i = 0; i < nodes_[nd.a].val.size(); ++i) dx[i] += g;
      return;
    }

    case Op::weighted_sum: {
      if (!wants(nd.a)) return;
      T* dx = gbuf(nd.a).data();
      const T g = nd.grad[0];
      for (std::size_t i = 0; i < nd.aux.size(); ++i) dx[i] += g * nd.aux[i];
      return;
    }

    case Op::scale: {
      if (!wants(nd.a)) return;
      T* dx = gbuf(nd.a).data();
      for (std::size_t i = 0; i < nd.grad.size(); ++i) dx[i] += nd.f0 * nd.grad[i];
      return;
    }
  }
}

template class Tape<float>;
template class Tape<double>;
template struct Parameter<float>;
template struct Parameter<double>;

}  // namespace topogen::nn
