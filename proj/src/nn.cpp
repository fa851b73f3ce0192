#include "amlhp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace amlhp::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
std::size_t rows_of(const Tensor<T>& x) {
  return x.size() / x.shape().back();
}

std::size_t left_pad(std::size_t k) { return (k - 1) / 2; }

template <typename T>
void require_rank3(const Tensor<T>& x, std::size_t channels, const std::string& what) {
  if (x.rank() != 3 || x.dim(1) != channels) {
    throw Error(ErrorKind::ShapeMismatch,
                what + ": expected (B, " + std::to_string(channels) + ", L), got " + shape_string(x.shape()));
  }
}

template <typename T>
void require_last(const Tensor<T>& x, std::size_t dim, const std::string& what) {
  if (x.rank() < 2 || x.shape().back() != dim) {
    throw Error(ErrorKind::ShapeMismatch,
                what + ": expected last dimension " + std::to_string(dim) + ", got " + shape_string(x.shape()));
  }
}

}  // namespace

template <typename T>
void initialize(const ParamRefs<T>& params, Rng& rng) {
  for (Param<T>* p : params) {
    switch (p->init) {
      case Init::Ones:
        std::fill(p->value.begin(), p->value.end(), T{1});
        break;
      case Init::Zeros:
        std::fill(p->value.begin(), p->value.end(), T{0});
        break;
      case Init::FanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(p->fan_in, 1)));
        for (T& v : p->value) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    p->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// SepConv1D

template <typename T>
SepConv1D<T>::SepConv1D(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel)
    : dw_weight(name + ".dw_weight", {in_channels, kernel}, kernel),
      dw_bias(name + ".dw_bias", {in_channels}, kernel),
      pw_weight(name + ".pw_weight", {out_channels, in_channels}, in_channels),
      pw_bias(name + ".pw_bias", {out_channels}, in_channels),
      in_(in_channels),
      out_(out_channels),
      k_(kernel) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0) {
    throw Error(ErrorKind::ShapeMismatch, name + ": channel counts and kernel must be positive");
  }
}

template <typename T>
Tensor<T> SepConv1D<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_rank3(x, in_, "SepConv1D input");
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(2);
  const auto left = static_cast<std::ptrdiff_t>(left_pad(k_));
  const auto n = static_cast<std::ptrdiff_t>(len);

  Tensor<T> dw({batch, in_, len});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < in_; ++c) {
      const T* src = &x(b, c, 0);
      T* dst = &dw(b, c, 0);
      const T* w = &dw_weight.value[c * k_];
      std::fill(dst, dst + len, dw_bias.value[c]);
      for (std::size_t j = 0; j < k_; ++j) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - left;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n, n - shift);
        const T wj = w[j];
        for (std::ptrdiff_t t = t0; t < t1; ++t) dst[t] += wj * src[t + shift];
      }
    }
  }

  Tensor<T> out({batch, out_, len});
  CMapMat<T> pw(pw_weight.value.data(), out_, in_);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(pw_bias.value.data(), out_);
  for (std::size_t b = 0; b < batch; ++b) {
    CMapMat<T> src(&dw(b, 0, 0), in_, len);
    MapMat<T> dst(&out(b, 0, 0), out_, len);
    dst.noalias() = pw * src;
    dst.colwise() += bias;
  }

  if (cache) {
    cache->input = x;
    cache->depthwise = std::move(dw);
  }
  return out;
}

template <typename T>
Tensor<T> SepConv1D<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  const Tensor<T>& x = cache.input;
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(2);
  require_shape(grad_out.shape(), {batch, out_, len}, "SepConv1D grad");
  const auto left = static_cast<std::ptrdiff_t>(left_pad(k_));
  const auto n = static_cast<std::ptrdiff_t>(len);

  CMapMat<T> pw(pw_weight.value.data(), out_, in_);
  MapMat<T> g_pw(pw_weight.grad.data(), out_, in_);
  Tensor<T> g_dw({batch, in_, len});
  for (std::size_t b = 0; b < batch; ++b) {
    CMapMat<T> g(&grad_out(b, 0, 0), out_, len);
    CMapMat<T> dw(&cache.depthwise(b, 0, 0), in_, len);
    g_pw.noalias() += g * dw.transpose();
    MapMat<T>(&g_dw(b, 0, 0), in_, len).noalias() = pw.transpose() * g;
    for (std::size_t o = 0; o < out_; ++o) pw_bias.grad[o] += g.row(static_cast<Eigen::Index>(o)).sum();
  }

  Tensor<T> g_x({batch, in_, len});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < in_; ++c) {
      const T* gd = &g_dw(b, c, 0);
      const T* src = &x(b, c, 0);
      T* gx = &g_x(b, c, 0);
      T bias_sum{0};
      for (std::size_t t = 0; t < len; ++t) bias_sum += gd[t];
      dw_bias.grad[c] += bias_sum;
      for (std::size_t j = 0; j < k_; ++j) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - left;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(n, n - shift);
        const T wj = dw_weight.value[c * k_ + j];
        T acc{0};
        for (std::ptrdiff_t t = t0; t < t1; ++t) {
          acc += gd[t] * src[t + shift];
          gx[t + shift] += wj * gd[t];
        }
        dw_weight.grad[c * k_ + j] += acc;
      }
    }
  }
  return g_x;
}

template <typename T>
void SepConv1D<T>::collect(ParamRefs<T>& out) {
  out.insert(out.end(), {&dw_weight, &dw_bias, &pw_weight, &pw_bias});
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> max_pool_same(const Tensor<T>& x, std::size_t window, std::vector<std::uint32_t>* argmax) {
  if (x.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "max_pool_same expects (B, C, L)");
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t len = x.dim(2);
  const auto left = static_cast<std::ptrdiff_t>(left_pad(window));
  const auto n = static_cast<std::ptrdiff_t>(len);
  Tensor<T> out(x.shape());
  if (argmax) argmax->assign(x.size(), 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * len;
    T* dst = out.data() + r * len;
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - left);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, t - left + static_cast<std::ptrdiff_t>(window));
      std::ptrdiff_t best = lo;
      for (std::ptrdiff_t s = lo + 1; s < hi; ++s) {
        if (src[s] > src[best]) best = s;
      }
      dst[t] = src[best];
      if (argmax) (*argmax)[r * len + static_cast<std::size_t>(t)] = static_cast<std::uint32_t>(best);
    }
  }
  return out;
}

template <typename T>
Tensor<T> max_pool_same_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                                 const Shape& input_shape) {
  Tensor<T> g(input_shape);
  const std::size_t len = input_shape.at(2);
  const std::size_t rows = g.size() / len;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < len; ++t) {
      g[r * len + argmax[r * len + t]] += grad_out[r * len + t];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ResConv1D

template <typename T>
ResConv1D<T>::ResConv1D(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                        std::size_t kernel, std::size_t pool_window)
    : conv_(name + ".conv", in_channels, out_channels, kernel),
      pool_(pool_window),
      has_proj_(in_channels != out_channels) {
  if (pool_window == 0) throw Error(ErrorKind::ShapeMismatch, name + ": pool window must be positive");
  if (has_proj_) proj = Param<T>(name + ".proj", {out_channels, in_channels}, in_channels);
}

template <typename T>
Tensor<T> ResConv1D<T>::forward(const Tensor<T>& x, Cache* cache) const {
  Tensor<T> pre = conv_.forward(x, cache ? &cache->conv : nullptr);
  Tensor<T> act = relu(pre);
  Tensor<T> out = max_pool_same(act, pool_, cache ? &cache->argmax : nullptr);
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(2);
  if (has_proj_) {
    CMapMat<T> w(proj.value.data(), conv_.out_channels(), conv_.in_channels());
    for (std::size_t b = 0; b < batch; ++b) {
      MapMat<T>(&out(b, 0, 0), conv_.out_channels(), len).noalias() +=
          w * CMapMat<T>(&x(b, 0, 0), conv_.in_channels(), len);
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  if (cache) cache->pre_activation = std::move(pre);
  return out;
}

template <typename T>
Tensor<T> ResConv1D<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  const Tensor<T>& x = cache.conv.input;
  Tensor<T> g_act = max_pool_same_backward(grad_out, cache.argmax, cache.pre_activation.shape());
  Tensor<T> g_pre = relu_backward(g_act, cache.pre_activation);
  Tensor<T> g_x = conv_.backward(g_pre, cache.conv);
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(2);
  if (has_proj_) {
    const auto out_c = conv_.out_channels();
    const auto in_c = conv_.in_channels();
    CMapMat<T> w(proj.value.data(), out_c, in_c);
    MapMat<T> gw(proj.grad.data(), out_c, in_c);
    for (std::size_t b = 0; b < batch; ++b) {
      CMapMat<T> g(&grad_out(b, 0, 0), out_c, len);
      gw.noalias() += g * CMapMat<T>(&x(b, 0, 0), in_c, len).transpose();
      MapMat<T>(&g_x(b, 0, 0), in_c, len).noalias() += w.transpose() * g;
    }
  } else {
    for (std::size_t i = 0; i < g_x.size(); ++i) g_x[i] += grad_out[i];
  }
  return g_x;
}

template <typename T>
void ResConv1D<T>::collect(ParamRefs<T>& out) {
  conv_.collect(out);
  if (has_proj_) out.push_back(&proj);
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, bool bias)
    : weight(name + ".weight", {in, out}, in), in_(in), out_(out), has_bias_(bias) {
  if (bias) this->bias = Param<T>(name + ".bias", {out}, in);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_last(x, in_, weight.name);
  const std::size_t rows = rows_of(x);
  Shape shape = x.shape();
  shape.back() = out_;
  Tensor<T> y(shape);
  MapMat<T> ym(y.data(), rows, out_);
  ym.noalias() = CMapMat<T>(x.data(), rows, in_) * CMapMat<T>(weight.value.data(), in_, out_);
  if (has_bias_) {
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value.data(), out_);
  }
  if (cache) cache->input = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  const Tensor<T>& x = cache.input;
  const std::size_t rows = rows_of(x);
  require_last(grad_out, out_, weight.name + " grad");
  CMapMat<T> g(grad_out.data(), rows, out_);
  CMapMat<T> xm(x.data(), rows, in_);
  MapMat<T>(weight.grad.data(), in_, out_).noalias() += xm.transpose() * g;
  if (has_bias_) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.grad.data(), out_) += g.colwise().sum();
  }
  Tensor<T> gx(x.shape());
  MapMat<T>(gx.data(), rows, in_).noalias() = g * CMapMat<T>(weight.value.data(), in_, out_).transpose();
  return gx;
}

template <typename T>
void Linear<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& pre_activation) {
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = pre_activation[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

// ---------------------------------------------------------------------------
// LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, std::size_t dim, double eps)
    : gain(name + ".gain", {dim}, dim, Init::Ones),
      shift(name + ".shift", {dim}, dim, Init::Zeros),
      dim_(dim),
      eps_(eps) {}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_last(x, dim_, gain.name);
  const std::size_t rows = rows_of(x);
  Tensor<T> y(x.shape());
  Tensor<T> xhat;
  if (cache) {
    xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(rows, T{0});
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * dim_;
    T mean{0};
    for (std::size_t i = 0; i < dim_; ++i) mean += src[i];
    mean /= static_cast<T>(dim_);
    T var{0};
    for (std::size_t i = 0; i < dim_; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<T>(dim_);
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps_));
    T* dst = y.data() + r * dim_;
    for (std::size_t i = 0; i < dim_; ++i) {
      const T h = (src[i] - mean) * inv;
      dst[i] = h * gain.value[i] + shift.value[i];
      if (cache) xhat[r * dim_ + i] = h;
    }
    if (cache) cache->inv_std[r] = inv;
  }
  if (cache) cache->normalized = std::move(xhat);
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  const std::size_t rows = cache.inv_std.size();
  Tensor<T> gx(grad_out.shape());
  const T inv_n = T{1} / static_cast<T>(dim_);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = grad_out.data() + r * dim_;
    const T* h = cache.normalized.data() + r * dim_;
    T sum_gh{0}, sum_ghh{0};
    for (std::size_t i = 0; i < dim_; ++i) {
      gain.grad[i] += g[i] * h[i];
      shift.grad[i] += g[i];
      const T gh = g[i] * gain.value[i];
      sum_gh += gh;
      sum_ghh += gh * h[i];
    }
    T* dst = gx.data() + r * dim_;
    const T inv = cache.inv_std[r];
    for (std::size_t i = 0; i < dim_; ++i) {
      const T gh = g[i] * gain.value[i];
      dst[i] = inv * (gh - inv_n * sum_gh - h[i] * inv_n * sum_ghh);
    }
  }
  return gx;
}

template <typename T>
void LayerNorm<T>::collect(ParamRefs<T>& out) {
  out.insert(out.end(), {&gain, &shift});
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
void softmax_rows(T* data, std::size_t rows, std::size_t cols) {
  MapMat<T> m(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r).array();
    row = (row - row.maxCoeff()).exp();
    row *= T{1} / row.sum();
  }
}

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(const std::string& name, std::size_t dim, std::size_t heads)
    : w_q(name + ".w_q", {dim, dim}, dim),
      w_k(name + ".w_k", {dim, dim}, dim),
      w_v(name + ".w_v", {dim, dim}, dim),
      w_o(name + ".w_o", {dim, dim}, dim),
      dim_(dim),
      heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw Error(ErrorKind::ShapeMismatch,
                name + ": model width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::forward(const Tensor<T>& x, Cache* cache) const {
  if (x.rank() != 3 || x.dim(2) != dim_) {
    throw Error(ErrorKind::ShapeMismatch, "MHSA expects (B, T, " + std::to_string(dim_) + "), got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), tokens = x.dim(1), rows = batch * tokens;
  const std::size_t dk = head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(dk));

  Tensor<T> q(x.shape()), k(x.shape()), v(x.shape());
  CMapMat<T> xm(x.data(), rows, dim_);
  MapMat<T>(q.data(), rows, dim_).noalias() = xm * CMapMat<T>(w_q.value.data(), dim_, dim_);
  MapMat<T>(k.data(), rows, dim_).noalias() = xm * CMapMat<T>(w_k.value.data(), dim_, dim_);
  MapMat<T>(v.data(), rows, dim_).noalias() = xm * CMapMat<T>(w_v.value.data(), dim_, dim_);

  Tensor<T> concat(x.shape());
  Tensor<T> probs;
  if (cache) probs = Tensor<T>({batch, heads_, tokens, tokens});
  const auto nt = static_cast<Eigen::Index>(tokens);
  const auto ndk = static_cast<Eigen::Index>(dk);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim_));
  RowMat<T> scratch(nt, nt), qh(nt, ndk), kt(ndk, nt), vt(ndk, nt), ot(ndk, nt);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t off = b * tokens * dim_ + h * dk;
      qh = CStridedMap<T>(q.data() + off, nt, ndk, stride) * scale;
      kt = CStridedMap<T>(k.data() + off, nt, ndk, stride).transpose();
      vt = CStridedMap<T>(v.data() + off, nt, ndk, stride).transpose();
      T* p = cache ? probs.data() + (b * heads_ + h) * tokens * tokens : scratch.data();
      MapMat<T> pm(p, nt, nt);
      // rank-d_k update per query row, vectorized along the key axis
      for (Eigen::Index i = 0; i < nt; ++i) {
        auto row = pm.row(i);
        row = qh(i, 0) * kt.row(0);
        for (Eigen::Index e = 1; e < ndk; ++e) row += qh(i, e) * kt.row(e);
      }
      softmax_rows(p, tokens, tokens);
      ot.noalias() = vt * pm.transpose();
      StridedMap<T>(concat.data() + off, nt, ndk, stride) = ot.transpose();
    }
  }

  Tensor<T> out(x.shape());
  MapMat<T>(out.data(), rows, dim_).noalias() =
      CMapMat<T>(concat.data(), rows, dim_) * CMapMat<T>(w_o.value.data(), dim_, dim_);

  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  const Tensor<T>& x = cache.input;
  const std::size_t batch = x.dim(0), tokens = x.dim(1), rows = batch * tokens;
  const std::size_t dk = head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(dk));
  require_shape(grad_out.shape(), x.shape(), "MHSA grad");

  CMapMat<T> g(grad_out.data(), rows, dim_);
  MapMat<T>(w_o.grad.data(), dim_, dim_).noalias() += CMapMat<T>(cache.concat.data(), rows, dim_).transpose() * g;
  Tensor<T> g_concat(x.shape());
  MapMat<T>(g_concat.data(), rows, dim_).noalias() = g * CMapMat<T>(w_o.value.data(), dim_, dim_).transpose();

  Tensor<T> gq(x.shape()), gk(x.shape()), gv(x.shape());
  RowMat<T> g_p(tokens, tokens);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim_));
  const auto nt = static_cast<Eigen::Index>(tokens);
  const auto ndk = static_cast<Eigen::Index>(dk);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t off = b * tokens * dim_ + h * dk;
      CStridedMap<T> qh(cache.q.data() + off, nt, ndk, stride);
      CStridedMap<T> kh(cache.k.data() + off, nt, ndk, stride);
      CStridedMap<T> vh(cache.v.data() + off, nt, ndk, stride);
      CStridedMap<T> go(g_concat.data() + off, nt, ndk, stride);
      CMapMat<T> pm(cache.probs.data() + (b * heads_ + h) * tokens * tokens, nt, nt);

      StridedMap<T>(gv.data() + off, nt, ndk, stride).noalias() = pm.transpose() * go;
      g_p.noalias() = go * vh.transpose();
      // softmax backward, then the 1/sqrt(d_k) scale
      for (Eigen::Index r = 0; r < nt; ++r) {
        const T dot = (g_p.row(r).array() * pm.row(r).array()).sum();
        g_p.row(r) = (pm.row(r).array() * (g_p.row(r).array() - dot) * scale).matrix();
      }
      StridedMap<T>(gq.data() + off, nt, ndk, stride).noalias() = g_p * kh;
      StridedMap<T>(gk.data() + off, nt, ndk, stride).noalias() = g_p.transpose() * qh;
    }
  }

  CMapMat<T> xm(x.data(), rows, dim_);
  CMapMat<T> gqm(gq.data(), rows, dim_), gkm(gk.data(), rows, dim_), gvm(gv.data(), rows, dim_);
  MapMat<T>(w_q.grad.data(), dim_, dim_).noalias() += xm.transpose() * gqm;
  MapMat<T>(w_k.grad.data(), dim_, dim_).noalias() += xm.transpose() * gkm;
  MapMat<T>(w_v.grad.data(), dim_, dim_).noalias() += xm.transpose() * gvm;

  Tensor<T> gx(x.shape());
  MapMat<T> gxm(gx.data(), rows, dim_);
  gxm.noalias() = gqm * CMapMat<T>(w_q.value.data(), dim_, dim_).transpose();
  gxm.noalias() += gkm * CMapMat<T>(w_k.value.data(), dim_, dim_).transpose();
  gxm.noalias() += gvm * CMapMat<T>(w_v.value.data(), dim_, dim_).transpose();
  return gx;
}

template <typename T>
void MultiHeadSelfAttention<T>::collect(ParamRefs<T>& out) {
  out.insert(out.end(), {&w_q, &w_k, &w_v, &w_o});
}

// ---------------------------------------------------------------------------
// FeedForward

template <typename T>
FeedForward<T>::FeedForward(const std::string& name, std::size_t dim, std::size_t hidden)
    : l1(name + ".l1", dim, hidden), l2(name + ".l2", hidden, dim) {}

template <typename T>
Tensor<T> FeedForward<T>::forward(const Tensor<T>& x, Cache* cache) const {
  Tensor<T> pre = l1.forward(x, cache ? &cache->l1 : nullptr);
  Tensor<T> out = l2.forward(relu(pre), cache ? &cache->l2 : nullptr);
  if (cache) cache->hidden_pre = std::move(pre);
  return out;
}

template <typename T>
Tensor<T> FeedForward<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  Tensor<T> g_hidden = l2.backward(grad_out, cache.l2);
  return l1.backward(relu_backward(g_hidden, cache.hidden_pre), cache.l1);
}

template <typename T>
void FeedForward<T>::collect(ParamRefs<T>& out) {
  l1.collect(out);
  l2.collect(out);
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng* rng, std::vector<T>* mask) {
  if (mask) mask->clear();
  if (mode == Mode::Eval || rate <= 0.0) return x;
  if (!rng) throw Error(ErrorKind::InvalidConfig, "training-mode dropout requires a random source");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> y(x.shape());
  std::vector<T> m(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rng->uniform() < rate ? T{0} : keep_scale;
    y[i] = x[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const std::vector<T>& mask) {
  if (mask.empty()) return grad_out;
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask[i];
  return g;
}

// ---------------------------------------------------------------------------
// FusionLayer

template <typename T>
FusionLayer<T>::FusionLayer(const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim,
                            double dropout_rate)
    : attn(name + ".attn", dim, heads),
      ln1(name + ".ln1", dim),
      ffn(name + ".ffn", dim, ffn_dim),
      ln2(name + ".ln2", dim),
      dropout_(dropout_rate) {}

template <typename T>
Tensor<T> FusionLayer<T>::forward(const Tensor<T>& x, Mode mode, Rng* rng, Cache* cache) const {
  Tensor<T> a = dropout(attn.forward(x, cache ? &cache->attn : nullptr), dropout_, mode, rng,
                        cache ? &cache->attn_mask : nullptr);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += x[i];
  Tensor<T> mid = ln1.forward(a, cache ? &cache->ln1 : nullptr);
  Tensor<T> f = dropout(ffn.forward(mid, cache ? &cache->ffn : nullptr), dropout_, mode, rng,
                        cache ? &cache->ffn_mask : nullptr);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += mid[i];
  return ln2.forward(f, cache ? &cache->ln2 : nullptr);
}

template <typename T>
Tensor<T> FusionLayer<T>::backward(const Tensor<T>& grad_out, const Cache& cache) {
  Tensor<T> g_sum2 = ln2.backward(grad_out, cache.ln2);
  Tensor<T> g_mid = ffn.backward(dropout_backward(g_sum2, cache.ffn_mask), cache.ffn);
  for (std::size_t i = 0; i < g_mid.size(); ++i) g_mid[i] += g_sum2[i];
  Tensor<T> g_sum1 = ln1.backward(g_mid, cache.ln1);
  Tensor<T> gx = attn.backward(dropout_backward(g_sum1, cache.attn_mask), cache.attn);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g_sum1[i];
  return gx;
}

template <typename T>
void FusionLayer<T>::collect(ParamRefs<T>& out) {
  attn.collect(out);
  ln1.collect(out);
  ffn.collect(out);
  ln2.collect(out);
}

template <typename T>
Tensor<T> mean_over_tokens(const Tensor<T>& x) {
  if (x.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "mean_over_tokens expects (B, T, d)");
  const std::size_t batch = x.dim(0), tokens = x.dim(1), dim = x.dim(2);
  Tensor<T> y({batch, dim});
  const T inv = T{1} / static_cast<T>(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < dim; ++j) y(b, j) += x(b, t, j);
    }
    for (std::size_t j = 0; j < dim; ++j) y(b, j) *= inv;
  }
  return y;
}

template <typename T>
Tensor<T> mean_over_tokens_backward(const Tensor<T>& grad_out, std::size_t tokens) {
  const std::size_t batch = grad_out.dim(0), dim = grad_out.dim(1);
  Tensor<T> g({batch, tokens, dim});
  const T inv = T{1} / static_cast<T>(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < dim; ++j) g(b, t, j) = grad_out(b, j) * inv;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Loss and optimizer

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::uint16_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "logits " + shape_string(logits.shape()) + " vs " +
                                              std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult<T> result;
  result.grad = Tensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw Error(ErrorKind::LabelOutOfRange,
                  "label " + std::to_string(labels[b]) + " with " + std::to_string(classes) + " classes");
    }
    const T* row = &logits(b, 0);
    const T mx = *std::max_element(row, row + classes);
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += std::exp(static_cast<double>(row[k] - mx));
    const double log_z = static_cast<double>(mx) + std::log(sum);
    total += log_z - static_cast<double>(row[labels[b]]);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - log_z);
      const double onehot = k == labels[b] ? 1.0 : 0.0;
      result.grad(b, k) = static_cast<T>((p - onehot) / static_cast<double>(batch));
    }
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

template <typename T>
Adam<T>::Adam(const ParamRefs<T>& params, AdamConfig config) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Param<T>* p : params) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(const ParamRefs<T>& params) {
  if (params.size() != m_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer tracks " + std::to_string(m_.size()) + " tensors, got " +
                                              std::to_string(params.size()));
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    if (p.size() != m_[i].size()) {
      throw Error(ErrorKind::ShapeMismatch, "optimizer state for " + p.name + " has the wrong size");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]);
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g;
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g * g;
      const double m_hat = m_[i][j] / c1;
      const double v_hat = v_[i][j] / c2;
      p.value[j] -= static_cast<T>(config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
}

#define AMLHP_INSTANTIATE(T)                                                                          \
  template void initialize<T>(const ParamRefs<T>&, Rng&);                                             \
  template class SepConv1D<T>;                                                                        \
  template class ResConv1D<T>;                                                                        \
  template class Linear<T>;                                                                           \
  template class LayerNorm<T>;                                                                        \
  template class MultiHeadSelfAttention<T>;                                                           \
  template class FeedForward<T>;                                                                      \
  template class FusionLayer<T>;                                                                      \
  template class Adam<T>;                                                                             \
  template Tensor<T> max_pool_same<T>(const Tensor<T>&, std::size_t, std::vector<std::uint32_t>*);    \
  template Tensor<T> max_pool_same_backward<T>(const Tensor<T>&, const std::vector<std::uint32_t>&,   \
                                               const Shape&);                                         \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                       \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template void softmax_rows<T>(T*, std::size_t, std::size_t);                                        \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng*, std::vector<T>*);               \
  template Tensor<T> dropout_backward<T>(const Tensor<T>&, const std::vector<T>&);                    \
  template Tensor<T> mean_over_tokens<T>(const Tensor<T>&);                                           \
  template Tensor<T> mean_over_tokens_backward<T>(const Tensor<T>&, std::size_t);                     \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<std::uint16_t>&);

AMLHP_INSTANTIATE(float)
AMLHP_INSTANTIATE(double)
AMLHP_INSTANTIATE(long double)

#undef AMLHP_INSTANTIATE

}  // namespace amlhp::nn
