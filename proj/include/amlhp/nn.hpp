#pragma once

// Hand-differentiated layers for the header-payload network. Every layer has
// a forward pass that optionally fills a cache, and a backward pass that
// consumes the cache, accumulates parameter gradients and returns the input
// gradient. Instantiated for float (training, inference) and double
// (gradient verification).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "amlhp/rng.hpp"
#include "amlhp/tensor.hpp"

namespace amlhp::nn {

enum class Mode { Train, Eval };

enum class Init { FanIn, Ones, Zeros };

template <typename T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T, mem::AlignedAllocator<T>> value;
  std::vector<T, mem::AlignedAllocator<T>> grad;
  std::size_t fan_in = 1;
  Init init = Init::FanIn;

  Param() = default;
  Param(std::string n, Shape s, std::size_t fan, Init how = Init::FanIn)
      : name(std::move(n)), shape(std::move(s)), value(shape_size(shape), how == Init::Ones ? T{1} : T{0}),
        grad(shape_size(shape)), fan_in(fan), init(how) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases; ones and
// zeros for normalization gains and shifts.
template <typename T>
void initialize(const ParamRefs<T>& params, Rng& rng);

// ---------------------------------------------------------------------------
// Convolution stack

// Depthwise k-tap filter per input channel followed by a 1x1 pointwise mix.
// Stride 1, "same" padding: left = (k-1)/2, right = k-1-left.
template <typename T>
class SepConv1D {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> depthwise;
  };

  SepConv1D() = default;
  SepConv1D(const std::string& name, std::size_t in_channels, std::size_t out_channels,
            std::size_t kernel);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);

  void collect(ParamRefs<T>& out);
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }

  // C_in*k + C_in + C_in*C_out + C_out
  static std::size_t param_count(std::size_t in, std::size_t out, std::size_t k) {
    return in * k + in + in * out + out;
  }

  Param<T> dw_weight;  // (C_in, k)
  Param<T> dw_bias;    // (C_in)
  Param<T> pw_weight;  // (C_out, C_in)
  Param<T> pw_bias;    // (C_out)

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t k_ = 1;
};

// Max pooling along the length axis, stride 1, window centred like the
// convolution padding. Out-of-range positions are ignored.
template <typename T>
Tensor<T> max_pool_same(const Tensor<T>& x, std::size_t window, std::vector<std::uint32_t>* argmax);

template <typename T>
Tensor<T> max_pool_same_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                                 const Shape& input_shape);

// out = MaxPool(ReLU(SepConv1D(x))) + Proj(x), Proj = identity when the
// channel counts agree, else a bias-free 1x1 convolution.
template <typename T>
class ResConv1D {
 public:
  struct Cache {
    typename SepConv1D<T>::Cache conv;
    Tensor<T> pre_activation;
    std::vector<std::uint32_t> argmax;
  };

  ResConv1D() = default;
  ResConv1D(const std::string& name, std::size_t in_channels, std::size_t out_channels,
            std::size_t kernel, std::size_t pool_window);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);
  void collect(ParamRefs<T>& out);

  bool has_projection() const { return has_proj_; }
  const SepConv1D<T>& conv() const { return conv_; }
  SepConv1D<T>& conv() { return conv_; }
  std::size_t pool_window() const { return pool_; }

  Param<T> proj;  // (C_out, C_in), empty when identity

 private:
  SepConv1D<T> conv_;
  std::size_t pool_ = 3;
  bool has_proj_ = false;
};

// ---------------------------------------------------------------------------
// Token stack. Inputs are (..., d_in); all leading axes are treated as rows.

template <typename T>
class Linear {
 public:
  struct Cache {
    Tensor<T> input;
  };

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);
  void collect(ParamRefs<T>& out);

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  bool has_bias() const { return has_bias_; }

  Param<T> weight;  // (in, out): y = x W + b
  Param<T> bias;    // (out)

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  bool has_bias_ = true;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// grad * [pre > 0]
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& pre_activation);

template <typename T>
class LayerNorm {
 public:
  static constexpr double kDefaultEps = 1e-5;

  struct Cache {
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim, double eps = kDefaultEps);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);
  void collect(ParamRefs<T>& out);

  Param<T> gain;
  Param<T> shift;

 private:
  std::size_t dim_ = 0;
  double eps_ = kDefaultEps;
};

// Row-wise softmax over the last axis with max subtraction.
template <typename T>
void softmax_rows(T* data, std::size_t rows, std::size_t cols);

// Scaled dot-product attention over h heads of width d_k = d/h, queries,
// keys and values projected without bias, heads concatenated and projected
// by W_O. No positional information enters: the layer is equivariant under
// token permutations.
template <typename T>
class MultiHeadSelfAttention {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> q, k, v;    // (B, T, d)
    Tensor<T> probs;      // (B, h, T, T)
    Tensor<T> concat;     // (B, T, d)
  };

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, std::size_t dim, std::size_t heads);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);
  void collect(ParamRefs<T>& out);

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return dim_ / heads_; }

  Param<T> w_q, w_k, w_v, w_o;  // each (d, d)

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
};

// max(0, x W1 + b1) W2 + b2
template <typename T>
class FeedForward {
 public:
  struct Cache {
    typename Linear<T>::Cache l1, l2;
    Tensor<T> hidden_pre;
  };

  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t dim, std::size_t hidden);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);
  void collect(ParamRefs<T>& out);

  Linear<T> l1, l2;
};

// Inverted dropout. In eval mode or at rate 0 the mask is left empty and the
// input passes through.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng* rng, std::vector<T>* mask);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const std::vector<T>& mask);

// F_out   = LN(F + Dropout(MHSA(F)))
// F_final = LN(F_out + Dropout(FFN(F_out)))
template <typename T>
class FusionLayer {
 public:
  struct Cache {
    typename MultiHeadSelfAttention<T>::Cache attn;
    typename LayerNorm<T>::Cache ln1, ln2;
    typename FeedForward<T>::Cache ffn;
    std::vector<T> attn_mask, ffn_mask;
  };

  FusionLayer() = default;
  FusionLayer(const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn_dim,
              double dropout_rate);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng, Cache* cache = nullptr) const;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache& cache);
  void collect(ParamRefs<T>& out);

  double dropout_rate() const { return dropout_; }
  void set_dropout_rate(double rate) { dropout_ = rate; }

  MultiHeadSelfAttention<T> attn;
  LayerNorm<T> ln1;
  FeedForward<T> ffn;
  LayerNorm<T> ln2;

 private:
  double dropout_ = 0.0;
};

// (B, T, d) -> (B, d)
template <typename T>
Tensor<T> mean_over_tokens(const Tensor<T>& x);

template <typename T>
Tensor<T> mean_over_tokens_backward(const Tensor<T>& grad_out, std::size_t tokens);

// ---------------------------------------------------------------------------
// Loss and optimizer

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d loss / d logits, (B, K)
};

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::uint16_t>& labels);

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamRefs<T>& params, AdamConfig config);

  // Bias-corrected update of every parameter from its accumulated gradient.
  void step(const ParamRefs<T>& params);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace amlhp::nn
