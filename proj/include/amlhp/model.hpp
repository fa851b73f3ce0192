#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amlhp/nn.hpp"
#include "amlhp/tensor.hpp"

namespace amlhp {

inline constexpr std::size_t kHeaderLen = 128;

enum class FusionKind {
  Attention,       // L fusion layers (MHSA + FFN)
  FullyConnected,  // ablation: one per-token linear layer of matching width
};

std::string_view to_string(FusionKind kind);
FusionKind parse_fusion_kind(std::string_view text);

// Architecture hyperparameters. Defaults reproduce the reference selection:
// P = 64, L = 2, h = 8, 32-unit classifier, dropout 0.1, kernels 1/2/4 for
// headers and 2/4/8 for payloads.
struct ModelConfig {
  std::size_t payload_len = 64;
  std::size_t num_classes = 2;
  std::vector<std::size_t> header_kernels{1, 2, 4};
  std::vector<std::size_t> payload_kernels{2, 4, 8};
  std::size_t extractor_channels = 8;
  std::size_t refine_kernel = 3;
  std::size_t pool_window = 3;
  std::size_t header_tokens = 64;
  std::size_t payload_tokens = 32;
  std::size_t model_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t ffn_dim = 64;
  double dropout = 0.1;
  std::size_t classifier_hidden = 32;
  FusionKind fusion = FusionKind::Attention;

  std::size_t tokens() const { return header_tokens + payload_tokens; }
  // Output channels of each refinement conv: its (r, L) map is cut into
  // tokens of d consecutive positions, so r = tokens * d / L.
  std::size_t header_refine_channels() const { return header_tokens * model_dim / kHeaderLen; }
  std::size_t payload_refine_channels() const { return payload_tokens * model_dim / payload_len; }

  // Throws InvalidConfig describing the first violated constraint.
  void validate() const;

  // key = value lines, one per field; parse_text accepts the same keys.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Header-payload classification network:
//   header (B,1,128) -> 3 ResConv1D branches -> concat -> SepConv1D -> (B,r_h,128) -> tokens
//   payload (B,1,P)  -> 3 ResConv1D branches -> concat -> SepConv1D -> (B,r_p,P)   -> tokens
// where a token is d consecutive positions of one refined channel.
//   F = [header tokens; payload tokens] -> L fusion layers -> token mean
//   -> Linear(d, 32) -> ReLU -> Linear(32, K)
template <typename T>
class Network {
 public:
  using Branch = nn::ResConv1D<T>;

  struct Cache {
    std::vector<typename Branch::Cache> header_branches, payload_branches;
    typename nn::SepConv1D<T>::Cache header_refine, payload_refine;
    Shape header_refined_shape, payload_refined_shape;
    std::vector<typename nn::FusionLayer<T>::Cache> fusion;
    typename nn::Linear<T>::Cache mixer;
    Tensor<T> mixer_pre;
    std::vector<T> mixer_mask;
    typename nn::Linear<T>::Cache hidden, out;
    Tensor<T> hidden_pre;
  };

  explicit Network(const ModelConfig& config);

  // Fan-in uniform initialization from a seed.
  void init(std::uint64_t seed);

  // Three (B, C_e, 128) maps, kernels 1, 2, 4.
  std::vector<Tensor<T>> header_extractor(const Tensor<T>& header, Cache* cache = nullptr) const;
  // Three (B, C_e, P) maps, kernels 2, 4, 8.
  std::vector<Tensor<T>> payload_extractor(const Tensor<T>& payload, Cache* cache = nullptr) const;
  // (B, c_header + c_payload, d), header tokens first.
  Tensor<T> refine_concat(const std::vector<Tensor<T>>& header_maps, const std::vector<Tensor<T>>& payload_maps,
                          Cache* cache = nullptr) const;
  // Fusion stack (or the fully connected ablation) over F.
  Tensor<T> fuse(const Tensor<T>& tokens, nn::Mode mode, Rng* rng, Cache* cache = nullptr) const;

  // Raw logits (B, K). Inputs are byte features scaled to [0, 1]; anything
  // outside that range is rejected with InputOutOfRange.
  Tensor<T> forward(const Tensor<T>& header, const Tensor<T>& payload, nn::Mode mode = nn::Mode::Eval,
                    Rng* rng = nullptr, Cache* cache = nullptr) const;

  // Accumulates d loss / d parameter for every parameter given d loss / d logits.
  void backward(const Tensor<T>& grad_logits, const Cache& cache);

  nn::ParamRefs<T> parameters();
  std::vector<const nn::Param<T>*> parameters() const;
  void zero_grad();

  const ModelConfig& config() const { return config_; }
  void set_dropout(double rate);

  template <typename U>
  Network<U> cast() const {
    Network<U> other(config_);
    auto dst = other.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (std::size_t j = 0; j < src[i]->size(); ++j) dst[i]->value[j] = static_cast<U>(src[i]->value[j]);
    }
    return other;
  }

  // Layers are public so tests can set weights directly.
  std::vector<Branch> header_branches;
  std::vector<Branch> payload_branches;
  nn::SepConv1D<T> header_refine;
  nn::SepConv1D<T> payload_refine;
  std::vector<nn::FusionLayer<T>> fusion_layers;
  nn::Linear<T> mixer;
  nn::Linear<T> hidden;
  nn::Linear<T> out;

 private:
  void collect(nn::ParamRefs<T>& refs);

  ModelConfig config_;
};

using Model = Network<float>;

// Row-wise argmax; ties go to the lowest class index.
template <typename T>
std::vector<std::uint16_t> argmax_rows(const Tensor<T>& logits);

// Row-wise softmax probabilities.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// ---------------------------------------------------------------------------
// Resource accounting

struct LayerCost {
  std::string name;
  std::size_t params = 0;
  std::uint64_t flops = 0;
};

struct ResourceReport {
  std::uint64_t flops = 0;  // one single-packet eval-mode forward
  std::size_t params = 0;
  std::size_t model_size_bytes = 0;
  std::vector<LayerCost> layers;
};

// FLOPs count one multiply-add as 2; additions, comparisons, exponentials
// and divisions outside of products count 1 each.
ResourceReport count_resources(const Model& model);
ResourceReport count_resources(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Weight file:
//   "AMLHPW1\n" | u16 version | u32 config length | config text
//   then per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 values
// All integers and floats little-endian.

inline constexpr std::uint16_t kWeightFormatVersion = 1;

std::string serialize_weights(const Model& model);
Model deserialize_weights(const std::string& bytes, const ModelConfig* expected = nullptr);

void save_weights(const Model& model, const std::filesystem::path& path);
// With `expected`, the network is built from that configuration and every
// stored tensor must match it; otherwise the embedded configuration is used.
Model load_weights(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace amlhp
