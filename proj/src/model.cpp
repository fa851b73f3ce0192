#include "amlhp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "binary_io.hpp"

namespace amlhp {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

void bad_config(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

template <typename T>
void check_unit_range(const Tensor<T>& x, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= T{0} && x[i] <= T{1})) {
      throw Error(ErrorKind::InputOutOfRange,
                  std::string(what) + " feature " + std::to_string(i) + " outside [0, 1]");
    }
  }
}

constexpr std::size_t kEvalSlice = 8;

// Rows [start, start + n) along the batch axis.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t n) {
  Shape shape = x.shape();
  const std::size_t row = x.size() / shape[0];
  shape[0] = n;
  Tensor<T> out(shape);
  std::copy(x.data() + start * row, x.data() + (start + n) * row, out.data());
  return out;
}

// Slices channel block `index` of width `width` out of (B, C, L).
template <typename T>
Tensor<T> channel_block(const Tensor<T>& x, std::size_t index, std::size_t width) {
  const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
  Tensor<T> out({batch, width, len});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.data() + (b * channels + index * width) * len;
    std::copy(src, src + width * len, out.data() + b * width * len);
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& maps) {
  const std::size_t batch = maps.front().dim(0), len = maps.front().dim(2);
  std::size_t channels = 0;
  for (const auto& m : maps) {
    if (m.dim(0) != batch || m.dim(2) != len) {
      throw Error(ErrorKind::ShapeMismatch, "branch maps differ in batch or length");
    }
    channels += m.dim(1);
  }
  Tensor<T> out({batch, channels, len});
  for (std::size_t b = 0; b < batch; ++b) {
    T* dst = out.data() + b * channels * len;
    for (const auto& m : maps) {
      const std::size_t n = m.dim(1) * len;
      std::copy(m.data() + b * n, m.data() + (b + 1) * n, dst);
      dst += n;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(FusionKind kind) {
  return kind == FusionKind::Attention ? "attention" : "fully_connected";
}

FusionKind parse_fusion_kind(std::string_view text) {
  if (text == "attention") return FusionKind::Attention;
  if (text == "fully_connected" || text == "fc") return FusionKind::FullyConnected;
  throw Error(ErrorKind::InvalidConfig, "unknown fusion kind '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (num_classes < 2) bad_config("num_classes must be at least 2");
  if (num_classes > 65535) bad_config("num_classes must fit in 16 bits");
  if (payload_len == 0 || payload_len > 65535) bad_config("payload_len must be in [1, 65535]");
  if (header_kernels != std::vector<std::size_t>{1, 2, 4}) bad_config("header_kernels must be 1,2,4");
  if (payload_kernels != std::vector<std::size_t>{2, 4, 8}) bad_config("payload_kernels must be 2,4,8");
  if (extractor_channels == 0 || model_dim == 0 || ffn_dim == 0 || classifier_hidden == 0) {
    bad_config("layer widths must be positive");
  }
  if (refine_kernel == 0 || pool_window == 0) bad_config("refine_kernel and pool_window must be positive");
  if (heads == 0 || model_dim % heads != 0) bad_config("model_dim must be divisible by heads");
  if (kHeaderLen % model_dim != 0) bad_config("model_dim must divide the header length 128");
  if (payload_len % model_dim != 0) {
    bad_config("model_dim must divide payload_len (" + std::to_string(payload_len) + ")");
  }
  if (header_tokens == 0 || header_tokens % (kHeaderLen / model_dim) != 0) {
    bad_config("header_tokens must be a positive multiple of 128 / model_dim = " +
               std::to_string(kHeaderLen / model_dim));
  }
  if (payload_tokens == 0 || payload_tokens % (payload_len / model_dim) != 0) {
    bad_config("payload_tokens must be a positive multiple of payload_len / model_dim = " +
               std::to_string(payload_len / model_dim));
  }
  if (fusion == FusionKind::Attention && layers == 0) bad_config("layers must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad_config("dropout must be in [0, 1)");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "payload_len = " << payload_len << '\n'
     << "num_classes = " << num_classes << '\n'
     << "header_kernels = " << join_sizes(header_kernels) << '\n'
     << "payload_kernels = " << join_sizes(payload_kernels) << '\n'
     << "extractor_channels = " << extractor_channels << '\n'
     << "refine_kernel = " << refine_kernel << '\n'
     << "pool_window = " << pool_window << '\n'
     << "header_tokens = " << header_tokens << '\n'
     << "payload_tokens = " << payload_tokens << '\n'
     << "model_dim = " << model_dim << '\n'
     << "layers = " << layers << '\n'
     << "heads = " << heads << '\n'
     << "ffn_dim = " << ffn_dim << '\n'
     << "dropout = " << dropout << '\n'
     << "classifier_hidden = " << classifier_hidden << '\n'
     << "fusion = " << to_string(fusion) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  ModelConfig c;
  try {
    for (const auto& [key, node] : tree) {
      const std::string v = node.get_value<std::string>();
      if (key == "payload_len") c.payload_len = std::stoull(v);
      else if (key == "num_classes") c.num_classes = std::stoull(v);
      else if (key == "header_kernels") c.header_kernels = parse_sizes(v);
      else if (key == "payload_kernels") c.payload_kernels = parse_sizes(v);
      else if (key == "extractor_channels") c.extractor_channels = std::stoull(v);
      else if (key == "refine_kernel") c.refine_kernel = std::stoull(v);
      else if (key == "pool_window") c.pool_window = std::stoull(v);
      else if (key == "header_tokens") c.header_tokens = std::stoull(v);
      else if (key == "payload_tokens") c.payload_tokens = std::stoull(v);
      else if (key == "model_dim") c.model_dim = std::stoull(v);
      else if (key == "layers") c.layers = std::stoull(v);
      else if (key == "heads") c.heads = std::stoull(v);
      else if (key == "ffn_dim") c.ffn_dim = std::stoull(v);
      else if (key == "dropout") c.dropout = std::stod(v);
      else if (key == "classifier_hidden") c.classifier_hidden = std::stoull(v);
      else if (key == "fusion") c.fusion = parse_fusion_kind(v);
      else throw Error(ErrorKind::InvalidConfig, "unknown model key '" + key + "'");
    }
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad model value: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
Network<T>::Network(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& c = config_;
  for (std::size_t i = 0; i < c.header_kernels.size(); ++i) {
    header_branches.emplace_back("header.branch" + std::to_string(i), 1, c.extractor_channels, c.header_kernels[i],
                                 c.pool_window);
  }
  for (std::size_t i = 0; i < c.payload_kernels.size(); ++i) {
    payload_branches.emplace_back("payload.branch" + std::to_string(i), 1, c.extractor_channels,
                                  c.payload_kernels[i], c.pool_window);
  }
  header_refine = nn::SepConv1D<T>("header.refine", c.header_kernels.size() * c.extractor_channels,
                                   c.header_refine_channels(), c.refine_kernel);
  payload_refine = nn::SepConv1D<T>("payload.refine", c.payload_kernels.size() * c.extractor_channels,
                                    c.payload_refine_channels(), c.refine_kernel);
  if (c.fusion == FusionKind::Attention) {
    for (std::size_t l = 0; l < c.layers; ++l) {
      fusion_layers.emplace_back("fusion" + std::to_string(l), c.model_dim, c.heads, c.ffn_dim, c.dropout);
    }
  } else {
    mixer = nn::Linear<T>("mixer", c.model_dim, c.model_dim);
  }
  hidden = nn::Linear<T>("classifier.hidden", c.model_dim, c.classifier_hidden);
  out = nn::Linear<T>("classifier.out", c.classifier_hidden, c.num_classes);
}

template <typename T>
void Network<T>::init(std::uint64_t seed) {
  Rng rng(seed);
  nn::initialize(parameters(), rng);
}

template <typename T>
void Network<T>::collect(nn::ParamRefs<T>& refs) {
  for (auto& b : header_branches) b.collect(refs);
  for (auto& b : payload_branches) b.collect(refs);
  header_refine.collect(refs);
  payload_refine.collect(refs);
  if (config_.fusion == FusionKind::Attention) {
    for (auto& f : fusion_layers) f.collect(refs);
  } else {
    mixer.collect(refs);
  }
  hidden.collect(refs);
  out.collect(refs);
}

template <typename T>
nn::ParamRefs<T> Network<T>::parameters() {
  nn::ParamRefs<T> refs;
  collect(refs);
  return refs;
}

template <typename T>
std::vector<const nn::Param<T>*> Network<T>::parameters() const {
  nn::ParamRefs<T> refs;
  const_cast<Network*>(this)->collect(refs);
  return {refs.begin(), refs.end()};
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
void Network<T>::set_dropout(double rate) {
  config_.dropout = rate;
  config_.validate();
  for (auto& f : fusion_layers) f.set_dropout_rate(rate);
}

template <typename T>
std::vector<Tensor<T>> Network<T>::header_extractor(const Tensor<T>& header, Cache* cache) const {
  if (header.rank() != 3 || header.dim(1) != 1 || header.dim(2) != kHeaderLen) {
    throw Error(ErrorKind::ShapeMismatch, "header input must be (B, 1, 128), got " + shape_string(header.shape()));
  }
  std::vector<Tensor<T>> maps;
  if (cache) cache->header_branches.resize(header_branches.size());
  for (std::size_t i = 0; i < header_branches.size(); ++i) {
    maps.push_back(header_branches[i].forward(header, cache ? &cache->header_branches[i] : nullptr));
  }
  return maps;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::payload_extractor(const Tensor<T>& payload, Cache* cache) const {
  if (payload.rank() != 3 || payload.dim(1) != 1 || payload.dim(2) != config_.payload_len) {
    throw Error(ErrorKind::ShapeMismatch, "payload input must be (B, 1, " + std::to_string(config_.payload_len) +
                                              "), got " + shape_string(payload.shape()));
  }
  std::vector<Tensor<T>> maps;
  if (cache) cache->payload_branches.resize(payload_branches.size());
  for (std::size_t i = 0; i < payload_branches.size(); ++i) {
    maps.push_back(payload_branches[i].forward(payload, cache ? &cache->payload_branches[i] : nullptr));
  }
  return maps;
}

template <typename T>
Tensor<T> Network<T>::refine_concat(const std::vector<Tensor<T>>& header_maps,
                                    const std::vector<Tensor<T>>& payload_maps, Cache* cache) const {
  if (header_maps.size() != header_branches.size() || payload_maps.size() != payload_branches.size()) {
    throw Error(ErrorKind::ShapeMismatch, "refine_concat expects one map per extractor branch");
  }
  Tensor<T> h = header_refine.forward(concat_channels(header_maps), cache ? &cache->header_refine : nullptr);
  Tensor<T> p = payload_refine.forward(concat_channels(payload_maps), cache ? &cache->payload_refine : nullptr);
  if (cache) {
    cache->header_refined_shape = h.shape();
    cache->payload_refined_shape = p.shape();
  }
  // (B, r, L) is stored row-major, so each channel splits into L / d
  // consecutive rows of width d without moving data.
  const std::size_t batch = h.dim(0), d = config_.model_dim;
  const std::size_t ch = config_.header_tokens, cp = config_.payload_tokens;
  Tensor<T> f({batch, ch + cp, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(h.data() + b * ch * d, h.data() + (b + 1) * ch * d, &f(b, 0, 0));
    std::copy(p.data() + b * cp * d, p.data() + (b + 1) * cp * d, &f(b, ch, 0));
  }
  return f;
}

template <typename T>
Tensor<T> Network<T>::fuse(const Tensor<T>& tokens, nn::Mode mode, Rng* rng, Cache* cache) const {
  if (config_.fusion == FusionKind::FullyConnected) {
    Tensor<T> pre = mixer.forward(tokens, cache ? &cache->mixer : nullptr);
    Tensor<T> y = nn::dropout(nn::relu(pre), config_.dropout, mode, rng, cache ? &cache->mixer_mask : nullptr);
    if (cache) cache->mixer_pre = std::move(pre);
    return y;
  }
  Tensor<T> x = tokens;
  if (cache) cache->fusion.resize(fusion_layers.size());
  for (std::size_t l = 0; l < fusion_layers.size(); ++l) {
    x = fusion_layers[l].forward(x, mode, rng, cache ? &cache->fusion[l] : nullptr);
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& header, const Tensor<T>& payload, nn::Mode mode, Rng* rng,
                              Cache* cache) const {
  if (header.dim(0) != payload.dim(0)) {
    throw Error(ErrorKind::ShapeMismatch, "header and payload batch sizes differ");
  }
  check_unit_range(header, "header");
  check_unit_range(payload, "payload");

  // Rows are independent in eval mode, so a large batch runs in slices whose
  // activations stay cache resident; one pass over 100 packets otherwise
  // streams megabyte-sized token tensors through memory at every layer.
  const std::size_t batch = header.dim(0);
  if (mode == nn::Mode::Eval && !cache && batch > kEvalSlice) {
    Tensor<T> logits({batch, config_.num_classes});
    for (std::size_t start = 0; start < batch; start += kEvalSlice) {
      const std::size_t n = std::min(kEvalSlice, batch - start);
      const auto part = forward(slice_rows(header, start, n), slice_rows(payload, start, n), mode, rng, nullptr);
      std::copy(part.data(), part.data() + part.size(), logits.data() + start * config_.num_classes);
    }
    return logits;
  }

  auto hm = header_extractor(header, cache);
  auto pm = payload_extractor(payload, cache);
  Tensor<T> f = refine_concat(hm, pm, cache);
  Tensor<T> fused = fuse(f, mode, rng, cache);
  Tensor<T> pooled = nn::mean_over_tokens(fused);
  Tensor<T> pre = hidden.forward(pooled, cache ? &cache->hidden : nullptr);
  Tensor<T> logits = out.forward(nn::relu(pre), cache ? &cache->out : nullptr);
  if (cache) cache->hidden_pre = std::move(pre);
  return logits;
}

template <typename T>
void Network<T>::backward(const Tensor<T>& grad_logits, const Cache& cache) {
  Tensor<T> g = out.backward(grad_logits, cache.out);
  g = hidden.backward(nn::relu_backward(g, cache.hidden_pre), cache.hidden);
  g = nn::mean_over_tokens_backward(g, config_.tokens());

  if (config_.fusion == FusionKind::FullyConnected) {
    g = mixer.backward(nn::relu_backward(nn::dropout_backward(g, cache.mixer_mask), cache.mixer_pre), cache.mixer);
  } else {
    for (std::size_t l = fusion_layers.size(); l-- > 0;) g = fusion_layers[l].backward(g, cache.fusion[l]);
  }

  const std::size_t batch = g.dim(0), d = config_.model_dim;
  const std::size_t ch = config_.header_tokens, cp = config_.payload_tokens;
  Tensor<T> gh({batch, ch, d}), gp({batch, cp, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(&g(b, 0, 0), &g(b, 0, 0) + ch * d, gh.data() + b * ch * d);
    std::copy(&g(b, ch, 0), &g(b, ch, 0) + cp * d, gp.data() + b * cp * d);
  }
  gh.reshape(cache.header_refined_shape);
  gp.reshape(cache.payload_refined_shape);
  Tensor<T> gh_maps = header_refine.backward(gh, cache.header_refine);
  Tensor<T> gp_maps = payload_refine.backward(gp, cache.payload_refine);
  const std::size_t ce = config_.extractor_channels;
  for (std::size_t i = 0; i < header_branches.size(); ++i) {
    header_branches[i].backward(channel_block(gh_maps, i, ce), cache.header_branches[i]);
  }
  for (std::size_t i = 0; i < payload_branches.size(); ++i) {
    payload_branches[i].backward(channel_block(gp_maps, i, ce), cache.payload_branches[i]);
  }
}

template <typename T>
std::vector<std::uint16_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::uint16_t> pred(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < cols; ++k) {
      if (logits(r, k) > logits(r, best)) best = k;
    }
    pred[r] = static_cast<std::uint16_t>(best);
  }
  return pred;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> p = logits;
  nn::softmax_rows(p.data(), p.dim(0), p.dim(1));
  return p;
}

template class Network<float>;
template class Network<double>;
template class Network<long double>;
template std::vector<std::uint16_t> argmax_rows<float>(const Tensor<float>&);
template std::vector<std::uint16_t> argmax_rows<double>(const Tensor<double>&);
template Tensor<float> softmax<float>(const Tensor<float>&);
template Tensor<double> softmax<double>(const Tensor<double>&);

// ---------------------------------------------------------------------------
// Resources

namespace {

std::uint64_t resconv_flops(std::size_t in, std::size_t out, std::size_t k, std::size_t pool, std::size_t len) {
  std::uint64_t f = 0;
  f += 2ull * in * k * len + in * len;    // depthwise MACs + bias
  f += 2ull * out * in * len + out * len;  // pointwise MACs + bias
  f += out * len;                          // ReLU
  f += out * len * (pool - 1);             // max-pool comparisons
  if (in != out) f += 2ull * out * in * len;  // 1x1 projection
  f += out * len;                          // residual add
  return f;
}

std::uint64_t sepconv_flops(std::size_t in, std::size_t out, std::size_t k, std::size_t len) {
  return 2ull * in * k * len + in * len + 2ull * out * in * len + out * len;
}

std::uint64_t layernorm_flops(std::size_t rows, std::size_t d) {
  // mean, centring, square+sum, scale, affine
  return rows * (d + d + 2 * d + d + 2 * d) + rows * 2;
}

std::size_t count_of(const std::vector<const nn::Param<float>*>& ps, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto* p : ps) {
    if (p->name.rfind(prefix, 0) == 0) n += p->size();
  }
  return n;
}

}  // namespace

ResourceReport count_resources(const Model& model) {
  const ModelConfig& c = model.config();
  const auto params = model.parameters();
  ResourceReport r;
  for (const auto* p : params) r.params += p->size();

  const std::size_t ce = c.extractor_channels, d = c.model_dim, tokens = c.tokens();
  for (std::size_t i = 0; i < c.header_kernels.size(); ++i) {
    const std::string name = "header.branch" + std::to_string(i);
    r.layers.push_back({name, count_of(params, name + "."),
                        resconv_flops(1, ce, c.header_kernels[i], c.pool_window, kHeaderLen)});
  }
  for (std::size_t i = 0; i < c.payload_kernels.size(); ++i) {
    const std::string name = "payload.branch" + std::to_string(i);
    r.layers.push_back({name, count_of(params, name + "."),
                        resconv_flops(1, ce, c.payload_kernels[i], c.pool_window, c.payload_len)});
  }
  r.layers.push_back({"header.refine", count_of(params, "header.refine."),
                      sepconv_flops(3 * ce, c.header_refine_channels(), c.refine_kernel, kHeaderLen)});
  r.layers.push_back({"payload.refine", count_of(params, "payload.refine."),
                      sepconv_flops(3 * ce, c.payload_refine_channels(), c.refine_kernel, c.payload_len)});

  if (c.fusion == FusionKind::Attention) {
    const std::size_t h = c.heads, dk = d / h;
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string name = "fusion" + std::to_string(l);
      std::uint64_t f = 0;
      f += 4ull * 2 * tokens * d * d;                 // Q, K, V, O projections
      f += 2ull * h * tokens * tokens * dk;           // Q K^T
      f += 1ull * h * tokens * tokens;                // 1/sqrt(d_k)
      f += 5ull * h * tokens * tokens;                // softmax: max, sub, exp, sum, scale
      f += 2ull * h * tokens * tokens * dk;           // P V
      f += tokens * d;                                // residual
      f += layernorm_flops(tokens, d);
      f += 2ull * tokens * d * c.ffn_dim + tokens * c.ffn_dim;  // W1, b1
      f += tokens * c.ffn_dim;                                  // ReLU
      f += 2ull * tokens * c.ffn_dim * d + tokens * d;          // W2, b2
      f += tokens * d;                                          // residual
      f += layernorm_flops(tokens, d);
      r.layers.push_back({name, count_of(params, name + "."), f});
    }
  } else {
    r.layers.push_back({"mixer", count_of(params, "mixer."), 2ull * tokens * d * d + 2ull * tokens * d});
  }
  r.layers.push_back({"token_mean", 0, tokens * d + d});
  r.layers.push_back({"classifier", count_of(params, "classifier."),
                      2ull * d * c.classifier_hidden + 2ull * c.classifier_hidden +
                          2ull * c.classifier_hidden * c.num_classes + c.num_classes});
  for (const auto& l : r.layers) r.flops += l.flops;
  r.model_size_bytes = serialize_weights(model).size();
  return r;
}

ResourceReport count_resources(const ModelConfig& config) {
  Model model(config);
  return count_resources(model);
}

// ---------------------------------------------------------------------------
// Weight file

namespace {
constexpr char kWeightMagic[] = "AMLHPW1\n";
constexpr std::size_t kWeightMagicLen = 8;
}  // namespace

std::string serialize_weights(const Model& model) {
  std::string out(kWeightMagic, kWeightMagicLen);
  io::put_le<std::uint16_t>(out, kWeightFormatVersion);
  const std::string cfg = model.config().to_text();
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto* p : model.parameters()) {
    io::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(p->name.size()));
    out += p->name;
    io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(p->shape.size()));
    for (std::size_t dim : p->shape) io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    for (float v : p->value) io::put_le<float>(out, v);
  }
  return out;
}

Model deserialize_weights(const std::string& bytes, const ModelConfig* expected) {
  if (bytes.size() < kWeightMagicLen || bytes.compare(0, 5, "AMLHP") != 0 || bytes[5] != 'W') {
    throw Error(ErrorKind::BadMagic, "not a weight file");
  }
  if (bytes.compare(0, kWeightMagicLen, std::string(kWeightMagic, kWeightMagicLen)) != 0) {
    throw Error(ErrorKind::VersionMismatch, "weight file magic '" + bytes.substr(0, 7) + "' is not AMLHPW1");
  }
  const std::string body = bytes.substr(kWeightMagicLen);
  io::Reader rd(body);
  std::uint16_t version = 0;
  std::uint32_t cfg_len = 0;
  std::string cfg_text;
  if (!rd.get(version)) throw Error(ErrorKind::TruncatedRecord, "weight file ends inside the preamble");
  if (version != kWeightFormatVersion) {
    throw Error(ErrorKind::VersionMismatch, "weight format version " + std::to_string(version) + ", expected " +
                                                std::to_string(kWeightFormatVersion));
  }
  if (!rd.get(cfg_len) || !rd.get_bytes(cfg_len, cfg_text)) {
    throw Error(ErrorKind::TruncatedRecord, "weight file ends inside the config block");
  }
  const ModelConfig stored = ModelConfig::from_text(cfg_text);
  Model model(expected ? *expected : stored);

  std::map<std::string, nn::Param<float>*> by_name;
  for (auto* p : model.parameters()) by_name[p->name] = p;
  while (!rd.done()) {
    std::uint16_t name_len = 0;
    std::string name;
    std::uint8_t rank = 0;
    if (!rd.get(name_len) || !rd.get_bytes(name_len, name) || !rd.get(rank)) {
      throw Error(ErrorKind::TruncatedRecord, "weight file ends inside a tensor header");
    }
    Shape shape(rank);
    for (auto& dim : shape) {
      std::uint32_t v = 0;
      if (!rd.get(v)) throw Error(ErrorKind::TruncatedRecord, "tensor " + name + " header is truncated");
      dim = v;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " is not part of the configured model");
    }
    nn::Param<float>& p = *it->second;
    if (shape != p.shape) {
      throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " has shape " + shape_string(shape) +
                                                ", model expects " + shape_string(p.shape));
    }
    for (float& v : p.value) {
      if (!rd.get(v)) throw Error(ErrorKind::TruncatedRecord, "tensor " + name + " values are truncated");
    }
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "tensor " + by_name.begin()->first + " is missing from the weight file");
  }
  return model;
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::UnreadableFile, "cannot write " + path.string());
  const std::string bytes = serialize_weights(model);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorKind::UnreadableFile, "failed writing " + path.string());
}

Model load_weights(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_weights(ss.str(), expected);
}

}  // namespace amlhp
