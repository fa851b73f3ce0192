#include <chrono>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "amlhp/error.hpp"
#include "amlhp/rng.hpp"
#include "amlhp/train.hpp"

namespace amlhp::train {

namespace {

// Stream offsets so that initialization, shuffling and dropout draw from
// unrelated sequences of the one seed.
constexpr std::uint64_t kShuffleStream = 0x5bd1e995u;
constexpr std::uint64_t kDropoutStream = 0x9e3779b97f4a7c15ull;

void check_compatible(const data::Dataset& ds, const ModelConfig& config, const char* what) {
  if (ds.num_classes != config.num_classes) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " set has " + std::to_string(ds.num_classes) +
                                              " classes, model expects " + std::to_string(config.num_classes));
  }
  if (ds.payload_len != config.payload_len) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " set has payload length " +
                                              std::to_string(ds.payload_len) + ", model expects " +
                                              std::to_string(config.payload_len));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw Error(ErrorKind::InvalidConfig, "epochs must be positive");
  if (batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::InvalidConfig, "lr must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
}

std::string_view to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "cosine") return LrSchedule::Cosine;
  if (text == "constant") return LrSchedule::Constant;
  throw Error(ErrorKind::InvalidConfig, "lr_schedule must be cosine or constant, got '" + std::string(text) + "'");
}

double learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (step < config.warmup_steps) {
    return config.lr * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps + 1);
  }
  if (config.lr_schedule == LrSchedule::Constant || total_steps <= config.warmup_steps + 1) return config.lr;
  const double t = static_cast<double>(step - config.warmup_steps) /
                   static_cast<double>(total_steps - config.warmup_steps - 1);
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
}

Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices, InputMask mask) {
  const std::size_t b = indices.size(), p = ds.payload_len;
  Batch batch{Tensor<float>({b, 1, pkt::kHeaderBytes}), Tensor<float>({b, 1, p}), std::vector<std::uint16_t>(b)};
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t src = indices[i];
    float* h = batch.header.data() + i * pkt::kHeaderBytes;
    float* d = batch.payload.data() + i * p;
    if (!mask.header) {
      const std::uint8_t* hb = ds.headers.data() + src * pkt::kHeaderBytes;
      for (std::size_t j = 0; j < pkt::kHeaderBytes; ++j) h[j] = pkt::byte_feature(hb[j]);
    }
    if (!mask.payload) {
      const std::uint8_t* pb = ds.payloads.data() + src * p;
      for (std::size_t j = 0; j < p; ++j) d[j] = pkt::byte_feature(pb[j]);
    }
    batch.labels[i] = ds.labels[src];
  }
  return batch;
}

EvalReport evaluate(const Model& model, const data::Dataset& ds, const EvalOptions& options) {
  check_compatible(ds, model.config(), "evaluation");
  if (ds.size() == 0) throw Error(ErrorKind::EmptySplit, "evaluation set is empty");
  const std::size_t k = model.config().num_classes;
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  std::vector<std::uint64_t> confusion(k * k, 0);
  double loss_sum = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += bs) {
    const std::size_t end = std::min(ds.size(), start + bs);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(ds, idx, options.mask);
    const auto logits = sharded_forward(model, batch.header, batch.payload, options.threads);
    const auto pred = argmax_rows(logits);
    loss_sum += nn::softmax_cross_entropy(logits, batch.labels).loss * static_cast<double>(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) ++confusion[batch.labels[i] * k + pred[i]];
  }
  auto report = report_from_confusion(k, std::move(confusion));
  report.loss = loss_sum / static_cast<double>(ds.size());
  return report;
}

TrainResult train(const data::Dataset& train_set, const data::Dataset* val_set, ModelConfig model_config,
                  const TrainConfig& config, InputMask mask, const EpochCallback& on_epoch) {
  config.validate();
  model_config.dropout = config.dropout;
  model_config.validate();
  check_compatible(train_set, model_config, "training");
  if (train_set.size() == 0) throw Error(ErrorKind::EmptySplit, "training set is empty");
  if (val_set) {
    check_compatible(*val_set, model_config, "validation");
    if (val_set->size() == 0) val_set = nullptr;
  }

  TrainResult result{Model(model_config), {}};
  Model& model = result.model;
  model.init(config.seed);
  auto params = model.parameters();
  nn::Adam<float> adam(params, nn::AdamConfig{config.lr, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(config.seed ^ kShuffleStream);
  Rng dropout_rng(config.seed ^ kDropoutStream);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  const std::size_t total_steps = config.epochs * ((order.size() + config.batch_size - 1) / config.batch_size);
  Model::Cache cache;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto batch = make_batch(train_set, std::span(order).subspan(start, end - start), mask);
      model.zero_grad();
      const auto logits = model.forward(batch.header, batch.payload, nn::Mode::Train, &dropout_rng, &cache);
      const auto loss = nn::softmax_cross_entropy(logits, batch.labels);
      if (!std::isfinite(loss.loss)) {
        throw Error(ErrorKind::DivergedLoss, "loss became " + std::to_string(loss.loss) + " at step " +
                                                 std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
      }
      model.backward(loss.grad, cache);
      adam.set_lr(learning_rate(config, step, total_steps));
      adam.step(params);
      loss_sum += loss.loss * static_cast<double>(end - start);
      ++step;
      if (config.log_every > 0 && step % config.log_every == 0) {
        std::cerr << "step " << step << " loss " << loss.loss << '\n';
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (val_set) {
      const auto rep = evaluate(model, *val_set, EvalOptions{256, 1, mask});
      stats.val_loss = rep.loss;
      stats.val_acc = rep.acc;
      stats.val_macro_f1 = rep.macro_f1;
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss,val_acc,val_macro_f1,seconds\n";
  for (const auto& h : history) {
    os << h.epoch << ',' << h.train_loss << ',' << h.val_loss << ',' << h.val_acc << ',' << h.val_macro_f1 << ','
       << h.seconds << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::MaskHeader: return "mask_header";
    case Variant::MaskPayload: return "mask_payload";
    case Variant::NoFusion: return "no_fusion";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (auto v : {Variant::Full, Variant::MaskHeader, Variant::MaskPayload, Variant::NoFusion}) {
    if (text == to_string(v)) return v;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown ablation variant '" + std::string(text) + "'");
}

VariantSetup variant_setup(const ModelConfig& base, Variant v) {
  VariantSetup s{base, {}};
  switch (v) {
    case Variant::Full: break;
    case Variant::MaskHeader: s.mask.header = true; break;
    case Variant::MaskPayload: s.mask.payload = true; break;
    case Variant::NoFusion: s.model.fusion = FusionKind::FullyConnected; break;
  }
  return s;
}

std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b) {
  auto lines = [](const ModelConfig& c) {
    std::vector<std::string> out;
    std::istringstream is(c.to_text());
    for (std::string line; std::getline(is, line);) out.push_back(line);
    return out;
  };
  const auto la = lines(a), lb = lines(b);
  std::vector<std::string> diff;
  for (std::size_t i = 0; i < std::min(la.size(), lb.size()); ++i) {
    if (la[i] != lb[i]) diff.push_back(la[i].substr(0, la[i].find(" =")));
  }
  return diff;
}

std::vector<AblationRun> run_ablation(const data::Dataset& train_set, const data::Dataset* val_set,
                                      const data::Dataset& test_set, const ModelConfig& base, const TrainConfig& config,
                                      const std::vector<Variant>& variants, const EpochCallback& on_epoch) {
  if (variants.empty()) throw Error(ErrorKind::InvalidConfig, "no ablation variants requested");
  std::vector<Variant> plan{Variant::Full};
  for (auto v : variants) {
    if (std::find(plan.begin(), plan.end(), v) == plan.end()) plan.push_back(v);
  }
  std::vector<AblationRun> runs;
  for (auto v : plan) {
    AblationRun run;
    run.variant = v;
    run.setup = variant_setup(base, v);
    const auto diff = config_diff(base, run.setup.model);
    const std::vector<std::string> allowed =
        v == Variant::NoFusion ? std::vector<std::string>{"fusion"} : std::vector<std::string>{};
    if (diff != allowed) {
      throw Error(ErrorKind::InvalidConfig, "variant " + std::string(to_string(v)) + " changed unexpected settings");
    }
    auto trained = train(train_set, val_set, run.setup.model, config, run.setup.mask, on_epoch);
    run.history = std::move(trained.history);
    run.report = evaluate(trained.model, test_set, EvalOptions{256, 1, run.setup.mask});
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace amlhp::train
