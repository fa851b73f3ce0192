#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "amlhp/dataset.hpp"
#include "amlhp/model.hpp"

namespace amlhp::train {

enum class LrSchedule { Constant, Cosine };

std::string_view to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view text);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  // The learning rate ramps linearly from lr/(w+1) up to lr over the first w
  // steps. Without it, the first full-size Adam steps can push the pooled
  // token representation onto a constant direction that kills the
  // classifier's ReLUs before either modality has been picked up.
  std::size_t warmup_steps = 32;
  // After warmup, Cosine anneals from lr to 0 at the last step so the final
  // weights (the ones returned) are not taken mid-oscillation.
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double dropout = 0.1;
  std::uint64_t seed = 42;
  std::size_t log_every = 0;  // print a step line every N steps (0: epoch lines only)

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Zeroes a modality at the input, as in the masking ablations.
struct InputMask {
  bool header = false;
  bool payload = false;

  friend bool operator==(const InputMask&, const InputMask&) = default;
};

struct Batch {
  Tensor<float> header;   // (B, 1, 128)
  Tensor<float> payload;  // (B, 1, P)
  std::vector<std::uint16_t> labels;
};

Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices, InputMask mask = {});

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, support = 0;
  double precision = 0, recall = 0, f1 = 0;
  bool precision_undefined = false;  // TP + FP = 0, reported as 0
  bool recall_undefined = false;     // TP + FN = 0, reported as 0
};

struct EvalReport {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> confusion;  // row = true class, column = predicted, K x K
  std::uint64_t total = 0;
  double acc = 0, macro_pr = 0, macro_rc = 0, macro_f1 = 0;
  std::vector<ClassMetrics> per_class;
  double loss = 0;  // mean cross-entropy when computed from a model, else 0
  std::vector<std::string> flags;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return confusion[truth * num_classes + pred]; }
};

// All metrics derive from the confusion matrix alone; an empty denominator
// yields 0 and adds a flag.
EvalReport report_from_confusion(std::size_t num_classes, std::vector<std::uint64_t> confusion);
EvalReport report_from_predictions(std::size_t num_classes, std::span<const std::uint16_t> truth,
                                   std::span<const std::uint16_t> pred);

struct EvalOptions {
  std::size_t batch_size = 256;
  std::size_t threads = 1;  // >1 shards the set across workers and merges confusion counts
  InputMask mask;
};

EvalReport evaluate(const Model& model, const data::Dataset& ds, const EvalOptions& options = {});

// Report files: JSON (machine-readable), an aligned text table, and the
// confusion matrix as CSV with a header row of predicted class names.
std::string report_json(const EvalReport& report, const std::vector<std::string>& class_names);
std::string report_table(const EvalReport& report, const std::vector<std::string>& class_names);
std::string confusion_csv(const EvalReport& report, const std::vector<std::string>& class_names);
// Parses confusion_csv output back into counts.
std::vector<std::uint64_t> parse_confusion_csv(const std::string& csv, std::size_t* num_classes);

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  double val_macro_f1 = 0;
  double seconds = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch Adam on cross-entropy. Batches are reshuffled every epoch from
// the seed; the returned weights are those after the final epoch. Throws
// EmptySplit for an empty training set and DivergedLoss (with the step index)
// on a non-finite loss. The dropout rate comes from the training config.
// Learning rate for optimizer step `step` (0-based) of `total_steps`.
double learning_rate(const TrainConfig& config, std::size_t step, std::size_t total_steps);

TrainResult train(const data::Dataset& train_set, const data::Dataset* val_set, ModelConfig model_config,
                  const TrainConfig& config, InputMask mask = {}, const EpochCallback& on_epoch = {});

std::string history_csv(const std::vector<EpochStats>& history);

// ---------------------------------------------------------------------------
// Ablation

enum class Variant { Full, MaskHeader, MaskPayload, NoFusion };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

struct VariantSetup {
  ModelConfig model;
  InputMask mask;
};

VariantSetup variant_setup(const ModelConfig& base, Variant v);

// Keys whose values differ between two configurations.
std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b);

struct AblationRun {
  Variant variant = Variant::Full;
  VariantSetup setup;
  std::vector<EpochStats> history;
  EvalReport report;
};

// Trains and evaluates each variant under the same seed and training config.
// The full model is always included first. Throws InvalidConfig if a variant
// would change anything beyond its declared delta.
std::vector<AblationRun> run_ablation(const data::Dataset& train_set, const data::Dataset* val_set,
                                      const data::Dataset& test_set, const ModelConfig& base, const TrainConfig& config,
                                      const std::vector<Variant>& variants, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Inference benchmark

struct BenchOptions {
  std::vector<std::size_t> levels{1, 10, 100, 1000, 10000};
  std::size_t repetitions = 20;
  std::size_t warmup = 3;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::uint64_t seed = 7;
};

struct BenchRow {
  std::size_t level = 0;
  double total_ms = 0;       // median wall time of one batched forward
  double per_packet_ms = 0;  // total_ms / level
  std::size_t peak_incremental_bytes = 0;
  std::size_t threads = 1;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

BenchReport bench_inference(const Model& model, const BenchOptions& options = {});
std::string bench_json(const BenchReport& report);
std::string bench_table(const BenchReport& report);

// Runs a forward pass over `header`/`payload` split into contiguous shards,
// one per worker thread. Rows are computed independently, so each logit row
// matches a single forward up to float rounding in the matrix kernels.
Tensor<float> sharded_forward(const Model& model, const Tensor<float>& header, const Tensor<float>& payload,
                              std::size_t threads);

}  // namespace amlhp::train
