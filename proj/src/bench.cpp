#include <algorithm>
#include <chrono>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "amlhp/memory.hpp"
#include "amlhp/rng.hpp"
#include "amlhp/train.hpp"

namespace amlhp::train {

namespace {

Tensor<float> rows(const Tensor<float>& x, std::size_t begin, std::size_t end) {
  Shape s = x.shape();
  const std::size_t stride = x.size() / s[0];
  s[0] = end - begin;
  Tensor<float> out(s);
  std::copy(x.data() + begin * stride, x.data() + end * stride, out.data());
  return out;
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

Tensor<float> sharded_forward(const Model& model, const Tensor<float>& header, const Tensor<float>& payload,
                              std::size_t threads) {
  const std::size_t batch = header.dim(0);
  const std::size_t shards = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, batch));
  if (shards == 1) return model.forward(header, payload);

  std::vector<std::size_t> bounds(shards + 1);
  for (std::size_t s = 0; s <= shards; ++s) bounds[s] = batch * s / shards;
  std::vector<Tensor<float>> parts(shards);
  std::vector<std::exception_ptr> errors(shards);
  auto work = [&](std::size_t s) {
    try {
      parts[s] = model.forward(rows(header, bounds[s], bounds[s + 1]), rows(payload, bounds[s], bounds[s + 1]));
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t s = 1; s < shards; ++s) pool.emplace_back(work, s);
    work(0);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const std::size_t k = model.config().num_classes;
  Tensor<float> logits({batch, k});
  for (std::size_t s = 0; s < shards; ++s) {
    std::copy(parts[s].data(), parts[s].data() + parts[s].size(), logits.data() + bounds[s] * k);
  }
  return logits;
}

BenchReport bench_inference(const Model& model, const BenchOptions& options) {
  const std::size_t threads = resolve_threads(options.threads);
  const std::size_t p = model.config().payload_len;
  Rng rng(options.seed);
  BenchReport report;
  for (const std::size_t level : options.levels) {
    if (level == 0) continue;
    // Random bytes, as a packet would produce them.
    Tensor<float> header({level, 1, pkt::kHeaderBytes});
    Tensor<float> payload({level, 1, p});
    for (auto& v : header.values()) v = pkt::byte_feature(rng.byte());
    for (auto& v : payload.values()) v = pkt::byte_feature(rng.byte());

    for (std::size_t i = 0; i < options.warmup; ++i) sharded_forward(model, header, payload, threads);

    std::vector<double> times;
    std::size_t peak = 0;
    const std::size_t reps = std::max<std::size_t>(1, options.repetitions);
    for (std::size_t r = 0; r < reps; ++r) {
      const std::size_t before = mem::current_bytes();
      mem::reset_peak();
      const auto t0 = std::chrono::steady_clock::now();
      const auto logits = sharded_forward(model, header, payload, threads);
      const auto t1 = std::chrono::steady_clock::now();
      peak = std::max(peak, mem::peak_bytes() - before);
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    BenchRow row;
    row.level = level;
    row.total_ms = times[times.size() / 2];
    row.per_packet_ms = row.total_ms / static_cast<double>(level);
    row.peak_incremental_bytes = peak;
    row.threads = std::min(threads, level);
    report.rows.push_back(row);
  }
  return report;
}

std::string bench_json(const BenchReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    j.push_back({{"parallel_packets", r.level},
                 {"total_ms", r.total_ms},
                 {"time_per_packet_ms", r.per_packet_ms},
                 {"peak_incremental_bytes", r.peak_incremental_bytes},
                 {"threads", r.threads}});
  }
  return j.dump(2) + "\n";
}

std::string bench_table(const BenchReport& report) {
  std::ostringstream os;
  os << std::setw(10) << "packets" << std::setw(14) << "total ms" << std::setw(16) << "ms / packet" << std::setw(14)
     << "peak MB" << std::setw(9) << "threads" << '\n';
  for (const auto& r : report.rows) {
    os << std::setw(10) << r.level << std::setw(14) << std::fixed << std::setprecision(3) << r.total_ms
       << std::setw(16) << std::setprecision(4) << r.per_packet_ms << std::setw(14) << std::setprecision(3)
       << static_cast<double>(r.peak_incremental_bytes) / (1024.0 * 1024.0) << std::setw(9) << r.threads << '\n';
  }
  return os.str();
}

}  // namespace amlhp::train
