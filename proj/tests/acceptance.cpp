// Acceptance runner: one PASS/FAIL line per criterion.
//
//   amlhp_acceptance                 run all criteria
//   amlhp_acceptance --criterion N   run criterion N only
//
// Exit status is 0 only if every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "amlhp/dataset.hpp"
#include "amlhp/model.hpp"
#include "amlhp/train.hpp"
#include "support/frames.hpp"
#include "support/kernel_suite.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace amlhp;
using namespace amlhp::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

// The standard synthetic task, written and split through the record files
// the command-line pipeline uses.
struct StandardTask {
  TempDir dir;
  data::Dataset train, val, test;
  std::vector<std::string> class_names;
};

std::unique_ptr<StandardTask> standard_task() {
  auto t = std::make_unique<StandardTask>();
  const auto spec = data::standard_spec(1000, 0.02);
  const auto manifest = data::synthesize(spec, 42, t->dir / "data.rec");
  const auto split = data::split_records(t->dir / "data.rec", manifest, 42, data::SplitRatios{}, t->dir.path());
  t->train = data::load_dataset(split.paths[0]);
  t->val = data::load_dataset(split.paths[1]);
  t->test = data::load_dataset(split.paths[2]);
  t->class_names = manifest.class_names;
  return t;
}

ModelConfig model_for(const data::Dataset& ds) {
  ModelConfig c;
  c.num_classes = ds.num_classes;
  c.payload_len = ds.payload_len;
  return c;
}

// ---------------------------------------------------------------------------

Outcome representation_invariants() {
  const auto t0 = Clock::now();
  Rng rng(1);
  const std::size_t n = 20000;
  std::size_t violations = 0, parsed = 0, tcp = 0, udp = 0;
  std::string first;
  auto fail = [&](std::size_t i, const std::string& what) {
    if (violations++ == 0) first = "frame " + std::to_string(i) + ": " + what;
  };
  for (std::size_t i = 0; i < n; ++i) {
    bool eth = true;
    const auto frame = random_frame(rng, &eth);
    const auto link = eth ? pkt::LinkType::Ethernet : pkt::LinkType::RawIPv4;
    pkt::PacketRecord rec;
    try {
      rec = pkt::parse_packet(frame, link);
    } catch (const Error& e) {
      if (!(eth && frame.size() < 14 && e.kind() == ErrorKind::FrameTooShort)) fail(i, e.what());
      continue;
    }
    if (eth && frame.size() < 14) fail(i, "short frame accepted");
    ++parsed;
    const auto anon = pkt::anonymize(rec);
    const auto h = pkt::build_header_vector(anon);
    if (h.bytes.size() != 128) fail(i, "header length");
    const auto ref = reference_dissect(frame, eth);
    auto ref_anon = ref.header;
    if (ref.has_ipv4) std::fill(ref_anon.begin() + 12, ref_anon.begin() + 20, 0);
    if (h.bytes != ref_anon) fail(i, "header differs from the reference dissector");
    if (anon.payload_bytes != ref.payload) fail(i, "payload differs from the reference dissector");

    auto all_ff = [&](std::size_t a, std::size_t b) {
      return std::all_of(h.bytes.begin() + a, h.bytes.begin() + b, [](auto x) { return x == 0xff; });
    };
    if (anon.transport && anon.transport->kind == pkt::TransportKind::TCP) {
      ++tcp;
      if (!all_ff(120, 128)) fail(i, "TCP packet with UDP region set");
    }
    if (anon.transport && anon.transport->kind == pkt::TransportKind::UDP) {
      ++udp;
      if (!all_ff(60, 120)) fail(i, "UDP packet with TCP region set");
    }
    if (anon.ipv4) {
      for (std::size_t j = 12; j < 20 && j < anon.ipv4->header_bytes.size(); ++j) {
        if (h.bytes[j] != 0 || anon.raw_bytes[anon.network_offset + j] != 0) fail(i, "address not zeroed");
      }
    }
    const std::size_t p = 16 + rng.below(113);
    const auto d = pkt::build_payload_vector(anon, p);
    const auto& src = anon.payload_bytes;
    if (d.bytes.size() != p || d.original_length != src.size()) fail(i, "payload length contract");
    for (std::size_t j = 0; j < p; ++j) {
      if (d.bytes[j] != (j < src.size() ? src[j] : 0)) {
        fail(i, "payload truncate/pad contract");
        break;
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = violations == 0 && secs < 30.0 && tcp > 1000 && udp > 1000;
  o.detail = std::to_string(n) + " frames (" + std::to_string(parsed) + " parsed, " + std::to_string(tcp) + " TCP, " +
             std::to_string(udp) + " UDP), " + std::to_string(violations) + " violations, " + fmt(secs, 1) + " s" +
             (first.empty() ? "" : "; first: " + first);
  return o;
}

Outcome kernel_correctness() {
  const auto t0 = Clock::now();
  const auto grads = gradient_suite(20);
  const auto fwd = forward_oracle_suite(20);
  const double secs = seconds_since(t0);
  std::map<std::string, OpCheck> worst;
  for (const auto& c : grads)
    if (!worst.count(c.op) || c.error > worst[c.op].error) worst[c.op] = c;
  double grad_worst = 0, fwd_worst = 0;
  std::string grad_where;
  for (const auto& [op, c] : worst) {
    if (c.error > grad_worst) {
      grad_worst = c.error;
      grad_where = op + " seed " + std::to_string(c.seed) + " " + c.where;
    }
  }
  for (const auto& c : fwd) fwd_worst = std::max(fwd_worst, c.error);
  Outcome o;
  o.pass = grad_worst < 1e-5 && fwd_worst < 1e-12 && secs < 120.0;
  o.detail = std::to_string(worst.size()) + " ops x 20 seeds, worst gradient rel. error " + sci(grad_worst) + " (" +
             grad_where + "), worst oracle diff " + sci(fwd_worst) + ", " + fmt(secs, 1) + " s";
  return o;
}

Outcome resource_budget() {
  ModelConfig c;
  c.num_classes = 5;
  Model m(c);
  m.init(1);
  const auto r = count_resources(m);
  const std::size_t file = serialize_weights(m).size();
  Outcome o;
  o.pass = r.params >= 10'000 && r.params <= 40'000 && r.flops >= 4'000'000 && r.flops <= 10'000'000 &&
           file <= 512 * 1024 && file == r.model_size_bytes;
  o.detail = "params " + fmt(r.params / 1e6) + " M (band 0.01-0.04), FLOPs " + fmt(r.flops / 1e6, 3) +
             " M (band 4-10), weights " + fmt(file / 1e6, 4) + " MB (limit 0.5)";
  return o;
}

Outcome learning_capability() {
  const auto t0 = Clock::now();
  const auto task = standard_task();
  train::TrainConfig tc;  // defaults: 10 epochs, batch 128, lr 1e-2, dropout 0.1
  tc.seed = 42;
  const auto res = train::train(task->train, &task->val, model_for(task->train), tc);
  const auto rep = train::evaluate(res.model, task->test);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = rep.macro_f1 >= 0.99 && res.history.size() <= 10 && secs < 600.0;
  o.detail = "test macro-F1 " + fmt(rep.macro_f1, 6) + " (ACC " + fmt(rep.acc) + ") after " +
             std::to_string(res.history.size()) + " epochs on " + std::to_string(task->test.size()) +
             " test packets, " + fmt(secs, 0) + " s";
  return o;
}

// Accuracy restricted to the test packets whose true class is in `classes`.
double subset_accuracy(const train::EvalReport& r, const std::vector<std::size_t>& classes) {
  std::uint64_t hit = 0, total = 0;
  for (auto t : classes) {
    hit += r.at(t, t);
    for (std::size_t p = 0; p < r.num_classes; ++p) total += r.at(t, p);
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

Outcome ablation_directionality() {
  const auto t0 = Clock::now();
  const auto task = standard_task();
  train::TrainConfig tc;
  tc.seed = 42;
  const auto runs = train::run_ablation(task->train, &task->val, task->test, model_for(task->train), tc,
                                        {train::Variant::MaskHeader, train::Variant::MaskPayload,
                                         train::Variant::NoFusion});
  const double secs = seconds_since(t0);
  // Classes 0 and 1 share every payload rule and differ only in header fields.
  const std::vector<std::size_t> header_classes{0, 1};
  const train::EvalReport* full = nullptr;
  const train::EvalReport* mask_header = nullptr;
  const train::EvalReport* no_fusion = nullptr;
  std::ostringstream table;
  for (const auto& r : runs) {
    if (r.variant == train::Variant::Full) full = &r.report;
    if (r.variant == train::Variant::MaskHeader) mask_header = &r.report;
    if (r.variant == train::Variant::NoFusion) no_fusion = &r.report;
    table << ' ' << train::to_string(r.variant) << " F1 " << fmt(r.report.macro_f1) << " hdr-acc "
          << fmt(subset_accuracy(r.report, header_classes)) << ';';
  }
  const double drop = subset_accuracy(*full, header_classes) - subset_accuracy(*mask_header, header_classes);
  Outcome o;
  o.pass = drop >= 0.10 && no_fusion->macro_f1 < full->macro_f1 && secs < 1800.0;
  o.detail = "header-class accuracy drop " + fmt(drop) + " (need >= 0.10), no_fusion F1 " +
             fmt(no_fusion->macro_f1, 6) + " vs full " + fmt(full->macro_f1, 6) + " (need <);" + table.str() + ' ' +
             fmt(secs, 0) + " s";
  return o;
}

Outcome batching_amortization() {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.num_classes = 5;
  Model m(c);
  m.init(7);
  train::BenchOptions opt;
  opt.levels = {1, 10, 100};
  opt.repetitions = 50;
  opt.warmup = 5;
  const auto rep = train::bench_inference(m, opt);
  const double secs = seconds_since(t0);
  const double l1 = rep.rows[0].per_packet_ms, l10 = rep.rows[1].per_packet_ms, l100 = rep.rows[2].per_packet_ms;
  const double ratio = l100 / l1;
  Outcome o;
  o.pass = ratio <= 0.25 && l100 <= 1.0 && secs < 300.0;
  o.detail = "ms/packet at 1/10/100: " + fmt(l1) + " / " + fmt(l10) + " / " + fmt(l100) + ", ratio " + fmt(ratio, 3) +
             " (need <= 0.25), level-100 ceiling " + (l100 <= 1.0 ? "met" : "missed") + " (1 ms), " +
             std::to_string(rep.rows[2].threads) + " thread(s), " + fmt(secs, 0) + " s";
  return o;
}

Outcome determinism_serialization() {
  const auto t0 = Clock::now();
  TempDir dir;
  const auto spec = data::standard_spec(100, 0.02);
  const auto manifest = data::synthesize(spec, 7, dir / "data.rec");
  const auto split = data::split_records(dir / "data.rec", manifest, 7, data::SplitRatios{}, dir.path());
  const auto tr = data::load_dataset(split.paths[0]);
  const auto te = data::load_dataset(split.paths[2]);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 7;
  const auto a = train::train(tr, nullptr, model_for(tr), tc);
  const auto b = train::train(tr, nullptr, model_for(tr), tc);
  const bool same_weights = serialize_weights(a.model) == serialize_weights(b.model);

  save_weights(a.model, dir / "w.amlhpw");
  const auto loaded = load_weights(dir / "w.amlhpw");
  std::vector<std::size_t> idx(te.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = train::make_batch(te, idx);
  const auto la = a.model.forward(batch.header, batch.payload);
  const auto lb = loaded.forward(batch.header, batch.payload);
  const bool same_logits = la.size() == lb.size() && std::memcmp(la.data(), lb.data(), la.size() * sizeof(float)) == 0;

  const auto rep = train::evaluate(a.model, te);
  std::size_t k = 0;
  const auto counts = train::parse_confusion_csv(train::confusion_csv(rep, manifest.class_names), &k);
  const auto again = train::report_from_confusion(k, counts);
  const auto json = nlohmann::json::parse(train::report_json(rep, manifest.class_names));
  const bool same_metrics = again.acc == rep.acc && again.macro_pr == rep.macro_pr &&
                            again.macro_rc == rep.macro_rc && again.macro_f1 == rep.macro_f1 &&
                            json.at("acc").get<double>() == again.acc &&
                            json.at("macro_pr").get<double>() == again.macro_pr &&
                            json.at("macro_rc").get<double>() == again.macro_rc &&
                            json.at("macro_f1").get<double>() == again.macro_f1;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = same_weights && same_logits && same_metrics && secs < 120.0;
  o.detail = std::string("seeded weights ") + (same_weights ? "identical" : "DIFFER") + ", reloaded logits " +
             (same_logits ? "bit-identical" : "DIFFER") + " on " + std::to_string(te.size()) +
             " packets, metrics from confusion CSV " + (same_metrics ? "exact" : "DIFFER") + ", " + fmt(secs, 0) +
             " s";
  return o;
}

Outcome metric_oracle() {
  std::size_t mismatches = 0, empty_denominators = 0;
  auto same = [&](const train::EvalReport& r, const BruteMetrics& b) {
    bool ok = r.acc == b.acc && r.macro_pr == b.macro_pr && r.macro_rc == b.macro_rc && r.macro_f1 == b.macro_f1;
    for (std::size_t c = 0; c < b.pr.size(); ++c) {
      ok = ok && r.per_class[c].precision == b.pr[c] && r.per_class[c].recall == b.rc[c] && r.per_class[c].f1 == b.f1[c];
      empty_denominators += r.per_class[c].precision_undefined + r.per_class[c].recall_undefined;
    }
    return ok;
  };

  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.below(7), n = 1 + rng.below(300);
    std::vector<std::uint16_t> truth(n), pred(n);
    for (auto& t : truth) t = static_cast<std::uint16_t>(rng.below(1 + rng.below(k)));
    for (auto& p : pred) p = static_cast<std::uint16_t>(rng.below(1 + rng.below(k)));
    mismatches += !same(train::report_from_predictions(k, truth, pred), brute_metrics(k, truth, pred));
  }

  // evaluate() end to end on an untrained model: its report must match the
  // brute-force metrics of the predictions it makes.
  ModelConfig mc;
  mc.num_classes = 5;
  Model model(mc);
  model.init(8);
  data::Dataset ds;
  ds.num_classes = 5;
  ds.payload_len = 64;
  for (int i = 0; i < 300; ++i) {
    data::LabeledExample ex;
    for (auto& b : ex.header.bytes) b = rng.byte();
    ex.payload.resize(64);
    for (auto& b : ex.payload) b = rng.byte();
    ex.label = static_cast<std::uint16_t>(rng.below(5));
    ds.push_back(ex);
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = train::make_batch(ds, idx);
  const auto pred = argmax_rows(model.forward(batch.header, batch.payload));
  mismatches += !same(train::evaluate(model, ds), brute_metrics(5, ds.labels, pred));

  const std::vector<std::uint16_t> truth{0, 0, 1, 1}, hand{0, 1, 1, 1};
  const auto ex = train::report_from_predictions(2, truth, hand);
  const bool example = ex.acc == 0.75 && std::abs(ex.macro_f1 - 11.0 / 15.0) < 1e-15 &&
                       std::abs(ex.macro_pr - 5.0 / 6.0) < 1e-15 && ex.macro_rc == 0.75;
  Outcome o;
  o.pass = mismatches == 0 && example && empty_denominators > 0;
  o.detail = "101 reports vs brute-force enumeration: " + std::to_string(mismatches) + " mismatches (" +
             std::to_string(empty_denominators) + " empty denominators scored 0); example ACC " + fmt(ex.acc) +
             " macro-F1 " + fmt(ex.macro_f1);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "representation_invariants", representation_invariants},
      {2, "kernel_correctness", kernel_correctness},
      {3, "resource_budget", resource_budget},
      {4, "learning_capability", learning_capability},
      {5, "ablation_directionality", ablation_directionality},
      {6, "batching_amortization", batching_amortization},
      {7, "determinism_serialization", determinism_serialization},
      {8, "metric_oracle", metric_oracle},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: " << argv[0] << " [--criterion N]\n";
      return 2;
    }
  }
  bool all_pass = true, ran = false;
  for (const auto& c : criteria()) {
    if (only && c.id != only) continue;
    ran = true;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << c.id << ' ' << c.name << ": " << o.detail << std::endl;
  }
  if (!ran) {
    std::cerr << "no criterion " << only << '\n';
    return 2;
  }
  return all_pass ? 0 : 1;
}
