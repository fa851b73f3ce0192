#include "cli.hpp"

#include <CLI11.hpp>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <sstream>

#include "amlhp/capture.hpp"
#include "amlhp/dataset.hpp"
#include "amlhp/error.hpp"
#include "amlhp/model.hpp"
#include "amlhp/run_config.hpp"
#include "amlhp/train.hpp"

namespace amlhp::cli {

namespace fs = std::filesystem;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return kMismatch;
    case ErrorKind::DivergedLoss: return kRuntime;
    default: return kInput;
  }
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::UnreadableFile, "cannot write " + path.string());
  f << content;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::UnreadableFile, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::string> class_names_for(const fs::path& records, std::size_t k) {
  const auto mpath = data::manifest_path_for(records);
  if (fs::exists(mpath)) {
    auto m = data::DatasetManifest::load(mpath);
    if (m.num_classes() == k) return m.class_names;
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

std::string format_ts(const pkt::Timestamp& ts) {
  std::ostringstream os;
  os << ts.seconds << '.' << std::setw(9) << std::setfill('0') << ts.nanoseconds;
  return os.str();
}

bool is_record_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  char magic[5] = {};
  f.read(magic, 5);
  return f.gcount() == 5 && std::memcmp(magic, "AMLHP", 5) == 0;
}

// Options shared by commands that read a run configuration.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Config file with [model], [train], [data] sections")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override a setting, e.g. --set train.lr=0.001")->take_all();
  }

  RunConfig load(const std::vector<std::string>& extra = {}) const {
    auto all = overrides;
    all.insert(all.begin(), extra.begin(), extra.end());  // explicit --set wins over flag shortcuts
    return config_path.empty() ? RunConfig::defaults(all) : RunConfig::load(config_path, all);
  }
};

Model load_model(const fs::path& weights, const ConfigOptions& co, std::optional<std::size_t> num_classes) {
  if (co.config_path.empty() && co.overrides.empty()) return load_weights(weights);
  auto expected = co.load().model;
  if (num_classes) expected.num_classes = *num_classes;
  return load_weights(weights, &expected);
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::vector<std::string> captures;
  std::string rules, out;
  std::optional<std::size_t> payload_len;
  std::optional<bool> anonymize, strict;
  ConfigOptions co;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  std::vector<std::string> extra;
  if (a.payload_len) extra.push_back("data.payload_len=" + std::to_string(*a.payload_len));
  if (a.anonymize) extra.push_back(std::string("data.anonymize=") + (*a.anonymize ? "true" : "false"));
  if (a.strict) extra.push_back(std::string("data.strict=") + (*a.strict ? "true" : "false"));
  const auto rc = a.co.load(extra);
  const auto rules = data::LabelingRules::load(a.rules);
  ensure_dir(a.out);

  data::IngestOptions opt;
  opt.payload_len = rc.data.payload_len;
  opt.anonymize = rc.data.anonymize;
  opt.header_mode = rc.data.strict ? pkt::HeaderMode::Strict : pkt::HeaderMode::Permissive;
  std::vector<fs::path> paths(a.captures.begin(), a.captures.end());
  const auto records = fs::path(a.out) / "data.rec";
  const auto res = data::ingest_capture(paths, rules, opt, records);
  rc.save(fs::path(a.out) / "run_config.ini");

  const auto& s = res.stats;
  out << "packets " << s.packets << ", emitted " << s.emitted << ", frame_too_short " << s.frame_too_short
      << ", unsupported_protocol " << s.unsupported_protocol << ", no_matching_rule " << s.no_matching_rule
      << ", dropped_by_rule " << s.dropped_by_rule << '\n';
  for (std::size_t k = 0; k < res.manifest.num_classes(); ++k) {
    out << "  " << res.manifest.class_names[k] << ": " << res.manifest.counts[k] << '\n';
  }
  out << "wrote " << records.string() << '\n';
  return kOk;
}

struct SynthArgs {
  std::string spec, out;
  std::uint64_t seed = 42;
  std::optional<std::size_t> per_class;
  std::optional<double> noise;
  bool pcap = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  auto spec = a.spec.empty() ? data::standard_spec() : data::SyntheticSpec::load(a.spec);
  if (a.per_class) spec.per_class_count = *a.per_class;
  if (a.noise) spec.noise = *a.noise;
  spec.validate();
  ensure_dir(a.out);
  const auto records = fs::path(a.out) / "data.rec";
  const auto m = data::synthesize(spec, a.seed, records);
  if (a.pcap) {
    pkt::PcapWriter w(fs::path(a.out) / "data.pcap", pkt::LinkType::Ethernet);
    for (const auto& f : data::synthesize_frames(spec, a.seed)) w.write(f.frame, f.timestamp);
    w.close();
  }
  write_text(fs::path(a.out) / "synth.ini", "; seed = " + std::to_string(a.seed) + "\n" + spec.to_text());
  out << "synthesized " << m.total() << " records in " << m.num_classes() << " classes -> " << records.string()
      << '\n';
  return kOk;
}

struct SplitArgs {
  std::string records, out;
  std::uint64_t seed = 42;
  std::string ratios = "0.8,0.1,0.1";
  ConfigOptions co;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto rc = a.co.load({"data.split_ratios=" + a.ratios});
  data::DatasetManifest manifest;
  const auto mpath = data::manifest_path_for(a.records);
  if (fs::exists(mpath)) manifest = data::DatasetManifest::load(mpath);
  ensure_dir(a.out);
  const auto res = data::split_records(a.records, manifest, a.seed, rc.data.split_ratios, a.out);
  rc.save(fs::path(a.out) / "run_config.ini");
  const auto& names = res.manifests[0].class_names;
  for (std::size_t k = 0; k < res.plan.per_class.size(); ++k) {
    const auto& c = res.plan.per_class[k];
    out << "  " << names[k] << ": " << c[0] << '/' << c[1] << '/' << c[2] << '\n';
  }
  for (const auto& f : res.plan.flags) out << "note: " << f << '\n';
  for (const auto& p : res.paths) out << "wrote " << p.string() << '\n';
  return kOk;
}

struct TrainArgs {
  std::string train, val, out;
  std::optional<std::uint64_t> seed;
  ConfigOptions co;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::vector<std::string> extra;
  if (a.seed) extra.push_back("train.seed=" + std::to_string(*a.seed));
  auto rc = a.co.load(extra);
  const auto train_set = data::load_dataset(a.train);
  std::optional<data::Dataset> val_set;
  if (!a.val.empty()) val_set = data::load_dataset(a.val);
  rc.model.num_classes = train_set.num_classes;
  rc.model.payload_len = train_set.payload_len;
  rc.data.payload_len = train_set.payload_len;
  ensure_dir(a.out);
  rc.save(fs::path(a.out) / "run_config.ini");

  auto result = train::train(train_set, val_set ? &*val_set : nullptr, rc.model, rc.train, {},
                             [&](const train::EpochStats& s) {
                               out << "epoch " << s.epoch << "  loss " << std::fixed << std::setprecision(4)
                                   << s.train_loss;
                               if (val_set) {
                                 out << "  val_loss " << s.val_loss << "  val_acc " << s.val_acc << "  val_f1 "
                                     << s.val_macro_f1;
                               }
                               out << "  (" << std::setprecision(1) << s.seconds << " s)\n" << std::defaultfloat;
                               out.flush();
                             });
  const auto weights = fs::path(a.out) / "model.amlhpw";
  save_weights(result.model, weights);
  write_text(fs::path(a.out) / "history.csv", train::history_csv(result.history));
  out << "wrote " << weights.string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string records, weights, out;
  std::size_t threads = 1;
  ConfigOptions co;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ds = data::load_dataset(a.records);
  const auto model = load_model(a.weights, a.co, ds.num_classes);
  const auto report = train::evaluate(model, ds, train::EvalOptions{256, a.threads, {}});
  const auto names = class_names_for(a.records, ds.num_classes);
  out << train::report_table(report, names);
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "report.json", train::report_json(report, names));
    write_text(fs::path(a.out) / "report.txt", train::report_table(report, names));
    write_text(fs::path(a.out) / "confusion.csv", train::confusion_csv(report, names));
    RunConfig rc = a.co.load();
    rc.model = model.config();
    rc.save(fs::path(a.out) / "run_config.ini");
  }
  return kOk;
}

struct ClassifyArgs {
  std::string input, weights, out;
  bool to_stdout = false;
  std::size_t batch = 256;
  std::size_t threads = 1;
  ConfigOptions co;
};

class PredictionSink {
 public:
  PredictionSink(std::ostream& os, std::size_t k) : os_(os) {
    os_ << "index,ts,pred";
    for (std::size_t i = 0; i < k; ++i) os_ << ",prob_" << i;
    os_ << '\n';
  }

  void emit(const Model& model, const train::Batch& batch, const std::vector<std::uint64_t>& index,
            const std::vector<std::string>& ts, std::size_t threads) {
    if (index.empty()) return;
    const auto logits = train::sharded_forward(model, batch.header, batch.payload, threads);
    const auto probs = softmax(logits);
    const auto pred = argmax_rows(logits);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < index.size(); ++i) {
      os_ << index[i] << ',' << ts[i] << ',' << pred[i];
      for (std::size_t j = 0; j < k; ++j) os_ << ',' << std::setprecision(9) << probs(i, j);
      os_ << '\n';
    }
    rows_ += index.size();
  }

  std::uint64_t rows() const { return rows_; }

 private:
  std::ostream& os_;
  std::uint64_t rows_ = 0;
};

int cmd_classify(const ClassifyArgs& a, std::ostream& out, std::ostream& err) {
  const bool records = is_record_file(a.input);
  std::optional<data::RecordReader> reader;
  if (records) reader.emplace(a.input);
  std::optional<std::size_t> k;
  if (reader) k = reader->header().num_classes;
  const auto model = load_model(a.weights, a.co, k);
  const auto& mc = model.config();
  if (reader && (reader->header().num_classes != mc.num_classes || reader->header().payload_len != mc.payload_len)) {
    throw Error(ErrorKind::ShapeMismatch, "records have K=" + std::to_string(reader->header().num_classes) +
                                              ", P=" + std::to_string(reader->header().payload_len) +
                                              " but the model expects K=" + std::to_string(mc.num_classes) +
                                              ", P=" + std::to_string(mc.payload_len));
  }
  const auto rc = a.co.load();

  std::ofstream file;
  std::ostream* sink_stream = &out;
  if (!a.to_stdout) {
    ensure_dir(a.out);
    file.open(fs::path(a.out) / "predictions.csv", std::ios::trunc);
    if (!file) throw Error(ErrorKind::UnreadableFile, "cannot write predictions in " + a.out);
    sink_stream = &file;
    RunConfig echo = rc;
    echo.model = mc;
    echo.save(fs::path(a.out) / "run_config.ini");
  }
  PredictionSink sink(*sink_stream, mc.num_classes);

  // Bounded memory: at most `batch` packets are held at a time.
  data::Dataset pending;
  pending.num_classes = mc.num_classes;
  pending.payload_len = mc.payload_len;
  std::vector<std::uint64_t> index;
  std::vector<std::string> ts;
  const std::size_t batch = std::max<std::size_t>(1, a.batch);
  auto flush = [&] {
    std::vector<std::size_t> idx(pending.size());
    std::iota(idx.begin(), idx.end(), 0);
    sink.emit(model, train::make_batch(pending, idx), index, ts, a.threads);
    pending.headers.clear();
    pending.payloads.clear();
    pending.labels.clear();
    index.clear();
    ts.clear();
  };

  std::uint64_t skipped = 0, seen = 0;
  if (reader) {
    while (auto ex = reader->next()) {
      ex->label = 0;
      pending.push_back(*ex);
      index.push_back(seen++);
      ts.emplace_back();
      if (pending.size() == batch) flush();
    }
  } else {
    pkt::CaptureReader cap(a.input);
    const auto mode = rc.data.strict ? pkt::HeaderMode::Strict : pkt::HeaderMode::Permissive;
    while (auto frame = cap.next()) {
      const std::uint64_t i = seen++;
      try {
        auto rec = pkt::parse_packet(frame->data, frame->link_type, frame->timestamp);
        if (rc.data.anonymize) rec = pkt::anonymize(std::move(rec));
        pending.push_back(data::make_example(rec, 0, mc.payload_len, mode));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::FrameTooShort && e.kind() != ErrorKind::UnsupportedProtocol) throw;
        err << "skipped packet " << i << ": " << e.what() << '\n';
        ++skipped;
        continue;
      }
      index.push_back(i);
      ts.push_back(format_ts(frame->timestamp));
      if (pending.size() == batch) flush();
    }
  }
  flush();
  sink_stream->flush();
  err << "classified " << sink.rows() << " packets, skipped " << skipped << '\n';
  return kOk;
}

struct BenchArgs {
  std::string weights, out;
  std::vector<std::size_t> levels{1, 10, 100, 1000, 10000};
  std::size_t reps = 20, warmup = 3, threads = 0;
  std::uint64_t seed = 7;
  ConfigOptions co;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  Model model = [&] {
    if (!a.weights.empty()) return load_model(a.weights, a.co, std::nullopt);
    Model m(a.co.load().model);
    m.init(a.seed);
    return m;
  }();
  train::BenchOptions opt;
  opt.levels = a.levels;
  opt.repetitions = a.reps;
  opt.warmup = a.warmup;
  opt.threads = a.threads;
  opt.seed = a.seed;
  const auto report = train::bench_inference(model, opt);
  out << train::bench_table(report);
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "bench.json", train::bench_json(report));
    write_text(fs::path(a.out) / "bench.txt", train::bench_table(report));
    RunConfig rc = a.co.load();
    rc.model = model.config();
    rc.save(fs::path(a.out) / "run_config.ini");
  }
  return kOk;
}

struct CountArgs {
  std::string weights, out;
  bool json = false;
  ConfigOptions co;
};

int cmd_count(const CountArgs& a, std::ostream& out) {
  ResourceReport r;
  if (!a.weights.empty()) {
    r = count_resources(load_model(a.weights, a.co, std::nullopt));
  } else {
    r = count_resources(a.co.load().model);
  }
  nlohmann::ordered_json j;
  j["params"] = r.params;
  j["flops"] = r.flops;
  j["model_size_bytes"] = r.model_size_bytes;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : r.layers) layers.push_back({{"name", l.name}, {"params", l.params}, {"flops", l.flops}});
  if (a.json) {
    out << j.dump(2) << '\n';
  } else {
    out << "params            " << r.params << " (" << std::fixed << std::setprecision(4) << r.params / 1e6
        << " M)\n";
    out << "flops/packet      " << r.flops << " (" << r.flops / 1e6 << " M)\n";
    out << "model size bytes  " << r.model_size_bytes << " (" << r.model_size_bytes / 1e6 << " MB)\n\n"
        << std::defaultfloat;
    for (const auto& l : r.layers) {
      out << "  " << std::left << std::setw(28) << l.name << std::right << std::setw(8) << l.params << std::setw(12)
          << l.flops << '\n';
    }
  }
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "resources.json", j.dump(2) + "\n");
  }
  return kOk;
}

struct AblateArgs {
  std::string train, val, test, out;
  std::vector<std::string> variants{"mask_header", "mask_payload", "no_fusion"};
  std::optional<std::uint64_t> seed;
  ConfigOptions co;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  std::vector<std::string> extra;
  if (a.seed) extra.push_back("train.seed=" + std::to_string(*a.seed));
  auto rc = a.co.load(extra);
  const auto train_set = data::load_dataset(a.train);
  const auto test_set = data::load_dataset(a.test);
  std::optional<data::Dataset> val_set;
  if (!a.val.empty()) val_set = data::load_dataset(a.val);
  rc.model.num_classes = train_set.num_classes;
  rc.model.payload_len = train_set.payload_len;
  rc.data.payload_len = train_set.payload_len;
  std::vector<train::Variant> variants;
  for (const auto& v : a.variants) variants.push_back(train::parse_variant(v));

  const auto names = class_names_for(a.test, test_set.num_classes);
  const auto runs = train::run_ablation(train_set, val_set ? &*val_set : nullptr, test_set, rc.model, rc.train,
                                        variants, [&](const train::EpochStats& s) {
                                          out << "  epoch " << s.epoch << " loss " << s.train_loss << '\n';
                                          out.flush();
                                        });
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  std::ostringstream table;
  table << std::left << std::setw(14) << "variant" << std::right << std::fixed << std::setprecision(4)
        << std::setw(9) << "ACC" << std::setw(9) << "PR" << std::setw(9) << "RC" << std::setw(9) << "F1" << '\n';
  for (const auto& r : runs) {
    table << std::left << std::setw(14) << train::to_string(r.variant) << std::right << std::setw(9) << r.report.acc
          << std::setw(9) << r.report.macro_pr << std::setw(9) << r.report.macro_rc << std::setw(9)
          << r.report.macro_f1 << '\n';
    j.push_back({{"variant", train::to_string(r.variant)},
                 {"report", nlohmann::json::parse(train::report_json(r.report, names))}});
  }
  out << table.str();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "ablation.json", j.dump(2) + "\n");
    write_text(fs::path(a.out) / "ablation.txt", table.str());
    rc.save(fs::path(a.out) / "run_config.ini");
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Packet-level header-payload traffic classifier", "amlhp"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "Label, anonymize and encode capture files into records");
  prepare->add_option("captures", prep.captures, "pcap / pcapng files")->required()->check(CLI::ExistingFile);
  prepare->add_option("-r,--rules", prep.rules, "Labeling rules file")->required()->check(CLI::ExistingFile);
  prepare->add_option("-o,--out", prep.out, "Output directory")->required();
  prepare->add_option("--payload-len", prep.payload_len, "Payload bytes per packet (default 64)");
  prepare->add_flag("--anonymize,!--no-anonymize", prep.anonymize, "Zero IPv4 addresses (default on)");
  prepare->add_flag("--strict,!--permissive", prep.strict, "Skip packets that are not IPv4 TCP/UDP");
  prep.co.attach(prepare);

  SynthArgs syn;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  synth->add_option("-s,--spec", syn.spec, "Synthetic spec file (default: standard 5-class spec)")
      ->check(CLI::ExistingFile);
  synth->add_option("--seed", syn.seed, "Random seed")->capture_default_str();
  synth->add_option("--per-class", syn.per_class, "Override examples per class");
  synth->add_option("--noise", syn.noise, "Override per-byte noise probability");
  synth->add_flag("--pcap", syn.pcap, "Also write the generated frames as data.pcap");
  synth->add_option("-o,--out", syn.out, "Output directory")->required();

  SplitArgs spl;
  auto* split = app.add_subcommand("split", "Stratified train/val/test split");
  split->add_option("records", spl.records, "Record file")->required()->check(CLI::ExistingFile);
  split->add_option("--seed", spl.seed, "Random seed")->capture_default_str();
  split->add_option("--ratios", spl.ratios, "train,val,test ratios")->capture_default_str();
  split->add_option("-o,--out", spl.out, "Output directory")->required();
  spl.co.attach(split);

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--train", tr.train, "Training records")->required()->check(CLI::ExistingFile);
  trn->add_option("--val", tr.val, "Validation records")->check(CLI::ExistingFile);
  trn->add_option("--seed", tr.seed, "Random seed (overrides train.seed)");
  trn->add_option("-o,--out", tr.out, "Output directory")->required();
  tr.co.attach(trn);

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "Evaluate a model on records");
  evl->add_option("records", ev.records, "Record file")->required()->check(CLI::ExistingFile);
  evl->add_option("-w,--weights", ev.weights, "Weight file")->required()->check(CLI::ExistingFile);
  evl->add_option("--threads", ev.threads, "Evaluation workers")->capture_default_str();
  evl->add_option("-o,--out", ev.out, "Output directory for report files");
  ev.co.attach(evl);

  ClassifyArgs cl;
  auto* cls = app.add_subcommand("classify", "Stream per-packet predictions for a capture or record file");
  cls->add_option("input", cl.input, "pcap / pcapng / record file")->required()->check(CLI::ExistingFile);
  cls->add_option("-w,--weights", cl.weights, "Weight file")->required()->check(CLI::ExistingFile);
  auto* cls_out = cls->add_option("-o,--out", cl.out, "Output directory (predictions.csv)");
  auto* cls_stdout = cls->add_flag("--stdout", cl.to_stdout, "Write predictions to standard output");
  cls_out->excludes(cls_stdout);
  cls->add_option("--batch", cl.batch, "Packets per forward pass")->capture_default_str();
  cls->add_option("--threads", cl.threads, "Workers per forward pass")->capture_default_str();
  cl.co.attach(cls);

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Batched inference latency and memory");
  bench->add_option("-w,--weights", bn.weights, "Weight file (default: freshly initialized model)")
      ->check(CLI::ExistingFile);
  bench->add_option("--levels", bn.levels, "Parallel packet counts")->delimiter(',')->capture_default_str();
  bench->add_option("--reps", bn.reps, "Timed repetitions per level")->capture_default_str();
  bench->add_option("--warmup", bn.warmup, "Untimed warm-up runs per level")->capture_default_str();
  bench->add_option("--threads", bn.threads, "Worker threads (0: all cores)")->capture_default_str();
  bench->add_option("--seed", bn.seed, "Seed for inputs and initialization")->capture_default_str();
  bench->add_option("-o,--out", bn.out, "Output directory for report files");
  bn.co.attach(bench);

  CountArgs ct;
  auto* count = app.add_subcommand("count", "Parameters, FLOPs and model size");
  count->add_option("-w,--weights", ct.weights, "Weight file (default: configuration only)")
      ->check(CLI::ExistingFile);
  count->add_flag("--json", ct.json, "Print JSON");
  count->add_option("-o,--out", ct.out, "Output directory (resources.json)");
  ct.co.attach(count);

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  ablate->add_option("--train", ab.train, "Training records")->required()->check(CLI::ExistingFile);
  ablate->add_option("--val", ab.val, "Validation records")->check(CLI::ExistingFile);
  ablate->add_option("--test", ab.test, "Test records")->required()->check(CLI::ExistingFile);
  ablate->add_option("--variants", ab.variants, "mask_header, mask_payload, no_fusion")
      ->delimiter(',')
      ->capture_default_str();
  ablate->add_option("--seed", ab.seed, "Random seed (overrides train.seed)");
  ablate->add_option("-o,--out", ab.out, "Output directory");
  ab.co.attach(ablate);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prepare) return cmd_prepare(prep, out);
    if (*synth) return cmd_synth(syn, out);
    if (*split) return cmd_split(spl, out);
    if (*trn) return cmd_train(tr, out);
    if (*evl) return cmd_eval(ev, out);
    if (*cls) {
      if (cl.out.empty() && !cl.to_stdout) {
        err << "classify: one of --out or --stdout is required\n";
        return kUsage;
      }
      return cmd_classify(cl, out, err);
    }
    if (*bench) return cmd_bench(bn, out);
    if (*count) return cmd_count(ct, out);
    if (*ablate) return cmd_ablate(ab, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace amlhp::cli
