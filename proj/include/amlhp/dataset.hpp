#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "amlhp/capture.hpp"
#include "amlhp/packet.hpp"

namespace amlhp::data {

using pkt::Bytes;

struct LabeledExample {
  pkt::HeaderVector header;
  Bytes payload;  // exactly P bytes
  std::uint16_t label = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

// ---------------------------------------------------------------------------
// Record files:
//   "AMLHP1\n" | u16 K | u16 P | u32 count
//   count x (u16 label | 128 header bytes | P payload bytes)
// little-endian, fixed stride.

inline constexpr char kRecordMagic[] = "AMLHP1\n";
inline constexpr std::size_t kRecordMagicLen = 7;
inline constexpr std::size_t kRecordPreamble = kRecordMagicLen + 2 + 2 + 4;

struct RecordHeader {
  std::uint16_t num_classes = 0;
  std::uint16_t payload_len = 0;
  std::uint32_t count = 0;

  std::size_t stride() const { return 2 + pkt::kHeaderBytes + payload_len; }
};

class RecordWriter {
 public:
  RecordWriter(const std::filesystem::path& path, std::size_t num_classes, std::size_t payload_len);
  RecordWriter(const RecordWriter&) = delete;
  RecordWriter& operator=(const RecordWriter&) = delete;
  ~RecordWriter();

  void write(const LabeledExample& example);
  // Patches the record count into the preamble. Called by the destructor if
  // not called explicitly.
  void close();

  std::uint32_t count() const { return count_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  RecordHeader header_;
  std::uint32_t count_ = 0;
  bool closed_ = false;
};

// Streams records one at a time. Validates the preamble on construction
// (BadMagic / VersionMismatch) and reports a short record as TruncatedRecord
// with its index.
class RecordReader {
 public:
  explicit RecordReader(const std::filesystem::path& path);

  const RecordHeader& header() const { return header_; }
  std::optional<LabeledExample> next();
  // Reads record `index` directly using the fixed stride.
  LabeledExample at(std::uint32_t index);
  std::uint32_t position() const { return next_index_; }

 private:
  LabeledExample read_one(std::uint32_t index);

  std::filesystem::path path_;
  std::ifstream in_;
  RecordHeader header_;
  std::uint32_t next_index_ = 0;
  std::vector<char> buf_;
};

void write_records(const std::filesystem::path& path, std::size_t num_classes, std::size_t payload_len,
                   const std::vector<LabeledExample>& examples);
std::vector<LabeledExample> read_records(const std::filesystem::path& path);
RecordHeader read_record_header(const std::filesystem::path& path);

// Contiguous in-memory copy of a record file, laid out for batching.
struct Dataset {
  std::size_t num_classes = 0;
  std::size_t payload_len = 0;
  std::vector<std::uint8_t> headers;   // n * 128
  std::vector<std::uint8_t> payloads;  // n * P
  std::vector<std::uint16_t> labels;

  std::size_t size() const { return labels.size(); }
  void push_back(const LabeledExample& example);
  LabeledExample example(std::size_t i) const;
};

Dataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<std::uint64_t> counts;
  std::uint64_t split_seed = 0;
  SplitRatios split_ratios;
  std::size_t payload_len = 64;
  std::vector<std::string> flags;  // notes such as classes with an empty split part

  std::size_t num_classes() const { return class_names.size(); }
  std::uint64_t total() const;

  std::string to_text() const;
  static DatasetManifest from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Manifest path that sits beside a record file: foo.rec -> foo.manifest.ini
std::filesystem::path manifest_path_for(const std::filesystem::path& records);

// ---------------------------------------------------------------------------
// Labeling rules: an ordered first-match list over the 5-tuple and the
// capture file name.
//
//   [labels]
//   classes = benign, attack
//   strict = true
//   default = drop
//
//   [rule.1]
//   src = 10.0.0.9/32
//   dst_port = 1883
//   proto = tcp
//   file = *attack*.pcap
//   class = attack
//
// Sections are tried in file order. `class = drop` discards matches. With
// strict = true an unmatched packet is counted as NoMatchingRule and
// dropped; otherwise `default` (a class name or drop) applies.

struct Cidr {
  std::uint32_t network = 0;
  std::uint32_t mask = 0;

  bool contains(const std::array<std::uint8_t, 4>& addr) const;
  static Cidr parse(const std::string& text);
};

struct PortRange {
  std::uint16_t lo = 0;
  std::uint16_t hi = 65535;

  bool contains(std::uint16_t port) const { return port >= lo && port <= hi; }
  static PortRange parse(const std::string& text);
};

struct LabelRule {
  std::string name;
  std::optional<Cidr> src, dst;
  std::optional<PortRange> src_port, dst_port;
  std::optional<std::uint8_t> proto;
  std::optional<std::string> file_glob;
  std::optional<std::uint16_t> label;  // nullopt: drop
};

struct LabelDecision {
  enum class Kind { Labeled, Dropped, Unmatched } kind = Kind::Unmatched;
  std::uint16_t label = 0;
};

struct LabelingRules {
  std::vector<std::string> class_names;
  std::vector<LabelRule> rules;
  bool strict = true;
  std::optional<std::uint16_t> default_label;  // non-strict fallback; nullopt drops

  LabelDecision classify(const pkt::PacketRecord& record, const std::string& file_name) const;

  static LabelingRules from_text(const std::string& text);
  static LabelingRules load(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// Ingestion

struct IngestOptions {
  std::size_t payload_len = 64;
  bool anonymize = true;
  pkt::HeaderMode header_mode = pkt::HeaderMode::Permissive;
};

struct IngestStats {
  std::uint64_t packets = 0;
  std::uint64_t emitted = 0;
  std::uint64_t frame_too_short = 0;
  std::uint64_t unsupported_protocol = 0;
  std::uint64_t no_matching_rule = 0;
  std::uint64_t dropped_by_rule = 0;
};

struct IngestResult {
  DatasetManifest manifest;
  IngestStats stats;
};

// Labels each packet from its pre-anonymization view, then anonymizes and
// builds the representation. Writes the record file and returns the
// manifest (also saved beside the records).
IngestResult ingest_capture(const std::vector<std::filesystem::path>& captures, const LabelingRules& rules,
                            const IngestOptions& options, const std::filesystem::path& out_records);

// Builds the representation of one parsed packet.
LabeledExample make_example(const pkt::PacketRecord& record, std::uint16_t label, std::size_t payload_len,
                            pkt::HeaderMode mode = pkt::HeaderMode::Permissive);

// ---------------------------------------------------------------------------
// Stratified split

struct SplitPlan {
  // Per class: counts for (train, val, test).
  std::vector<std::array<std::uint64_t, 3>> per_class;
  std::vector<std::string> flags;
};

// val = round(r_val * n), test = floor(r_test * n), train takes the rest.
std::array<std::uint64_t, 3> split_counts(std::uint64_t n, const SplitRatios& ratios);

// Assigns every record index of `labels` to part 0 (train), 1 (val) or 2
// (test). Deterministic in (labels, ratios, seed). Throws ClassTooSmall when a
// present class has fewer than 3 examples.
std::vector<std::uint8_t> assign_split(const std::vector<std::uint16_t>& labels, std::size_t num_classes,
                                       const SplitRatios& ratios, std::uint64_t seed, SplitPlan* plan = nullptr);

struct SplitResult {
  std::array<std::filesystem::path, 3> paths;  // train, val, test
  std::array<DatasetManifest, 3> manifests;
  SplitPlan plan;
};

// Writes <out_dir>/{train,val,test}.rec, each with a manifest beside it.
// Records keep their original relative order inside each part.
SplitResult split_records(const std::filesystem::path& records, const DatasetManifest& manifest,
                          std::uint64_t seed, const SplitRatios& ratios, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Synthetic traffic

struct ClassRule {
  std::string name;
  double tcp_fraction = 1.0;        // protocol mix: TCP with this probability, else UDP
  std::uint16_t dst_port = 80;
  std::uint8_t ttl_lo = 64, ttl_hi = 64;
  std::uint8_t tcp_flags = 0x18;
  std::uint16_t tcp_window = 64240;
  std::uint8_t tos = 0;
  Bytes magic;                      // payload prefix
  Bytes token;                      // repeated every `token_period` bytes after the prefix
  std::size_t token_period = 0;     // 0 disables the token
  std::size_t len_lo = 16, len_hi = 128;
  std::uint8_t subnet = 0;          // source addresses come from 10.0.<subnet>.0/24

  friend bool operator==(const ClassRule&, const ClassRule&) = default;
};

struct SyntheticSpec {
  std::size_t per_class_count = 1000;
  double noise = 0.0;  // per-byte corruption probability over non-structural bytes
  std::size_t payload_len = 64;
  std::vector<ClassRule> classes;

  std::size_t num_classes() const { return classes.size(); }
  // Throws InvalidSpec.
  void validate() const;

  std::string to_text() const;
  static SyntheticSpec from_text(const std::string& text);
  static SyntheticSpec load(const std::filesystem::path& path);

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// Five classes: 0/1 share payload rules and differ only in header rules,
// 2/3 share header rules and differ only in payload motifs, 4 is UDP and
// differs in both.
SyntheticSpec standard_spec(std::size_t per_class_count = 1000, double noise = 0.02);

struct SyntheticFrame {
  Bytes frame;  // Ethernet
  pkt::Timestamp timestamp;
  std::uint16_t label = 0;
};

// Deterministic in (spec, seed). Frames are shuffled across classes.
std::vector<SyntheticFrame> synthesize_frames(const SyntheticSpec& spec, std::uint64_t seed);

// Generates frames, parses, anonymizes and writes them as records; the
// manifest is saved beside the records and returned.
DatasetManifest synthesize(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out_records);

}  // namespace amlhp::data
