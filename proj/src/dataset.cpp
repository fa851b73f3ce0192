#include <fnmatch.h>

#include <algorithm>
#include <numeric>

#include "amlhp/dataset.hpp"
#include "amlhp/error.hpp"
#include "text_util.hpp"

namespace amlhp::data {

// ---------------------------------------------------------------------------
// Manifest

std::uint64_t DatasetManifest::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::string DatasetManifest::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "[dataset]\n"
     << "class_names = " << text::join(class_names) << '\n'
     << "counts = " << text::join(counts) << '\n'
     << "split_seed = " << split_seed << '\n'
     << "split_ratios = " << split_ratios.train << ", " << split_ratios.val << ", " << split_ratios.test << '\n'
     << "payload_len = " << payload_len << '\n';
  for (std::size_t i = 0; i < flags.size(); ++i) os << "flag" << i << " = " << flags[i] << '\n';
  return os.str();
}

DatasetManifest DatasetManifest::from_text(const std::string& content) {
  const auto tree = text::parse_ini(content, ErrorKind::InvalidConfig);
  const auto section = tree.get_child_optional("dataset");
  if (!section) throw Error(ErrorKind::InvalidConfig, "manifest has no [dataset] section");
  DatasetManifest m;
  try {
    for (const auto& [key, node] : *section) {
      const auto v = node.get_value<std::string>();
      if (key == "class_names") {
        m.class_names = text::split_list(v);
      } else if (key == "counts") {
        m.counts.clear();
        for (const auto& c : text::split_list(v)) m.counts.push_back(std::stoull(c));
      } else if (key == "split_seed") {
        m.split_seed = std::stoull(v);
      } else if (key == "split_ratios") {
        const auto parts = text::split_list(v);
        if (parts.size() != 3) throw Error(ErrorKind::InvalidConfig, "split_ratios needs three values");
        m.split_ratios = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
      } else if (key == "payload_len") {
        m.payload_len = std::stoull(v);
      } else if (key.rfind("flag", 0) == 0) {
        m.flags.push_back(v);
      } else {
        throw Error(ErrorKind::InvalidConfig, "unknown manifest key '" + key + "'");
      }
    }
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad manifest value: ") + e.what());
  }
  if (m.counts.size() != m.class_names.size()) {
    throw Error(ErrorKind::InvalidConfig, "manifest lists " + std::to_string(m.class_names.size()) +
                                              " classes but " + std::to_string(m.counts.size()) + " counts");
  }
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const { text::write_file(path, to_text()); }

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  return from_text(text::read_file(path));
}

std::filesystem::path manifest_path_for(const std::filesystem::path& records) {
  auto p = records;
  p.replace_extension(".manifest.ini");
  return p;
}

// ---------------------------------------------------------------------------
// Labeling rules

bool Cidr::contains(const std::array<std::uint8_t, 4>& addr) const {
  const std::uint32_t a = std::uint32_t{addr[0]} << 24 | std::uint32_t{addr[1]} << 16 | std::uint32_t{addr[2]} << 8 |
                          addr[3];
  return (a & mask) == network;
}

Cidr Cidr::parse(const std::string& s) {
  const auto slash = s.find('/');
  const std::string addr = s.substr(0, slash);
  int prefix = 32;
  if (slash != std::string::npos) prefix = std::stoi(s.substr(slash + 1));
  if (prefix < 0 || prefix > 32) throw std::invalid_argument("bad prefix length in " + s);
  const auto octets = text::split_list(addr, '.');
  if (octets.size() != 4) throw std::invalid_argument("bad IPv4 address " + s);
  std::uint32_t a = 0;
  for (const auto& o : octets) {
    const unsigned long v = std::stoul(o);
    if (v > 255) throw std::invalid_argument("bad IPv4 octet in " + s);
    a = a << 8 | static_cast<std::uint32_t>(v);
  }
  Cidr c;
  c.mask = prefix == 0 ? 0 : ~std::uint32_t{0} << (32 - prefix);
  c.network = a & c.mask;
  return c;
}

PortRange PortRange::parse(const std::string& s) {
  const auto dash = s.find('-');
  const auto lo = std::stoul(s.substr(0, dash));
  const auto hi = dash == std::string::npos ? lo : std::stoul(s.substr(dash + 1));
  if (lo > 65535 || hi > 65535 || lo > hi) throw std::invalid_argument("bad port range " + s);
  return {static_cast<std::uint16_t>(lo), static_cast<std::uint16_t>(hi)};
}

namespace {

std::uint8_t parse_proto(const std::string& v) {
  if (v == "tcp") return pkt::kProtoTCP;
  if (v == "udp") return pkt::kProtoUDP;
  if (v == "icmp") return 1;
  const auto n = std::stoul(v);
  if (n > 255) throw std::invalid_argument("bad protocol number " + v);
  return static_cast<std::uint8_t>(n);
}

std::optional<std::uint16_t> class_or_drop(const std::vector<std::string>& names, const std::string& v) {
  if (v == "drop") return std::nullopt;
  const auto it = std::find(names.begin(), names.end(), v);
  if (it == names.end()) throw Error(ErrorKind::InvalidConfig, "labeling rule names unknown class '" + v + "'");
  return static_cast<std::uint16_t>(it - names.begin());
}

bool rule_matches(const LabelRule& r, const pkt::PacketRecord& rec, const std::string& file_name) {
  if (r.file_glob && fnmatch(r.file_glob->c_str(), file_name.c_str(), 0) != 0) return false;
  const bool needs_ip = r.src || r.dst || r.proto || r.src_port || r.dst_port;
  if (!needs_ip) return true;
  if (!rec.ipv4) return false;
  if (r.src && !r.src->contains(rec.ipv4->src_addr)) return false;
  if (r.dst && !r.dst->contains(rec.ipv4->dst_addr)) return false;
  if (r.proto && rec.ipv4->protocol != *r.proto) return false;
  if (r.src_port || r.dst_port) {
    if (!rec.transport) return false;
    if (r.src_port && !r.src_port->contains(rec.transport->src_port())) return false;
    if (r.dst_port && !r.dst_port->contains(rec.transport->dst_port())) return false;
  }
  return true;
}

}  // namespace

LabelDecision LabelingRules::classify(const pkt::PacketRecord& record, const std::string& file_name) const {
  for (const auto& r : rules) {
    if (!rule_matches(r, record, file_name)) continue;
    if (r.label) return {LabelDecision::Kind::Labeled, *r.label};
    return {LabelDecision::Kind::Dropped, 0};
  }
  if (strict) return {LabelDecision::Kind::Unmatched, 0};
  if (default_label) return {LabelDecision::Kind::Labeled, *default_label};
  return {LabelDecision::Kind::Dropped, 0};
}

LabelingRules LabelingRules::from_text(const std::string& content) {
  const auto tree = text::parse_ini(content, ErrorKind::InvalidConfig);
  LabelingRules out;
  const auto labels = tree.get_child_optional("labels");
  if (!labels) throw Error(ErrorKind::InvalidConfig, "labeling rules need a [labels] section");
  std::string default_text;
  try {
    for (const auto& [key, node] : *labels) {
      const auto v = node.get_value<std::string>();
      if (key == "classes") out.class_names = text::split_list(v);
      else if (key == "strict") out.strict = text::parse_bool(v);
      else if (key == "default") default_text = v;
      else throw Error(ErrorKind::InvalidConfig, "unknown [labels] key '" + key + "'");
    }
    if (out.class_names.empty()) throw Error(ErrorKind::InvalidConfig, "[labels] classes is empty");
    if (!default_text.empty()) out.default_label = class_or_drop(out.class_names, default_text);

    for (const auto& [section, body] : tree) {
      if (section == "labels") continue;
      if (section.rfind("rule", 0) != 0) {
        throw Error(ErrorKind::InvalidConfig, "unknown section [" + section + "] in labeling rules");
      }
      LabelRule r;
      r.name = section;
      bool has_class = false;
      for (const auto& [key, node] : body) {
        const auto v = node.get_value<std::string>();
        if (key == "src") r.src = Cidr::parse(v);
        else if (key == "dst") r.dst = Cidr::parse(v);
        else if (key == "src_port") r.src_port = PortRange::parse(v);
        else if (key == "dst_port") r.dst_port = PortRange::parse(v);
        else if (key == "proto") r.proto = parse_proto(v);
        else if (key == "file") r.file_glob = v;
        else if (key == "class") {
          r.label = class_or_drop(out.class_names, v);
          has_class = true;
        } else {
          throw Error(ErrorKind::InvalidConfig, "unknown key '" + key + "' in [" + section + "]");
        }
      }
      if (!has_class) throw Error(ErrorKind::InvalidConfig, "[" + section + "] has no class");
      out.rules.push_back(std::move(r));
    }
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad labeling rule: ") + e.what());
  }
  return out;
}

LabelingRules LabelingRules::load(const std::filesystem::path& path) { return from_text(text::read_file(path)); }

// ---------------------------------------------------------------------------
// Ingestion

LabeledExample make_example(const pkt::PacketRecord& record, std::uint16_t label, std::size_t payload_len,
                            pkt::HeaderMode mode) {
  LabeledExample ex;
  ex.header = pkt::build_header_vector(record, mode);
  ex.payload = pkt::build_payload_vector(record, payload_len).bytes;
  ex.label = label;
  return ex;
}

IngestResult ingest_capture(const std::vector<std::filesystem::path>& captures, const LabelingRules& rules,
                            const IngestOptions& options, const std::filesystem::path& out_records) {
  IngestResult result;
  auto& st = result.stats;
  auto& m = result.manifest;
  m.class_names = rules.class_names;
  m.counts.assign(rules.class_names.size(), 0);
  m.payload_len = options.payload_len;

  RecordWriter writer(out_records, rules.class_names.size(), options.payload_len);
  for (const auto& path : captures) {
    pkt::CaptureReader reader(path);
    const std::string file_name = path.filename().string();
    while (auto frame = reader.next()) {
      ++st.packets;
      pkt::PacketRecord rec;
      try {
        rec = pkt::parse_packet(frame->data, frame->link_type, frame->timestamp);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::FrameTooShort) throw;
        ++st.frame_too_short;
        continue;
      }
      const auto decision = rules.classify(rec, file_name);
      if (decision.kind == LabelDecision::Kind::Unmatched) {
        ++st.no_matching_rule;
        continue;
      }
      if (decision.kind == LabelDecision::Kind::Dropped) {
        ++st.dropped_by_rule;
        continue;
      }
      if (options.anonymize) rec = pkt::anonymize(std::move(rec));
      LabeledExample ex;
      try {
        ex = make_example(rec, decision.label, options.payload_len, options.header_mode);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UnsupportedProtocol) throw;
        ++st.unsupported_protocol;
        continue;
      }
      writer.write(ex);
      ++m.counts[ex.label];
      ++st.emitted;
    }
  }
  writer.close();
  m.save(manifest_path_for(out_records));
  return result;
}

}  // namespace amlhp::data
