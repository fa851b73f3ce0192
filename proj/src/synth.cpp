#include <algorithm>

#include "amlhp/dataset.hpp"
#include "amlhp/error.hpp"
#include "amlhp/rng.hpp"
#include "text_util.hpp"

namespace amlhp::data {

namespace {

[[noreturn]] void bad_spec(const std::string& why) { throw Error(ErrorKind::InvalidSpec, why); }

Bytes str_bytes(const char* s) { return Bytes(s, s + std::char_traits<char>::length(s)); }

void put16(Bytes& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v >> 8);
  b[at + 1] = static_cast<std::uint8_t>(v);
}

void put32(Bytes& b, std::size_t at, std::uint32_t v) {
  put16(b, at, static_cast<std::uint16_t>(v >> 16));
  put16(b, at + 2, static_cast<std::uint16_t>(v));
}

std::uint16_t ipv4_checksum(const Bytes& b, std::size_t at, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < len; i += 2) sum += static_cast<std::uint32_t>(b[at + i] << 8 | b[at + i + 1]);
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

constexpr std::size_t kEth = 14;
constexpr std::size_t kIp = 20;

// Offsets (from the start of the frame) that noise never touches because they
// decide how the frame dissects: link header, version/IHL, total length,
// fragment field, protocol, addresses and the TCP data offset.
bool structural(std::size_t at, bool tcp) {
  if (at < kEth) return true;
  const std::size_t ip = at - kEth;
  if (ip == 0 || ip == 2 || ip == 3 || ip == 6 || ip == 7 || ip == 9) return true;
  if (ip >= 12 && ip < 20) return true;
  if (tcp && ip == kIp + 12) return true;
  return false;
}

Bytes build_frame(const ClassRule& rule, std::uint16_t label, double noise, Rng& rng) {
  const bool tcp = rng.uniform() < rule.tcp_fraction;
  const std::size_t l4 = tcp ? 20 : 8;
  const auto payload_len = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(rule.len_lo),
                                                              static_cast<std::int64_t>(rule.len_hi)));
  Bytes f(kEth + kIp + l4 + payload_len, 0);

  // Ethernet
  const std::uint8_t dst_mac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
  const std::uint8_t src_mac[6] = {0x02, 0x00, 0x00, 0x00, 0x01, static_cast<std::uint8_t>(label)};
  std::copy_n(dst_mac, 6, f.begin());
  std::copy_n(src_mac, 6, f.begin() + 6);
  put16(f, 12, 0x0800);

  // IPv4
  const std::size_t ip = kEth;
  f[ip] = 0x45;
  f[ip + 1] = rule.tos;
  put16(f, ip + 2, static_cast<std::uint16_t>(kIp + l4 + payload_len));
  put16(f, ip + 4, static_cast<std::uint16_t>(rng.below(65536)));
  put16(f, ip + 6, 0x4000);  // DF
  f[ip + 8] = static_cast<std::uint8_t>(rng.range(rule.ttl_lo, rule.ttl_hi));
  f[ip + 9] = tcp ? pkt::kProtoTCP : pkt::kProtoUDP;
  f[ip + 12] = 10;
  f[ip + 13] = 0;
  f[ip + 14] = rule.subnet;
  f[ip + 15] = static_cast<std::uint8_t>(rng.range(1, 254));
  f[ip + 16] = 192;
  f[ip + 17] = 168;
  f[ip + 18] = 1;
  f[ip + 19] = 10;

  // Transport
  const std::size_t t = ip + kIp;
  put16(f, t, static_cast<std::uint16_t>(rng.range(1024, 65535)));
  put16(f, t + 2, rule.dst_port);
  if (tcp) {
    put32(f, t + 4, static_cast<std::uint32_t>(rng.next()));
    put32(f, t + 8, static_cast<std::uint32_t>(rng.next()));
    f[t + 12] = 0x50;
    f[t + 13] = rule.tcp_flags;
    put16(f, t + 14, rule.tcp_window);
    put16(f, t + 16, static_cast<std::uint16_t>(rng.below(65536)));
  } else {
    put16(f, t + 4, static_cast<std::uint16_t>(8 + payload_len));
    put16(f, t + 6, static_cast<std::uint16_t>(rng.below(65536)));
  }

  // Payload: random filler, magic prefix, periodic token.
  const std::size_t p = t + l4;
  for (std::size_t i = 0; i < payload_len; ++i) f[p + i] = rng.byte();
  std::copy_n(rule.magic.begin(), std::min(rule.magic.size(), payload_len), f.begin() + static_cast<std::ptrdiff_t>(p));
  if (rule.token_period > 0 && !rule.token.empty()) {
    for (std::size_t at = rule.magic.size(); at < payload_len; at += rule.token_period) {
      const std::size_t n = std::min(rule.token.size(), payload_len - at);
      std::copy_n(rule.token.begin(), n, f.begin() + static_cast<std::ptrdiff_t>(p + at));
    }
  }

  if (noise > 0) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!structural(i, tcp) && rng.uniform() < noise) f[i] = rng.byte();
    }
  }
  put16(f, ip + 10, 0);
  put16(f, ip + 10, ipv4_checksum(f, ip, kIp));
  return f;
}

std::pair<std::int64_t, std::int64_t> parse_range(const std::string& v) {
  const auto dash = v.find('-');
  const auto lo = std::stoll(v.substr(0, dash));
  const auto hi = dash == std::string::npos ? lo : std::stoll(v.substr(dash + 1));
  return {lo, hi};
}

std::uint64_t parse_uint(const std::string& v) { return std::stoull(v, nullptr, 0); }

void apply_class_key(ClassRule& c, const std::string& key, const std::string& v) {
  if (key == "name") {
    c.name = v;
  } else if (key == "tcp_fraction") {
    c.tcp_fraction = std::stod(v);
  } else if (key == "dst_port") {
    c.dst_port = static_cast<std::uint16_t>(parse_uint(v));
  } else if (key == "ttl") {
    const auto [lo, hi] = parse_range(v);
    if (lo < 1 || hi > 255) bad_spec("ttl must lie in [1, 255]");
    c.ttl_lo = static_cast<std::uint8_t>(lo);
    c.ttl_hi = static_cast<std::uint8_t>(hi);
  } else if (key == "tcp_flags") {
    c.tcp_flags = static_cast<std::uint8_t>(parse_uint(v));
  } else if (key == "tcp_window") {
    c.tcp_window = static_cast<std::uint16_t>(parse_uint(v));
  } else if (key == "tos") {
    c.tos = static_cast<std::uint8_t>(parse_uint(v));
  } else if (key == "magic") {
    c.magic = text::parse_bytes(v);
  } else if (key == "token") {
    c.token = text::parse_bytes(v);
  } else if (key == "token_period") {
    c.token_period = parse_uint(v);
  } else if (key == "length") {
    const auto [lo, hi] = parse_range(v);
    if (lo < 0) bad_spec("payload length range must be non-negative");
    c.len_lo = static_cast<std::size_t>(lo);
    c.len_hi = static_cast<std::size_t>(hi);
  } else if (key == "subnet") {
    c.subnet = static_cast<std::uint8_t>(parse_uint(v));
  } else {
    bad_spec("unknown class key '" + key + "'");
  }
}

bool same_rules(const ClassRule& a, const ClassRule& b) {
  ClassRule x = a, y = b;
  x.name = y.name;
  x.subnet = y.subnet;  // addresses are anonymized, so they never separate classes
  return x == y;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (classes.size() < 2) bad_spec("at least 2 classes are required");
  if (classes.size() > 65535) bad_spec("too many classes");
  if (per_class_count == 0) bad_spec("per_class_count must be positive");
  if (!(noise >= 0.0 && noise <= 1.0)) bad_spec("noise must lie in [0, 1]");
  if (payload_len == 0 || payload_len > 65535) bad_spec("payload_len must lie in [1, 65535]");
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& c = classes[k];
    const std::string who = "class " + std::to_string(k) + " (" + c.name + ")";
    if (c.name.empty()) bad_spec("class " + std::to_string(k) + " has no name");
    if (c.name.find(',') != std::string::npos) bad_spec(who + ": names may not contain commas");
    if (!(c.tcp_fraction >= 0.0 && c.tcp_fraction <= 1.0)) bad_spec(who + ": tcp_fraction outside [0, 1]");
    if (c.ttl_lo == 0 || c.ttl_lo > c.ttl_hi) bad_spec(who + ": bad ttl band");
    if (c.len_lo > c.len_hi || c.len_hi > 1400) bad_spec(who + ": payload length range must satisfy lo <= hi <= 1400");
    if (c.magic.size() > c.len_lo) bad_spec(who + ": magic prefix longer than the shortest payload");
    if (c.token_period > 0 && c.token.size() > c.token_period) bad_spec(who + ": token longer than its period");
    for (std::size_t j = 0; j < k; ++j) {
      if (same_rules(c, classes[j])) bad_spec(who + " has the same rules as class " + std::to_string(j));
    }
  }
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "[synth]\nper_class_count = " << per_class_count << "\nnoise = " << noise << "\npayload_len = " << payload_len
     << '\n';
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& c = classes[k];
    os << "\n[class." << k << "]\n"
       << "name = " << c.name << '\n'
       << "tcp_fraction = " << c.tcp_fraction << '\n'
       << "dst_port = " << c.dst_port << '\n'
       << "ttl = " << int{c.ttl_lo} << '-' << int{c.ttl_hi} << '\n'
       << "tcp_flags = " << int{c.tcp_flags} << '\n'
       << "tcp_window = " << c.tcp_window << '\n'
       << "tos = " << int{c.tos} << '\n'
       << "magic = " << text::hex_bytes(c.magic) << '\n'
       << "token = " << text::hex_bytes(c.token) << '\n'
       << "token_period = " << c.token_period << '\n'
       << "length = " << c.len_lo << '-' << c.len_hi << '\n'
       << "subnet = " << int{c.subnet} << '\n';
  }
  return os.str();
}

SyntheticSpec SyntheticSpec::from_text(const std::string& content) {
  const auto tree = text::parse_ini(content, ErrorKind::InvalidSpec);
  SyntheticSpec s;
  s.classes.clear();
  try {
    if (const auto head = tree.get_child_optional("synth")) {
      for (const auto& [key, node] : *head) {
        const auto v = node.get_value<std::string>();
        if (key == "per_class_count") {
          s.per_class_count = std::stoull(v);
        } else if (key == "noise") {
          s.noise = std::stod(v);
        } else if (key == "payload_len") {
          s.payload_len = std::stoull(v);
        } else if (key == "preset") {
          if (v != "standard") bad_spec("unknown preset '" + v + "'");
          s.classes = standard_spec().classes;
        } else {
          bad_spec("unknown [synth] key '" + key + "'");
        }
      }
    }
    for (const auto& [section, body] : tree) {
      if (section == "synth") continue;
      if (section.rfind("class.", 0) != 0) bad_spec("unknown section [" + section + "]");
      const std::size_t k = std::stoull(section.substr(6));
      if (k > s.classes.size()) bad_spec("[" + section + "] skips class " + std::to_string(s.classes.size()));
      if (k == s.classes.size()) s.classes.emplace_back();
      for (const auto& [key, node] : body) apply_class_key(s.classes[k], key, node.get_value<std::string>());
    }
  } catch (const std::logic_error& e) {
    bad_spec(std::string("bad synthetic spec value: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) { return from_text(text::read_file(path)); }

SyntheticSpec standard_spec(std::size_t per_class_count, double noise) {
  SyntheticSpec s;
  s.per_class_count = per_class_count;
  s.noise = noise;
  s.payload_len = 64;

  ClassRule web;
  web.name = "web_benign";
  web.dst_port = 80;
  web.ttl_lo = 60, web.ttl_hi = 64;
  web.tcp_flags = 0x18;
  web.tcp_window = 64240;
  web.tos = 0x00;
  web.magic = str_bytes("GET /");
  web.token = str_bytes("Host");
  web.token_period = 12;
  web.len_lo = 40, web.len_hi = 160;
  web.subnet = 0;

  // Same payload rules as web_benign; only header fields differ.
  ClassRule probe = web;
  probe.name = "web_probe";
  probe.ttl_lo = 240, probe.ttl_hi = 250;
  probe.tcp_flags = 0x29;
  probe.tcp_window = 1024;
  probe.tos = 0x10;
  probe.subnet = 1;

  ClassRule publish;
  publish.name = "mqtt_publish";
  publish.dst_port = 1883;
  publish.ttl_lo = 60, publish.ttl_hi = 64;
  publish.tcp_flags = 0x18;
  publish.tcp_window = 502;
  publish.magic = {0x30, 0x2a, 0x00, 0x0b};
  publish.token = str_bytes("temp=");
  publish.token_period = 10;
  publish.len_lo = 30, publish.len_hi = 90;
  publish.subnet = 2;

  // Same header rules as mqtt_publish; only payload motifs differ.
  ClassRule flood = publish;
  flood.name = "mqtt_flood";
  flood.magic = {0x10, 0x26, 0x00, 0x04, 'M', 'Q', 'T', 'T'};
  flood.token = {0xde, 0xad, 0xbe, 0xef};
  flood.token_period = 7;
  flood.subnet = 3;

  ClassRule dns;
  dns.name = "dns_tunnel";
  dns.tcp_fraction = 0.2;
  dns.dst_port = 53;
  dns.ttl_lo = 30, dns.ttl_hi = 40;
  dns.tcp_flags = 0x18;
  dns.tcp_window = 8192;
  dns.magic = {0x12, 0x34, 0x01, 0x00, 0x00, 0x01};
  dns.token = str_bytes("x7q");
  dns.token_period = 9;
  dns.len_lo = 40, dns.len_hi = 120;
  dns.subnet = 4;

  s.classes = {web, probe, publish, flood, dns};
  return s;
}

std::vector<SyntheticFrame> synthesize_frames(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<SyntheticFrame> frames;
  frames.reserve(spec.per_class_count * spec.num_classes());
  for (std::size_t k = 0; k < spec.num_classes(); ++k) {
    for (std::size_t i = 0; i < spec.per_class_count; ++i) {
      SyntheticFrame sf;
      sf.label = static_cast<std::uint16_t>(k);
      sf.frame = build_frame(spec.classes[k], sf.label, spec.noise, rng);
      frames.push_back(std::move(sf));
    }
  }
  rng.shuffle(frames.begin(), frames.end());
  constexpr std::int64_t kEpoch = 1'700'000'000;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].timestamp = {kEpoch + static_cast<std::int64_t>(i / 1000), static_cast<std::uint32_t>(i % 1000) * 1'000'000u};
  }
  return frames;
}

DatasetManifest synthesize(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out_records) {
  const auto frames = synthesize_frames(spec, seed);
  DatasetManifest m;
  for (const auto& c : spec.classes) m.class_names.push_back(c.name);
  m.counts.assign(spec.num_classes(), 0);
  m.payload_len = spec.payload_len;

  RecordWriter writer(out_records, spec.num_classes(), spec.payload_len);
  for (const auto& sf : frames) {
    auto rec = pkt::anonymize(pkt::parse_packet(sf.frame, pkt::LinkType::Ethernet, sf.timestamp));
    writer.write(make_example(rec, sf.label, spec.payload_len, pkt::HeaderMode::Strict));
    ++m.counts[sf.label];
  }
  writer.close();
  m.save(manifest_path_for(out_records));
  return m;
}

}  // namespace amlhp::data
