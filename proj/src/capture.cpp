#include "amlhp/capture.hpp"

#include <cstring>

#include "amlhp/error.hpp"
#include "binary_io.hpp"

namespace amlhp::pkt {

namespace {

constexpr std::uint32_t kPcapMagicMicros = 0xa1b2c3d4;
constexpr std::uint32_t kPcapMagicNanos = 0xa1b23c4d;
constexpr std::uint32_t kNgSectionHeader = 0x0a0d0d0a;
constexpr std::uint32_t kNgByteOrderMagic = 0x1a2b3c4d;
constexpr std::uint32_t kNgInterfaceDescription = 1;
constexpr std::uint32_t kNgEnhancedPacket = 6;
constexpr std::uint32_t kMaxBlock = 64u << 20;

std::uint32_t bswap32(std::uint32_t v) { return __builtin_bswap32(v); }
std::uint16_t bswap16(std::uint16_t v) { return __builtin_bswap16(v); }

}  // namespace

LinkType link_type_from_code(std::uint32_t code, const std::string& context) {
  switch (code) {
    case 1: return LinkType::Ethernet;
    case 101: return LinkType::RawIPv4;
    default:
      throw Error(ErrorKind::UnsupportedLinkType,
                  context + ": link type " + std::to_string(code) + " (only 1 Ethernet and 101 raw IP are supported)");
  }
}

std::uint32_t link_type_code(LinkType link) { return link == LinkType::RawIPv4 ? 101 : 1; }

CaptureReader::CaptureReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  unsigned char magic[4];
  if (!in_.read(reinterpret_cast<char*>(magic), 4)) fail("file is shorter than a capture header");
  const std::uint32_t le = io::from_le<std::uint32_t>(magic);
  if (le == kNgSectionHeader) {
    pcapng_ = true;
    read_section_header(le);
    return;
  }
  if (le == kPcapMagicMicros || le == kPcapMagicNanos) {
    swapped_ = false;
    nanos_ = le == kPcapMagicNanos;
  } else if (bswap32(le) == kPcapMagicMicros || bswap32(le) == kPcapMagicNanos) {
    swapped_ = true;
    nanos_ = bswap32(le) == kPcapMagicNanos;
  } else {
    fail("unrecognized capture magic");
  }
  unsigned char rest[20];
  if (!in_.read(reinterpret_cast<char*>(rest), 20)) fail("truncated pcap global header");
  link_ = link_type_from_code(u32(rest + 16) & 0x0fffffff, path_.string());
}

std::uint32_t CaptureReader::u32(const unsigned char* p) const {
  const auto v = io::from_le<std::uint32_t>(p);
  return swapped_ ? bswap32(v) : v;
}

std::uint16_t CaptureReader::u16(const unsigned char* p) const {
  const auto v = io::from_le<std::uint16_t>(p);
  return swapped_ ? bswap16(v) : v;
}

void CaptureReader::fail(const std::string& why) const {
  throw Error(ErrorKind::BadCapture, path_.string() + ": " + why);
}

void CaptureReader::read_section_header(std::uint32_t) {
  unsigned char head[8];
  if (!in_.read(reinterpret_cast<char*>(head), 8)) fail("truncated pcapng section header");
  const std::uint32_t bom = io::from_le<std::uint32_t>(head + 4);
  if (bom == kNgByteOrderMagic) {
    swapped_ = false;
  } else if (bswap32(bom) == kNgByteOrderMagic) {
    swapped_ = true;
  } else {
    fail("bad pcapng byte-order magic");
  }
  const std::uint32_t total = u32(head);
  if (total < 28 || total % 4 != 0 || total > kMaxBlock) fail("bad pcapng section header length");
  in_.ignore(static_cast<std::streamsize>(total - 12));
  if (!in_) fail("truncated pcapng section header");
  interfaces_.clear();
}

std::optional<CapturedFrame> CaptureReader::next() { return pcapng_ ? next_pcapng() : next_pcap(); }

std::optional<CapturedFrame> CaptureReader::next_pcap() {
  unsigned char hdr[16];
  in_.read(reinterpret_cast<char*>(hdr), 16);
  if (in_.gcount() == 0) return std::nullopt;
  if (in_.gcount() != 16) fail("truncated packet record header");
  CapturedFrame f;
  f.link_type = link_;
  f.timestamp.seconds = u32(hdr);
  const std::uint32_t frac = u32(hdr + 4);
  f.timestamp.nanoseconds = nanos_ ? frac : frac * 1000;
  const std::uint32_t incl = u32(hdr + 8);
  f.original_length = u32(hdr + 12);
  if (incl > kMaxBlock) fail("packet record length " + std::to_string(incl) + " is implausible");
  f.data.resize(incl);
  if (!in_.read(reinterpret_cast<char*>(f.data.data()), incl)) fail("truncated packet data");
  return f;
}

std::optional<CapturedFrame> CaptureReader::next_pcapng() {
  for (;;) {
    unsigned char head[8];
    in_.read(reinterpret_cast<char*>(head), 8);
    if (in_.gcount() == 0) return std::nullopt;
    if (in_.gcount() != 8) fail("truncated pcapng block header");
    const std::uint32_t raw_type = io::from_le<std::uint32_t>(head);
    if (raw_type == kNgSectionHeader) {
      in_.seekg(-8, std::ios::cur);
      in_.ignore(4);
      read_section_header(raw_type);
      continue;
    }
    const std::uint32_t type = u32(head);
    const std::uint32_t total = u32(head + 4);
    if (total < 12 || total % 4 != 0 || total > kMaxBlock) fail("bad pcapng block length " + std::to_string(total));
    std::vector<unsigned char> body(total - 8);
    if (!in_.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size()))) {
      fail("truncated pcapng block");
    }
    const std::size_t body_len = body.size() - 4;  // trailing length copy

    if (type == kNgInterfaceDescription) {
      if (body_len < 8) fail("short interface description block");
      Interface itf;
      itf.link = link_type_from_code(u16(body.data()), path_.string());
      // options: code u16, length u16, value padded to 4
      std::size_t at = 8;
      while (at + 4 <= body_len) {
        const std::uint16_t code = u16(body.data() + at);
        const std::uint16_t len = u16(body.data() + at + 2);
        at += 4;
        if (code == 0 || at + len > body_len) break;
        if (code == 9 && len >= 1) {  // if_tsresol
          const std::uint8_t res = body[at];
          std::uint64_t ticks = 1;
          const unsigned exp = res & 0x7f;
          for (unsigned i = 0; i < exp && ticks < (1ull << 62); ++i) ticks *= (res & 0x80) ? 2 : 10;
          itf.ticks_per_second = ticks;
        }
        at += (len + 3u) & ~3u;
      }
      interfaces_.push_back(itf);
      continue;
    }
    if (type != kNgEnhancedPacket) continue;

    if (body_len < 20) fail("short enhanced packet block");
    const std::uint32_t iface = u32(body.data());
    if (iface >= interfaces_.size()) fail("packet references undeclared interface " + std::to_string(iface));
    const Interface& itf = interfaces_[iface];
    const std::uint64_t ticks = (static_cast<std::uint64_t>(u32(body.data() + 4)) << 32) | u32(body.data() + 8);
    const std::uint32_t cap = u32(body.data() + 12);
    if (20 + static_cast<std::size_t>(cap) > body_len) fail("enhanced packet data overruns its block");
    CapturedFrame f;
    f.link_type = itf.link;
    f.original_length = u32(body.data() + 16);
    f.timestamp.seconds = static_cast<std::int64_t>(ticks / itf.ticks_per_second);
    const std::uint64_t rem = ticks % itf.ticks_per_second;
    f.timestamp.nanoseconds =
        static_cast<std::uint32_t>(static_cast<unsigned __int128>(rem) * 1'000'000'000u / itf.ticks_per_second);
    f.data.assign(body.begin() + 20, body.begin() + 20 + cap);
    return f;
  }
}

PcapWriter::PcapWriter(const std::filesystem::path& path, LinkType link, std::uint32_t snaplen)
    : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorKind::UnreadableFile, "cannot write " + path.string());
  io::write_le<std::uint32_t>(out_, kPcapMagicMicros);
  io::write_le<std::uint16_t>(out_, 2);
  io::write_le<std::uint16_t>(out_, 4);
  io::write_le<std::int32_t>(out_, 0);
  io::write_le<std::uint32_t>(out_, 0);
  io::write_le<std::uint32_t>(out_, snaplen);
  io::write_le<std::uint32_t>(out_, link_type_code(link));
}

void PcapWriter::write(const Bytes& frame, Timestamp ts) {
  io::write_le<std::uint32_t>(out_, static_cast<std::uint32_t>(ts.seconds));
  io::write_le<std::uint32_t>(out_, ts.nanoseconds / 1000);
  io::write_le<std::uint32_t>(out_, static_cast<std::uint32_t>(frame.size()));
  io::write_le<std::uint32_t>(out_, static_cast<std::uint32_t>(frame.size()));
  out_.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
}

void PcapWriter::close() { out_.close(); }

}  // namespace amlhp::pkt
