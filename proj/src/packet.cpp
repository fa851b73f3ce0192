#include "amlhp/packet.hpp"

#include <algorithm>

#include "amlhp/error.hpp"

namespace amlhp::pkt {

namespace {

constexpr std::size_t kEthernetHeader = 14;
constexpr std::uint16_t kEtherIPv4 = 0x0800;
constexpr std::uint16_t kEtherVlan = 0x8100;
constexpr std::uint16_t kEtherQinQ = 0x88a8;

std::uint16_t be16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] << 8 | b[at + 1]);
}

void parse_transport(PacketRecord& rec, std::span<const std::uint8_t> datagram) {
  const IPv4View& ip = *rec.ipv4;
  const std::size_t start = ip.ihl_bytes;
  const bool first_fragment = (be16(ip.header_bytes, 6) & 0x1fff) == 0;
  auto rest = datagram.subspan(start);

  if (first_fragment && ip.protocol == kProtoTCP && rest.size() >= 20) {
    const std::size_t doff = static_cast<std::size_t>(rest[12] >> 4) * 4;
    if (doff >= 20) {
      const std::size_t take = std::min(doff, rest.size());
      rec.transport = TransportView{TransportKind::TCP, Bytes(rest.begin(), rest.begin() + take)};
      rest = rest.subspan(take);
    }
  } else if (first_fragment && ip.protocol == kProtoUDP && rest.size() >= 8) {
    rec.transport = TransportView{TransportKind::UDP, Bytes(rest.begin(), rest.begin() + 8)};
    rest = rest.subspan(8);
  }
  rec.payload_bytes.assign(rest.begin(), rest.end());
}

void parse_ipv4(PacketRecord& rec, std::span<const std::uint8_t> net) {
  if (net.size() < 20 || (net[0] >> 4) != 4) {
    rec.payload_bytes.assign(net.begin(), net.end());
    return;
  }
  const std::size_t ihl = static_cast<std::size_t>(net[0] & 0x0f) * 4;
  if (ihl < 20) {
    rec.payload_bytes.assign(net.begin(), net.end());
    return;
  }
  IPv4View ip;
  ip.ihl_bytes = ihl;
  ip.total_length = be16(net, 2);
  ip.protocol = net[9];
  std::copy_n(net.begin() + 12, 4, ip.src_addr.begin());
  std::copy_n(net.begin() + 16, 4, ip.dst_addr.begin());
  const std::size_t captured = std::min(ihl, net.size());
  ip.header_bytes.assign(net.begin(), net.begin() + captured);
  rec.ipv4 = std::move(ip);
  if (captured < ihl) return;  // options cut short: no transport layer

  // Trailing link padding is excluded when the length field is consistent.
  std::size_t end = net.size();
  if (rec.ipv4->total_length >= ihl && rec.ipv4->total_length <= net.size()) end = rec.ipv4->total_length;
  parse_transport(rec, net.first(end));
}

}  // namespace

PacketRecord parse_packet(std::span<const std::uint8_t> frame, LinkType link_type, Timestamp ts) {
  if (frame.empty()) throw Error(ErrorKind::FrameTooShort, "empty frame");
  PacketRecord rec;
  rec.timestamp = ts;
  rec.link_type = link_type;
  rec.raw_bytes.assign(frame.begin(), frame.end());

  switch (link_type) {
    case LinkType::Ethernet: {
      if (frame.size() < kEthernetHeader) {
        throw Error(ErrorKind::FrameTooShort,
                    std::to_string(frame.size()) + "-byte frame is shorter than an Ethernet header");
      }
      std::size_t off = 12;
      std::uint16_t type = be16(frame, off);
      while ((type == kEtherVlan || type == kEtherQinQ) && off + 6 <= frame.size()) {
        off += 4;
        type = be16(frame, off);
      }
      off += 2;
      rec.network_offset = off;
      if (type == kEtherIPv4) {
        parse_ipv4(rec, frame.subspan(off));
      } else {
        rec.payload_bytes.assign(frame.begin() + static_cast<std::ptrdiff_t>(off), frame.end());
      }
      break;
    }
    case LinkType::RawIPv4:
      rec.network_offset = 0;
      parse_ipv4(rec, frame);
      break;
    case LinkType::Other:
      rec.payload_bytes.assign(frame.begin(), frame.end());
      break;
  }
  return rec;
}

PacketRecord anonymize(PacketRecord record) {
  if (!record.ipv4) return record;
  IPv4View& ip = *record.ipv4;
  ip.src_addr.fill(0);
  ip.dst_addr.fill(0);
  std::fill(ip.header_bytes.begin() + 12, ip.header_bytes.begin() + 20, std::uint8_t{0});
  auto raw = record.raw_bytes.begin() + static_cast<std::ptrdiff_t>(record.network_offset);
  std::fill(raw + 12, raw + 20, std::uint8_t{0});
  return record;
}

HeaderVector build_header_vector(const PacketRecord& record, HeaderMode mode) {
  const bool supported = record.ipv4 && record.transport &&
                         (record.transport->kind == TransportKind::TCP || record.transport->kind == TransportKind::UDP);
  if (mode == HeaderMode::Strict && !supported) {
    throw Error(ErrorKind::UnsupportedProtocol,
                record.ipv4 ? "IPv4 protocol " + std::to_string(record.ipv4->protocol) + " is not TCP or UDP"
                            : std::string("not an IPv4 packet"));
  }
  HeaderVector h;
  h.bytes.fill(kFill);
  if (record.ipv4) {
    const auto& src = record.ipv4->header_bytes;
    std::copy_n(src.begin(), std::min(src.size(), kIPv4Region), h.bytes.begin() + kIPv4Offset);
  }
  if (record.transport) {
    const auto& src = record.transport->header_bytes;
    if (record.transport->kind == TransportKind::TCP) {
      std::copy_n(src.begin(), std::min(src.size(), kTCPRegion), h.bytes.begin() + kTCPOffset);
    } else if (record.transport->kind == TransportKind::UDP) {
      std::copy_n(src.begin(), std::min(src.size(), kUDPRegion), h.bytes.begin() + kUDPOffset);
    }
  }
  return h;
}

PayloadVector build_payload_vector(const PacketRecord& record, std::size_t payload_len) {
  if (payload_len == 0) throw Error(ErrorKind::InvalidConfig, "payload length must be at least 1");
  PayloadVector d;
  d.original_length = record.payload_bytes.size();
  d.bytes.assign(payload_len, 0);
  std::copy_n(record.payload_bytes.begin(), std::min(payload_len, record.payload_bytes.size()), d.bytes.begin());
  return d;
}

ModelInput to_model_input(const HeaderVector& h, const PayloadVector& d) {
  ModelInput in;
  in.header.resize(h.bytes.size());
  in.payload.resize(d.bytes.size());
  std::transform(h.bytes.begin(), h.bytes.end(), in.header.begin(), byte_feature);
  std::transform(d.bytes.begin(), d.bytes.end(), in.payload.begin(), byte_feature);
  return in;
}

}  // namespace amlhp::pkt
