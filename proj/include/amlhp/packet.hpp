#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace amlhp::pkt {

using Bytes = std::vector<std::uint8_t>;

enum class LinkType { Ethernet, RawIPv4, Other };

struct Timestamp {
  std::int64_t seconds = 0;
  std::uint32_t nanoseconds = 0;

  friend bool operator==(const Timestamp&, const Timestamp&) = default;
};

struct IPv4View {
  std::size_t ihl_bytes = 20;      // 4 * IHL
  std::uint16_t total_length = 0;
  std::uint8_t protocol = 0;
  std::array<std::uint8_t, 4> src_addr{};
  std::array<std::uint8_t, 4> dst_addr{};
  Bytes header_bytes;               // as captured; shorter than ihl_bytes only if the frame is cut

  friend bool operator==(const IPv4View&, const IPv4View&) = default;
};

enum class TransportKind { TCP, UDP, None };

struct TransportView {
  TransportKind kind = TransportKind::None;
  Bytes header_bytes;  // TCP: 20..60 bytes, UDP: 8 bytes

  std::uint16_t src_port() const { return static_cast<std::uint16_t>(header_bytes[0] << 8 | header_bytes[1]); }
  std::uint16_t dst_port() const { return static_cast<std::uint16_t>(header_bytes[2] << 8 | header_bytes[3]); }

  friend bool operator==(const TransportView&, const TransportView&) = default;
};

struct PacketRecord {
  Timestamp timestamp;
  LinkType link_type = LinkType::Ethernet;
  Bytes raw_bytes;
  std::size_t network_offset = 0;  // start of the layer after the link header
  std::optional<IPv4View> ipv4;
  std::optional<TransportView> transport;  // only alongside ipv4
  Bytes payload_bytes;

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

inline constexpr std::uint8_t kProtoTCP = 6;
inline constexpr std::uint8_t kProtoUDP = 17;
inline constexpr std::uint8_t kFill = 0xff;

// Header representation layout: [IPv4 0..60 | TCP 60..120 | UDP 120..128].
inline constexpr std::size_t kHeaderBytes = 128;
inline constexpr std::size_t kIPv4Offset = 0;
inline constexpr std::size_t kIPv4Region = 60;
inline constexpr std::size_t kTCPOffset = 60;
inline constexpr std::size_t kTCPRegion = 60;
inline constexpr std::size_t kUDPOffset = 120;
inline constexpr std::size_t kUDPRegion = 8;

struct HeaderVector {
  std::array<std::uint8_t, kHeaderBytes> bytes{};

  friend bool operator==(const HeaderVector&, const HeaderVector&) = default;
};

struct PayloadVector {
  Bytes bytes;  // exactly P long
  std::size_t original_length = 0;

  friend bool operator==(const PayloadVector&, const PayloadVector&) = default;
};

enum class HeaderMode { Strict, Permissive };

// Dissects link / IPv4 / TCP-UDP layers. Throws FrameTooShort when the frame
// cannot hold its link header; every deeper malformation leaves the
// corresponding view empty. Payload is whatever follows the deepest parsed
// layer (bounded by the IPv4 total length when that is consistent).
PacketRecord parse_packet(std::span<const std::uint8_t> frame, LinkType link_type, Timestamp ts = {});

// Zeroes the IPv4 source and destination addresses in the view, the stored
// header bytes and the raw frame. No-op without an IPv4 layer.
PacketRecord anonymize(PacketRecord record);

// Strict mode throws UnsupportedProtocol unless the packet is IPv4 carrying
// TCP or UDP. Permissive mode fills every absent region with 0xff.
HeaderVector build_header_vector(const PacketRecord& record, HeaderMode mode = HeaderMode::Permissive);

// First P payload bytes, zero padded.
PayloadVector build_payload_vector(const PacketRecord& record, std::size_t payload_len);

struct ModelInput {
  std::vector<float> header;   // 128 values
  std::vector<float> payload;  // P values
};

// byte / 255
ModelInput to_model_input(const HeaderVector& h, const PayloadVector& d);

inline float byte_feature(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

}  // namespace amlhp::pkt
