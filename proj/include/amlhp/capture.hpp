#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "amlhp/packet.hpp"

namespace amlhp::pkt {

struct CapturedFrame {
  Timestamp timestamp;
  LinkType link_type = LinkType::Ethernet;
  std::uint32_t original_length = 0;
  Bytes data;
};

// Streaming reader for classic pcap (either byte order, microsecond or
// nanosecond timestamps) and pcapng (Enhanced Packet Blocks; other block
// types are skipped). Link types 1 (Ethernet) and 101 (raw IP) are
// accepted; any other link type fails the whole file with
// UnsupportedLinkType. Structural damage raises BadCapture naming the file.
class CaptureReader {
 public:
  explicit CaptureReader(const std::filesystem::path& path);

  std::optional<CapturedFrame> next();

  const std::filesystem::path& path() const { return path_; }
  bool is_pcapng() const { return pcapng_; }

 private:
  struct Interface {
    LinkType link = LinkType::Ethernet;
    std::uint64_t ticks_per_second = 1'000'000;
  };

  std::optional<CapturedFrame> next_pcap();
  std::optional<CapturedFrame> next_pcapng();
  void read_section_header(std::uint32_t block_type_raw);
  [[noreturn]] void fail(const std::string& why) const;
  std::uint32_t u32(const unsigned char* p) const;
  std::uint16_t u16(const unsigned char* p) const;

  std::filesystem::path path_;
  std::ifstream in_;
  bool pcapng_ = false;
  bool swapped_ = false;
  bool nanos_ = false;
  LinkType link_ = LinkType::Ethernet;
  std::vector<Interface> interfaces_;
};

LinkType link_type_from_code(std::uint32_t code, const std::string& context);
std::uint32_t link_type_code(LinkType link);

// Writes little-endian classic pcap with microsecond timestamps.
class PcapWriter {
 public:
  PcapWriter(const std::filesystem::path& path, LinkType link, std::uint32_t snaplen = 65535);
  void write(const Bytes& frame, Timestamp ts);
  void close();

 private:
  std::ofstream out_;
};

}  // namespace amlhp::pkt
