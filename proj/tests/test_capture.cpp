#include <gtest/gtest.h>

#include "amlhp/capture.hpp"
#include "amlhp/error.hpp"
#include "support/frames.hpp"
#include "support/tempdir.hpp"

using namespace amlhp;
using namespace amlhp::pkt;
using namespace amlhp::testing;

namespace {

struct Out {
  bool big = false;
  std::string bytes;

  void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    if (big) {
      u8(v >> 8), u8(v & 0xff);
    } else {
      u8(v & 0xff), u8(v >> 8);
    }
  }
  void u32(std::uint32_t v) {
    if (big) {
      u16(static_cast<std::uint16_t>(v >> 16)), u16(static_cast<std::uint16_t>(v));
    } else {
      u16(static_cast<std::uint16_t>(v)), u16(static_cast<std::uint16_t>(v >> 16));
    }
  }
  void raw(const Bytes& b) { bytes.append(b.begin(), b.end()); }
};

std::string classic_pcap(bool big, bool nanos, std::uint32_t link, const std::vector<Bytes>& frames) {
  Out o{big, {}};
  o.u32(nanos ? 0xa1b23c4d : 0xa1b2c3d4);
  o.u16(2), o.u16(4);
  o.u32(0), o.u32(0), o.u32(65535), o.u32(link);
  std::uint32_t sec = 1700000000;
  for (const auto& f : frames) {
    o.u32(sec++), o.u32(nanos ? 123456789 : 123456);
    o.u32(static_cast<std::uint32_t>(f.size())), o.u32(static_cast<std::uint32_t>(f.size()));
    o.raw(f);
  }
  return o.bytes;
}

void block(Out& o, std::uint32_t type, const std::string& body) {
  const auto len = static_cast<std::uint32_t>(12 + body.size());
  o.u32(type), o.u32(len);
  o.bytes += body;
  o.u32(len);
}

std::string pcapng(const std::vector<Bytes>& frames, std::uint32_t link = 1, bool nanos_option = false) {
  Out o;
  Out shb;
  shb.u32(0x1a2b3c4d), shb.u16(1), shb.u16(0), shb.u32(0xffffffff), shb.u32(0xffffffff);
  block(o, 0x0a0d0d0a, shb.bytes);
  Out idb;
  idb.u16(static_cast<std::uint16_t>(link)), idb.u16(0), idb.u32(65535);
  if (nanos_option) {
    idb.u16(9), idb.u16(1), idb.u8(9), idb.u8(0), idb.u8(0), idb.u8(0);  // if_tsresol = 10^-9
    idb.u16(0), idb.u16(0);
  }
  block(o, 1, idb.bytes);
  Out unknown;
  unknown.u32(42);
  block(o, 0x0bad, unknown.bytes);  // skipped
  std::uint64_t ticks = nanos_option ? 1700000000123456789ull : 1700000000123456ull;
  for (const auto& f : frames) {
    Out epb;
    epb.u32(0), epb.u32(static_cast<std::uint32_t>(ticks >> 32)), epb.u32(static_cast<std::uint32_t>(ticks));
    epb.u32(static_cast<std::uint32_t>(f.size())), epb.u32(static_cast<std::uint32_t>(f.size()));
    epb.raw(f);
    while (epb.bytes.size() % 4) epb.u8(0);
    block(o, 6, epb.bytes);
  }
  return o.bytes;
}

std::vector<Bytes> sample_frames() {
  Ipv4Fields f;
  std::vector<Bytes> out;
  out.push_back(ethernet(0x0800, ipv4(f, udp(1000, 53, {1, 2, 3}))));
  f.protocol = kProtoTCP;
  out.push_back(ethernet(0x0800, ipv4(f, tcp(2000, 80, {4, 5}))));
  out.push_back(ethernet(0x0806, arp_body()));
  return out;
}

std::vector<CapturedFrame> read_all(const std::filesystem::path& p) {
  CaptureReader r(p);
  std::vector<CapturedFrame> out;
  while (auto f = r.next()) out.push_back(std::move(*f));
  return out;
}

ErrorKind error_of(const std::filesystem::path& p) {
  try {
    read_all(p);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return ErrorKind::BadCapture;
}

}  // namespace

TEST(Capture, ClassicPcapBothByteOrdersAndResolutions) {
  TempDir tmp;
  const auto frames = sample_frames();
  for (bool big : {false, true})
    for (bool nanos : {false, true}) {
      const auto path = tmp / "c.pcap";
      spit(path, classic_pcap(big, nanos, 1, frames));
      const auto got = read_all(path);
      ASSERT_EQ(got.size(), frames.size());
      for (std::size_t i = 0; i < frames.size(); ++i) {
        EXPECT_EQ(got[i].data, frames[i]);
        EXPECT_EQ(got[i].link_type, LinkType::Ethernet);
        EXPECT_EQ(got[i].timestamp.seconds, 1700000000 + static_cast<std::int64_t>(i));
        EXPECT_EQ(got[i].timestamp.nanoseconds, nanos ? 123456789u : 123456000u);
      }
    }
}

TEST(Capture, RawIpLinkType) {
  TempDir tmp;
  Ipv4Fields f;
  const Bytes raw = ipv4(f, udp(1, 2, {9}));
  spit(tmp / "raw.pcap", classic_pcap(false, false, 101, {raw}));
  const auto got = read_all(tmp / "raw.pcap");
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].link_type, LinkType::RawIPv4);
  EXPECT_EQ(parse_packet(got[0].data, got[0].link_type).payload_bytes, Bytes{9});
}

TEST(Capture, PcapngSkipsUnknownBlocks) {
  TempDir tmp;
  const auto frames = sample_frames();
  spit(tmp / "c.pcapng", pcapng(frames));
  CaptureReader r(tmp / "c.pcapng");
  EXPECT_TRUE(r.is_pcapng());
  const auto got = read_all(tmp / "c.pcapng");
  ASSERT_EQ(got.size(), frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_EQ(got[i].data, frames[i]);
  EXPECT_EQ(got[0].timestamp.seconds, 1700000000);
  EXPECT_EQ(got[0].timestamp.nanoseconds, 123456000u);
}

TEST(Capture, PcapngNanosecondResolutionOption) {
  TempDir tmp;
  spit(tmp / "c.pcapng", pcapng(sample_frames(), 1, true));
  const auto got = read_all(tmp / "c.pcapng");
  ASSERT_FALSE(got.empty());
  EXPECT_EQ(got[0].timestamp.seconds, 1700000000);
  EXPECT_EQ(got[0].timestamp.nanoseconds, 123456789u);
}

TEST(Capture, UnsupportedLinkTypeFailsTheFile) {
  TempDir tmp;
  spit(tmp / "wifi.pcap", classic_pcap(false, false, 105, sample_frames()));
  EXPECT_EQ(error_of(tmp / "wifi.pcap"), ErrorKind::UnsupportedLinkType);
  spit(tmp / "wifi.pcapng", pcapng(sample_frames(), 105));
  EXPECT_EQ(error_of(tmp / "wifi.pcapng"), ErrorKind::UnsupportedLinkType);
}

TEST(Capture, DamagedFilesAreBadCaptures) {
  TempDir tmp;
  const auto good = classic_pcap(false, false, 1, sample_frames());
  spit(tmp / "cut.pcap", good.substr(0, good.size() - 5));
  EXPECT_EQ(error_of(tmp / "cut.pcap"), ErrorKind::BadCapture);
  spit(tmp / "junk.pcap", "this is not a capture file at all");
  EXPECT_EQ(error_of(tmp / "junk.pcap"), ErrorKind::BadCapture);
  spit(tmp / "header.pcap", good.substr(0, 10));
  EXPECT_EQ(error_of(tmp / "header.pcap"), ErrorKind::BadCapture);
  try {
    read_all(tmp / "cut.pcap");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("cut.pcap"), std::string::npos) << e.what();
  }
}

TEST(Capture, MissingFileIsUnreadable) {
  try {
    CaptureReader r("/nonexistent/file.pcap");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnreadableFile);
  }
}

TEST(Capture, EmptyCaptureHasNoFrames) {
  TempDir tmp;
  spit(tmp / "empty.pcap", classic_pcap(false, false, 1, {}));
  EXPECT_TRUE(read_all(tmp / "empty.pcap").empty());
}

TEST(Capture, WriterRoundTrip) {
  TempDir tmp;
  const auto frames = sample_frames();
  {
    PcapWriter w(tmp / "w.pcap", LinkType::Ethernet);
    for (std::size_t i = 0; i < frames.size(); ++i) w.write(frames[i], Timestamp{static_cast<std::int64_t>(i), 5000});
  }
  const auto got = read_all(tmp / "w.pcap");
  ASSERT_EQ(got.size(), frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    EXPECT_EQ(got[i].data, frames[i]);
    EXPECT_EQ(got[i].timestamp, (Timestamp{static_cast<std::int64_t>(i), 5000}));
  }
  EXPECT_EQ(link_type_code(LinkType::RawIPv4), 101u);
  EXPECT_EQ(link_type_from_code(1, "x"), LinkType::Ethernet);
}
