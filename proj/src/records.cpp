#include <cstring>

#include "amlhp/dataset.hpp"
#include "amlhp/error.hpp"
#include "binary_io.hpp"

namespace amlhp::data {

namespace {

void check_dims(std::size_t num_classes, std::size_t payload_len) {
  if (num_classes == 0 || num_classes > 65535) {
    throw Error(ErrorKind::InvalidConfig, "class count must be in [1, 65535]");
  }
  if (payload_len == 0 || payload_len > 65535) {
    throw Error(ErrorKind::InvalidConfig, "payload length must be in [1, 65535]");
  }
}

}  // namespace

RecordWriter::RecordWriter(const std::filesystem::path& path, std::size_t num_classes, std::size_t payload_len)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  check_dims(num_classes, payload_len);
  if (!out_) throw Error(ErrorKind::UnreadableFile, "cannot write " + path.string());
  header_.num_classes = static_cast<std::uint16_t>(num_classes);
  header_.payload_len = static_cast<std::uint16_t>(payload_len);
  out_.write(kRecordMagic, kRecordMagicLen);
  io::write_le(out_, header_.num_classes);
  io::write_le(out_, header_.payload_len);
  io::write_le<std::uint32_t>(out_, 0);
}

RecordWriter::~RecordWriter() {
  try {
    close();
  } catch (...) {
  }
}

void RecordWriter::write(const LabeledExample& example) {
  if (closed_) throw Error(ErrorKind::InvalidConfig, "write after close on " + path_.string());
  if (example.label >= header_.num_classes) {
    throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(example.label) + " with " +
                                                std::to_string(header_.num_classes) + " classes");
  }
  if (example.payload.size() != header_.payload_len) {
    throw Error(ErrorKind::ShapeMismatch, "payload of " + std::to_string(example.payload.size()) +
                                              " bytes in a file with P = " + std::to_string(header_.payload_len));
  }
  if (count_ == UINT32_MAX) throw Error(ErrorKind::InvalidConfig, "record file is full");
  io::write_le(out_, example.label);
  out_.write(reinterpret_cast<const char*>(example.header.bytes.data()), pkt::kHeaderBytes);
  out_.write(reinterpret_cast<const char*>(example.payload.data()), static_cast<std::streamsize>(header_.payload_len));
  ++count_;
}

void RecordWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(static_cast<std::streamoff>(kRecordMagicLen + 4));
  io::write_le(out_, count_);
  out_.close();
  if (out_.fail()) throw Error(ErrorKind::UnreadableFile, "failed to finish " + path_.string());
}

RecordReader::RecordReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  char magic[kRecordMagicLen];
  if (!in_.read(magic, kRecordMagicLen)) {
    throw Error(ErrorKind::BadMagic, path.string() + ": too short for a record file");
  }
  if (std::memcmp(magic, kRecordMagic, kRecordMagicLen) != 0) {
    // Same family, other revision digit.
    if (std::memcmp(magic, kRecordMagic, 5) == 0 && magic[6] == '\n' && magic[5] >= '0' && magic[5] <= '9') {
      throw Error(ErrorKind::VersionMismatch,
                  path.string() + ": record format version " + std::string(1, magic[5]) + ", expected 1");
    }
    throw Error(ErrorKind::BadMagic, path.string() + ": not a record file");
  }
  if (!io::read_le(in_, header_.num_classes) || !io::read_le(in_, header_.payload_len) ||
      !io::read_le(in_, header_.count)) {
    throw Error(ErrorKind::TruncatedRecord, path.string() + ": truncated preamble");
  }
  if (header_.num_classes == 0 || header_.payload_len == 0) {
    throw Error(ErrorKind::BadMagic, path.string() + ": zero class count or payload length");
  }
  buf_.resize(header_.stride());
}

LabeledExample RecordReader::read_one(std::uint32_t index) {
  in_.read(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (static_cast<std::size_t>(in_.gcount()) != buf_.size()) {
    throw Error(ErrorKind::TruncatedRecord, path_.string() + ": record " + std::to_string(index) + " of " +
                                                std::to_string(header_.count) + " is truncated");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf_.data());
  LabeledExample ex;
  ex.label = io::from_le<std::uint16_t>(p);
  if (ex.label >= header_.num_classes) {
    throw Error(ErrorKind::LabelOutOfRange, path_.string() + ": record " + std::to_string(index) + " has label " +
                                                std::to_string(ex.label));
  }
  std::memcpy(ex.header.bytes.data(), p + 2, pkt::kHeaderBytes);
  ex.payload.assign(p + 2 + pkt::kHeaderBytes, p + buf_.size());
  return ex;
}

std::optional<LabeledExample> RecordReader::next() {
  if (next_index_ >= header_.count) {
    if (in_.peek() != std::char_traits<char>::eof()) {
      throw Error(ErrorKind::TruncatedRecord,
                  path_.string() + ": trailing bytes after " + std::to_string(header_.count) + " records");
    }
    in_.clear();
    return std::nullopt;
  }
  auto ex = read_one(next_index_);
  ++next_index_;
  return ex;
}

LabeledExample RecordReader::at(std::uint32_t index) {
  if (index >= header_.count) {
    throw Error(ErrorKind::TruncatedRecord,
                path_.string() + ": record " + std::to_string(index) + " is past the end");
  }
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(kRecordPreamble + static_cast<std::size_t>(index) * header_.stride()));
  auto ex = read_one(index);
  next_index_ = index + 1;
  return ex;
}

void write_records(const std::filesystem::path& path, std::size_t num_classes, std::size_t payload_len,
                   const std::vector<LabeledExample>& examples) {
  RecordWriter w(path, num_classes, payload_len);
  for (const auto& ex : examples) w.write(ex);
  w.close();
}

std::vector<LabeledExample> read_records(const std::filesystem::path& path) {
  RecordReader r(path);
  std::vector<LabeledExample> out;
  out.reserve(r.header().count);
  while (auto ex = r.next()) out.push_back(std::move(*ex));
  return out;
}

RecordHeader read_record_header(const std::filesystem::path& path) { return RecordReader(path).header(); }

void Dataset::push_back(const LabeledExample& example) {
  if (example.payload.size() != payload_len) {
    throw Error(ErrorKind::ShapeMismatch, "payload length " + std::to_string(example.payload.size()) +
                                              " in a dataset with P = " + std::to_string(payload_len));
  }
  headers.insert(headers.end(), example.header.bytes.begin(), example.header.bytes.end());
  payloads.insert(payloads.end(), example.payload.begin(), example.payload.end());
  labels.push_back(example.label);
}

LabeledExample Dataset::example(std::size_t i) const {
  LabeledExample ex;
  std::memcpy(ex.header.bytes.data(), headers.data() + i * pkt::kHeaderBytes, pkt::kHeaderBytes);
  ex.payload.assign(payloads.begin() + static_cast<std::ptrdiff_t>(i * payload_len),
                    payloads.begin() + static_cast<std::ptrdiff_t>((i + 1) * payload_len));
  ex.label = labels[i];
  return ex;
}

Dataset load_dataset(const std::filesystem::path& path) {
  RecordReader r(path);
  Dataset d;
  d.num_classes = r.header().num_classes;
  d.payload_len = r.header().payload_len;
  d.headers.reserve(static_cast<std::size_t>(r.header().count) * pkt::kHeaderBytes);
  d.payloads.reserve(static_cast<std::size_t>(r.header().count) * d.payload_len);
  d.labels.reserve(r.header().count);
  while (auto ex = r.next()) d.push_back(*ex);
  return d;
}

}  // namespace amlhp::data
