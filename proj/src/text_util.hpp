#pragma once

// Small helpers for the key = value config files.

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "amlhp/error.hpp"

namespace amlhp::text {

namespace pt = boost::property_tree;

inline std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, sep)) {
    boost::algorithm::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename Range>
std::string join(const Range& items, const char* sep = ", ") {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& item : items) {
    if (!first) os << sep;
    os << item;
    first = false;
  }
  return os.str();
}

inline pt::ptree parse_ini(const std::string& text, ErrorKind kind) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(kind, e.what());
  }
  return tree;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::UnreadableFile, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorKind::UnreadableFile, "write failed for " + path.string());
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("not a boolean: " + v);
}

// Hex byte string such as "47 45 54" or "474554"; also accepts "str:GET /".
inline std::vector<std::uint8_t> parse_bytes(const std::string& v) {
  std::vector<std::uint8_t> out;
  if (v.rfind("str:", 0) == 0) return {v.begin() + 4, v.end()};
  std::string digits;
  for (char c : v) {
    if (c == ' ' || c == ':') continue;
    if (!std::isxdigit(static_cast<unsigned char>(c))) throw std::invalid_argument("bad hex byte string: " + v);
    digits.push_back(c);
  }
  if (digits.size() % 2 != 0) throw std::invalid_argument("odd hex digit count: " + v);
  for (std::size_t i = 0; i < digits.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(digits.substr(i, 2), nullptr, 16)));
  }
  return out;
}

inline std::string hex_bytes(const std::vector<std::uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 15]);
  }
  return out;
}

}  // namespace amlhp::text
