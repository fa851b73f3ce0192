#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "amlhp/dataset.hpp"
#include "amlhp/model.hpp"
#include "amlhp/train.hpp"

namespace amlhp {

struct DataConfig {
  std::size_t payload_len = 64;
  bool anonymize = true;
  bool strict = false;  // strict header mode: skip packets that are not IPv4 TCP/UDP
  data::SplitRatios split_ratios;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

// Settings merged from a config file with [model], [train] and [data]
// sections plus "section.key=value" overrides (overrides win).
struct RunConfig {
  ModelConfig model;
  train::TrainConfig train;
  DataConfig data;

  static RunConfig from_text(const std::string& text, const std::vector<std::string>& overrides = {});
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
  static RunConfig defaults(const std::vector<std::string>& overrides = {});

  // Complete echo of every setting; from_text(to_text()) reproduces it.
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace amlhp
