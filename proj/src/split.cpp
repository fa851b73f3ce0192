#include <cmath>

#include "amlhp/dataset.hpp"
#include "amlhp/error.hpp"
#include "amlhp/rng.hpp"

namespace amlhp::data {

namespace {

void check_ratios(const SplitRatios& r) {
  const bool ok = r.train >= 0 && r.val >= 0 && r.test >= 0 && std::abs(r.train + r.val + r.test - 1.0) < 1e-9;
  if (!ok) throw Error(ErrorKind::InvalidConfig, "split ratios must be non-negative and sum to 1");
}

const char* kPartNames[3] = {"train", "val", "test"};

}  // namespace

std::array<std::uint64_t, 3> split_counts(std::uint64_t n, const SplitRatios& ratios) {
  check_ratios(ratios);
  const double dn = static_cast<double>(n);
  // Small epsilon so that e.g. 0.1 * 30 is not floored to 2.
  auto val = static_cast<std::uint64_t>(std::floor(ratios.val * dn + 0.5 + 1e-9));
  auto test = static_cast<std::uint64_t>(std::floor(ratios.test * dn + 1e-9));
  val = std::min(val, n);
  test = std::min(test, n - val);
  return {n - val - test, val, test};
}

std::vector<std::uint8_t> assign_split(const std::vector<std::uint16_t>& labels, std::size_t num_classes,
                                       const SplitRatios& ratios, std::uint64_t seed, SplitPlan* plan) {
  check_ratios(ratios);
  std::vector<std::vector<std::uint32_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw Error(ErrorKind::LabelOutOfRange, "record " + std::to_string(i) + " has label " + std::to_string(labels[i]));
    }
    members[labels[i]].push_back(static_cast<std::uint32_t>(i));
  }

  SplitPlan local;
  SplitPlan& p = plan ? *plan : local;
  p.per_class.assign(num_classes, {0, 0, 0});
  p.flags.clear();

  std::vector<std::uint8_t> part(labels.size(), 0);
  Rng rng(seed);
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& idx = members[k];
    if (idx.empty()) continue;
    if (idx.size() < 3) {
      throw Error(ErrorKind::ClassTooSmall,
                  "class " + std::to_string(k) + " has " + std::to_string(idx.size()) + " examples; at least 3 needed");
    }
    rng.shuffle(idx.begin(), idx.end());
    const auto counts = split_counts(idx.size(), ratios);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      part[idx[j]] = j < counts[0] ? 0 : (j < counts[0] + counts[1] ? 1 : 2);
    }
    p.per_class[k] = counts;
    for (int s = 0; s < 3; ++s) {
      if (counts[s] == 0) {
        p.flags.push_back("class " + std::to_string(k) + " (" + std::to_string(idx.size()) + " examples) has an empty " +
                          kPartNames[s] + " part");
      }
    }
  }
  return part;
}

SplitResult split_records(const std::filesystem::path& records, const DatasetManifest& manifest, std::uint64_t seed,
                          const SplitRatios& ratios, const std::filesystem::path& out_dir) {
  // Pass 1: labels only.
  std::vector<std::uint16_t> labels;
  RecordHeader header;
  {
    RecordReader reader(records);
    header = reader.header();
    labels.reserve(header.count);
    while (auto ex = reader.next()) labels.push_back(ex->label);
  }
  if (!manifest.class_names.empty() && manifest.num_classes() != header.num_classes) {
    throw Error(ErrorKind::ShapeMismatch, "manifest has " + std::to_string(manifest.num_classes()) +
                                              " classes, record file has " + std::to_string(header.num_classes));
  }

  SplitResult result;
  const auto part = assign_split(labels, header.num_classes, ratios, seed, &result.plan);

  std::filesystem::create_directories(out_dir);
  std::array<std::unique_ptr<RecordWriter>, 3> writers;
  for (int s = 0; s < 3; ++s) {
    result.paths[s] = out_dir / (std::string(kPartNames[s]) + ".rec");
    writers[s] = std::make_unique<RecordWriter>(result.paths[s], header.num_classes, header.payload_len);
  }

  // Pass 2: route records, preserving their relative order.
  {
    RecordReader reader(records);
    std::size_t i = 0;
    while (auto ex = reader.next()) writers[part[i++]]->write(*ex);
  }
  for (auto& w : writers) w->close();

  for (int s = 0; s < 3; ++s) {
    DatasetManifest m = manifest;
    if (m.class_names.empty()) {
      for (std::size_t k = 0; k < header.num_classes; ++k) m.class_names.push_back("class" + std::to_string(k));
    }
    m.payload_len = header.payload_len;
    m.split_seed = seed;
    m.split_ratios = ratios;
    m.counts.assign(header.num_classes, 0);
    for (std::size_t k = 0; k < header.num_classes; ++k) m.counts[k] = result.plan.per_class[k][s];
    m.flags = result.plan.flags;
    m.save(manifest_path_for(result.paths[s]));
    result.manifests[s] = std::move(m);
  }
  return result;
}

}  // namespace amlhp::data
