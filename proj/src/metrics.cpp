#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "amlhp/error.hpp"
#include "amlhp/train.hpp"
#include "text_util.hpp"

namespace amlhp::train {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string class_name(const std::vector<std::string>& names, std::size_t k) {
  return k < names.size() ? names[k] : "class" + std::to_string(k);
}

}  // namespace

EvalReport report_from_confusion(std::size_t num_classes, std::vector<std::uint64_t> confusion) {
  if (confusion.size() != num_classes * num_classes) {
    throw Error(ErrorKind::ShapeMismatch, "confusion matrix has " + std::to_string(confusion.size()) +
                                              " cells for " + std::to_string(num_classes) + " classes");
  }
  EvalReport r;
  r.num_classes = num_classes;
  r.confusion = std::move(confusion);
  r.per_class.resize(num_classes);

  std::uint64_t correct = 0;
  for (std::size_t t = 0; t < num_classes; ++t) {
    for (std::size_t p = 0; p < num_classes; ++p) {
      const auto n = r.at(t, p);
      r.total += n;
      if (t == p) {
        r.per_class[t].tp = n;
        correct += n;
      } else {
        r.per_class[p].fp += n;
        r.per_class[t].fn += n;
      }
      r.per_class[t].support += n;
    }
  }
  if (r.total == 0) throw Error(ErrorKind::EmptySplit, "no examples to score");
  r.acc = static_cast<double>(correct) / static_cast<double>(r.total);

  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& c = r.per_class[k];
    c.precision = ratio(c.tp, c.tp + c.fp, c.precision_undefined);
    c.recall = ratio(c.tp, c.tp + c.fn, c.recall_undefined);
    const double s = c.precision + c.recall;
    c.f1 = s > 0 ? 2.0 * c.precision * c.recall / s : 0.0;
    if (c.precision_undefined) r.flags.push_back("class " + std::to_string(k) + ": precision 0/0 reported as 0");
    if (c.recall_undefined) r.flags.push_back("class " + std::to_string(k) + ": recall 0/0 reported as 0");
    r.macro_pr += c.precision;
    r.macro_rc += c.recall;
    r.macro_f1 += c.f1;
  }
  const auto k = static_cast<double>(num_classes);
  r.macro_pr /= k;
  r.macro_rc /= k;
  r.macro_f1 /= k;
  return r;
}

EvalReport report_from_predictions(std::size_t num_classes, std::span<const std::uint16_t> truth,
                                   std::span<const std::uint16_t> pred) {
  if (truth.size() != pred.size()) {
    throw Error(ErrorKind::ShapeMismatch, std::to_string(truth.size()) + " labels but " +
                                              std::to_string(pred.size()) + " predictions");
  }
  std::vector<std::uint64_t> confusion(num_classes * num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || pred[i] >= num_classes) {
      throw Error(ErrorKind::LabelOutOfRange, "entry " + std::to_string(i) + " is outside " +
                                                  std::to_string(num_classes) + " classes");
    }
    ++confusion[truth[i] * num_classes + pred[i]];
  }
  return report_from_confusion(num_classes, std::move(confusion));
}

std::string report_json(const EvalReport& r, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["num_classes"] = r.num_classes;
  j["total"] = r.total;
  j["acc"] = r.acc;
  j["macro_pr"] = r.macro_pr;
  j["macro_rc"] = r.macro_rc;
  j["macro_f1"] = r.macro_f1;
  j["loss"] = r.loss;
  auto& rows = j["confusion"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < r.num_classes; ++t) {
    std::vector<std::uint64_t> row(r.confusion.begin() + static_cast<std::ptrdiff_t>(t * r.num_classes),
                                   r.confusion.begin() + static_cast<std::ptrdiff_t>((t + 1) * r.num_classes));
    rows.push_back(row);
  }
  auto& per = j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.num_classes; ++k) {
    const auto& c = r.per_class[k];
    per.push_back({{"class", class_name(names, k)},
                   {"support", c.support},
                   {"tp", c.tp},
                   {"fp", c.fp},
                   {"fn", c.fn},
                   {"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1},
                   {"precision_undefined", c.precision_undefined},
                   {"recall_undefined", c.recall_undefined}});
  }
  j["flags"] = r.flags;
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "examples " << r.total << "  ACC " << r.acc << "  macro PR " << r.macro_pr << "  RC " << r.macro_rc
     << "  F1 " << r.macro_f1 << "\n\n";
  std::size_t width = 8;
  for (std::size_t k = 0; k < r.num_classes; ++k) width = std::max(width, class_name(names, k).size() + 2);
  os << std::left << std::setw(static_cast<int>(width)) << "class" << std::right << std::setw(9) << "support"
     << std::setw(11) << "precision" << std::setw(9) << "recall" << std::setw(9) << "f1" << '\n';
  for (std::size_t k = 0; k < r.num_classes; ++k) {
    const auto& c = r.per_class[k];
    os << std::left << std::setw(static_cast<int>(width)) << class_name(names, k) << std::right << std::setw(9)
       << c.support << std::setw(11) << c.precision << std::setw(9) << c.recall << std::setw(9) << c.f1 << '\n';
  }
  for (const auto& f : r.flags) os << "note: " << f << '\n';
  return os.str();
}

std::string confusion_csv(const EvalReport& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t k = 0; k < r.num_classes; ++k) os << ',' << class_name(names, k);
  os << '\n';
  for (std::size_t t = 0; t < r.num_classes; ++t) {
    os << class_name(names, t);
    for (std::size_t p = 0; p < r.num_classes; ++p) os << ',' << r.at(t, p);
    os << '\n';
  }
  return os.str();
}

std::vector<std::uint64_t> parse_confusion_csv(const std::string& csv, std::size_t* num_classes) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::InvalidConfig, "empty confusion CSV");
  const std::size_t k = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<std::uint64_t> counts;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');  // row label
    std::size_t cols = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        counts.push_back(std::stoull(cell));
      } catch (const std::logic_error&) {
        throw Error(ErrorKind::InvalidConfig, "bad confusion CSV cell '" + cell + "'");
      }
      ++cols;
    }
    if (cols != k) throw Error(ErrorKind::InvalidConfig, "confusion CSV row " + std::to_string(rows) + " is ragged");
    ++rows;
  }
  if (rows != k) throw Error(ErrorKind::InvalidConfig, "confusion CSV is not square");
  if (num_classes) *num_classes = k;
  return counts;
}

}  // namespace amlhp::train
