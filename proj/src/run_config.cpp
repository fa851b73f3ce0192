#include "amlhp/run_config.hpp"

#include "amlhp/error.hpp"
#include "text_util.hpp"

namespace amlhp {

namespace {

std::string section_text(const text::pt::ptree& tree, const char* name) {
  std::ostringstream os;
  if (const auto s = tree.get_child_optional(name)) {
    for (const auto& [key, node] : *s) os << key << " = " << node.get_value<std::string>() << '\n';
  }
  return os.str();
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& content, const std::vector<std::string>& overrides) {
  auto tree = text::parse_ini(content, ErrorKind::InvalidConfig);
  for (const auto& entry : tree) {
    const auto& section = entry.first;
    if (section != "model" && section != "train" && section != "data") {
      throw Error(ErrorKind::InvalidConfig, "unknown config section [" + section + "]");
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw Error(ErrorKind::InvalidConfig, "override '" + o + "' is not section.key=value");
    }
    const std::string section = o.substr(0, dot);
    if (section != "model" && section != "train" && section != "data") {
      throw Error(ErrorKind::InvalidConfig, "override '" + o + "' names unknown section " + section);
    }
    std::string key = o.substr(dot + 1, eq - dot - 1), value = o.substr(eq + 1);
    boost::algorithm::trim(key);
    boost::algorithm::trim(value);
    if (key.empty() || key.find('.') != std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "override '" + o + "' has a bad key");
    }
    tree.put(section + "." + key, value);
  }

  RunConfig rc;
  rc.model = ModelConfig::from_text(section_text(tree, "model"));
  try {
    if (const auto s = tree.get_child_optional("train")) {
      for (const auto& [key, node] : *s) {
        const auto v = node.get_value<std::string>();
        if (key == "epochs") rc.train.epochs = std::stoull(v);
        else if (key == "batch_size") rc.train.batch_size = std::stoull(v);
        else if (key == "lr") rc.train.lr = std::stod(v);
        else if (key == "warmup_steps") rc.train.warmup_steps = std::stoull(v);
        else if (key == "lr_schedule") rc.train.lr_schedule = train::parse_lr_schedule(v);
        else if (key == "dropout") rc.train.dropout = std::stod(v);
        else if (key == "seed") rc.train.seed = std::stoull(v);
        else if (key == "log_every") rc.train.log_every = std::stoull(v);
        else throw Error(ErrorKind::InvalidConfig, "unknown train key '" + key + "'");
      }
    }
    if (const auto s = tree.get_child_optional("data")) {
      for (const auto& [key, node] : *s) {
        const auto v = node.get_value<std::string>();
        if (key == "payload_len") rc.data.payload_len = std::stoull(v);
        else if (key == "anonymize") rc.data.anonymize = text::parse_bool(v);
        else if (key == "strict") rc.data.strict = text::parse_bool(v);
        else if (key == "split_ratios") {
          const auto parts = text::split_list(v);
          if (parts.size() != 3) throw Error(ErrorKind::InvalidConfig, "split_ratios needs three values");
          rc.data.split_ratios = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
        } else {
          throw Error(ErrorKind::InvalidConfig, "unknown data key '" + key + "'");
        }
      }
    }
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad config value: ") + e.what());
  }
  // The payload length is one setting shared by data preparation and the model.
  if (!tree.get_optional<std::string>("model.payload_len")) rc.model.payload_len = rc.data.payload_len;
  rc.model.dropout = rc.train.dropout;
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  return from_text(text::read_file(path), overrides);
}

RunConfig RunConfig::defaults(const std::vector<std::string>& overrides) { return from_text("", overrides); }

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "[model]\n" << model.to_text() << '\n';
  os << "[train]\n"
     << "epochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "lr = " << train.lr << '\n'
     << "warmup_steps = " << train.warmup_steps << '\n'
     << "lr_schedule = " << train::to_string(train.lr_schedule) << '\n'
     << "dropout = " << train.dropout << '\n'
     << "seed = " << train.seed << '\n'
     << "log_every = " << train.log_every << "\n\n";
  os << "[data]\n"
     << "payload_len = " << data.payload_len << '\n'
     << "anonymize = " << (data.anonymize ? "true" : "false") << '\n'
     << "strict = " << (data.strict ? "true" : "false") << '\n'
     << "split_ratios = " << data.split_ratios.train << ", " << data.split_ratios.val << ", " << data.split_ratios.test
     << '\n';
  return os.str();
}

void RunConfig::save(const std::filesystem::path& path) const { text::write_file(path, to_text()); }

}  // namespace amlhp
