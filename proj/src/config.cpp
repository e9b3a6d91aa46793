#include "mpnet/config.hpp"

#include <algorithm>
#include <sstream>

#include "mpnet/errors.hpp"
#include "mpnet/io.hpp"

namespace mpnet {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t to_i64(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("[" + section + "] " + key + ": expected integer, got '" + v + "'");
  }
}

double to_f64(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("[" + section + "] " + key + ": expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("[" + section + "] " + key + ": expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& section, const std::string& key,
                             const std::string& v) {
  std::vector<int> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(static_cast<int>(to_i64(section, key, tok)));
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

IniData parse_ini(const std::string& text) {
  IniData data;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section '" +
                          line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      data[section];
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value, got '" +
                        line + "'");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!data[section].emplace(key, value).second)
      throw ConfigError("config: duplicate key '" + key + "' in section [" + section + "]");
  }
  return data;
}

std::string ini_to_text(const IniData& data) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, kv] : data) {
    if (!first) os << "\n";
    first = false;
    os << "[" << section << "]\n";
    for (const auto& [key, value] : kv) os << key << " = " << value << "\n";
  }
  return os.str();
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("[run] name must not be empty");
  if (out.empty()) throw ConfigError("[run] out must not be empty");
  if (threads < 0) throw ConfigError("[run] threads must be >= 0 (0 = auto)");
  if (paths < 1) throw ConfigError("[model] paths must be >= 1");
  if (classes < 2) throw ConfigError("[model] classes must be >= 2");
  if (gate_hidden < 1) throw ConfigError("[model] gate_hidden must be >= 1");
  if (source != "synthetic" && source != "cifar10" && source != "file")
    throw ConfigError("[data] source must be synthetic, cifar10 or file, got '" + source + "'");
  if (source != "synthetic" && data_path.empty())
    throw ConfigError("[data] path is required for source = " + source);
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("[data] val_fraction must be in (0, 1)");
  train.validate();
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  const IniData data = parse_ini(text);
  ExperimentConfig cfg;

  for (const auto& [section, kv] : data) {
    if (section == "run") {
      for (const auto& [key, v] : kv) {
        if (key == "name") cfg.name = v;
        else if (key == "out") cfg.out = v;
        else if (key == "threads") cfg.threads = static_cast<int>(to_i64(section, key, v));
        else throw ConfigError("unknown key '" + key + "' in section [run]");
      }
    } else if (section == "model") {
      for (const auto& [key, v] : kv) {
        if (key == "paths") cfg.paths = to_i64(section, key, v);
        else if (key == "mode") cfg.mode = parse_model_mode(v);
        else if (key == "classes") cfg.classes = to_i64(section, key, v);
        else if (key == "gate_hidden") cfg.gate_hidden = to_i64(section, key, v);
        else throw ConfigError("unknown key '" + key + "' in section [model]");
      }
    } else if (section == "train") {
      for (const auto& [key, v] : kv) {
        if (key == "epochs") cfg.train.epochs = static_cast<int>(to_i64(section, key, v));
        else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(to_i64(section, key, v));
        else if (key == "lr") cfg.train.lr = to_f64(section, key, v);
        else if (key == "momentum") cfg.train.momentum = to_f64(section, key, v);
        else if (key == "lr_decay_factor") cfg.train.lr_decay_factor = to_f64(section, key, v);
        else if (key == "decay_epochs") cfg.train.decay_epochs = to_int_list(section, key, v);
        else if (key == "seed") cfg.train.seed = static_cast<uint64_t>(to_i64(section, key, v));
        else if (key == "shift_pixels") cfg.train.shift_pixels = static_cast<int>(to_i64(section, key, v));
        else if (key == "hflip") cfg.train.hflip = to_bool(section, key, v);
        else if (key == "weight_decay") cfg.train.weight_decay = to_f64(section, key, v);
        else if (key == "checkpoint_every") cfg.train.checkpoint_every = static_cast<int>(to_i64(section, key, v));
        else throw ConfigError("unknown key '" + key + "' in section [train]");
      }
    } else if (section == "data") {
      for (const auto& [key, v] : kv) {
        if (key == "source") cfg.source = v;
        else if (key == "path") cfg.data_path = v;
        else if (key == "val_fraction") cfg.val_fraction = to_f64(section, key, v);
        else if (key == "contexts") cfg.synth.contexts = static_cast<int>(to_i64(section, key, v));
        else if (key == "classes") cfg.synth.classes = static_cast<int>(to_i64(section, key, v));
        else if (key == "per_cell") cfg.synth.samples_per_cell = static_cast<int>(to_i64(section, key, v));
        else if (key == "image_size") cfg.synth.image_size = static_cast<int>(to_i64(section, key, v));
        else if (key == "noise") cfg.synth.noise = static_cast<float>(to_f64(section, key, v));
        else if (key == "data_seed") cfg.synth.seed = static_cast<uint64_t>(to_i64(section, key, v));
        else throw ConfigError("unknown key '" + key + "' in section [data]");
      }
    } else {
      throw ConfigError("unknown config section [" + section + "]");
    }
  }

  cfg.train.mode = cfg.mode;
  cfg.validate();
  return cfg;
}

std::string experiment_config_to_text(const ExperimentConfig& cfg) {
  IniData data;
  data["run"]["name"] = cfg.name;
  data["run"]["out"] = cfg.out;
  data["run"]["threads"] = std::to_string(cfg.threads);

  data["model"]["paths"] = std::to_string(cfg.paths);
  data["model"]["mode"] = to_string(cfg.mode);
  data["model"]["classes"] = std::to_string(cfg.classes);
  data["model"]["gate_hidden"] = std::to_string(cfg.gate_hidden);

  data["train"]["epochs"] = std::to_string(cfg.train.epochs);
  data["train"]["batch_size"] = std::to_string(cfg.train.batch_size);
  data["train"]["lr"] = format_float(cfg.train.lr);
  data["train"]["momentum"] = format_float(cfg.train.momentum);
  data["train"]["lr_decay_factor"] = format_float(cfg.train.lr_decay_factor);
  data["train"]["decay_epochs"] = join_ints(cfg.train.decay_epochs);
  data["train"]["seed"] = std::to_string(cfg.train.seed);
  data["train"]["shift_pixels"] = std::to_string(cfg.train.shift_pixels);
  data["train"]["hflip"] = cfg.train.hflip ? "true" : "false";
  data["train"]["weight_decay"] = format_float(cfg.train.weight_decay);
  data["train"]["checkpoint_every"] = std::to_string(cfg.train.checkpoint_every);

  data["data"]["source"] = cfg.source;
  data["data"]["path"] = cfg.data_path;
  data["data"]["val_fraction"] = format_float(cfg.val_fraction);
  data["data"]["contexts"] = std::to_string(cfg.synth.contexts);
  data["data"]["classes"] = std::to_string(cfg.synth.classes);
  data["data"]["per_cell"] = std::to_string(cfg.synth.samples_per_cell);
  data["data"]["image_size"] = std::to_string(cfg.synth.image_size);
  data["data"]["noise"] = format_float(cfg.synth.noise);
  data["data"]["data_seed"] = std::to_string(cfg.synth.seed);
  return ini_to_text(data);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path));
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData out;
  if (cfg.source == "synthetic") {
    const Dataset all = generate_synthetic(cfg.synth);
    SplitResult split = split_dataset(all, 1.0 - cfg.val_fraction, cfg.synth.seed);
    out.train = std::move(split.train);
    out.val = std::move(split.val);
  } else if (cfg.source == "cifar10") {
    Cifar10 cifar = load_cifar10(cfg.data_path);
    // The held-out test batch serves as the validation split.
    out.train = std::move(cifar.train);
    out.val = std::move(cifar.test);
  } else {
    const Dataset all = load_dataset(cfg.data_path);
    SplitResult split = split_dataset(all, 1.0 - cfg.val_fraction, cfg.synth.seed);
    out.train = std::move(split.train);
    out.val = std::move(split.val);
  }
  out.stats = compute_channel_stats(out.train);
  return out;
}

ModelSpec model_spec_from_config(const ExperimentConfig& cfg, const Dataset& sample) {
  if (cfg.classes != sample.classes)
    throw ConfigError("[model] classes = " + std::to_string(cfg.classes) +
                      " but the dataset has " + std::to_string(sample.classes) + " classes");
  ModelSpec spec;
  spec.paths = cfg.paths;
  spec.classes = cfg.classes;
  spec.mode = cfg.mode;
  spec.in_channels = sample.channels();
  spec.in_h = sample.height();
  spec.in_w = sample.width();
  spec.arch.gate_hidden = cfg.gate_hidden;
  return spec;
}

}  // namespace mpnet
