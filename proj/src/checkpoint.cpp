#include "mpnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mpnet/io.hpp"

namespace mpnet {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'N', 'E', 'T', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

std::string join_i64(const std::vector<int64_t>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int64_t> parse_i64_list(const std::string& s) {
  std::vector<int64_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoll(tok));
  return out;
}

}  // namespace

std::string model_spec_to_text(const ModelSpec& spec) {
  std::ostringstream os;
  os << "paths=" << spec.paths << "\n";
  os << "classes=" << spec.classes << "\n";
  os << "mode=" << to_string(spec.mode) << "\n";
  os << "in_channels=" << spec.in_channels << "\n";
  os << "in_h=" << spec.in_h << "\n";
  os << "in_w=" << spec.in_w << "\n";
  os << "conv_channels=" << join_i64(spec.arch.conv_channels) << "\n";
  os << "pool_after=" << join_i64(spec.arch.pool_after) << "\n";
  os << "dense_nodes=" << join_i64(spec.arch.dense_nodes) << "\n";
  os << "cross_at_input=" << (spec.arch.cross_at_input ? 1 : 0) << "\n";
  os << "cross_after_conv=" << join_i64(spec.arch.cross_after_conv) << "\n";
  os << "cross_after_dense=" << join_i64(spec.arch.cross_after_dense) << "\n";
  os << "kernel=" << spec.arch.kernel << "\n";
  os << "gate_hidden=" << spec.arch.gate_hidden << "\n";
  return os.str();
}

ModelSpec model_spec_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("malformed model spec line: '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("model spec is missing key '" + key + "'");
    return it->second;
  };

  ModelSpec spec;
  spec.paths = std::stoll(need("paths"));
  spec.classes = std::stoll(need("classes"));
  spec.mode = parse_model_mode(need("mode"));
  spec.in_channels = std::stoll(need("in_channels"));
  spec.in_h = std::stoll(need("in_h"));
  spec.in_w = std::stoll(need("in_w"));
  spec.arch.conv_channels = parse_i64_list(need("conv_channels"));
  spec.arch.pool_after = parse_i64_list(need("pool_after"));
  spec.arch.dense_nodes = parse_i64_list(need("dense_nodes"));
  spec.arch.cross_at_input = need("cross_at_input") == "1";
  spec.arch.cross_after_conv = parse_i64_list(need("cross_after_conv"));
  spec.arch.cross_after_dense = parse_i64_list(need("cross_after_dense"));
  spec.arch.kernel = std::stoll(need("kernel"));
  spec.arch.gate_hidden = std::stoll(need("gate_hidden"));
  return spec;
}

void save_checkpoint(const Model<float>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  const std::string header = model_spec_to_text(model.spec);
  write_u32(os, static_cast<uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_u64(os, model.params.size());
  for (const auto& [name, var] : model.params) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor<float>& t = var->value;
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_i64(os, t.dim(i));
    write_u64(os, static_cast<uint64_t>(t.size()));
    write_f32_array(os, t.data(), t.size());
  }
  if (!os) throw Error("write failed for " + path);
}

namespace {

struct CheckpointReader {
  std::ifstream is;
  ModelSpec spec;
  uint64_t param_count = 0;

  explicit CheckpointReader(const std::string& path) : is(path, std::ios::binary) {
    if (!is) throw ConfigError("cannot open checkpoint " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
      throw ConfigError(path + " is not a checkpoint (bad magic)");
    const uint32_t version = read_u32(is);
    if (version != kVersion)
      throw ConfigError(path + " has checkpoint version " + std::to_string(version) +
                        ", expected " + std::to_string(kVersion));
    const uint32_t header_len = read_u32(is);
    std::string header(header_len, '\0');
    is.read(header.data(), header_len);
    if (!is) throw ConfigError(path + " is truncated (header)");
    spec = model_spec_from_text(header);
    param_count = read_u64(is);
  }

  // Reads one record; returns false at the end.
  bool next(std::string& name, Tensor<float>& tensor) {
    if (param_count == 0) return false;
    --param_count;
    const uint32_t name_len = read_u32(is);
    name.assign(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ConfigError("checkpoint is truncated (parameter name)");
    const uint32_t rank = read_u32(is);
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = read_i64(is);
    const uint64_t count = read_u64(is);
    if (static_cast<int64_t>(count) != element_count(shape))
      throw ConfigError("checkpoint record '" + name + "' has inconsistent shape");
    tensor = Tensor<float>(shape);
    try {
      read_f32_array(is, tensor.data(), tensor.size());
    } catch (const Error&) {
      throw ConfigError("checkpoint is truncated (payload of '" + name + "')");
    }
    return true;
  }
};

}  // namespace

void restore_checkpoint(Model<float>& model, const std::string& path) {
  CheckpointReader reader(path);

  std::map<std::string, Tensor<float>> loaded;
  std::string name;
  Tensor<float> tensor;
  while (reader.next(name, tensor)) {
    if (!loaded.emplace(name, std::move(tensor)).second)
      throw ConfigError("checkpoint has duplicate parameter '" + name + "'");
  }

  // Validate the complete set before touching the model: no partial loads.
  for (const auto& [pname, var] : model.params) {
    auto it = loaded.find(pname);
    if (it == loaded.end())
      throw ConfigError("checkpoint is missing parameter '" + pname + "'");
    if (!(it->second.shape() == var->value.shape()))
      throw ConfigError("checkpoint parameter '" + pname + "' has shape " +
                        shape_string(it->second.shape()) + ", model expects " +
                        shape_string(var->value.shape()));
  }
  if (loaded.size() != model.params.size()) {
    for (const auto& [lname, t] : loaded)
      if (!model.find_param(lname))
        throw ConfigError("checkpoint parameter '" + lname + "' does not exist in the model");
  }

  for (auto& [pname, var] : model.params) var->value = std::move(loaded.at(pname));
}

Model<float> load_checkpoint(const std::string& path) {
  ModelSpec spec = CheckpointReader(path).spec;
  Rng init_rng(0);  // values are overwritten by restore
  Model<float> model = build_basecnn_x<float>(spec, init_rng);
  restore_checkpoint(model, path);
  return model;
}

}  // namespace mpnet
