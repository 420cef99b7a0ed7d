#include "maf/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "maf/data.hpp"

namespace maf {

namespace {

constexpr const char* kMagicLine = "MAF-CHECKPOINT 1";

[[noreturn]] void fail(const std::string& what) {
  throw std::runtime_error("checkpoint format error: " + what);
}

std::string config_text(const MafConfig& c) {
  std::ostringstream out;
  out << "image_h=" << c.image_h << '\n'
      << "image_w=" << c.image_w << '\n'
      << "channels=" << c.channels << '\n'
      << "num_maps=" << c.num_maps << '\n'
      << "compression=" << c.compression << '\n'
      << "p_map=" << c.p_map << '\n'
      << "p_head=" << c.p_head << '\n'
      << "heads=" << c.heads << '\n'
      << "units=" << c.units << '\n'
      << "num_classes=" << c.num_classes << '\n'
      << "use_mlfe=" << (c.use_mlfe ? 1 : 0) << '\n'
      << "use_llfe=" << (c.use_llfe ? 1 : 0) << '\n';
  return out.str();
}

MafConfig config_from(const std::map<std::string, std::string>& kv) {
  MafConfig c;
  const auto want = [&kv](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) fail("missing config key " + key);
    return it->second;
  };
  c.image_h = std::stoi(want("image_h"));
  c.image_w = std::stoi(want("image_w"));
  c.channels = std::stoi(want("channels"));
  c.num_maps = std::stoi(want("num_maps"));
  c.compression = std::stoi(want("compression"));
  c.p_map = std::stod(want("p_map"));
  c.p_head = std::stod(want("p_head"));
  c.heads = std::stoi(want("heads"));
  c.units = std::stoi(want("units"));
  c.num_classes = std::stoi(want("num_classes"));
  c.use_mlfe = std::stoi(want("use_mlfe")) != 0;
  c.use_llfe = std::stoi(want("use_llfe")) != 0;
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const MafConfig& config,
                     const MafParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  MafParams copy = params;
  auto plist = param_list(copy);
  out << kMagicLine << '\n' << config_text(config);
  out << "tensors " << plist.size() << '\n';
  for (auto& [name, tensor] : plist) {
    out << name << '\n';
    write_tensor(out, *tensor);
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) fail("bad magic line");

  std::map<std::string, std::string> kv;
  std::size_t tensor_count = 0;
  while (std::getline(in, line)) {
    if (line.rfind("tensors ", 0) == 0) {
      tensor_count = static_cast<std::size_t>(std::stoul(line.substr(8)));
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("malformed header line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (tensor_count == 0) fail("missing tensor section");

  Checkpoint ckpt;
  ckpt.config = config_from(kv);
  ckpt.config.validate();
  ckpt.params = init_params(ckpt.config, 0);
  auto plist = param_list(ckpt.params);
  if (plist.size() != tensor_count) {
    fail("tensor count " + std::to_string(tensor_count) + " does not match config (" +
         std::to_string(plist.size()) + " expected)");
  }
  std::map<std::string, Tensor*> by_name;
  for (auto& [name, tensor] : plist) by_name[name] = tensor;
  for (std::size_t i = 0; i < tensor_count; ++i) {
    if (!std::getline(in, line)) fail("truncated tensor name section");
    const auto it = by_name.find(line);
    if (it == by_name.end()) fail("unexpected tensor name " + line);
    Tensor loaded = read_tensor(in);
    if (loaded.shape != it->second->shape) {
      fail("tensor " + line + " has shape " + shape_str(loaded.shape) +
           ", config expects " + shape_str(it->second->shape));
    }
    *it->second = std::move(loaded);
  }
  return ckpt;
}

}  // namespace maf
