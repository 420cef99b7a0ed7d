#include "maf/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace maf {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " needs an integer, got \"" +
                                value + "\"");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " needs a number, got \"" +
                                value + "\"");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw std::invalid_argument("config: key " + key + " needs a boolean, got \"" +
                              value + "\"");
}

}  // namespace

RunSettings parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key=value: \"" + line + "\"");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (kv.count(key)) {
      throw std::invalid_argument("config: duplicate key " + key);
    }
    kv[key] = value;
  }

  RunSettings s;
  const auto take = [&kv](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::pair<bool, std::string>{false, ""};
    std::pair<bool, std::string> out{true, it->second};
    kv.erase(it);
    return out;
  };

  if (auto [ok, v] = take("paper_analog"); ok) s.paper_analog = to_bool("paper_analog", v);
  if (s.paper_analog) {
    s.trainer.epochs = 200;
    s.trainer.batch_size = 32;
  }

  if (auto [ok, v] = take("image_h"); ok) s.model.image_h = to_int("image_h", v);
  if (auto [ok, v] = take("image_w"); ok) s.model.image_w = to_int("image_w", v);
  if (auto [ok, v] = take("channels"); ok) s.model.channels = to_int("channels", v);
  if (auto [ok, v] = take("num_maps"); ok) s.model.num_maps = to_int("num_maps", v);
  if (auto [ok, v] = take("compression"); ok) s.model.compression = to_int("compression", v);
  if (auto [ok, v] = take("p_map"); ok) s.model.p_map = to_double("p_map", v);
  if (auto [ok, v] = take("p_head"); ok) s.model.p_head = to_double("p_head", v);
  if (auto [ok, v] = take("heads"); ok) s.model.heads = to_int("heads", v);
  if (auto [ok, v] = take("units"); ok) s.model.units = to_int("units", v);
  if (auto [ok, v] = take("use_mlfe"); ok) s.model.use_mlfe = to_bool("use_mlfe", v);
  if (auto [ok, v] = take("use_llfe"); ok) s.model.use_llfe = to_bool("use_llfe", v);

  if (auto [ok, v] = take("epochs"); ok) s.trainer.epochs = to_int("epochs", v);
  if (auto [ok, v] = take("batch_size"); ok) s.trainer.batch_size = to_int("batch_size", v);
  if (auto [ok, v] = take("lr"); ok) s.trainer.base_lr = to_double("lr", v);
  if (auto [ok, v] = take("momentum"); ok) s.trainer.momentum = to_double("momentum", v);
  if (auto [ok, v] = take("weight_decay"); ok) {
    s.trainer.weight_decay = to_double("weight_decay", v);
  }
  if (auto [ok, v] = take("lr_period"); ok) s.trainer.lr_period = to_int("lr_period", v);

  if (auto [ok, v] = take("ablation_seeds"); ok) s.ablation_seeds = to_int("ablation_seeds", v);
  if (auto [ok, v] = take("ablation_epochs"); ok) {
    s.ablation_epochs = to_int("ablation_epochs", v);
  }
  if (auto [ok, v] = take("ablation_batch"); ok) s.ablation_batch = to_int("ablation_batch", v);

  if (!kv.empty()) {
    std::string unknown;
    for (const auto& [k, v] : kv) {
      if (!unknown.empty()) unknown += ", ";
      unknown += k;
    }
    throw std::invalid_argument("config: unknown keys: " + unknown);
  }
  s.model.validate();
  return s;
}

RunSettings parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string default_config_text() {
  const RunSettings s;
  std::ostringstream out;
  out << "# MAF model\n"
      << "image_h=" << s.model.image_h << '\n'
      << "image_w=" << s.model.image_w << '\n'
      << "channels=" << s.model.channels << '\n'
      << "num_maps=" << s.model.num_maps << '\n'
      << "compression=" << s.model.compression << '\n'
      << "p_map=" << s.model.p_map << '\n'
      << "p_head=" << s.model.p_head << '\n'
      << "heads=" << s.model.heads << '\n'
      << "units=" << s.model.units << '\n'
      << "use_mlfe=" << (s.model.use_mlfe ? 1 : 0) << '\n'
      << "use_llfe=" << (s.model.use_llfe ? 1 : 0) << '\n'
      << "\n# trainer\n"
      << "epochs=" << s.trainer.epochs << '\n'
      << "batch_size=" << s.trainer.batch_size << '\n'
      << "lr=" << s.trainer.base_lr << '\n'
      << "momentum=" << s.trainer.momentum << '\n'
      << "weight_decay=" << s.trainer.weight_decay << '\n'
      << "lr_period=" << s.trainer.lr_period << '\n'
      << "paper_analog=0\n"
      << "\n# ablation sweep\n"
      << "ablation_seeds=" << s.ablation_seeds << '\n'
      << "ablation_epochs=" << s.ablation_epochs << '\n'
      << "ablation_batch=" << s.ablation_batch << '\n';
  return out.str();
}

}  // namespace maf
