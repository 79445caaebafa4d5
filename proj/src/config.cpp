#include "simtrans/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "simtrans/error.hpp"

namespace simtrans {

ModelConfig TrainConfig::model_config(std::size_t classes) const {
  ModelConfig m;
  m.image_size = image_size;
  m.patch = patch;
  m.stride = stride;
  m.backbone.dim = dim;
  m.backbone.heads = heads;
  m.backbone.ffn_dim = ffn_dim;
  m.backbone.layers = depth;
  m.classes = classes;
  m.sil_layer_count = sil_layer_count;
  m.mfb = mfb;
  m.gcn_hidden = gcn_hidden;
  m.share_gcn = share_gcn;
  return m;
}

void TrainConfig::validate() const {
  if (total_steps == 0) throw ConfigError("total_steps must be positive");
  if (warmup_steps >= total_steps) throw ConfigError("warmup_steps must be smaller than total_steps");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (sil_layer_count > depth) throw ConfigError("sil_layer_count exceeds depth");
  if (contrastive && !mfb) throw ConfigError("the contrastive loss is part of multi-level feature boosting; enable mfb");
  model_config(2).validate();
}

namespace {

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "on" || text == "true" || text == "1" || text == "yes") return true;
  if (text == "off" || text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad value for " + key + ": '" + text + "' (expected on/off)");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
};

template <class T>
Field field(T TrainConfig::*member) {
  Field f;
  if constexpr (std::is_same_v<T, bool>) {
    f.get = [member](const TrainConfig& c) { return std::string(c.*member ? "on" : "off"); };
    f.set = [member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); };
  } else if constexpr (std::is_floating_point_v<T>) {
    f.get = [member](const TrainConfig& c) { return format_double(c.*member); };
    f.set = [member](TrainConfig& c, const std::string& k, const std::string& v) {
      c.*member = parse_number<T>(k, v);
    };
  } else {
    f.get = [member](const TrainConfig& c) { return std::to_string(c.*member); };
    f.set = [member](TrainConfig& c, const std::string& k, const std::string& v) {
      c.*member = parse_number<T>(k, v);
    };
  }
  return f;
}

// Order defines the canonical text form.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> all = {
      {"lr", field(&TrainConfig::lr)},
      {"momentum", field(&TrainConfig::momentum)},
      {"total_steps", field(&TrainConfig::total_steps)},
      {"warmup_steps", field(&TrainConfig::warmup_steps)},
      {"batch_size", field(&TrainConfig::batch_size)},
      {"alpha", field(&TrainConfig::alpha)},
      {"sil_layer_count", field(&TrainConfig::sil_layer_count)},
      {"mfb", field(&TrainConfig::mfb)},
      {"contrastive", field(&TrainConfig::contrastive)},
      {"seed", field(&TrainConfig::seed)},
      {"eval_every", field(&TrainConfig::eval_every)},
      {"image_size", field(&TrainConfig::image_size)},
      {"patch", field(&TrainConfig::patch)},
      {"stride", field(&TrainConfig::stride)},
      {"depth", field(&TrainConfig::depth)},
      {"dim", field(&TrainConfig::dim)},
      {"heads", field(&TrainConfig::heads)},
      {"ffn_dim", field(&TrainConfig::ffn_dim)},
      {"gcn_hidden", field(&TrainConfig::gcn_hidden)},
      {"share_gcn", field(&TrainConfig::share_gcn)},
  };
  return all;
}

}  // namespace

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
    }
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  TrainConfig c;
  c.apply_text(ss.str());
  return c;
}

}  // namespace simtrans
