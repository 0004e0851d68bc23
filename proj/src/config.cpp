#include "shisr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace shisr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string show(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string show(bool v) { return v ? "true" : "false"; }

std::string show(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config key '" + key + "': '" + value + "' is not " + what);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

int parse_i32(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < INT32_MIN || x > INT32_MAX) bad_value(key, v, "a 32-bit integer");
  return static_cast<int>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_i32(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated integer list");
  return out;
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
};

using Table = std::vector<std::pair<std::string, Field>>;

#define SHISR_INT(name)                                                              \
  {#name, {[](const TrainConfig& c) { return std::to_string(c.name); },             \
           [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_i32(k, v); }}}
#define SHISR_REAL(name)                                                             \
  {#name, {[](const TrainConfig& c) { return show(c.name); },                       \
           [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_real(k, v); }}}
#define SHISR_BOOL(name)                                                             \
  {#name, {[](const TrainConfig& c) { return show(c.name); },                       \
           [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); }}}
#define SHISR_TEXT(name)                                                             \
  {#name, {[](const TrainConfig& c) { return c.name; },                             \
           [](TrainConfig& c, const std::string&, const std::string& v) { c.name = v; }}}
#define SHISR_LIST(name)                                                             \
  {#name, {[](const TrainConfig& c) { return show(c.name); },                       \
           [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_list(k, v); }}}

const Table& table() {
  static const Table t = {
      SHISR_INT(scale),
      SHISR_INT(batch_size),
      SHISR_REAL(lr),
      SHISR_REAL(lr_decay),
      SHISR_INT(decay_every),
      SHISR_INT(epochs),
      {"seed",
       {[](const TrainConfig& c) { return std::to_string(c.seed); },
        [](TrainConfig& c, const std::string& k, const std::string& v) {
          std::uint64_t out = 0;
          const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
          if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
            bad_value(k, v, "a non-negative integer");
          }
          c.seed = out;
        }}},
      SHISR_BOOL(deterministic),
      SHISR_REAL(lambda_l1),
      SHISR_REAL(lambda_focal),
      SHISR_REAL(lambda_ntxent),
      SHISR_REAL(tau),
      SHISR_REAL(gamma),
      SHISR_TEXT(focal_combine),
      SHISR_BOOL(no_msf),
      SHISR_BOOL(no_fpn_csf),
      SHISR_BOOL(no_csf),
      SHISR_BOOL(no_hr),
      SHISR_BOOL(no_ntxent),
      SHISR_INT(sr_channels),
      SHISR_INT(sr_blocks),
      SHISR_LIST(cf_stage_blocks),
      SHISR_LIST(cf_stage_channels),
      SHISR_INT(cf_stem),
      SHISR_INT(cf_fpn),
      SHISR_TEXT(upsample),
      SHISR_TEXT(dataset),
      SHISR_TEXT(manifest),
      SHISR_INT(fold),
      SHISR_INT(hr_size),
      SHISR_BOOL(augment),
      SHISR_BOOL(cache_images),
      SHISR_INT(synthetic_count),
      SHISR_INT(synthetic_classes),
      SHISR_TEXT(run_dir),
      SHISR_INT(checkpoint_every),
  };
  return t;
}

#undef SHISR_INT
#undef SHISR_REAL
#undef SHISR_BOOL
#undef SHISR_TEXT
#undef SHISR_LIST

const Field& field(const std::string& key) {
  for (const auto& [name, f] : table()) {
    if (name == key) return f;
  }
  std::string valid;
  for (const auto& [name, f] : table()) valid += (valid.empty() ? "" : ", ") + name;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : table()) out.push_back(name);
    return out;
  }();
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, trim(value));
}

std::string TrainConfig::get(const std::string& key) const { return field(key).get(*this); }

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : table()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void TrainConfig::use_micro_profile() {
  sr_channels = 4;
  sr_blocks = 1;
  const CFConfig m = CFConfig::micro();
  cf_stage_blocks = m.stage_blocks;
  cf_stage_channels = m.stage_channels;
  cf_stem = m.stem_channels;
  cf_fpn = m.fpn_channels;
}

void TrainConfig::validate() const {
  if (scale != 2 && scale != 4 && scale != 8) throw ConfigError("scale must be 2, 4 or 8");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (uses_ntxent() && batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 while NT-Xent is active (it needs negatives)");
  }
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(lr_decay > 0)) throw ConfigError("lr_decay must be positive");
  if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (focal_combine != "mean" && focal_combine != "sum") {
    throw ConfigError("focal_combine must be 'mean' or 'sum'");
  }
  if (upsample != "bilinear" && upsample != "nearest") {
    throw ConfigError("upsample must be 'bilinear' or 'nearest'");
  }
  if (dataset != "manifest" && dataset != "synthetic") {
    throw ConfigError("dataset must be 'manifest' or 'synthetic'");
  }
  if (hr_size < 1 || hr_size % scale != 0) {
    throw ConfigError("hr_size must be a positive multiple of scale");
  }
  if (synthetic_count < 1 || synthetic_classes < 1 || synthetic_classes > kNumClasses) {
    throw ConfigError("synthetic_count must be >= 1 and synthetic_classes in 1..8");
  }
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  sr_config().validate();
  cf_config().validate();
  loss_weights().validate();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t TrainConfig::training_hash() const {
  TrainConfig c = *this;
  const TrainConfig d;
  c.epochs = d.epochs;
  c.run_dir = d.run_dir;
  c.checkpoint_every = d.checkpoint_every;
  c.cache_images = d.cache_images;
  c.manifest = d.manifest;
  return fnv1a(c.to_text());
}

SRConfig TrainConfig::sr_config() const {
  SRConfig c;
  c.scale = scale;
  c.n_blocks = sr_blocks;
  c.channels = sr_channels;
  c.no_msf = no_msf;
  return c;
}

CFConfig TrainConfig::cf_config() const {
  CFConfig c;
  c.stage_blocks = cf_stage_blocks;
  c.stage_channels = cf_stage_channels;
  c.stem_channels = cf_stem;
  c.fpn_channels = cf_fpn;
  c.upsample = upsample == "nearest" ? UpsampleMode::Nearest : UpsampleMode::Bilinear;
  c.no_fpn_csf = no_fpn_csf;
  c.no_csf = no_csf;
  return c;
}

LossWeights TrainConfig::loss_weights() const {
  LossWeights w;
  w.l1 = lambda_l1;
  w.focal = lambda_focal;
  w.ntxent = uses_ntxent() ? lambda_ntxent : 0.0;
  w.tau = tau;
  w.gamma = gamma;
  w.focal_combine = focal_combine == "sum" ? FocalCombine::Sum : FocalCombine::Mean;
  if (!uses_ntxent() && lambda_ntxent > 0) {
    const double kept = w.l1 + w.focal;
    if (kept > 0) {
      w.l1 /= kept;
      w.focal /= kept;
    }
  }
  return w;
}

double lr_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
  return config.lr * std::pow(config.lr_decay, epoch / config.decay_every);
}

}  // namespace shisr
