#include "cotmisr/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

#include "cotmisr/errors.hpp"

namespace cotmisr {

std::string residual_kind_name(ResidualKind kind) {
  switch (kind) {
    case ResidualKind::median: return "median";
    case ResidualKind::anchor: return "anchor";
    default: return "none";
  }
}

ResidualKind parse_residual_kind(const std::string& text) {
  if (text == "none") return ResidualKind::none;
  if (text == "median") return ResidualKind::median;
  if (text == "anchor") return ResidualKind::anchor;
  throw ConfigError("unknown residual '" + text + "' (expected none, median or anchor)");
}

std::string loss_kind_name(LossKind kind) { return kind == LossKind::masked_l1 ? "masked_l1" : "masked_mse"; }

LossKind parse_loss_kind(const std::string& text) {
  if (text == "masked_l1") return LossKind::masked_l1;
  if (text == "masked_mse") return LossKind::masked_mse;
  throw ConfigError("unknown loss '" + text + "' (expected masked_l1 or masked_mse)");
}

namespace {

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(std::size_t v) { return std::to_string(v); }
std::string format_value(const std::string& v) { return v; }
std::string format_value(BandSelection v) { return band_selection_name(v); }
std::string format_value(LossKind v) { return loss_kind_name(v); }
std::string format_value(ResidualKind v) { return residual_kind_name(v); }
std::string format_value(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
[[noreturn]] void bad_value(const std::string& key, const std::string& text, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot read '" + text + "' as " + expected);
}

void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1") out = true;
  else if (text == "false" || text == "0") out = false;
  else bad_value<bool>(key, text, "a boolean");
}

template <typename Int>
void parse_int(const std::string& key, const std::string& text, Int& out) {
  Int v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    bad_value<Int>(key, text, "a non-negative integer");
  out = v;
}

void parse_value(const std::string& key, const std::string& text, std::size_t& out) { parse_int(key, text, out); }
void parse_value(const std::string& key, const std::string& text, double& out) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v))
    bad_value<double>(key, text, "a finite number");
  out = v;
}
void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }
void parse_value(const std::string&, const std::string& text, BandSelection& out) { out = parse_band_selection(text); }
void parse_value(const std::string&, const std::string& text, LossKind& out) { out = parse_loss_kind(text); }
void parse_value(const std::string&, const std::string& text, ResidualKind& out) { out = parse_residual_kind(text); }

class Printer {
 public:
  explicit Printer(std::string prefix = "") : prefix_(std::move(prefix)) {}

  template <typename T>
  void operator()(const char* key, T& value) {
    out_ << prefix_ << key << " = " << format_value(value) << '\n';
  }
  template <typename S>
  void nested(const char* key, S& sub) {
    const std::string saved = prefix_;
    prefix_ += std::string(key) + ".";
    sub.visit(*this);
    prefix_ = saved;
  }
  std::string str() const { return out_.str(); }

 private:
  std::string prefix_;
  std::ostringstream out_;
};

class Reader {
 public:
  explicit Reader(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  template <typename T>
  void operator()(const char* key, T& value) {
    const std::string full = prefix_ + key;
    const auto it = values_.find(full);
    if (it == values_.end()) return;
    parse_value(full, it->second, value);
    values_.erase(it);
  }
  template <typename S>
  void nested(const char* key, S& sub) {
    const std::string saved = prefix_;
    prefix_ += std::string(key) + ".";
    sub.visit(*this);
    prefix_ = saved;
  }
  void finish() const {
    if (!values_.empty()) throw ConfigError("unknown config key '" + values_.begin()->first + "'");
  }

 private:
  std::string prefix_;
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_lines(const std::string& text) {
  std::map<std::string, std::string> values;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!values.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  return values;
}

}  // namespace

void CotConfig::validate() const {
  if (k < 1) throw ConfigError("model.k must be >= 1");
  if (c_in < 1) throw ConfigError("model.c_in must be >= 1");
  if (c_e <= c_in) throw ConfigError("model.c_e must exceed model.c_in");
  if (scale < 2) throw ConfigError("model.scale must be >= 2");
  if (expand(architecture()).empty()) throw ConfigError("model.arch expands to no blocks");
  if (!lrca.use_ca && !lrca.use_sa) throw ConfigError("model.lrca: use_ca and use_sa cannot both be false");
  if (lrca.ca_reduction < 1 || c_e / lrca.ca_reduction < 1)
    throw ConfigError("model.lrca.ca_reduction must be in [1, c_e]");
  if (lrca.sa_kernel < 1 || lrca.sa_kernel % 2 == 0) throw ConfigError("model.lrca.sa_kernel must be odd");
  if (tblock.heads < 1 || c_e % tblock.heads != 0)
    throw ConfigError("model.tblock.heads must divide model.c_e (" + std::to_string(c_e) + ")");
  if (tblock.ff_dim < 1) throw ConfigError("model.tblock.ff_dim must be >= 1");
  if (!(tblock.dropout >= 0.0 && tblock.dropout < 1.0)) throw ConfigError("model.tblock.dropout must be in [0, 1)");
  if (tblock.pos_embed && tblock.pos_size < 1) throw ConfigError("model.tblock.pos_size must be >= 1");
  if (!(residual_scale > 0.0 && std::isfinite(residual_scale))) throw ConfigError("model.residual_scale must be positive");
  if (!(tblock.norm_eps > 0.0)) throw ConfigError("model.tblock.norm_eps must be positive");
}

void TrainConfig::validate() const {
  if (!(lr_encoder >= 0.0) || !(lr_cot >= 0.0)) throw ConfigError("train learning rates must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("train.lr_decay must be positive");
  if (val_every < 1) throw ConfigError("train.val_every must be >= 1");
}

void DataConfig::validate() const {
  if (root.empty()) throw ConfigError("data.root must be set");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("data.split_ratio must be in (0, 1)");
  if (!(min_clearance >= 0.0 && min_clearance <= 1.0)) throw ConfigError("data.min_clearance must be in [0, 1]");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
}

std::string to_text(const CotConfig& cfg) {
  Printer p;
  const_cast<CotConfig&>(cfg).visit(p);
  return p.str();
}

std::string to_text(const ExperimentConfig& cfg) {
  Printer p;
  const_cast<ExperimentConfig&>(cfg).visit(p);
  return p.str();
}

CotConfig cot_config_from_text(const std::string& text) {
  CotConfig cfg;
  Reader r(parse_lines(text));
  cfg.visit(r);
  r.finish();
  return cfg;
}

ExperimentConfig experiment_config_from_text(const std::string& text) {
  ExperimentConfig cfg;
  Reader r(parse_lines(text));
  cfg.visit(r);
  r.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return experiment_config_from_text(ss.str());
}

bool operator==(const CotConfig& a, const CotConfig& b) { return to_text(a) == to_text(b); }

}  // namespace cotmisr
