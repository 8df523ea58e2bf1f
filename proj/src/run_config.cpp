#include "fbsr/run_config.hpp"

#include "fbsr/errors.hpp"
#include "fbsr/io.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>

namespace fbsr {

namespace {

constexpr std::array kKnownKeys = {
    "seed",
    "threads",
    "input.volume",
    "phantom.kind",
    "phantom.nx",
    "phantom.ny",
    "phantom.nz",
    "phantom.seed",
    "acq.fwhm",
    "acq.gap",
    "acq.axis",
    "stage1.steps",
    "stage1.batch",
    "stage1.max_lr",
    "stage1.length",
    "stage1.seed",
    "stage2.blocks",
    "stage2.features",
    "stage2.patch",
    "stage2.steps",
    "stage2.batch",
    "stage2.max_lr",
    "stage2.pairs",
    "stage2.seed",
    "stage2.adversarial",
    "stage2.adv_weight",
    "stage2.lambda",
    "sr.stride",
    "eval.cubic",
    "eval.spectrum",
    "in.gt",
    "in.lr",
    "in.bank",
    "in.model",
    "in.sr",
    "grid.volumes",
    "grid.slices",
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file " + path.string());
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(path.string() + ":" + std::to_string(lineno) +
                         ": expected key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set_pair(const std::string& pair) {
  const auto eq = pair.find('=');
  if (eq == std::string::npos)
    throw config_error("--set expects key=value, got '" + pair + "'");
  set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw config_error("empty config key");
  values_[key] = value;
}

void RunConfig::validate_keys() const {
  for (const auto& [key, value] : values_) {
    if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) ==
        kKnownKeys.end())
      throw config_error("unknown config key: " + key);
  }
}

bool RunConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::string RunConfig::get_string(const std::string& key,
                                  const std::string& def) const {
  const auto it = values_.find(key);
  const std::string v = it == values_.end() ? def : it->second;
  resolved_[key] = v;
  return v;
}

long RunConfig::get_long(const std::string& key, long def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    resolved_[key] = std::to_string(def);
    return def;
  }
  char* end = nullptr;
  const long v = std::strtol(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw config_error("config key " + key + ": not an integer: '" +
                       it->second + "'");
  resolved_[key] = it->second;
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key,
                                 std::uint64_t def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    resolved_[key] = std::to_string(def);
    return def;
  }
  char* end = nullptr;
  const unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw config_error("config key " + key + ": not an unsigned integer: '" +
                       it->second + "'");
  resolved_[key] = it->second;
  return v;
}

double RunConfig::get_double(const std::string& key, double def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    resolved_[key] = io::format_double(def);
    return def;
  }
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw config_error("config key " + key + ": not a number: '" + it->second +
                       "'");
  resolved_[key] = it->second;
  return v;
}

bool RunConfig::get_bool(const std::string& key, bool def) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    resolved_[key] = def ? "true" : "false";
    return def;
  }
  const std::string& v = it->second;
  bool out;
  if (v == "true" || v == "1" || v == "yes")
    out = true;
  else if (v == "false" || v == "0" || v == "no")
    out = false;
  else
    throw config_error("config key " + key + ": not a boolean: '" + v + "'");
  resolved_[key] = v;
  return out;
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot write resolved config to " + path.string());
  // Explicit keys the command never consulted still belong in the record.
  std::map<std::string, std::string> merged = resolved_;
  for (const auto& [k, v] : values_) merged.emplace(k, v);
  for (const auto& [k, v] : merged) os << k << '=' << v << '\n';
}

}  // namespace fbsr
