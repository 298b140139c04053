#include "tenext/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tenext {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: " + origin + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: " + origin + ":" + std::to_string(lineno) +
                               ": empty key");
    if (cfg.values_.count(key))
      throw std::runtime_error("config: " + origin + ":" + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

const std::string& KvConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: missing key '" + key + "'");
  return it->second;
}

double KvConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not a number: '" + s + "'");
  }
  if (used != s.size())
    throw std::runtime_error("config: key '" + key + "' is not a number: '" + s + "'");
  return v;
}

int64_t KvConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  size_t used = 0;
  long long v;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not an integer: '" + s + "'");
  }
  if (used != s.size())
    throw std::runtime_error("config: key '" + key + "' is not an integer: '" + s + "'");
  return v;
}

uint64_t KvConfig::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  size_t used = 0;
  unsigned long long v;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not an unsigned integer: '" + s +
                             "'");
  }
  if (used != s.size())
    throw std::runtime_error("config: key '" + key + "' is not an unsigned integer: '" + s +
                             "'");
  return v;
}

bool KvConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::runtime_error("config: key '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<int> KvConfig::get_int_list(const std::string& key) const {
  const std::string& s = get(key);
  std::vector<int> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw std::runtime_error("config: key '" + key + "' has an empty list element");
    size_t used = 0;
    int v;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' has a non-integer element: '" +
                               item + "'");
    }
    if (used != item.size())
      throw std::runtime_error("config: key '" + key + "' has a non-integer element: '" +
                               item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::runtime_error("config: key '" + key + "' is an empty list");
  return out;
}

void KvConfig::set_double(const std::string& key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  values_[key] = buf;
}

void KvConfig::set_int(const std::string& key, int64_t v) {
  values_[key] = std::to_string(v);
}

void KvConfig::set_int_list(const std::string& key, const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  values_[key] = s;
}

void KvConfig::require_known_keys(const std::set<std::string>& allowed) const {
  for (const auto& [k, _] : values_)
    if (!allowed.count(k))
      throw std::runtime_error("config: unknown key '" + k + "'");
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

}  // namespace tenext
