#pragma once
// Flat key = value configuration, shared by the CLI and the checkpoint
// format's embedded config echo. Serialization is canonical (sorted keys,
// round-trippable number formatting) so equal configs produce equal bytes.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tenext {

class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;

  double get_double(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_double(const std::string& key, double v);
  void set_int(const std::string& key, int64_t v);
  void set_int_list(const std::string& key, const std::vector<int>& v);

  // Fold another config on top of this one (its values win).
  void merge(const KvConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  // Error on the first key not present in `allowed`.
  void require_known_keys(const std::set<std::string>& allowed) const;

  std::string serialize() const;

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace tenext
