#pragma once

// Run configuration: a fixed key schema per subcommand, filled from defaults,
// then a config file, then command-line overrides (later wins).
//
// File format:
//
//   # comment            (also ';')
//   seed = 7             keys before any section are top-level
//   [train]
//   epochs = 200         stored as "train.epochs"
//
// Blank lines are ignored. Keys and values are trimmed. A key outside the
// schema, or a duplicate key within one file, is an error.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "salted/dataset.hpp"
#include "salted/error.hpp"

namespace salted {

enum class ValueType { String, Int, Real, Bool };

struct KeySpec {
  std::string key;  // "section.name" or "name"
  ValueType type = ValueType::String;
  std::string default_value;
  std::string help;
};

namespace detail {

inline bool parse_bool(std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

}  // namespace detail

class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
    for (const KeySpec& k : schema_) values_[k.key] = k.default_value;
  }

  const std::vector<KeySpec>& schema() const noexcept { return schema_; }

  bool known(std::string_view key) const { return find(key) != nullptr; }

  /// Sets a value after checking the key exists and the value parses.
  void set(std::string_view key, std::string_view value) {
    const KeySpec* spec = find(key);
    if (!spec) throw Error(Errc::InvalidConfig, "unknown config key '" + std::string(key) + "'");
    check_value(*spec, value);
    values_[spec->key] = std::string(value);
  }

  /// Parses "key=value".
  void set_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::InvalidConfig, "override '" + std::string(assignment) + "' is not key=value");
    }
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  void merge_text(std::string_view text, std::string_view origin = "<config>") {
    std::string section;
    std::vector<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      const auto line = detail::trim(raw);
      auto where = [&] { return std::string(origin) + ":" + std::to_string(line_no) + ": "; };
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw Error(Errc::InvalidConfig, where() + "unterminated section header");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw Error(Errc::InvalidConfig, where() + "expected key = value");
      const auto name = detail::trim(line.substr(0, eq));
      if (name.empty()) throw Error(Errc::InvalidConfig, where() + "empty key");
      const std::string key = section.empty() ? std::string(name) : section + "." + std::string(name);
      if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
        throw Error(Errc::InvalidConfig, where() + "duplicate key '" + key + "'");
      }
      seen.push_back(key);
      try {
        set(key, detail::trim(line.substr(eq + 1)));
      } catch (const Error& e) {
        throw Error(Errc::InvalidConfig, where() + e.message());
      }
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidConfig, "cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    merge_text(buf.str(), path);
  }

  const std::string& str(std::string_view key) const {
    const KeySpec* spec = find(key);
    if (!spec) throw Error(Errc::InvalidConfig, "unknown config key '" + std::string(key) + "'");
    return values_.at(spec->key);
  }

  std::int64_t integer(std::string_view key) const {
    const std::string& v = str(key);
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "an integer");
    return out;
  }

  std::uint64_t count(std::string_view key) const {
    const std::int64_t v = integer(key);
    if (v < 0) bad(key, str(key), "a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }

  double real(std::string_view key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    bad(key, v, "a number");
  }

  bool flag(std::string_view key) const {
    bool out = false;
    if (!detail::parse_bool(str(key), out)) bad(key, str(key), "true or false");
    return out;
  }

  /// Fully-resolved config in file syntax; merging it back reproduces this config.
  std::string resolved() const {
    std::ostringstream os;
    std::string current;
    std::vector<const KeySpec*> ordered;
    for (const KeySpec& k : schema_) ordered.push_back(&k);
    std::stable_sort(ordered.begin(), ordered.end(), [](const KeySpec* a, const KeySpec* b) {
      return section_of(a->key) < section_of(b->key);
    });
    for (const KeySpec* k : ordered) {
      const std::string section = section_of(k->key);
      if (section != current) {
        os << '[' << section << "]\n";
        current = section;
      }
      os << k->key.substr(section.empty() ? 0 : section.size() + 1) << " = " << values_.at(k->key) << '\n';
    }
    return os.str();
  }

 private:
  static std::string section_of(const std::string& key) {
    const auto dot = key.find('.');
    return dot == std::string::npos ? std::string() : key.substr(0, dot);
  }

  const KeySpec* find(std::string_view key) const {
    for (const KeySpec& k : schema_) {
      if (k.key == key) return &k;
    }
    return nullptr;
  }

  [[noreturn]] static void bad(std::string_view key, const std::string& v, const char* expected) {
    throw Error(Errc::InvalidConfig,
                "config key '" + std::string(key) + "': '" + v + "' is not " + expected);
  }

  static void check_value(const KeySpec& spec, std::string_view value) {
    RunConfig probe({spec});
    probe.values_[spec.key] = std::string(value);
    switch (spec.type) {
      case ValueType::String: break;
      case ValueType::Int: probe.integer(spec.key); break;
      case ValueType::Real: probe.real(spec.key); break;
      case ValueType::Bool: probe.flag(spec.key); break;
    }
  }

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace salted
