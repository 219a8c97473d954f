#pragma once

// Scenario files: flat "key = value" text, one entry per line, '#' starts a
// comment. Keys are dotted paths (train.eta, dataset.n_train, ...). The
// first entry must be "schema = flatmin-scenario/1". Lists are comma
// separated; integer lists also accept ranges "a:b" or "a:b:step".

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flatmin {

inline constexpr const char* kScenarioSchema = "flatmin-scenario/1";

class Scenario {
 public:
  Scenario() = default;

  static Scenario parse(const std::string& text, const std::string& source = "<string>");
  static Scenario load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& source() const { return source_; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key) const;  // throws InvalidInput if absent
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const;
  long get_long(const std::string& key, std::optional<long> fallback = std::nullopt) const;
  bool get_bool(const std::string& key, std::optional<bool> fallback = std::nullopt) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long> get_longs(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  std::string name() const { return get("name"); }
  std::string protocol() const { return get("protocol"); }

  /// Copy with one key replaced (or added).
  Scenario with(const std::string& key, const std::string& value) const;

  /// Promotes every "full.<key>" entry over <key>.
  Scenario full_budget() const;

  /// Schema, required keys, known protocol and generator, nonempty sweep.
  void validate() const;

  /// Sorted "key = value" lines.
  std::string canonical_text() const;

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

const std::vector<std::string>& known_protocols();

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

}  // namespace flatmin
