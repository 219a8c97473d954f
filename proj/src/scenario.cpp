#include "flatmin/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "flatmin/datasets.hpp"
#include "flatmin/error.hpp"

namespace flatmin {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

const std::vector<std::string>& known_protocols() {
  static const std::vector<std::string> p{"train",           "perturb",   "minnorm_sweep",
                                          "teacher_student", "logistic_margin", "relu_vs_poly",
                                          "sgd_trend",       "hessian"};
  return p;
}

Scenario Scenario::parse(const std::string& text, const std::string& source) {
  Scenario s;
  s.source_ = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw InvalidInput(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw InvalidInput(where + ": empty key");
    for (char c : key)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_'))
        throw InvalidInput(where + ": invalid character in key '" + key + "'");
    if (s.values_.count(key)) throw InvalidInput(where + ": duplicate key '" + key + "'");
    s.values_[key] = value;
  }
  return s;
}

Scenario Scenario::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open scenario file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string Scenario::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidInput(source_ + ": missing key '" + key + "'");
  return it->second;
}

std::string Scenario::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

namespace {

double parse_double(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidInput(what + ": '" + v + "' is not a number");
  }
}

long parse_long(const std::string& v, const std::string& what) {
  long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    // Accept integral values written in floating-point notation (1e5).
    const double d = parse_double(v, what);
    if (d != static_cast<double>(static_cast<long>(d)))
      throw InvalidInput(what + ": '" + v + "' is not an integer");
    return static_cast<long>(d);
  }
  return x;
}

}  // namespace

double Scenario::get_double(const std::string& key, std::optional<double> fallback) const {
  if (!has(key) && fallback) return *fallback;
  return parse_double(get(key), source_ + ": " + key);
}

long Scenario::get_long(const std::string& key, std::optional<long> fallback) const {
  if (!has(key) && fallback) return *fallback;
  return parse_long(get(key), source_ + ": " + key);
}

bool Scenario::get_bool(const std::string& key, std::optional<bool> fallback) const {
  if (!has(key) && fallback) return *fallback;
  const std::string v = get(key);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw InvalidInput(source_ + ": " + key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> Scenario::get_strings(const std::string& key) const {
  const std::string v = get(key, "");
  if (v.empty()) return {};
  return split(v, ',');
}

std::vector<double> Scenario::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : get_strings(key)) out.push_back(parse_double(s, source_ + ": " + key));
  return out;
}

std::vector<long> Scenario::get_longs(const std::string& key) const {
  std::vector<long> out;
  const std::string what = source_ + ": " + key;
  for (const auto& s : get_strings(key)) {
    if (s.find(':') == std::string::npos) {
      out.push_back(parse_long(s, what));
      continue;
    }
    const auto parts = split(s, ':');
    if (parts.size() < 2 || parts.size() > 3) throw InvalidInput(what + ": bad range '" + s + "'");
    const long a = parse_long(parts[0], what);
    const long b = parse_long(parts[1], what);
    const long step = parts.size() == 3 ? parse_long(parts[2], what) : 1;
    if (step <= 0 || b < a) throw InvalidInput(what + ": bad range '" + s + "'");
    for (long x = a; x <= b; x += step) out.push_back(x);
  }
  return out;
}

Scenario Scenario::with(const std::string& key, const std::string& value) const {
  Scenario s = *this;
  s.values_[key] = value;
  return s;
}

Scenario Scenario::full_budget() const {
  Scenario s = *this;
  for (const auto& [k, v] : values_)
    if (k.rfind("full.", 0) == 0) s.values_[k.substr(5)] = v;
  return s;
}

void Scenario::validate() const {
  if (get("schema", "") != kScenarioSchema)
    throw InvalidInput(source_ + ": schema must be " + std::string(kScenarioSchema));
  if (get("name", "").empty()) throw InvalidInput(source_ + ": missing key 'name'");
  const auto& p = known_protocols();
  if (std::find(p.begin(), p.end(), protocol()) == p.end())
    throw InvalidInput(source_ + ": unknown protocol '" + protocol() + "'");
  const auto& g = known_generators();
  const std::string gen = get("dataset.generator");
  if (std::find(g.begin(), g.end(), gen) == g.end())
    throw InvalidInput(source_ + ": unknown generator '" + gen + "'");
  if (has("sweep.param") && get_strings("sweep.values").empty())
    throw InvalidInput(source_ + ": sweep.values must be nonempty");
  if (has("sweep.values") && !has("sweep.param"))
    throw InvalidInput(source_ + ": sweep.values without sweep.param");
  if (get_long("repetitions", 1) < 1) throw InvalidInput(source_ + ": repetitions must be >= 1");
}

std::string Scenario::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace flatmin
