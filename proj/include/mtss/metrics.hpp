#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mtss {

// Append-only experiment log: one record per line, space-separated
// `key=value` tokens in a stable order. The first three fields are fixed:
// t (simulated-cost timestamp), exp (experiment id), kind (record kind);
// any payload fields follow in insertion order. Keys and values must be
// free of whitespace and '='.

struct MetricsRecord {
  double t = 0;
  std::string exp;
  std::string kind;
  std::vector<std::pair<std::string, std::string>> fields;

  MetricsRecord() = default;
  MetricsRecord(double time, std::string exp_id, std::string record_kind)
      : t(time), exp(std::move(exp_id)), kind(std::move(record_kind)) {}

  MetricsRecord& add(const std::string& key, const std::string& value) {
    fields.emplace_back(key, value);
    return *this;
  }
  MetricsRecord& add(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return add(key, std::string(buf));
  }
  MetricsRecord& add(const std::string& key, std::int64_t value) {
    return add(key, std::to_string(value));
  }

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return &v;
    return nullptr;
  }
  double number(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw std::invalid_argument("metrics record has no field '" + key + "'");
    return std::stod(*v);
  }
};

namespace detail {

inline void check_token(const std::string& s, const char* what) {
  if (s.empty()) throw std::invalid_argument(std::string("metrics: empty ") + what);
  for (char c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '=')
      throw std::invalid_argument(std::string("metrics: ") + what + " '" + s +
                                  "' contains whitespace or '='");
}

}  // namespace detail

inline std::string format_record(const MetricsRecord& r) {
  detail::check_token(r.exp, "experiment id");
  detail::check_token(r.kind, "record kind");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.t);
  std::string out = std::string("t=") + buf + " exp=" + r.exp + " kind=" + r.kind;
  for (const auto& [k, v] : r.fields) {
    detail::check_token(k, "key");
    detail::check_token(v, "value");
    out += " " + k + "=" + v;
  }
  return out;
}

inline MetricsRecord parse_record(const std::string& line) {
  MetricsRecord r;
  std::istringstream in(line);
  std::string token;
  int index = 0;
  while (in >> token) {
    auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == token.size())
      throw std::invalid_argument("metrics: malformed token '" + token + "'");
    std::string key = token.substr(0, eq);
    std::string val = token.substr(eq + 1);
    if (index == 0) {
      if (key != "t") throw std::invalid_argument("metrics: record must start with t=");
      r.t = std::stod(val);
    } else if (index == 1) {
      if (key != "exp") throw std::invalid_argument("metrics: second field must be exp=");
      r.exp = val;
    } else if (index == 2) {
      if (key != "kind") throw std::invalid_argument("metrics: third field must be kind=");
      r.kind = val;
    } else {
      r.fields.emplace_back(key, val);
    }
    ++index;
  }
  if (index < 3) throw std::invalid_argument("metrics: record needs t, exp, and kind");
  return r;
}

inline void append_records(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw std::runtime_error("cannot open for append: " + path);
  bool ok = true;
  for (const auto& r : records) {
    std::string line = format_record(r) + "\n";
    ok = ok && std::fwrite(line.data(), 1, line.size(), f) == line.size();
  }
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write: " + path);
}

inline std::vector<MetricsRecord> read_metrics_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string text;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  std::vector<MetricsRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_record(line));
  }
  return out;
}

}  // namespace mtss
