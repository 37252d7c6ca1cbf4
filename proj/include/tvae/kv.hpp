#pragma once

// Flat "key=value" text files used for manifests, configs and reports.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tvae/errors.hpp"

namespace tvae {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<stream>") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(source + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  return out.str();
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  return parse_key_values(in, path);
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << format_key_values(kv);
}

// Round-trippable text for a double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace tvae
