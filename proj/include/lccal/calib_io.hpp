#pragma once

// Text formats for extrinsics (12 numbers, row-major 3x4) and intrinsics
// (key = value block).

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lccal/errors.hpp"
#include "lccal/se3.hpp"

namespace lccal {

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits on whitespace and parses every token as a double.
inline std::vector<double> parse_numbers(std::string_view line, const std::string& where) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    const std::string_view tok = line.substr(i, j - i);
    double v = 0.0;
    // from_chars rejects a leading '+', which some writers emit.
    const char* first = tok.data();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto res = std::from_chars(first, tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw ParseError(where + ": invalid number '" + std::string(tok) + "'");
    out.push_back(v);
    i = j;
  }
  return out;
}

inline std::string extrinsic_to_line(const SE3Transform& t) {
  std::string line;
  const auto v = t.row_major_3x4();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) line += ' ';
    line += format_double(v[i]);
  }
  return line;
}

inline void write_extrinsic(std::ostream& os, const SE3Transform& t) { os << extrinsic_to_line(t) << '\n'; }

inline void write_extrinsic_file(const std::string& path, const SE3Transform& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_extrinsic(os, t);
  if (!os) throw IoError("failed writing '" + path + "'");
}

/// Reads the first non-empty, non-comment line as 12 numbers.
inline SE3Transform read_extrinsic(std::istream& is, const std::string& source) {
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto v = parse_numbers(t, where);
    if (v.size() != 12)
      throw ParseError(where + ": expected 12 numbers for a 3x4 extrinsic, got " + std::to_string(v.size()));
    try {
      return SE3Transform::from_row_major_3x4(v);
    } catch (const InvalidArgument& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  throw ParseError(source + ": no extrinsic line found");
}

inline SE3Transform read_extrinsic_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_extrinsic(is, path);
}

/// Flat `key = value` lines with `#` comments. Duplicate keys are rejected.
inline std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (!out.emplace(key, value).second) throw ParseError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

inline void write_intrinsics(std::ostream& os, const CameraIntrinsics& k) {
  os << "fx = " << format_double(k.fx) << '\n'
     << "fy = " << format_double(k.fy) << '\n'
     << "cx = " << format_double(k.cx) << '\n'
     << "cy = " << format_double(k.cy) << '\n'
     << "width = " << k.width << '\n'
     << "height = " << k.height << '\n';
}

inline void write_intrinsics_file(const std::string& path, const CameraIntrinsics& k) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_intrinsics(os, k);
}

inline CameraIntrinsics read_intrinsics(std::istream& is, const std::string& source) {
  auto kv = parse_key_values(is, source);
  auto number = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(source + ": missing intrinsics key '" + key + "'");
    const auto v = parse_numbers(it->second, source + ": key '" + key + "'");
    if (v.size() != 1) throw ParseError(source + ": key '" + std::string(key) + "' needs exactly one number");
    kv.erase(it);
    return v[0];
  };
  CameraIntrinsics k;
  k.fx = number("fx");
  k.fy = number("fy");
  k.cx = number("cx");
  k.cy = number("cy");
  const double w = number("width");
  const double h = number("height");
  if (w != static_cast<int>(w) || h != static_cast<int>(h)) throw ParseError(source + ": image size must be integral");
  k.width = static_cast<int>(w);
  k.height = static_cast<int>(h);
  if (!kv.empty()) throw ParseError(source + ": unknown intrinsics key '" + kv.begin()->first + "'");
  try {
    k.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(source + ": " + e.what());
  }
  return k;
}

inline CameraIntrinsics read_intrinsics_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_intrinsics(is, path);
}

}  // namespace lccal
