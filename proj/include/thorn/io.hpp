#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "thorn/tensor.hpp"

namespace thorn::io {

namespace fs = std::filesystem;

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline int parse_int(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(t, &pos);
  } catch (const std::exception&) {
    throw Error(what + ": not an integer: '" + s + "'");
  }
  if (pos != t.size()) throw Error(what + ": not an integer: '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) throw Error(what + ": not a number: '" + s + "'");
  return v;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

/// Rows x cols grid of reals, no header.
template <typename S>
void write_grid(const fs::path& p, const Tensor<S>& t) {
  const int rows = t.dim(0);
  const int cols = static_cast<int>(t.size() / std::max(rows, 1));
  std::string out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) out += ',';
      out += format_real(static_cast<double>(t[static_cast<std::size_t>(r) * cols + c]));
    }
    out += '\n';
  }
  write_text(p, out);
}

template <typename S>
Tensor<S> read_grid(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  std::vector<S> values;
  int rows = 0, cols = -1;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line));
    if (cols >= 0 && static_cast<int>(cells.size()) != cols)
      throw Error(p.string() + ":" + std::to_string(rows + 1) + ": expected " + std::to_string(cols) + " columns");
    cols = static_cast<int>(cells.size());
    for (const auto& c : cells)
      values.push_back(static_cast<S>(parse_real(c, p.string() + ":" + std::to_string(rows + 1))));
    ++rows;
  }
  if (rows == 0) throw Error(p.string() + ": empty grid");
  return Tensor<S>({rows, cols}, std::move(values));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : b_(bytes), what_(std::move(what)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(what_ + ": truncated file");
  }
  const std::string& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kClipMagic = 0x4E524854;  // "THRN"
inline constexpr std::uint32_t kClipVersion = 1;

/// Raw clip file: eight little-endian int32 header values
/// (magic, version, T, H, W, 3, 0, 0) then float32 pixels in (T, H, W, 3) order.
template <typename S>
void write_clip(const fs::path& p, const Tensor<S>& clip) {
  if (clip.rank() != 4 || clip.dim(3) != 3) throw Error("write_clip: expected (T, H, W, 3)");
  std::string out;
  out.reserve(32 + clip.size() * 4);
  for (std::uint32_t v : {kClipMagic, kClipVersion, static_cast<std::uint32_t>(clip.dim(0)),
                          static_cast<std::uint32_t>(clip.dim(1)), static_cast<std::uint32_t>(clip.dim(2)), 3u, 0u, 0u})
    put_u32(out, v);
  for (auto v : clip.storage()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  write_text(p, out);
}

template <typename S>
Tensor<S> read_clip(const fs::path& p) {
  const std::string bytes = read_text(p);
  Reader r(bytes, p.string());
  std::array<std::uint32_t, 8> h{};
  for (auto& v : h) v = r.u32();
  if (h[0] != kClipMagic) throw Error(p.string() + ": not a clip file (bad magic)");
  if (h[1] != kClipVersion) throw Error(p.string() + ": unsupported clip version " + std::to_string(h[1]));
  if (h[5] != 3) throw Error(p.string() + ": expected 3 channels");
  Tensor<S> t({static_cast<int>(h[2]), static_cast<int>(h[3]), static_cast<int>(h[4]), 3});
  for (auto& v : t.storage()) {
    const std::uint32_t bits = r.u32();
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<S>(f);
  }
  if (!r.done()) throw Error(p.string() + ": trailing bytes after pixel data");
  return t;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_text(p))); }

}  // namespace thorn::io
