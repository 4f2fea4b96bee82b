#pragma once

// Minimal MetaImage (.mhd + .raw) reader/writer for 3D scalar volumes.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "volume.hpp"

namespace ssbreg {

enum class ElementType { Float32, Int16 };

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T> T byteswap_value(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename T>
std::vector<T> parse_numbers(const std::map<std::string, std::string> &kv, const std::string &key,
                             std::size_t expected) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError(key, "missing required key");
  std::vector<T> out;
  const std::string &text = it->second;
  const char *p = text.data();
  const char *end = p + text.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p == end) break;
    T v{};
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t'))
      throw ParseError(key, "malformed value '" + text + "'");
    out.push_back(v);
    p = next;
  }
  if (out.size() != expected)
    throw ParseError(key, "expected " + std::to_string(expected) + " values, got '" + text + "'");
  return out;
}

inline const std::string &require(const std::map<std::string, std::string> &kv,
                                  const std::string &key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError(key, "missing required key");
  return it->second;
}

} // namespace detail

/// Read a `.mhd` header and its raw data file. Unknown header keys are ignored.
inline Volume read_volume(const std::filesystem::path &header_path) {
  std::ifstream in(header_path);
  if (!in) throw IoError("cannot open " + header_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no), "expected 'Key = Value'");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError("line " + std::to_string(line_no), "empty key");
    kv[key] = detail::trim(std::string_view(line).substr(eq + 1));
  }

  if (detail::require(kv, "ObjectType") != "Image")
    throw ParseError("ObjectType", "expected 'Image'");
  if (detail::parse_numbers<int>(kv, "NDims", 1)[0] != 3)
    throw ParseError("NDims", "only 3D volumes are supported");
  const auto dims = detail::parse_numbers<long long>(kv, "DimSize", 3);
  for (long long v : dims)
    if (v < 1) throw ParseError("DimSize", "sizes must be >= 1");
  const auto spacing = detail::parse_numbers<double>(kv, "ElementSpacing", 3);
  const auto offset = detail::parse_numbers<double>(kv, "Offset", 3);
  const std::string &type_name = detail::require(kv, "ElementType");
  ElementType type;
  if (type_name == "MET_FLOAT")
    type = ElementType::Float32;
  else if (type_name == "MET_SHORT")
    type = ElementType::Int16;
  else
    throw UnsupportedTypeError("ElementType " + type_name + " is not supported");
  const std::string &data_file = detail::require(kv, "ElementDataFile");
  if (data_file == "LOCAL") throw UnsupportedTypeError("ElementDataFile = LOCAL is not supported");

  bool msb = false;
  for (const char *k : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})
    if (auto it = kv.find(k); it != kv.end()) msb = (it->second == "True" || it->second == "true");
  const bool swap = msb != (std::endian::native == std::endian::big);

  const Index3 d{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                 static_cast<std::size_t>(dims[2])};
  const std::size_t count = d.count();
  const std::size_t elem = type == ElementType::Float32 ? 4 : 2;
  const auto raw_path = header_path.parent_path() / data_file;
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("cannot open " + raw_path.string());
  std::vector<char> bytes(count * elem);
  raw.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  const auto got = static_cast<std::size_t>(raw.gcount());
  if (got < bytes.size())
    throw TruncationError(raw_path.string() + ": expected " + std::to_string(count) +
                          " elements, file holds " + std::to_string(got / elem));
  if (raw.peek() != std::char_traits<char>::eof())
    throw SizeMismatchError(raw_path.string() + ": file holds more than " +
                            std::to_string(count) + " elements");

  std::vector<float> voxels(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (type == ElementType::Float32) {
      float v;
      std::memcpy(&v, bytes.data() + 4 * i, 4);
      voxels[i] = swap ? detail::byteswap_value(v) : v;
    } else {
      std::int16_t v;
      std::memcpy(&v, bytes.data() + 2 * i, 2);
      voxels[i] = static_cast<float>(swap ? detail::byteswap_value(v) : v);
    }
  }
  return Volume(d, {spacing[0], spacing[1], spacing[2]}, {offset[0], offset[1], offset[2]},
                std::move(voxels));
}

/// Write `vol` as `header_path` plus a sibling `.raw` file (little-endian, x fastest).
/// Int16 output rounds to nearest and saturates.
inline void write_volume(const Volume &vol, const std::filesystem::path &header_path,
                         ElementType type = ElementType::Float32) {
  auto raw_path = header_path;
  raw_path.replace_extension(".raw");
  const Index3 &d = vol.dims();
  const Vec3 &s = vol.spacing();
  const Vec3 o = vol.origin();
  {
    std::ofstream out(header_path);
    if (!out) throw IoError("cannot write " + header_path.string());
    out << "ObjectType = Image\n"
        << "NDims = 3\n"
        << "BinaryData = True\n"
        << "BinaryDataByteOrderMSB = False\n"
        << "DimSize = " << d.nx << ' ' << d.ny << ' ' << d.nz << '\n'
        << "ElementSpacing = " << format_double(s.x) << ' ' << format_double(s.y) << ' '
        << format_double(s.z) << '\n'
        << "Offset = " << format_double(o.x) << ' ' << format_double(o.y) << ' '
        << format_double(o.z) << '\n'
        << "ElementType = " << (type == ElementType::Float32 ? "MET_FLOAT" : "MET_SHORT") << '\n'
        << "ElementDataFile = " << raw_path.filename().string() << '\n';
    if (!out) throw IoError("failed writing " + header_path.string());
  }
  const bool swap = std::endian::native == std::endian::big;
  std::vector<char> bytes;
  const auto voxels = vol.voxels();
  if (type == ElementType::Float32) {
    bytes.resize(voxels.size() * 4);
    for (std::size_t i = 0; i < voxels.size(); ++i) {
      const float v = swap ? detail::byteswap_value(voxels[i]) : voxels[i];
      std::memcpy(bytes.data() + 4 * i, &v, 4);
    }
  } else {
    bytes.resize(voxels.size() * 2);
    for (std::size_t i = 0; i < voxels.size(); ++i) {
      const double r = std::clamp(std::nearbyint(static_cast<double>(voxels[i])), -32768.0, 32767.0);
      std::int16_t v = static_cast<std::int16_t>(r);
      if (swap) v = detail::byteswap_value(v);
      std::memcpy(bytes.data() + 2 * i, &v, 2);
    }
  }
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("cannot write " + raw_path.string());
  raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!raw) throw IoError("failed writing " + raw_path.string());
}

} // namespace ssbreg
