#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fsdnet/nn.hpp"

namespace fsd {

namespace detail {

inline void write_double_le(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_double_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace detail

// Text manifest (name and shape per line) followed by the flat 64-bit
// little-endian payload in manifest order. Written atomically.
inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out << "FSDNET-CKPT 1\n" << store.entries().size() << "\n";
    for (const auto& e : store.entries()) {
      const Shape& s = e.tensor.shape();
      out << e.name << " " << s.n << " " << s.c << " " << s.h << " " << s.w
          << "\n";
    }
    out << "DATA\n";
    for (const auto& e : store.entries())
      for (double v : e.tensor.data()) detail::write_double_le(out, v);
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "FSDNET-CKPT" || version != 1)
    throw std::runtime_error("checkpoint: bad header in " + path);
  size_t count = 0;
  in >> count;
  if (count != store.entries().size())
    throw std::runtime_error(
        "checkpoint: parameter count mismatch in " + path + ": file has " +
        std::to_string(count) + ", model has " +
        std::to_string(store.entries().size()));
  for (auto& e : store.entries()) {
    std::string name;
    Shape s;
    in >> name >> s.n >> s.c >> s.h >> s.w;
    if (name != e.name || !(s == e.tensor.shape())) {
      std::ostringstream os;
      os << "checkpoint: entry mismatch in " << path << ": expected " << e.name
         << " " << e.tensor.shape().str() << ", found " << name << " "
         << s.str();
      throw std::runtime_error(os.str());
    }
  }
  std::string marker;
  in >> marker;
  if (marker != "DATA")
    throw std::runtime_error("checkpoint: missing DATA marker in " + path);
  in.get();  // newline
  for (auto& e : store.entries())
    for (double& v : e.tensor.data()) v = detail::read_double_le(in);
  if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path);
}

}  // namespace fsd
