#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "autoview/errors.hpp"
#include "autoview/tensor.hpp"

// Little-endian binary primitives for the checkpoint blob.

namespace autoview::ser {

inline void put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }
inline void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_i64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename S>
void put_tensor(std::ostream& os, const Tensor<S>& t) {
  put_u64(os, t.shape.size());
  for (int64_t d : t.shape) put_i64(os, d);
  os.write(reinterpret_cast<const char*>(t.ptr()),
           static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S))));
}

inline uint8_t get_u8(std::istream& is) {
  char c;
  if (!is.get(c)) throw IoError("checkpoint: truncated (u8)");
  return static_cast<uint8_t>(c);
}
inline uint64_t get_u64(std::istream& is) {
  uint64_t v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) throw IoError("checkpoint: truncated (u64)");
  return v;
}
inline int64_t get_i64(std::istream& is) {
  int64_t v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) throw IoError("checkpoint: truncated (i64)");
  return v;
}
inline double get_f64(std::istream& is) {
  double v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) throw IoError("checkpoint: truncated (f64)");
  return v;
}
inline std::string get_string(std::istream& is) {
  const uint64_t n = get_u64(is);
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n)))
    throw IoError("checkpoint: truncated (string)");
  return s;
}

template <typename S>
Tensor<S> get_tensor(std::istream& is) {
  const uint64_t rank = get_u64(is);
  Shape shape(rank);
  for (uint64_t i = 0; i < rank; ++i) shape[i] = get_i64(is);
  Tensor<S> t(shape);
  if (!is.read(reinterpret_cast<char*>(t.ptr()),
               static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S)))))
    throw IoError("checkpoint: truncated (tensor data)");
  return t;
}

}  // namespace autoview::ser
