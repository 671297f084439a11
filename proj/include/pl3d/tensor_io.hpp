#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "error.hpp"

namespace pl3d {

// Layout: "PL3D" | version u8 | dtype u8 | ndim u8 | reserved u8 | dims u32le x ndim | row-major LE payload.
inline constexpr char kTensorMagic[4] = {'P', 'L', '3', 'D'};
inline constexpr std::uint8_t kTensorVersion = 1;

enum class DType : std::uint8_t { F32 = 1, U8 = 2, I64 = 3 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::F32;
};
template <>
struct DTypeOf<std::uint8_t> {
  static constexpr DType value = DType::U8;
};
template <>
struct DTypeOf<std::int64_t> {
  static constexpr DType value = DType::I64;
};

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::U8: return 1;
    case DType::I64: return 8;
  }
  return 0;
}

template <typename T>
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<T> values;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
auto to_bits(T v) {
  if constexpr (std::is_same_v<T, float>) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    return b;
  } else if constexpr (std::is_same_v<T, std::int64_t>) {
    return static_cast<std::uint64_t>(v);
  } else {
    return v;
  }
}

template <typename T>
T from_bytes(const std::uint8_t* p) {
  if constexpr (std::is_same_v<T, float>) {
    const auto b = get_le<std::uint32_t>(p);
    float v;
    std::memcpy(&v, &b, 4);
    return v;
  } else if constexpr (std::is_same_v<T, std::int64_t>) {
    return static_cast<std::int64_t>(get_le<std::uint64_t>(p));
  } else {
    return *p;
  }
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_tensor(std::span<const std::uint32_t> dims, std::span<const T> values) {
  if (dims.size() > 255) throw Error(ErrorCode::InvalidArgument, "tensor rank above 255");
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  if (n != values.size())
    throw Error(ErrorCode::DimMismatch, "dims describe " + std::to_string(n) + " values, got " + std::to_string(values.size()));
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * dims.size() + n * sizeof(T));
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  out.push_back(kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(DTypeOf<T>::value));
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  out.push_back(0);
  for (auto d : dims) detail::put_le<std::uint32_t>(out, d);
  for (const T& v : values) detail::put_le(out, detail::to_bits(v));
  return out;
}

/// `where` names the source in error messages.
template <typename T>
Tensor<T> decode_tensor(std::span<const std::uint8_t> bytes, const std::string& where) {
  if (bytes.size() < 8) throw Error(ErrorCode::CorruptHeader, where + ": truncated header");
  if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0) throw Error(ErrorCode::CorruptHeader, where + ": bad magic");
  if (bytes[4] != kTensorVersion)
    throw Error(ErrorCode::CorruptHeader, where + ": unsupported version " + std::to_string(bytes[4]));
  const auto dtype = static_cast<DType>(bytes[5]);
  if (dtype_size(dtype) == 0) throw Error(ErrorCode::CorruptHeader, where + ": unknown dtype " + std::to_string(bytes[5]));
  if (dtype != DTypeOf<T>::value)
    throw Error(ErrorCode::CorruptHeader, where + ": dtype " + std::to_string(bytes[5]) + " where " +
                                              std::to_string(int(DTypeOf<T>::value)) + " expected");
  const std::size_t ndim = bytes[6];
  if (bytes.size() < 8 + 4 * ndim) throw Error(ErrorCode::CorruptHeader, where + ": truncated dims");
  Tensor<T> t;
  t.dims.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) t.dims[i] = detail::get_le<std::uint32_t>(bytes.data() + 8 + 4 * i);
  const std::size_t n = t.numel();
  const std::size_t payload = bytes.size() - 8 - 4 * ndim;
  if (payload != n * sizeof(T))
    throw Error(ErrorCode::DimMismatch, where + ": payload " + std::to_string(payload) + " bytes, dims require " +
                                            std::to_string(n * sizeof(T)));
  t.values.resize(n);
  const auto* p = bytes.data() + 8 + 4 * ndim;
  for (std::size_t i = 0; i < n; ++i) t.values[i] = detail::from_bytes<T>(p + i * sizeof(T));
  return t;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingFile, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void write_tensor(const std::filesystem::path& path, std::span<const std::uint32_t> dims, std::span<const T> values) {
  write_file_bytes(path, encode_tensor<T>(dims, values));
}

template <typename T>
void write_tensor(const std::filesystem::path& path, std::initializer_list<std::uint32_t> dims, std::span<const T> values) {
  const std::vector<std::uint32_t> d(dims);
  write_tensor<T>(path, d, values);
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_tensor<T>(bytes, path.string());
}

/// Reads and requires an exact shape.
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path, std::span<const std::uint32_t> expected) {
  auto t = read_tensor<T>(path);
  if (!std::equal(t.dims.begin(), t.dims.end(), expected.begin(), expected.end())) {
    std::string got, want;
    for (auto d : t.dims) got += std::to_string(d) + "x";
    for (auto d : expected) want += std::to_string(d) + "x";
    throw Error(ErrorCode::DimMismatch, path.string() + ": shape " + got + " where " + want + " expected");
  }
  return t;
}

}  // namespace pl3d
