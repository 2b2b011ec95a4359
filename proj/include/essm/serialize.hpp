#pragma once

#include <iosfwd>
#include <string>

#include "essm/tensor.hpp"

namespace essm {

/// Binary tensor format: magic "ESSM", format version u32, rank u32, one u64
/// extent per axis, dtype tag u8 (0 = f32, 1 = f64), then the raw row-major
/// little-endian data.
inline constexpr char kTensorMagic[4] = {'E', 'S', 'S', 'M'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

template <typename T>
void save_tensor(std::ostream& os, const Tensor<T>& t);

/// Reads one tensor; throws DataError on bad magic, version, dtype mismatch,
/// or truncation.
template <typename T>
Tensor<T> load_tensor(std::istream& is);

template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tensor_file(const std::string& path);

}  // namespace essm
