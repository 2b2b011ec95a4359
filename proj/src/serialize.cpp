#include "essm/serialize.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <type_traits>

#include "essm/errors.hpp"

namespace essm {

namespace {

template <typename V>
void write_pod(std::ostream& os, V value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is, const char* what) {
  V value;
  is.read(reinterpret_cast<char*>(&value), sizeof(V));
  if (!is) throw DataError(std::string("tensor load: truncated reading ") + what);
  return value;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

}  // namespace

template <typename T>
void save_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic, 4);
  write_pod<std::uint32_t>(os, kTensorFormatVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
  write_pod<std::uint8_t>(os, dtype_tag<T>());
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw DataError("tensor save: write failed");
}

template <typename T>
Tensor<T> load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw DataError("tensor load: bad magic bytes");
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kTensorFormatVersion)
    throw DataError("tensor load: unsupported format version " + std::to_string(version));
  const auto rank = read_pod<std::uint32_t>(is, "rank");
  if (rank > 16) throw DataError("tensor load: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape)
    e = static_cast<std::size_t>(read_pod<std::uint64_t>(is, "extent"));
  const auto tag = read_pod<std::uint8_t>(is, "dtype tag");
  if (tag != dtype_tag<T>())
    throw DataError("tensor load: dtype tag " + std::to_string(tag) +
                    " does not match requested element type");
  std::vector<T> values(shape_size(shape));
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!is) throw DataError("tensor load: truncated data section");
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("tensor save: cannot open " + path);
  save_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("tensor load: cannot open " + path);
  return load_tensor<T>(is);
}

template void save_tensor<float>(std::ostream&, const Tensor<float>&);
template void save_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(std::istream&);
template Tensor<double> load_tensor<double>(std::istream&);
template void save_tensor_file<float>(const std::string&, const Tensor<float>&);
template void save_tensor_file<double>(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor_file<float>(const std::string&);
template Tensor<double> load_tensor_file<double>(const std::string&);

}  // namespace essm
