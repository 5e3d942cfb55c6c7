#include "specdiff/io/tensor_file.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "specdiff/error.hpp"

namespace specdiff::io {
namespace {

constexpr std::array<char, 8> kMagic = {'S', 'D', 'T', 'E', 'N', 'S', 'R', '1'};
static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated tensor container");
  return v;
}

nn::Shape read_header(std::istream& is, DType& dtype) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw DataError("not a tensor container (bad magic)");
  const auto code = get<std::uint32_t>(is);
  if (code != static_cast<std::uint32_t>(DType::kFloat32) && code != static_cast<std::uint32_t>(DType::kFloat64)) {
    throw DataError("tensor container has unknown dtype code " + std::to_string(code));
  }
  dtype = static_cast<DType>(code);
  const auto rank = get<std::uint32_t>(is);
  if (rank > 8) throw DataError("tensor container rank too large");
  nn::Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto extent = get<std::uint64_t>(is);
    if (extent > (1ULL << 31)) throw DataError("tensor container extent too large");
    shape.push_back(static_cast<int>(extent));
  }
  return shape;
}

}  // namespace

void write_tensor(std::ostream& os, const nn::Tensor& t, DType dtype) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dtype));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  if (dtype == DType::kFloat32) {
    std::vector<float> buf(t.data.begin(), t.data.end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
}

nn::Tensor read_tensor(std::istream& is) {
  DType dtype{};
  nn::Shape shape = read_header(is, dtype);
  nn::Tensor t(shape);
  if (dtype == DType::kFloat32) {
    std::vector<float> buf(t.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw DataError("truncated tensor payload");
    std::copy(buf.begin(), buf.end(), t.data.begin());
  } else {
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw DataError("truncated tensor payload");
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const nn::Tensor& t, DType dtype) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t, dtype);
  atomic_write(path, os.str());
}

nn::Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tensor file " + path.string());
  try {
    return read_tensor(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

nn::Shape peek_shape(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tensor file " + path.string());
  DType dtype{};
  return read_header(is, dtype);
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace specdiff::io
