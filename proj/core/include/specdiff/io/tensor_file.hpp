#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "specdiff/nn/tensor.hpp"

namespace specdiff::io {

/// Element type stored in a tensor container.
enum class DType : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

/// Self-describing binary container:
///   8-byte magic "SDTENSR1", u32 dtype code, u32 rank, rank x u64 extents,
///   then the elements, row-major, little-endian.
/// Features and exported mels use float32; checkpoints use float64 so that a
/// resumed run continues bit-identically.
void write_tensor(std::ostream& os, const nn::Tensor& t, DType dtype = DType::kFloat32);
nn::Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const nn::Tensor& t, DType dtype = DType::kFloat32);
nn::Tensor load_tensor(const std::filesystem::path& path);

/// Reads only the header; returns the declared shape.
nn::Shape peek_shape(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace specdiff::io
