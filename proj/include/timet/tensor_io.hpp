#pragma once

// Reader/writer for the .npy array container (format versions 1.0 and 2.0,
// little-endian float32/float64, C order). Only rank-2 and rank-3 arrays are
// accepted, matching what the rest of the library exchanges.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "timet/types.hpp"

namespace timet {

enum class Dtype { kFloat32, kFloat64 };

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;  // C order
  Dtype dtype = Dtype::kFloat32;

  std::size_t numel() const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Tensor load_tensor(const std::filesystem::path& path);

// Writes `t` using t.dtype. Rejects empty or non-finite tensors and shape/size
// mismatches with std::invalid_argument; I/O failures throw std::runtime_error.
void save_tensor(const Tensor& t, const std::filesystem::path& path);

// [rows, cols] tensor <-> matrix helpers.
Tensor matrix_to_tensor(const Matrix& m, Dtype dtype = Dtype::kFloat32);
Matrix tensor_to_matrix(const Tensor& t);

FeatureMap load_feature_map(const std::filesystem::path& path, GridShape grid);
// Mask entries must be integral; ignore_label passes through.
SegMask load_mask(const std::filesystem::path& path, int ignore_label = SegMask::kDefaultIgnore);
void save_mask(const SegMask& mask, const std::filesystem::path& path);

}  // namespace timet
