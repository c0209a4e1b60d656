#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace vem {

enum class DType : std::uint8_t { float32 = 1, float64 = 2 };

inline constexpr char kTensorMagic[4] = {'V', 'X', 'T', '1'};
inline constexpr std::uint32_t kTensorVersion = 1;

/// N-dimensional real array stored row-major.
///
/// Values are held widened to double. A float32 tensor keeps its dtype so
/// that writing it back reproduces the original file byte for byte.
struct Tensor {
  DType dtype = DType::float64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  std::size_t ndim() const { return shape.size(); }
  std::size_t size() const;

  static Tensor from_matrix(const Eigen::MatrixXd& m, DType dtype = DType::float64);
  static Tensor from_vector(std::span<const double> v, DType dtype = DType::float64);

  // 2-d tensors map to rows x cols; 1-d tensors to a single column.
  Eigen::MatrixXd to_matrix() const;
  Eigen::VectorXd to_vector() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct TensorHeader {
  DType dtype;
  std::vector<std::uint64_t> shape;
};

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);
TensorHeader read_tensor_header(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

inline void write_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  write_tensor(Tensor::from_matrix(m), path);
}
inline Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  return read_tensor(path).to_matrix();
}

}  // namespace vem
