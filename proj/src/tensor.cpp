#include "vem/tensor.hpp"

#include "vem/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace vem {
namespace {

constexpr std::size_t kFixedHeaderBytes = 4 + 4 + 1 + 1;

std::size_t dtype_width(DType d) { return d == DType::float32 ? 4 : 8; }

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::size_t checked_product(const std::vector<std::uint64_t>& shape, const std::string& origin) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > UINT64_MAX / d) throw FormatError(origin + ": shape overflows");
    n *= d;
  }
  return static_cast<std::size_t>(n);
}

TensorHeader parse_header(std::span<const std::uint8_t> bytes, const std::string& origin,
                          std::size_t& header_bytes) {
  if (bytes.size() < kFixedHeaderBytes)
    throw FormatError(origin + ": truncated header (" + std::to_string(bytes.size()) +
                      " bytes)");
  if (std::memcmp(bytes.data(), kTensorMagic, 4) != 0) throw FormatError(origin + ": bad magic");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kTensorVersion)
    throw FormatError(origin + ": version " + std::to_string(version) + " unsupported");
  const std::uint8_t code = bytes[8];
  if (code != 1 && code != 2) throw FormatError(origin + ": dtype " + std::to_string(code) + " unsupported");
  const std::uint8_t ndim = bytes[9];
  if (ndim == 0) throw FormatError(origin + ": ndim must be >= 1");
  header_bytes = kFixedHeaderBytes + 8 * std::size_t{ndim};
  if (bytes.size() < header_bytes)
    throw FormatError(origin + ": truncated header (" + std::to_string(bytes.size()) +
                      " of " + std::to_string(header_bytes) + " bytes)");
  TensorHeader h{static_cast<DType>(code), {}};
  for (std::size_t d = 0; d < ndim; ++d)
    h.shape.push_back(get_le<std::uint64_t>(bytes.data() + kFixedHeaderBytes + 8 * d));
  return h;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::size_t Tensor::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::uint64_t b) { return a * b; });
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.resize(m.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.values.data(), m.rows(), m.cols()) = m;
  return t;
}

Tensor Tensor::from_vector(std::span<const double> v, DType dtype) {
  return Tensor{dtype, {v.size()}, {v.begin(), v.end()}};
}

Eigen::MatrixXd Tensor::to_matrix() const {
  if (ndim() == 1) return to_vector();
  if (ndim() != 2)
    throw FormatError("expected a 1-d or 2-d tensor, got ndim " + std::to_string(ndim()));
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
}

Eigen::VectorXd Tensor::to_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.shape.empty()) throw FormatError("ndim must be >= 1");
  if (t.shape.size() > 255) throw FormatError("ndim must be <= 255");
  if (t.dtype != DType::float32 && t.dtype != DType::float64)
    throw FormatError("dtype unsupported");
  if (t.size() != t.values.size())
    throw FormatError("shape holds " + std::to_string(t.size()) + " values but " +
                      std::to_string(t.values.size()) + " were given");
  if (t.values.empty()) throw FormatError("tensor is empty");

  std::vector<std::uint8_t> out;
  out.reserve(kFixedHeaderBytes + 8 * t.shape.size() + dtype_width(t.dtype) * t.values.size());
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  put_le<std::uint32_t>(out, kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.shape.size()));
  for (auto d : t.shape) put_le<std::uint64_t>(out, d);
  if (t.dtype == DType::float64) {
    for (double v : t.values) put_le(out, std::bit_cast<std::uint64_t>(v));
  } else {
    for (double v : t.values) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& origin) {
  std::size_t header_bytes = 0;
  TensorHeader h = parse_header(bytes, origin, header_bytes);
  const std::size_t count = checked_product(h.shape, origin);
  const std::size_t width = dtype_width(h.dtype);
  const std::size_t expected = header_bytes + count * width;
  if (bytes.size() < expected)
    throw FormatError(origin + ": truncated payload, expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()) + " (" +
                      std::to_string(expected - bytes.size()) + " missing)");
  if (bytes.size() > expected)
    throw FormatError(origin + ": " + std::to_string(bytes.size() - expected) +
                      " trailing bytes after payload");

  Tensor t{h.dtype, std::move(h.shape), {}};
  t.values.resize(count);
  const std::uint8_t* p = bytes.data() + header_bytes;
  if (t.dtype == DType::float64) {
    for (std::size_t i = 0; i < count; ++i)
      t.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
  } else {
    for (std::size_t i = 0; i < count; ++i)
      t.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
  }
  return t;
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode_tensor(bytes, path.string());
}

TensorHeader read_tensor_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> head(kFixedHeaderBytes + 8 * 255);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  std::size_t header_bytes = 0;
  TensorHeader h = parse_header(head, path.string(), header_bytes);

  in.clear();
  in.seekg(0, std::ios::end);
  const auto file_bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t expected =
      header_bytes + checked_product(h.shape, path.string()) * dtype_width(h.dtype);
  if (file_bytes != expected)
    throw FormatError(path.string() + ": payload size mismatch, expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(file_bytes));
  return h;
}

}  // namespace vem
