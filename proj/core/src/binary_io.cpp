#include "pasf/binary_io.hpp"

#include <bit>

#include "pasf/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary format assumes a little-endian host");

namespace pasf::io {

void BinaryWriter::raw(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw IoError("write failed");
}

void BinaryWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::i64(std::int64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { raw(&v, sizeof v); }

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  raw(s.data(), s.size());
}

void BinaryWriter::matrix(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
}

void BinaryWriter::vector(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

void BinaryWriter::ints(const std::vector<int>& v) {
  u64(v.size());
  for (int x : v) i64(x);
}

void BinaryWriter::doubles(const std::vector<double>& v) {
  u64(v.size());
  raw(v.data(), sizeof(double) * v.size());
}

void BinaryReader::raw(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("unexpected end of file");
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

std::int64_t BinaryReader::i64() {
  std::int64_t v;
  raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

namespace {
constexpr std::uint64_t kMaxElements = 1ULL << 32;
}

std::string BinaryReader::str() {
  const auto n = u64();
  if (n > kMaxElements) throw IoError("string length out of range");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

Eigen::MatrixXd BinaryReader::matrix() {
  const auto rows = u64();
  const auto cols = u64();
  if (rows > kMaxElements || cols > kMaxElements || rows * cols > kMaxElements)
    throw IoError("matrix shape out of range");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
  return m;
}

Eigen::VectorXd BinaryReader::vector() {
  const auto n = u64();
  if (n > kMaxElements) throw IoError("vector length out of range");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  raw(v.data(), sizeof(double) * n);
  return v;
}

std::vector<int> BinaryReader::ints() {
  const auto n = u64();
  if (n > kMaxElements) throw IoError("list length out of range");
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(i64());
  return v;
}

std::vector<double> BinaryReader::doubles() {
  const auto n = u64();
  if (n > kMaxElements) throw IoError("list length out of range");
  std::vector<double> v(n);
  raw(v.data(), sizeof(double) * n);
  return v;
}

void BinaryReader::expect(const std::string& tag) {
  if (str() != tag) throw IoError("bad record tag, expected " + tag);
}

}  // namespace pasf::io
