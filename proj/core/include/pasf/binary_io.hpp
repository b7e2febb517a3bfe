#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pasf::io {

// Little-endian raw encoding of scalars, strings and dense matrices. Matrices
// are stored row-major. Readers throw IoError on truncation.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(const std::string& s);
  void matrix(const Eigen::MatrixXd& m);
  void vector(const Eigen::VectorXd& v);
  void ints(const std::vector<int>& v);
  void doubles(const std::vector<double>& v);

 private:
  void raw(const void* data, std::size_t n);
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  Eigen::MatrixXd matrix();
  Eigen::VectorXd vector();
  std::vector<int> ints();
  std::vector<double> doubles();

  // Reads a magic tag and fails with IoError if it does not match.
  void expect(const std::string& tag);

 private:
  void raw(void* data, std::size_t n);
  std::istream& in_;
};

}  // namespace pasf::io
