#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bacnn {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of 64-bit floats.
///
/// Four-dimensional activations use the [n, h, w, c] layout throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }
  static Tensor ones_like(const Tensor& other) { return Tensor(other.shape(), 1.0); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const;
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::initializer_list<Index> idx);
  double at(std::initializer_list<Index> idx) const;

  /// View as rows x cols, where rows * cols == size().
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;
  VectorMap vec() { return VectorMap(data_.data(), size()); }
  ConstVectorMap vec() const { return ConstVectorMap(data_.data(), size()); }

  /// Same data, new extents.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  void fill(double value);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Index offset(std::initializer_list<Index> idx) const;

  Shape shape_;
  // Fixed alignment keeps Eigen's vectorized reductions in the same order run to run.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

Tensor create(Shape shape, double fill);
Tensor create(Shape shape, std::vector<double> values);

/// Batch, height, width, channel extents of a 4-D tensor.
struct Shape4 {
  Index n = 1;
  Index h = 1;
  Index w = 1;
  Index c = 1;

  Shape to_shape() const { return {n, h, w, c}; }
  Index size() const { return n * h * w * c; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

Shape4 shape4(const Tensor& t);

// Fixture dump: "TEN <ndim> <e1> ... <ek>\n" followed by little-endian doubles.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

}  // namespace bacnn
