#include "bacnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bacnn/error.hpp"
#include "binary_io.hpp"

namespace bacnn {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

static void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor needs at least one extent");
  for (Index e : shape) {
    if (e < 1) throw ShapeError("non-positive extent in shape " + shape_string(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  check_extents(shape_);
  if (shape_size(shape_) != size()) {
    throw ShapeError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " values, got " + std::to_string(size()));
  }
}

Index Tensor::dim(int axis) const {
  if (axis < 0) axis += ndim();
  if (axis < 0 || axis >= ndim()) throw ShapeError("axis out of range for " + shape_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

Index Tensor::offset(std::initializer_list<Index> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) throw ShapeError("index rank mismatch");
  Index off = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<Index> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }
double Tensor::at(std::initializer_list<Index> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }

MatrixMap Tensor::matrix(Index rows, Index cols) {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + shape_string(shape_));
  return MatrixMap(data_.data(), rows, cols);
}

ConstMatrixMap Tensor::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor " + shape_string(shape_));
  return ConstMatrixMap(data_.data(), rows, cols);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out = *this;
  out.shape_ = std::move(shape);
  check_extents(out.shape_);
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor create(Shape shape, double fill) { return Tensor(std::move(shape), fill); }
Tensor create(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values)); }

Shape4 shape4(const Tensor& t) {
  if (t.ndim() != 4) throw ShapeError("expected 4-D [n,h,w,c] tensor, got " + shape_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out << "TEN " << t.ndim();
  for (Index e : t.shape()) out << ' ' << e;
  out << '\n';
  for (double v : t.data()) detail::write_le(out, v);
}

Tensor read_tensor(std::istream& in) {
  std::istringstream header(detail::read_header_line(in, "tensor dump"));
  std::string magic;
  int ndim = 0;
  if (!(header >> magic >> ndim) || magic != "TEN" || ndim < 1) throw FormatError("bad tensor dump header");
  Shape shape(static_cast<std::size_t>(ndim));
  for (auto& e : shape) {
    if (!(header >> e) || e < 1) throw FormatError("bad tensor dump extents");
  }
  std::vector<double> values(static_cast<std::size_t>(shape_size(shape)));
  for (auto& v : values) v = detail::read_le<double>(in, "tensor dump");
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace bacnn
