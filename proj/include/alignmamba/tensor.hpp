#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "alignmamba/errors.hpp"

namespace alignmamba {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Dense row-major array of reals.
///
/// Values are held as double regardless of dtype; an f32 tensor keeps every
/// element exactly representable as float, so serialization round-trips
/// bit-exactly. Differentiable computation happens on a Tape (autograd.hpp),
/// which stores Tensors as node values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f64);
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::f64);

  static Tensor scalar(double v);
  static Tensor filled(Shape shape, double v);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  DType dtype() const noexcept { return dtype_; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const;
  double& at(std::size_t r, std::size_t c);
  double item() const;

  // Rounds through float when converting to f32.
  Tensor cast(DType dtype) const;
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace alignmamba
