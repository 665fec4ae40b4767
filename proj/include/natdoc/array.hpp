// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

namespace natdoc::nc {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// Dense row-major array of doubles. Arrays of rank > 2 are viewed as a stack
// of rows over the last axis; rank-1 arrays are a single row.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape, double fill = 0.0);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Array vector(std::vector<double> values);
  static Array scalar(double value);
  static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const;
  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  void fill(double value);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Boolean companion of Array, used for masks.
class BoolArray {
 public:
  BoolArray() = default;
  BoolArray(std::vector<std::size_t> shape, bool fill);
  static BoolArray matrix(std::size_t rows, std::size_t cols, bool fill);
  static BoolArray from_rows(std::initializer_list<std::initializer_list<bool>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  bool operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { data_[r * cols() + c] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  const std::uint8_t* data() const { return data_.data(); }
  std::uint8_t* data() { return data_.data(); }
  bool operator==(const BoolArray&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<std::uint8_t> data_;
};

// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);

}  // namespace natdoc::nc
