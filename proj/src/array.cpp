// Copyright 2026 The natdoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "natdoc/array.hpp"

#include <algorithm>
#include <string>

#include "natdoc/errors.hpp"

namespace natdoc::nc {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("array extents must be positive");
    n *= e;
  }
  return n;
}

Array::Array(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("array data length " + std::to_string(data_.size()) +
                         " does not match shape");
  }
}

Array Array::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Array({rows, cols}, fill);
}

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::scalar(double value) { return Array({1}, std::vector<double>{value}); }

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Array({r, c}, std::move(data));
}

std::size_t Array::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : data_.size() / shape_.back();
}

std::size_t Array::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Array::item() const {
  if (data_.size() != 1) throw DimensionError("item() requires a single-element array");
  return data_[0];
}

void Array::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

BoolArray::BoolArray(std::vector<std::size_t> shape, bool fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill ? 1 : 0) {}

BoolArray BoolArray::matrix(std::size_t rows, std::size_t cols, bool fill) {
  return BoolArray({rows, cols}, fill);
}

BoolArray BoolArray::from_rows(std::initializer_list<std::initializer_list<bool>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  BoolArray out({r, c}, false);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows");
    for (bool b : row) out.data_[i++] = b ? 1 : 0;
  }
  return out;
}

std::size_t BoolArray::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : data_.size() / shape_.back();
}

std::size_t BoolArray::cols() const { return shape_.empty() ? 0 : shape_.back(); }

}  // namespace natdoc::nc
