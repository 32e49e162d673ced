#include "bad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace bad {

std::string shape_to_string(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

namespace {

std::size_t checked_volume(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
  std::size_t n = 1;
  for (auto e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive: " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)), values_(checked_volume(shape_), fill) {
  cols_ = shape_.size() == 1 ? shape_[0] : values_.size() / shape_[0];
}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (checked_volume(shape_) != values_.size()) {
    throw std::invalid_argument("tensor shape " + shape_to_string(shape_) + " does not match " +
                                std::to_string(values_.size()) + " values");
  }
  cols_ = shape_.size() == 1 ? shape_[0] : values_.size() / shape_[0];
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<real>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<real> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

real Tensor::item() const {
  if (values_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_to_string(shape_));
  return values_[0];
}

void Tensor::fill(real v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](real v) { return std::isfinite(v); });
}

std::size_t AttentionMask::allowed_in_row(std::size_t q) const {
  auto first = allow_.begin() + static_cast<std::ptrdiff_t>(q * keys_);
  return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(keys_), 1));
}

bool AttentionMask::every_row_nonempty() const {
  for (std::size_t q = 0; q < queries_; ++q) {
    if (allowed_in_row(q) == 0) return false;
  }
  return true;
}

std::string AttentionMask::to_text() const {
  std::string out;
  out.reserve(queries_ * (keys_ + 1));
  for (std::size_t q = 0; q < queries_; ++q) {
    for (std::size_t k = 0; k < keys_; ++k) out += (*this)(q, k) ? '1' : '0';
    out += '\n';
  }
  return out;
}

AttentionMask AttentionMask::from_text(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::invalid_argument("empty mask text");
  AttentionMask mask(lines.size(), lines.front().size());
  for (std::size_t q = 0; q < lines.size(); ++q) {
    if (lines[q].size() != mask.keys()) throw std::invalid_argument("ragged mask text");
    for (std::size_t k = 0; k < mask.keys(); ++k) {
      const char c = lines[q][k];
      if (c != '0' && c != '1') throw std::invalid_argument("mask text must contain only 0/1");
      mask.set(q, k, c == '1');
    }
  }
  return mask;
}

}  // namespace bad
