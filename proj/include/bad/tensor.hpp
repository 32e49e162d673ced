#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bad {

#ifdef BAD_REAL_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Vectorized kernels peel a different number of
// leading elements depending on the address, which changes rounding, so a
// fixed alignment keeps results independent of the allocator.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

std::string shape_to_string(const Shape& shape);

// Dense row-major array. Rank-1 tensors behave as a single row; higher ranks
// flatten every trailing axis into the column extent.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, real fill = real(0)) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(real v) { return Tensor({1}, std::vector<real>{v}); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<real>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t rows() const { return shape_.size() <= 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return cols_; }

  real* data() { return values_.data(); }
  const real* data() const { return values_.data(); }
  std::span<real> values() { return values_; }
  std::span<const real> values() const { return values_; }

  real& operator[](std::size_t i) { return values_[i]; }
  real operator[](std::size_t i) const { return values_[i]; }
  real& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  real operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<real> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const real> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  real item() const;
  void fill(real v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<real, AlignedAllocator<real>> values_;
  std::size_t cols_ = 0;  // cached column extent
};

// 2-D boolean allowance matrix. allow(q, k) == true lets query q read key k.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys, bool fill = false)
      : queries_(queries), keys_(keys), allow_(queries * keys, fill ? 1 : 0) {}

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool operator()(std::size_t q, std::size_t k) const { return allow_[q * keys_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { allow_[q * keys_ + k] = v ? 1 : 0; }
  std::size_t allowed_in_row(std::size_t q) const;
  bool every_row_nonempty() const;

  // One line per query, '1'/'0' per key.
  std::string to_text() const;
  static AttentionMask from_text(const std::string& text);

  bool operator==(const AttentionMask& other) const = default;

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<unsigned char> allow_;
};

}  // namespace bad
