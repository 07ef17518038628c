/* Copyright 2026 The DMSN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef DMSN_TENSOR_HPP_
#define DMSN_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dmsn {

// Extents of a 5-D activation tensor in (batch, channels, time, height, width)
// order.
struct Dims5 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * t * h * w; }
  std::size_t volume() const { return t * h * w; }
  std::string str() const;

  friend bool operator==(const Dims5&, const Dims5&) = default;
};

enum class DType : std::uint32_t { kF32 = 0, kF64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }

// Dense channels-first tensor. Storage is a contiguous row-major buffer
// whose length always equals dims().numel().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(const Dims5& dims, T fill = T{0});
  Tensor(const Dims5& dims, std::vector<T> data);

  const Dims5& dims() const { return dims_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
                     std::size_t w) const {
    return (((n * dims_.c + c) * dims_.t + t) * dims_.h + h) * dims_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
        std::size_t w) {
    return data_[offset(n, c, t, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t t, std::size_t h,
              std::size_t w) const {
    return data_[offset(n, c, t, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T value);
  // Same buffer, new extents; the element count must not change.
  Tensor reshaped(const Dims5& dims) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims5 dims_{};
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  std::vector<To> out(src.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<To>(src[i]);
  }
  return Tensor<To>(src.dims(), std::move(out));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Binary tensor file: "DMSN", u32 version, u32 dtype code, five u32 extents,
// then the little-endian payload.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& tensor);
AnyTensor read_any_tensor(std::istream& is);
// Fails when the stored dtype differs from T.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& tensor);
template <typename T>
Tensor<T> load_tensor(const std::string& path);

}  // namespace dmsn

#endif  // DMSN_TENSOR_HPP_
