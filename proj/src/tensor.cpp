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

#include "dmsn/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "binary_io.hpp"

namespace dmsn {

std::string Dims5::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(t) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <typename T>
Tensor<T>::Tensor(const Dims5& dims, T fill)
    : dims_(dims), data_(dims.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(const Dims5& dims, std::vector<T> data)
    : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_.numel()) {
    throw std::invalid_argument("tensor buffer holds " +
                                std::to_string(data_.size()) +
                                " elements but extents " + dims_.str() +
                                " require " + std::to_string(dims_.numel()));
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(const Dims5& dims) const {
  if (dims.numel() != numel()) {
    throw std::invalid_argument("cannot reshape " + dims_.str() + " to " +
                                dims.str());
  }
  return Tensor<T>(dims, data_);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("max_abs_diff: extents differ " +
                                a.dims().str() + " vs " + b.dims().str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
  }
  return worst;
}

namespace {

constexpr char kTensorMagic[] = "DMSN";

void write_header(std::ostream& os, DType dtype, const Dims5& dims) {
  os.write(kTensorMagic, 4);
  io::put_le<std::uint32_t>(os, kTensorFormatVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(dtype));
  for (std::size_t extent : {dims.n, dims.c, dims.t, dims.h, dims.w}) {
    if (extent > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("tensor extent exceeds 32-bit range");
    }
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(extent));
  }
}

template <typename T>
Tensor<T> read_payload(std::istream& is, const Dims5& dims) {
  std::vector<T> data(dims.numel());
  for (auto& v : data) {
    if constexpr (std::is_same_v<T, float>) {
      v = std::bit_cast<float>(io::get_le<std::uint32_t>(is, "tensor payload"));
    } else {
      v = std::bit_cast<double>(
          io::get_le<std::uint64_t>(is, "tensor payload"));
    }
  }
  return Tensor<T>(dims, std::move(data));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& tensor) {
  write_header(os, dtype_of<T>(), tensor.dims());
  for (T v : tensor.data()) {
    if constexpr (std::is_same_v<T, float>) {
      io::put_f32(os, v);
    } else {
      io::put_f64(os, v);
    }
  }
  if (!os) throw std::runtime_error("failed writing tensor");
}

AnyTensor read_any_tensor(std::istream& is) {
  io::expect_magic(is, kTensorMagic, "tensor file");
  const auto version = io::get_le<std::uint32_t>(is, "tensor version");
  if (version != kTensorFormatVersion) {
    throw std::runtime_error("unsupported tensor format version " +
                             std::to_string(version));
  }
  const auto code = io::get_le<std::uint32_t>(is, "tensor dtype");
  Dims5 dims;
  dims.n = io::get_le<std::uint32_t>(is, "tensor extents");
  dims.c = io::get_le<std::uint32_t>(is, "tensor extents");
  dims.t = io::get_le<std::uint32_t>(is, "tensor extents");
  dims.h = io::get_le<std::uint32_t>(is, "tensor extents");
  dims.w = io::get_le<std::uint32_t>(is, "tensor extents");
  switch (static_cast<DType>(code)) {
    case DType::kF32:
      return read_payload<float>(is, dims);
    case DType::kF64:
      return read_payload<double>(is, dims);
  }
  throw std::runtime_error("unknown tensor dtype code " + std::to_string(code));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  AnyTensor any = read_any_tensor(is);
  if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
  throw std::runtime_error("tensor dtype mismatch: stored dtype differs from "
                           "the requested one");
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& tensor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(os, tensor);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_tensor<T>(is);
}

#define DMSN_INSTANTIATE(T)                                          \
  template class Tensor<T>;                                          \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);  \
  template void write_tensor(std::ostream&, const Tensor<T>&);       \
  template Tensor<T> read_tensor<T>(std::istream&);                  \
  template void save_tensor(const std::string&, const Tensor<T>&);   \
  template Tensor<T> load_tensor<T>(const std::string&);

DMSN_INSTANTIATE(float)
DMSN_INSTANTIATE(double)
#undef DMSN_INSTANTIATE

}  // namespace dmsn
