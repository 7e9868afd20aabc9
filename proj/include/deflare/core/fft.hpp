#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "deflare/core/tensor.hpp"

namespace deflare {

namespace detail {

// In-place unnormalized DFT of `a` taken with stride `stride`. Power-of-two
// lengths use iterative radix-2; other lengths fall back to direct summation.
template <class T>
void dft_strided(std::complex<T>* a, std::size_t n, std::size_t stride, bool inverse,
                 std::vector<std::complex<T>>& scratch) {
  if (n <= 1) return;
  const T sign = inverse ? T{1} : T{-1};
  const T two_pi = 2 * std::numbers::pi_v<T>;
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = a[i * stride];

  if ((n & (n - 1)) == 0) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(scratch[i], scratch[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<T> w =
            std::polar(T{1}, sign * two_pi * static_cast<T>(k) / static_cast<T>(len));
        for (std::size_t i = 0; i < n; i += len) {
          const std::complex<T> u = scratch[i + k];
          const std::complex<T> v = scratch[i + k + half] * w;
          scratch[i + k] = u + v;
          scratch[i + k + half] = u - v;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) a[i * stride] = scratch[i];
    return;
  }

  std::vector<std::complex<T>> tw(n);
  for (std::size_t k = 0; k < n; ++k) {
    tw[k] = std::polar(T{1}, sign * two_pi * static_cast<T>(k) / static_cast<T>(n));
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<T> s{};
    for (std::size_t j = 0; j < n; ++j) s += scratch[j] * tw[(k * j) % n];
    a[k * stride] = s;
  }
}

template <class T>
void dft2_planes(std::vector<std::complex<T>>& buf, std::size_t planes, std::size_t H,
                 std::size_t W, bool inverse) {
  std::vector<std::complex<T>> scratch;
  for (std::size_t p = 0; p < planes; ++p) {
    std::complex<T>* plane = buf.data() + p * H * W;
    for (std::size_t h = 0; h < H; ++h) dft_strided(plane + h * W, W, 1, inverse, scratch);
    for (std::size_t w = 0; w < W; ++w) dft_strided(plane + w, H, W, inverse, scratch);
  }
}

}  // namespace detail

template <class T>
struct Spectrum {
  Tensor<T> re;
  Tensor<T> im;
};

// Unnormalized 2-D DFT of every [H, W] plane of an NCHW tensor.
template <class T>
Spectrum<T> fft2(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("fft2: needs NCHW, got " + shape_str(x.shape()));
  const std::size_t H = x.dim(2), W = x.dim(3);
  std::vector<std::complex<T>> buf(x.data().begin(), x.data().end());
  detail::dft2_planes(buf, x.dim(0) * x.dim(1), H, W, false);
  Spectrum<T> s{Tensor<T>(x.shape()), Tensor<T>(x.shape())};
  for (std::size_t i = 0; i < buf.size(); ++i) {
    s.re[i] = buf[i].real();
    s.im[i] = buf[i].imag();
  }
  return s;
}

// Inverse of fft2 (includes the 1/(HW) factor).
template <class T>
Spectrum<T> ifft2(const Spectrum<T>& s) {
  const Tensor<T>& re = s.re;
  if (re.rank() != 4 || s.im.shape() != re.shape()) throw DimensionError("ifft2: bad spectrum");
  const std::size_t H = re.dim(2), W = re.dim(3);
  std::vector<std::complex<T>> buf(re.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {re[i], s.im[i]};
  detail::dft2_planes(buf, re.dim(0) * re.dim(1), H, W, true);
  const T inv = T{1} / static_cast<T>(H * W);
  Spectrum<T> out{Tensor<T>(re.shape()), Tensor<T>(re.shape())};
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.re[i] = buf[i].real() * inv;
    out.im[i] = buf[i].imag() * inv;
  }
  return out;
}

}  // namespace deflare
