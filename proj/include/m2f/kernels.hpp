#pragma once

// Data-parallel inner loops. Every kernel exists twice: `reference` is the
// plain serial loop nest kept as the ground truth for tests and benchmarks,
// `parallel` is the OpenMP version used by the library. Both write their
// outputs in a fixed per-element order, so results are reproducible
// regardless of thread count.

#include <cstddef>
#include <span>

namespace m2f::kernels {

struct GemmShape {
  std::size_t m = 0, n = 0, k = 0;
  bool trans_a = false;  // A stored as [k, m]
  bool trans_b = false;  // B stored as [n, k]
};

struct ConvShape {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

struct StftShape {
  std::size_t frame_length = 400;
  std::size_t hop = 160;
  std::size_t fft_size = 512;

  std::size_t bins() const { return fft_size / 2 + 1; }
  std::size_t frames(std::size_t samples) const {
    return samples < frame_length ? 0 : 1 + (samples - frame_length) / hop;
  }
};

struct AdamWParams {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

namespace reference {

// C (+)= op(A) * op(B)
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);

// Accumulates into grad_x, grad_w, grad_b (any may be empty to skip).
void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_b);

// |DFT|^2 of every windowed, zero-padded frame: [frames, fft_size/2+1].
// Direct O(n^2) transform.
void stft_power(const StftShape& s, std::span<const double> samples,
                std::span<const double> window, std::span<double> out);

// out[frames, n_filters] = power[frames, bins] * filters[n_filters, bins]^T
void apply_filterbank(std::size_t frames, std::size_t bins, std::size_t n_filters,
                      std::span<const double> power, std::span<const double> filters,
                      std::span<double> out);

void adamw_update(const AdamWParams& p, std::span<double> param, std::span<const double> grad,
                  std::span<double> m, std::span<double> v);

}  // namespace reference

namespace parallel {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_b);

// Radix-2 FFT per frame; fft_size must be a power of two.
void stft_power(const StftShape& s, std::span<const double> samples,
                std::span<const double> window, std::span<double> out);

void apply_filterbank(std::size_t frames, std::size_t bins, std::size_t n_filters,
                      std::span<const double> power, std::span<const double> filters,
                      std::span<double> out);

void adamw_update(const AdamWParams& p, std::span<double> param, std::span<const double> grad,
                  std::span<double> m, std::span<double> v);

}  // namespace parallel

int max_threads();

}  // namespace m2f::kernels
