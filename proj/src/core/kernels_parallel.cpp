#include "m2f/kernels.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace m2f::kernels {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;
}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  const long long m = static_cast<long long>(s.m);
  const std::size_t n = s.n, k = s.k;
  const bool big = s.m * s.n * s.k >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (long long i = 0; i < m; ++i) {
    double* crow = c.data() + static_cast<std::size_t>(i) * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    if (s.trans_b) {
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.data() + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = s.trans_a ? a[p * s.m + i] : a[i * k + p];
          acc += av * brow[p];
        }
        crow[j] += acc;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = s.trans_a ? a[p * s.m + i] : a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b.data() + p * n;
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long long out_channels = static_cast<long long>(s.out_channels);
  const bool big = s.out_channels * oh * ow * s.channels * s.kernel_h * s.kernel_w >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (long long o = 0; o < out_channels; ++o) {
    double* plane = out.data() + static_cast<std::size_t>(o) * oh * ow;
    const double b0 = bias.empty() ? 0.0 : bias[o];
    for (std::size_t i = 0; i < oh * ow; ++i) plane[i] = b0;
    for (std::size_t c = 0; c < s.channels; ++c) {
      const double* xin = x.data() + c * s.height * s.width;
      for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
          const double wv =
              w[((static_cast<std::size_t>(o) * s.channels + c) * s.kernel_h + ky) * s.kernel_w + kx];
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * s.stride + ky) - static_cast<long>(s.padding);
            if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const long ix = static_cast<long>(xo * s.stride + kx) - static_cast<long>(s.padding);
              if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
              plane[y * ow + xo] += wv * xin[iy * s.width + ix];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_b) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const bool big = s.out_channels * oh * ow * s.channels * s.kernel_h * s.kernel_w >= kParallelWork;

  // Weight and bias gradients: each output channel owns its slice.
  if (!grad_w.empty() || !grad_b.empty()) {
    const long long out_channels = static_cast<long long>(s.out_channels);
#pragma omp parallel for schedule(static) if (big)
    for (long long o = 0; o < out_channels; ++o) {
      const double* g = grad_out.data() + static_cast<std::size_t>(o) * oh * ow;
      if (!grad_b.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += g[i];
        grad_b[o] += acc;
      }
      if (grad_w.empty()) continue;
      for (std::size_t c = 0; c < s.channels; ++c) {
        const double* xin = x.data() + c * s.height * s.width;
        for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
            double acc = 0.0;
            for (std::size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y * s.stride + ky) - static_cast<long>(s.padding);
              if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const long ix = static_cast<long>(xo * s.stride + kx) - static_cast<long>(s.padding);
                if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
                acc += g[y * ow + xo] * xin[iy * s.width + ix];
              }
            }
            grad_w[((static_cast<std::size_t>(o) * s.channels + c) * s.kernel_h + ky) * s.kernel_w + kx] += acc;
          }
        }
      }
    }
  }

  // Input gradient: each input channel owns its plane.
  if (!grad_x.empty()) {
    const long long channels = static_cast<long long>(s.channels);
#pragma omp parallel for schedule(static) if (big)
    for (long long c = 0; c < channels; ++c) {
      double* gx = grad_x.data() + static_cast<std::size_t>(c) * s.height * s.width;
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        const double* g = grad_out.data() + o * oh * ow;
        for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
            const double wv =
                w[((o * s.channels + static_cast<std::size_t>(c)) * s.kernel_h + ky) * s.kernel_w + kx];
            for (std::size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y * s.stride + ky) - static_cast<long>(s.padding);
              if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const long ix = static_cast<long>(xo * s.stride + kx) - static_cast<long>(s.padding);
                if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
                gx[iy * s.width + ix] += g[y * ow + xo] * wv;
              }
            }
          }
        }
      }
    }
  }
}

namespace {

void fft_in_place(std::vector<std::complex<double>>& buf,
                  const std::vector<std::complex<double>>& twiddle) {
  const std::size_t n = buf.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = buf[start + j];
        const std::complex<double> t = buf[start + j + len / 2] * twiddle[j * step];
        buf[start + j] = u + t;
        buf[start + j + len / 2] = u - t;
      }
    }
  }
}

}  // namespace

void stft_power(const StftShape& s, std::span<const double> samples,
                std::span<const double> window, std::span<double> out) {
  if (s.fft_size == 0 || (s.fft_size & (s.fft_size - 1)) != 0) {
    throw std::invalid_argument("fft_size must be a power of two");
  }
  const std::size_t frames = s.frames(samples.size());
  const std::size_t bins = s.bins();
  std::vector<std::complex<double>> twiddle(s.fft_size / 2);
  for (std::size_t j = 0; j < twiddle.size(); ++j) {
    twiddle[j] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(j) /
                                     static_cast<double>(s.fft_size));
  }
  const long long n_frames = static_cast<long long>(frames);
#pragma omp parallel
  {
    std::vector<std::complex<double>> buf(s.fft_size);
#pragma omp for schedule(static)
    for (long long f = 0; f < n_frames; ++f) {
      const double* frame = samples.data() + static_cast<std::size_t>(f) * s.hop;
      for (std::size_t n = 0; n < s.fft_size; ++n) {
        buf[n] = n < s.frame_length ? frame[n] * window[n] : 0.0;
      }
      fft_in_place(buf, twiddle);
      for (std::size_t k = 0; k < bins; ++k) out[static_cast<std::size_t>(f) * bins + k] = std::norm(buf[k]);
    }
  }
}

void apply_filterbank(std::size_t frames, std::size_t bins, std::size_t n_filters,
                      std::span<const double> power, std::span<const double> filters,
                      std::span<double> out) {
  gemm({frames, n_filters, bins, false, true}, power, filters, out, false);
}

void adamw_update(const AdamWParams& p, std::span<double> param, std::span<const double> grad,
                  std::span<double> m, std::span<double> v) {
  const long long n = static_cast<long long>(param.size());
  const bool big = param.size() >= kParallelWork;
#pragma omp parallel for simd schedule(static) if (big)
  for (long long i = 0; i < n; ++i) {
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * grad[i];
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / p.bias_correction1;
    const double v_hat = v[i] / p.bias_correction2;
    param[i] -= p.lr * p.weight_decay * param[i];
    param[i] -= p.lr * m_hat / (std::sqrt(v_hat) + p.eps);
  }
}

}  // namespace parallel
}  // namespace m2f::kernels
