#include "m2f/kernels.hpp"

#include <cmath>
#include <numbers>

namespace m2f::kernels::reference {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) {
        const double av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
        const double bv = s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
        acc += av * bv;
      }
      c[i * s.n + j] = accumulate ? c[i * s.n + j] + acc : acc;
    }
  }
}

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < s.channels; ++c) {
          for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
            const long iy = static_cast<long>(y * s.stride + ky) - static_cast<long>(s.padding);
            if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
            for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
              const long ix = static_cast<long>(xo * s.stride + kx) - static_cast<long>(s.padding);
              if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
              acc += w[((o * s.channels + c) * s.kernel_h + ky) * s.kernel_w + kx] *
                     x[(c * s.height + iy) * s.width + ix];
            }
          }
        }
        out[(o * oh + y) * ow + xo] = acc;
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_b) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const double g = grad_out[(o * oh + y) * ow + xo];
        if (!grad_b.empty()) grad_b[o] += g;
        for (std::size_t c = 0; c < s.channels; ++c) {
          for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
            const long iy = static_cast<long>(y * s.stride + ky) - static_cast<long>(s.padding);
            if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
            for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
              const long ix = static_cast<long>(xo * s.stride + kx) - static_cast<long>(s.padding);
              if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
              const std::size_t wi = ((o * s.channels + c) * s.kernel_h + ky) * s.kernel_w + kx;
              const std::size_t xi = (c * s.height + iy) * s.width + ix;
              if (!grad_w.empty()) grad_w[wi] += g * x[xi];
              if (!grad_x.empty()) grad_x[xi] += g * w[wi];
            }
          }
        }
      }
    }
  }
}

void stft_power(const StftShape& s, std::span<const double> samples,
                std::span<const double> window, std::span<double> out) {
  const std::size_t frames = s.frames(samples.size());
  const std::size_t bins = s.bins();
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* frame = samples.data() + f * s.hop;
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t n = 0; n < s.frame_length; ++n) {
        const double angle = two_pi * static_cast<double>((k * n) % s.fft_size) /
                             static_cast<double>(s.fft_size);
        const double v = frame[n] * window[n];
        re += v * std::cos(angle);
        im -= v * std::sin(angle);
      }
      out[f * bins + k] = re * re + im * im;
    }
  }
}

void apply_filterbank(std::size_t frames, std::size_t bins, std::size_t n_filters,
                      std::span<const double> power, std::span<const double> filters,
                      std::span<double> out) {
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t m = 0; m < n_filters; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += power[f * bins + k] * filters[m * bins + k];
      out[f * n_filters + m] = acc;
    }
  }
}

void adamw_update(const AdamWParams& p, std::span<double> param, std::span<const double> grad,
                  std::span<double> m, std::span<double> v) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * grad[i];
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / p.bias_correction1;
    const double v_hat = v[i] / p.bias_correction2;
    param[i] -= p.lr * p.weight_decay * param[i];
    param[i] -= p.lr * m_hat / (std::sqrt(v_hat) + p.eps);
  }
}

}  // namespace m2f::kernels::reference
