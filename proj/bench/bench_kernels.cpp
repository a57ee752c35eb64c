// Wall-clock comparison of the serial reference kernels and their OpenMP
// counterparts. Prints one row per kernel with the max abs difference between
// the two outputs.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "m2f/kernels.hpp"

namespace k = m2f::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double time_ms(const std::function<void()>& f, int reps) {
  f();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void row(const char* name, double ref_ms, double par_ms, double diff) {
  std::printf("%-28s %10.3f %10.3f %8.2fx %10.2e\n", name, ref_ms, par_ms, ref_ms / par_ms, diff);
}

}  // namespace

int main() {
  std::mt19937_64 rng(1);
  std::printf("OpenMP threads: %d\n", k::max_threads());
  std::printf("%-28s %10s %10s %9s %10s\n", "kernel", "ref ms", "omp ms", "speedup", "max diff");

  {
    const k::GemmShape s{256, 256, 256};
    const auto a = random_vector(s.m * s.k, rng), b = random_vector(s.k * s.n, rng);
    std::vector<double> c_ref(s.m * s.n), c_par(s.m * s.n);
    const double r = time_ms([&] { k::reference::gemm(s, a, b, c_ref, false); }, 5);
    const double p = time_ms([&] { k::parallel::gemm(s, a, b, c_par, false); }, 5);
    row("gemm 256x256x256", r, p, max_abs_diff(c_ref, c_par));
  }
  {
    const k::ConvShape s{16, 32, 32, 32, 3, 3, 1, 1};
    const auto x = random_vector(s.channels * s.height * s.width, rng);
    const auto w = random_vector(s.out_channels * s.channels * 9, rng), b = random_vector(s.out_channels, rng);
    const std::size_t n_out = s.out_channels * s.out_height() * s.out_width();
    std::vector<double> o_ref(n_out), o_par(n_out);
    const double r = time_ms([&] { k::reference::conv2d_forward(s, x, w, b, o_ref); }, 5);
    const double p = time_ms([&] { k::parallel::conv2d_forward(s, x, w, b, o_par); }, 5);
    row("conv2d forward 16->32 @32^2", r, p, max_abs_diff(o_ref, o_par));

    const auto g = random_vector(n_out, rng);
    std::vector<double> gx_ref(x.size()), gw_ref(w.size()), gb_ref(b.size());
    std::vector<double> gx_par(x.size()), gw_par(w.size()), gb_par(b.size());
    const auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    const double rb = time_ms([&] {
      zero(gx_ref), zero(gw_ref), zero(gb_ref);
      k::reference::conv2d_backward(s, x, w, g, gx_ref, gw_ref, gb_ref);
    }, 5);
    const double pb = time_ms([&] {
      zero(gx_par), zero(gw_par), zero(gb_par);
      k::parallel::conv2d_backward(s, x, w, g, gx_par, gw_par, gb_par);
    }, 5);
    row("conv2d backward", rb, pb,
        std::max({max_abs_diff(gx_ref, gx_par), max_abs_diff(gw_ref, gw_par), max_abs_diff(gb_ref, gb_par)}));
  }
  {
    const k::StftShape s;
    const auto samples = random_vector(16000, rng);  // 1 s at 16 kHz
    std::vector<double> window(s.frame_length);
    for (std::size_t i = 0; i < window.size(); ++i) {
      window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(window.size()));
    }
    const std::size_t n = s.frames(samples.size()) * s.bins();
    std::vector<double> p_ref(n), p_par(n);
    const double r = time_ms([&] { k::reference::stft_power(s, samples, window, p_ref); }, 2);
    const double p = time_ms([&] { k::parallel::stft_power(s, samples, window, p_par); }, 20);
    double rel = 0.0, peak = 0.0;
    for (double v : p_ref) peak = std::max(peak, v);
    for (std::size_t i = 0; i < n; ++i) rel = std::max(rel, std::abs(p_ref[i] - p_par[i]) / peak);
    row("stft power 1 s (DFT vs FFT)", r, p, rel);

    const std::size_t frames = s.frames(samples.size());
    const auto filters = random_vector(128 * s.bins(), rng);
    std::vector<double> m_ref(frames * 128), m_par(frames * 128);
    const double rf = time_ms([&] { k::reference::apply_filterbank(frames, s.bins(), 128, p_ref, filters, m_ref); }, 5);
    const double pf = time_ms([&] { k::parallel::apply_filterbank(frames, s.bins(), 128, p_ref, filters, m_par); }, 5);
    row("mel filterbank 128 bands", rf, pf, max_abs_diff(m_ref, m_par));
  }
  {
    const std::size_t n = 1 << 20;
    const auto grad = random_vector(n, rng);
    std::vector<double> w_ref = random_vector(n, rng), w_par = w_ref;
    std::vector<double> m_ref(n), v_ref(n), m_par(n), v_par(n);
    k::AdamWParams params;
    params.weight_decay = 5e-4;
    params.bias_correction1 = 0.1;
    params.bias_correction2 = 0.001;
    // both sides run the same number of updates so the outputs stay comparable
    const double r = time_ms([&] { k::reference::adamw_update(params, w_ref, grad, m_ref, v_ref); }, 5);
    const double p = time_ms([&] { k::parallel::adamw_update(params, w_par, grad, m_par, v_par); }, 5);
    row("adamw update 1M params", r, p, max_abs_diff(w_ref, w_par));
  }
  return 0;
}
