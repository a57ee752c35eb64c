#include "m2f/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "m2f/errors.hpp"
#include "m2f/kernels.hpp"

namespace m2f::audio {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

namespace {

void validate_stft(const AudioClip& clip, const StftConfig& cfg) {
  if (cfg.frame_length == 0 || cfg.hop == 0 || cfg.fft_size < cfg.frame_length) {
    throw std::invalid_argument("invalid STFT configuration");
  }
  if (clip.sample_rate <= 0.0) throw std::invalid_argument("sample rate must be positive");
  if (clip.samples.size() < cfg.frame_length) {
    throw std::invalid_argument("clip of " + std::to_string(clip.samples.size()) +
                                " samples is shorter than one frame (" +
                                std::to_string(cfg.frame_length) + ")");
  }
}

}  // namespace

Matrix stft_power(const AudioClip& clip, const StftConfig& cfg) {
  validate_stft(clip, cfg);
  Matrix out;
  out.rows = cfg.frame_count(clip.samples.size());
  out.cols = cfg.bins();
  out.values.resize(out.rows * out.cols);
  const auto window = hann_window(cfg.frame_length);
  kernels::parallel::stft_power({cfg.frame_length, cfg.hop, cfg.fft_size}, clip.samples, window,
                                out.values);
  return out;
}

Matrix stft_magnitude(const AudioClip& clip, const StftConfig& cfg) {
  Matrix m = stft_power(clip, cfg);
  for (auto& v : m.values) v = std::sqrt(v);
  return m;
}

Matrix mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate, double f_min,
                      double f_max) {
  if (f_max == 0.0) f_max = sample_rate / 2.0;
  if (n_mels == 0 || fft_size < 2 || sample_rate <= 0.0) {
    throw std::invalid_argument("mel_filterbank: invalid size or sample rate");
  }
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw std::invalid_argument("mel_filterbank: need 0 <= f_min < f_max <= Nyquist, got [" +
                                std::to_string(f_min) + ", " + std::to_string(f_max) + "]");
  }
  const std::size_t bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }

  Matrix fb{n_mels, bins, std::vector<double>(n_mels * bins, 0.0)};
  const double bin_hz = sample_rate / static_cast<double>(fft_size);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double w = std::max(0.0, std::min((f - lo) / (centre - lo), (hi - f) / (hi - centre)));
      fb.values[m * bins + k] = w;
      any = any || w > 0.0;
    }
    if (!any) {
      const auto nearest = static_cast<std::size_t>(std::lround(centre / bin_hz));
      fb.values[m * bins + std::min(nearest, bins - 1)] = 1.0;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
  const Matrix power = stft_power(clip, cfg.stft);
  const Matrix fb = mel_filterbank(cfg.n_mels, cfg.stft.fft_size, clip.sample_rate, cfg.f_min, cfg.f_max);
  MelSpectrogram spec;
  spec.frame_length = cfg.stft.frame_length;
  spec.hop = cfg.stft.hop;
  spec.n_mels = cfg.n_mels;
  spec.values = {power.rows, cfg.n_mels, std::vector<double>(power.rows * cfg.n_mels)};
  kernels::parallel::apply_filterbank(power.rows, power.cols, cfg.n_mels, power.values, fb.values,
                                      spec.values.values);
  return spec;
}

double signal_power(const std::vector<double>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return acc / static_cast<double>(samples.size());
}

AudioClip awgn_augment(const AudioClip& clip, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0.0) return clip;
  if (std::isnan(snr_db)) throw std::invalid_argument("awgn_augment: SNR is NaN");
  const double power = signal_power(clip.samples);
  if (!(power > 0.0)) throw std::invalid_argument("awgn_augment: clip has zero signal power");
  const double noise_power = power / std::pow(10.0, snr_db / 10.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(noise_power));
  AudioClip out = clip;
  for (auto& s : out.samples) s += noise(rng);
  return out;
}

void write_spectrogram_csv(const std::filesystem::path& path, const MelSpectrogram& spec) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  os.precision(17);
  os << "frame";
  for (std::size_t m = 0; m < spec.values.cols; ++m) os << ",mel_" << m;
  os << '\n';
  for (std::size_t f = 0; f < spec.values.rows; ++f) {
    os << f;
    for (std::size_t m = 0; m < spec.values.cols; ++m) os << ',' << spec.values.at(f, m);
    os << '\n';
  }
}

}  // namespace m2f::audio
