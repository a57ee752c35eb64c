#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "m2f/kernels.hpp"
#include "m2f/signal.hpp"
#include "oracles.hpp"

using namespace m2f::audio;

namespace {

AudioClip sine(double hz, double seconds, double amplitude = 0.5) {
  AudioClip c;
  c.samples.resize(static_cast<std::size_t>(seconds * c.sample_rate));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / c.sample_rate);
  }
  return c;
}

AudioClip noise_clip(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AudioClip c;
  c.samples.resize(n);
  for (auto& s : c.samples) s = u(rng);
  return c;
}

}  // namespace

TEST_CASE("stft_magnitude examples") {
  AudioClip zero;
  zero.samples.assign(1600, 0.0);
  for (double v : stft_magnitude(zero).values) CHECK(v == 0.0);

  AudioClip dc;
  dc.samples.assign(1600, 0.3);
  const Matrix m = stft_magnitude(dc);
  for (std::size_t f = 0; f < m.rows; ++f) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < m.cols; ++k) if (m.at(f, k) > m.at(f, best)) best = k;
    CHECK(best == 0);
  }

  const Matrix tone = stft_magnitude(sine(1000.0, 0.25));
  const auto oracle = m2f::testing::naive_power_spectrogram(sine(1000.0, 0.25).samples, 400, 160, 512);
  for (std::size_t f = 0; f < tone.rows; ++f) {
    std::size_t best = 0, oracle_best = 0;
    for (std::size_t k = 1; k < tone.cols; ++k) {
      if (tone.at(f, k) > tone.at(f, best)) best = k;
      if (oracle[f][k] > oracle[f][oracle_best]) oracle_best = k;
    }
    CHECK(best == 32);
    CHECK(oracle_best == 32);
  }

  AudioClip short_clip;
  short_clip.samples.assign(399, 0.1);
  CHECK_THROWS_AS(stft_magnitude(short_clip), std::invalid_argument);
}

TEST_CASE("stft kernels agree") {
  const AudioClip clip = noise_clip(2000, 3);
  const m2f::kernels::StftShape s{400, 160, 512};
  const auto window = hann_window(400);
  const std::size_t n = s.frames(clip.samples.size()) * s.bins();
  std::vector<double> a(n), b(n);
  m2f::kernels::reference::stft_power(s, clip.samples, window, a);
  m2f::kernels::parallel::stft_power(s, clip.samples, window, b);
  for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
}

TEST_CASE("mel_filterbank construction") {
  const Matrix fb = mel_filterbank();
  REQUIRE(fb.rows == 128);
  REQUIRE(fb.cols == 257);
  double previous_centre = -1.0;
  for (std::size_t m = 0; m < fb.rows; ++m) {
    std::size_t first = fb.cols, last = 0;
    for (std::size_t k = 0; k < fb.cols; ++k) {
      CHECK(fb.at(m, k) >= 0.0);
      if (fb.at(m, k) > 0.0) {
        first = std::min(first, k);
        last = k;
      }
    }
    REQUIRE(first <= last);
    // contiguous support, rising then falling
    bool falling = false;
    for (std::size_t k = first; k <= last; ++k) {
      CHECK(fb.at(m, k) > 0.0);
      if (k > first && fb.at(m, k) < fb.at(m, k - 1)) falling = true;
      if (falling && k > first) CHECK(fb.at(m, k) <= fb.at(m, k - 1));
    }
    const double centre = mel_to_hz(hz_to_mel(8000.0) * static_cast<double>(m + 1) / 129.0);
    CHECK(centre > previous_centre);
    previous_centre = centre;
  }

  const auto expected_peaks = m2f::testing::mel_peak_bins(128, 512, 16000.0);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < fb.cols; ++k) if (fb.at(m, k) > fb.at(m, best)) best = k;
    CHECK(best == expected_peaks[m]);
  }

  CHECK_THROWS_AS(mel_filterbank(128, 512, 16000.0, 4000.0, 3000.0), std::invalid_argument);
  CHECK_THROWS_AS(mel_filterbank(128, 512, 16000.0, 0.0, 9000.0), std::invalid_argument);
  CHECK_THROWS_AS(mel_filterbank(0), std::invalid_argument);
}

TEST_CASE("mel_spectrogram examples") {
  AudioClip zero;
  zero.samples.assign(4000, 0.0);
  for (double v : mel_spectrogram(zero).values.values) CHECK(v == 0.0);

  const AudioClip clip = noise_clip(4000, 11);
  AudioClip doubled = clip;
  for (auto& s : doubled.samples) s *= 2.0;
  const auto a = mel_spectrogram(clip), b = mel_spectrogram(doubled);
  for (std::size_t i = 0; i < a.values.values.size(); ++i)
    CHECK(b.values.values[i] == doctest::Approx(4.0 * a.values.values[i]).epsilon(1e-10));

  const auto spec = mel_spectrogram(sine(1000.0, 0.5));
  CHECK(spec.n_mels == 128);
  const Matrix fb = mel_filterbank();
  for (std::size_t f = 0; f < spec.frames(); ++f) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < 128; ++m) if (spec.values.at(f, m) > spec.values.at(f, best)) best = m;
    CHECK(fb.at(best, 32) > 0.0);  // dominant band covers the 1 kHz bin
  }
}

TEST_CASE("mel_spectrogram matches the naive DFT oracle") {
  const Matrix fb = mel_filterbank();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const AudioClip clip = noise_clip(2400 + seed * 37, seed);
    const auto spec = mel_spectrogram(clip);
    const double err = m2f::testing::mel_relative_error(spec.values.values, clip.samples, fb.values, 128);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("frame count formula and trailing-sample invariance") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(400, 12000);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = len(rng);
    AudioClip c;
    c.samples.assign(n, 0.01);
    CHECK(stft_magnitude(c).rows == 1 + (n - 400) / 160);
  }

  const AudioClip base = noise_clip(400 + 160 * 9, 21);  // ends exactly on a frame
  const auto reference = mel_spectrogram(base);
  for (std::size_t extra : {1, 80, 159}) {
    AudioClip longer = base;
    for (std::size_t i = 0; i < extra; ++i) longer.samples.push_back(0.5);
    CHECK(mel_spectrogram(longer).values.values == reference.values.values);
  }
}

TEST_CASE("awgn_augment") {
  const AudioClip clip = sine(440.0, 1.0);
  CHECK(awgn_augment(clip, kNoNoise, 1).samples == clip.samples);

  for (double snr : {0.0, 10.0, 20.0}) {
    const AudioClip noisy = awgn_augment(clip, snr, 42);
    std::vector<double> noise(clip.samples.size());
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = noisy.samples[i] - clip.samples[i];
    const double realized = 10.0 * std::log10(signal_power(clip.samples) / signal_power(noise));
    CHECK(std::abs(realized - snr) < 0.5);
  }
  CHECK(awgn_augment(clip, 5.0, 3).samples == awgn_augment(clip, 5.0, 3).samples);
  CHECK(awgn_augment(clip, 5.0, 3).samples != awgn_augment(clip, 5.0, 4).samples);

  AudioClip silent;
  silent.samples.assign(100, 0.0);
  CHECK_THROWS_AS(awgn_augment(silent, 10.0, 1), std::invalid_argument);
  CHECK(awgn_augment(silent, kNoNoise, 1).samples == silent.samples);
}

TEST_CASE("wav round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "m2f_wav_test";
  std::filesystem::create_directories(dir);
  const AudioClip clip = sine(300.0, 0.1, 0.7);

  write_wav(dir / "f.wav", clip, WavFormat::Float32);
  const AudioClip f = read_wav(dir / "f.wav");
  CHECK(f.sample_rate == 16000.0);
  REQUIRE(f.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < f.samples.size(); ++i)
    CHECK(f.samples[i] == static_cast<double>(static_cast<float>(clip.samples[i])));

  write_wav(dir / "p.wav", clip, WavFormat::Pcm16);
  const AudioClip p = read_wav(dir / "p.wav");
  REQUIRE(p.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < p.samples.size(); ++i) CHECK(std::abs(p.samples[i] - clip.samples[i]) <= 0.5 / 32768.0 + 1e-12);

  CHECK_THROWS(read_wav(dir / "missing.wav"));
  std::filesystem::remove_all(dir);
}
