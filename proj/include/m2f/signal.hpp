#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

namespace m2f::audio {

struct AudioClip {
  std::vector<double> samples;  // nominally in [-1, 1]
  double sample_rate = 16000.0;
};

// Dense row-major matrix without gradient tracking.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct StftConfig {
  std::size_t frame_length = 400;  // 25 ms at 16 kHz
  std::size_t hop = 160;           // 10 ms
  std::size_t fft_size = 512;

  std::size_t bins() const { return fft_size / 2 + 1; }
  // No centering or padding: only complete frames are produced.
  std::size_t frame_count(std::size_t samples) const {
    return samples < frame_length ? 0 : 1 + (samples - frame_length) / hop;
  }
};

struct MelConfig {
  StftConfig stft;
  std::size_t n_mels = 128;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 means sample_rate / 2
};

struct MelSpectrogram {
  Matrix values;  // frames x n_mels, power domain
  std::size_t frame_length = 400;
  std::size_t hop = 160;
  std::size_t n_mels = 128;

  std::size_t frames() const { return values.rows; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

// frames x (fft_size/2 + 1) magnitudes of the Hann-windowed frames,
// each zero-padded from frame_length to fft_size.
Matrix stft_magnitude(const AudioClip& clip, const StftConfig& cfg = {});
Matrix stft_power(const AudioClip& clip, const StftConfig& cfg = {});

// n_mels x (fft_size/2 + 1) triangular filters with centres uniformly spaced
// on the mel scale. A filter too narrow to cover any bin puts unit weight on
// the bin nearest its centre.
Matrix mel_filterbank(std::size_t n_mels = 128, std::size_t fft_size = 512,
                      double sample_rate = 16000.0, double f_min = 0.0, double f_max = 0.0);

// Filterbank applied to the power spectrogram.
MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg = {});

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

// Adds white gaussian noise so that signal power / noise power = 10^(snr_db/10).
// snr_db == kNoNoise returns the clip unchanged.
AudioClip awgn_augment(const AudioClip& clip, double snr_db, std::uint64_t seed);

double signal_power(const std::vector<double>& samples);

enum class WavFormat { Pcm16, Float32 };

// Mono WAV, 16-bit PCM or 32-bit IEEE float.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               WavFormat format = WavFormat::Pcm16);

void write_spectrogram_csv(const std::filesystem::path& path, const MelSpectrogram& spec);

}  // namespace m2f::audio
