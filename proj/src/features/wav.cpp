#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "m2f/errors.hpp"
#include "m2f/signal.hpp"

namespace m2f::audio {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open WAV file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ValidationError(where + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = read_u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) throw ValidationError(where + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!data || rate == 0) throw ValidationError(where + ": missing fmt or data chunk");
  if (channels != 1) throw ValidationError(where + ": only mono audio is supported");

  AudioClip clip;
  clip.sample_rate = rate;
  if (format == 1 && bits == 16) {
    clip.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      clip.samples[i] = static_cast<std::int16_t>(read_u16(data + 2 * i)) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    clip.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      const std::uint32_t raw = read_u32(data + 4 * i);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      clip.samples[i] = f;
    }
  } else {
    throw ValidationError(where + ": unsupported sample format (need 16-bit PCM or 32-bit float)");
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavFormat format) {
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * bits / 8);
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, format == WavFormat::Pcm16 ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * bits / 8);
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_size);
  for (double s : clip.samples) {
    if (format == WavFormat::Pcm16) {
      const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace m2f::audio
