// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "duovoce/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace duovoce {
namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T load_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

std::string path_str(const std::filesystem::path& p) { return p.string(); }

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WavError(WavErrorKind::kIo, "cannot open " + path_str(path));
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw WavError(WavErrorKind::kNotWav,
                   path_str(path) + " is not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const auto len = load_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || avail < 16) {
        throw WavError(WavErrorKind::kNotWav, "truncated fmt chunk");
      }
      format = load_le<std::uint16_t>(bytes.data() + body);
      channels = load_le<std::uint16_t>(bytes.data() + body + 2);
      rate = load_le<std::uint32_t>(bytes.data() + body + 4);
      bits = load_le<std::uint16_t>(bytes.data() + body + 14);
      if (format == kFormatExtensible && len >= 40 && avail >= 40) {
        format = load_le<std::uint16_t>(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min<std::size_t>(len, avail);
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt || data == nullptr) {
    throw WavError(WavErrorKind::kNotWav,
                   path_str(path) + " lacks fmt or data chunk");
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw WavError(WavErrorKind::kUnsupportedEncoding,
                   path_str(path) + ": unsupported encoding (format " +
                       std::to_string(format) + ", " + std::to_string(bits) +
                       " bits); expected 16-bit PCM or 32-bit float");
  }
  if (channels == 0 || rate == 0) {
    throw WavError(WavErrorKind::kNotWav, "invalid fmt chunk");
  }

  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  WavData out;
  out.sample_rate_hz = static_cast<int>(rate);
  out.channels.assign(channels, std::vector<float>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      out.channels[c][i] =
          pcm16 ? static_cast<float>(load_le<std::int16_t>(p)) / 32768.0f
                : load_le<float>(p);
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const WavData& data,
               SampleFormat format) {
  const std::size_t channels = data.channels.size();
  if (channels == 0 || channels > 0xFFFF) {
    throw std::invalid_argument("write_wav: bad channel count");
  }
  const std::size_t frames = data.channels.front().size();
  for (const auto& ch : data.channels) {
    if (ch.size() != frames) {
      throw std::invalid_argument("write_wav: channel length mismatch");
    }
  }
  const bool f32 = format == SampleFormat::kFloat32;
  const std::uint16_t bits = f32 ? 32 : 16;
  const std::size_t width = bits / 8;
  const std::uint32_t data_len =
      static_cast<std::uint32_t>(frames * channels * width);

  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  put_tag(out, "RIFF");
  put_le<std::uint32_t>(out, 36 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, f32 ? kFormatFloat : kFormatPcm);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.sample_rate_hz));
  put_le<std::uint32_t>(
      out, static_cast<std::uint32_t>(data.sample_rate_hz * channels * width));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels * width));
  put_le<std::uint16_t>(out, bits);
  put_tag(out, "data");
  put_le<std::uint32_t>(out, data_len);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float s = data.channels[c][i];
      if (f32) {
        put_le<float>(out, s);
      } else {
        const float clamped = std::clamp(s, -1.0f, 1.0f);
        const long q = std::lround(clamped * 32768.0f);
        put_le<std::int16_t>(
            out, static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw WavError(WavErrorKind::kIo, "cannot write " + path_str(path));
  }
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw WavError(WavErrorKind::kIo, "write failed for " + path_str(path));
  }
}

Waveform read_waveform(const std::filesystem::path& path,
                       bool allow_multichannel) {
  WavData d = read_wav(path);
  if (d.channels.size() != 1 && !allow_multichannel) {
    throw WavError(WavErrorKind::kChannelCount,
                   path_str(path) + ": expected 1 channel, found " +
                       std::to_string(d.channels.size()));
  }
  return Waveform{std::move(d.channels.front()), d.sample_rate_hz};
}

DualCapture read_capture(const std::filesystem::path& path) {
  WavData d = read_wav(path);
  if (d.channels.size() != 2) {
    throw WavError(WavErrorKind::kChannelCount,
                   path_str(path) + ": expected 2 channels (vib, mic), found " +
                       std::to_string(d.channels.size()));
  }
  return DualCapture{Waveform{std::move(d.channels[0]), d.sample_rate_hz},
                     Waveform{std::move(d.channels[1]), d.sample_rate_hz}};
}

void write_wav(const std::filesystem::path& path, const Waveform& w,
               SampleFormat format) {
  write_wav(path, WavData{w.sample_rate_hz, {w.samples}}, format);
}

void write_wav(const std::filesystem::path& path, const DualCapture& c,
               SampleFormat format) {
  validate(c);
  write_wav(path, WavData{c.mic.sample_rate_hz, {c.vib.samples, c.mic.samples}},
            format);
}

void validate(const Waveform& w) {
  if (w.sample_rate_hz <= 0) {
    throw std::invalid_argument("waveform sample rate must be positive");
  }
  for (float s : w.samples) {
    if (!std::isfinite(s)) {
      throw std::invalid_argument("waveform contains non-finite samples");
    }
  }
}

void validate(const DualCapture& c) {
  validate(c.vib);
  validate(c.mic);
  if (c.vib.size() != c.mic.size() ||
      c.vib.sample_rate_hz != c.mic.sample_rate_hz) {
    throw std::invalid_argument(
        "capture channels differ in length or sample rate");
  }
}

void require_canonical_rate(const Waveform& w) {
  if (w.sample_rate_hz != kCanonicalRate) {
    throw std::invalid_argument("expected 16000 Hz audio, got " +
                                std::to_string(w.sample_rate_hz) + " Hz");
  }
}

double rms(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (float s : samples) acc += static_cast<double>(s) * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

double peak(std::span<const float> samples) {
  double p = 0.0;
  for (float s : samples) p = std::max(p, std::abs(static_cast<double>(s)));
  return p;
}

Waveform peak_normalize(const Waveform& w, double target) {
  const double p = peak(w.samples);
  Waveform out = w;
  if (p == 0.0) return out;
  const double g = target / p;
  for (float& s : out.samples) s = static_cast<float>(s * g);
  return out;
}

}  // namespace duovoce
