// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Helpers shared by the unit tests and the acceptance binary.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "duovoce/audio_io.hpp"
#include "duovoce/random.hpp"

namespace duovoce::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^
            static_cast<std::uint64_t>(
                std::filesystem::file_time_type::clock::now()
                    .time_since_epoch()
                    .count()));
    path_ = std::filesystem::temp_directory_path() /
            ("duovoce_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline Waveform random_waveform(std::size_t n, std::uint64_t seed,
                                double amplitude = 0.5) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = static_cast<float>(rng.uniform(-amplitude, amplitude));
  return w;
}

inline Waveform sine(double freq_hz, std::size_t n, double amplitude = 1.0,
                     int rate = kCanonicalRate) {
  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / rate));
  }
  return w;
}

// Closed-form STOI fixture signals; tools/stoi_reference.py generates the
// same pairs and scores them with pystoi.
namespace stoi_fixture {

inline constexpr double kSeconds = 1.5;

inline std::vector<double> lcg_uniform(std::uint64_t seed, std::size_t n) {
  std::vector<double> out(n);
  std::uint64_t state = seed;
  for (auto& v : out) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    v = static_cast<double>(state >> 11) * (1.0 / 9007199254740992.0);
  }
  return out;
}

inline std::vector<double> clean(int index) {
  const auto n = static_cast<std::size_t>(kCanonicalRate * kSeconds);
  const double f0 = 110.0 + 15.0 * index;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kCanonicalRate;
    const double vibrato = 1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * 3.0 * t);
    double acc = 0.0;
    for (int k = 0; k < 5; ++k) {
      acc += std::sin(2.0 * std::numbers::pi * f0 * (k + 1) * t * vibrato) /
             (k + 1);
    }
    double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * 2.0 * t);
    if (t >= 0.6 && t < 0.8) env = 0.0;
    x[i] = 0.1 * env * acc;
  }
  return x;
}

inline std::vector<double> degraded(const std::vector<double>& c, int index,
                                    double snr_db) {
  auto noise = lcg_uniform(1000 + index, c.size());
  double ec = 0.0, en = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    noise[i] -= 0.5;
    ec += c[i] * c[i];
    en += noise[i] * noise[i];
  }
  const double g = std::sqrt(ec / en) * std::pow(10.0, -snr_db / 20.0);
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i] + g * noise[i];
  return out;
}

// Independent noise standing in for the processed signal.
inline std::vector<double> noise_only(int index, std::size_t n) {
  auto x = lcg_uniform(2000 + index, n);
  for (auto& v : x) v = 0.1 * (v - 0.5);
  return x;
}

inline Waveform to_waveform(const std::vector<double>& x) {
  Waveform w;
  w.samples.assign(x.begin(), x.end());
  return w;
}

}  // namespace stoi_fixture

}  // namespace duovoce::testing
