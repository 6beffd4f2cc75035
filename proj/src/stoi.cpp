// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Short-time objective intelligibility, following the reference MATLAB
// implementation and its common Python port step for step (including frame
// ranges that drop the final frame), so scores agree to float precision.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fft.hpp"
#include "duovoce/metrics.hpp"

namespace duovoce {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// np.hanning(n + 2)[1:-1]
std::vector<double> hanning_inner(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  }
  return w;
}

// Start offsets range(0, len - frame, hop).
std::vector<std::size_t> frame_starts(std::size_t len, std::size_t frame,
                                      std::size_t hop) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i + frame < len; i += hop) starts.push_back(i);
  return starts;
}

std::vector<double> overlap_add(const std::vector<std::vector<double>>& frames,
                                std::size_t hop) {
  if (frames.empty()) return {};
  const std::size_t len = frames[0].size();
  std::vector<double> out((frames.size() - 1) * hop + len, 0.0);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < len; ++i) out[f * hop + i] += frames[f][i];
  }
  return out;
}

void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const auto w = hanning_inner(kStoiFrame);
  const std::size_t hop = kStoiFrame / 2;
  const auto starts = frame_starts(x.size(), kStoiFrame, hop);
  std::vector<std::vector<double>> xf, yf;
  std::vector<double> energy;
  for (std::size_t s : starts) {
    std::vector<double> a(kStoiFrame), b(kStoiFrame);
    double e = 0.0;
    for (std::size_t i = 0; i < kStoiFrame; ++i) {
      a[i] = w[i] * x[s + i];
      b[i] = w[i] * y[s + i];
      e += a[i] * a[i];
    }
    energy.push_back(20.0 * std::log10(std::sqrt(e) + kEps));
    xf.push_back(std::move(a));
    yf.push_back(std::move(b));
  }
  if (energy.empty()) {
    throw std::invalid_argument("stoi: signal shorter than one analysis frame");
  }
  const double max_e = *std::max_element(energy.begin(), energy.end());
  std::vector<std::vector<double>> xk, yk;
  for (std::size_t f = 0; f < energy.size(); ++f) {
    if (max_e - kStoiDynRange - energy[f] < 0.0) {
      xk.push_back(std::move(xf[f]));
      yk.push_back(std::move(yf[f]));
    }
  }
  x = overlap_add(xk, hop);
  y = overlap_add(yk, hop);
}

// bands x frames of third-octave band magnitudes.
std::vector<std::vector<double>> band_envelopes(
    const std::vector<double>& x,
    const std::vector<std::pair<std::size_t, std::size_t>>& bands) {
  const auto w = hanning_inner(kStoiFrame);
  const auto starts = frame_starts(x.size(), kStoiFrame, kStoiFrame / 2);
  fft::RealFft plan(kStoiFft);
  std::vector<double> buf(kStoiFft);
  std::vector<std::complex<double>> spec(kStoiFft / 2 + 1);
  std::vector<std::vector<double>> out(bands.size(),
                                       std::vector<double>(starts.size()));
  for (std::size_t t = 0; t < starts.size(); ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < kStoiFrame; ++i) buf[i] = w[i] * x[starts[t] + i];
    plan.forward(buf.data(), spec.data());
    for (std::size_t b = 0; b < bands.size(); ++b) {
      double acc = 0.0;
      for (std::size_t k = bands[b].first; k < bands[b].second; ++k) {
        acc += std::norm(spec[k]);
      }
      out[b][t] = std::sqrt(acc);
    }
  }
  return out;
}

// Half-open bin ranges of the third-octave bands.
std::vector<std::pair<std::size_t, std::size_t>> third_octave_bands() {
  const std::size_t bins = kStoiFft / 2 + 1;
  auto nearest = [&](double freq) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(kStoiRate) * k / kStoiFft;
      const double d = (f - freq) * (f - freq);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  };
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  for (std::size_t k = 0; k < kStoiBands; ++k) {
    const double lo = kStoiMinFreq * std::pow(2.0, (2.0 * k - 1.0) / 6.0);
    const double hi = kStoiMinFreq * std::pow(2.0, (2.0 * k + 1.0) / 6.0);
    bands.emplace_back(nearest(lo), nearest(hi));
  }
  return bands;
}

double norm2(const double* v, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

}  // namespace

std::vector<double> resample_poly(const std::vector<double>& x, int up,
                                  int down) {
  if (up <= 0 || down <= 0) {
    throw std::invalid_argument("resample_poly: rates must be positive");
  }
  const int g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;

  // Octave's resample() anti-aliasing filter.
  const double rejection_db = 60.0;
  const double cutoff = 1.0 / (2.0 * std::max(up, down));
  const double roll_off = cutoff / 10.0;
  const long half =
      static_cast<long>(std::ceil((rejection_db - 8.0) / (28.714 * roll_off)));
  const double beta = 0.1102 * (rejection_db - 8.7);
  std::vector<double> h(2 * half + 1);
  const double i0_beta = std::cyl_bessel_i(0.0, beta);
  for (long i = 0; i <= 2 * half; ++i) {
    const double t = static_cast<double>(i - half);
    const double arg = 2.0 * cutoff * t;
    const double sinc =
        t == 0.0 ? 1.0
                 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = 2.0 * i / (2.0 * half) - 1.0;
    const double kaiser =
        std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
    h[i] = kaiser * 2.0 * up * cutoff * sinc;
  }
  const double total = std::accumulate(h.begin(), h.end(), 0.0);
  for (auto& v : h) v *= up / total;

  // Output m sits at filter index (m + pre_remove) * down - n * up - pre_pad.
  const long pre_pad = down - half % down;
  const long pre_remove = (half + pre_pad) / down;
  const long n_in = static_cast<long>(x.size());
  const long n_out = (n_in * up + down - 1) / down;
  std::vector<double> y(n_out, 0.0);
  for (long m = 0; m < n_out; ++m) {
    const long base = (m + pre_remove) * down - pre_pad;
    // Valid n: 0 <= base - n * up <= 2 * half.
    const long n_lo = base > 2 * half ? (base - 2 * half + up - 1) / up : 0;
    const long n_hi = std::min(n_in - 1, base >= 0 ? base / up : -1);
    double acc = 0.0;
    for (long n = n_lo; n <= n_hi; ++n) acc += x[n] * h[base - n * up];
    y[m] = acc;
  }
  return y;
}

double stoi(const Waveform& clean, const Waveform& processed) {
  if (clean.size() != processed.size()) {
    throw std::invalid_argument("stoi: length mismatch (" +
                                std::to_string(clean.size()) + " vs " +
                                std::to_string(processed.size()) + ")");
  }
  if (clean.sample_rate_hz != processed.sample_rate_hz) {
    throw std::invalid_argument("stoi: sample rate mismatch");
  }
  std::vector<double> x(clean.samples.begin(), clean.samples.end());
  std::vector<double> y(processed.samples.begin(), processed.samples.end());
  if (clean.sample_rate_hz != kStoiRate) {
    x = resample_poly(x, kStoiRate, clean.sample_rate_hz);
    y = resample_poly(y, kStoiRate, clean.sample_rate_hz);
  }
  remove_silent_frames(x, y);

  static const auto bands = third_octave_bands();
  const auto xt = band_envelopes(x, bands);
  const auto yt = band_envelopes(y, bands);
  const std::size_t frames = xt.empty() ? 0 : xt[0].size();
  if (frames < kStoiSegment) {
    throw std::invalid_argument(
        "stoi: only " + std::to_string(frames) +
        " frames remain after silence removal, need " +
        std::to_string(kStoiSegment));
  }

  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  const std::size_t n = kStoiSegment;
  double total = 0.0;
  std::size_t segments = 0;
  std::vector<double> xs(n), ys(n);
  for (std::size_t m = n; m <= frames; ++m, ++segments) {
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const double* xr = xt[b].data() + (m - n);
      const double* yr = yt[b].data() + (m - n);
      const double alpha = norm2(xr, n) / (norm2(yr, n) + kEps);
      double xmean = 0.0, ymean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        ys[i] = std::min(alpha * yr[i], xr[i] * (1.0 + clip));
        xs[i] = xr[i];
        xmean += xs[i];
        ymean += ys[i];
      }
      xmean /= n;
      ymean /= n;
      for (std::size_t i = 0; i < n; ++i) {
        xs[i] -= xmean;
        ys[i] -= ymean;
      }
      const double xn = norm2(xs.data(), n) + kEps;
      const double yn = norm2(ys.data(), n) + kEps;
      double corr = 0.0;
      for (std::size_t i = 0; i < n; ++i) corr += (ys[i] / yn) * (xs[i] / xn);
      total += corr;
    }
  }
  return total / static_cast<double>(segments * bands.size());
}

}  // namespace duovoce
