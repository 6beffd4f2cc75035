// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <stdexcept>

namespace duovoce::fft {
namespace {

struct Plans {
  fftw_plan r2c;
  fftw_plan c2r;
};

std::mutex g_plan_mutex;

Plans plans_for(std::size_t n) {
  static std::map<std::size_t, Plans> cache;
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(n);
  std::vector<fftw_complex> cplx(n / 2 + 1);
  const int len = static_cast<int>(n);
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  Plans p{fftw_plan_dft_r2c_1d(len, real.data(), cplx.data(), flags),
          fftw_plan_dft_c2r_1d(len, cplx.data(), real.data(), flags)};
  if (p.r2c == nullptr || p.c2r == nullptr) {
    throw std::runtime_error("FFTW planning failed for size " +
                             std::to_string(n));
  }
  cache.emplace(n, p);
  return p;
}

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n), scratch_(n / 2 + 1) {
  if (n < 2) throw std::invalid_argument("FFT size must be at least 2");
  const Plans p = plans_for(n);
  r2c_ = p.r2c;
  c2r_ = p.c2r;
}

void RealFft::forward(const double* in, std::complex<double>* out) const {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(r2c_), const_cast<double*>(in),
                       reinterpret_cast<fftw_complex*>(out));
}

void RealFft::inverse(const std::complex<double>* in, double* out) const {
  // c2r overwrites its input.
  std::copy(in, in + scratch_.size(), scratch_.begin());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(c2r_),
                       reinterpret_cast<fftw_complex*>(scratch_.data()), out);
}

std::vector<double> convolve(const std::vector<double>& a,
                             const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 2;
  while (n < out_len) n <<= 1;
  RealFft fft(n);
  std::vector<double> pa(n, 0.0), pb(n, 0.0);
  std::copy(a.begin(), a.end(), pa.begin());
  std::copy(b.begin(), b.end(), pb.begin());
  std::vector<std::complex<double>> fa(n / 2 + 1), fb(n / 2 + 1);
  fft.forward(pa.data(), fa.data());
  fft.forward(pb.data(), fb.data());
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  std::vector<double> out(n);
  fft.inverse(fa.data(), out.data());
  out.resize(out_len);
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

}  // namespace duovoce::fft
