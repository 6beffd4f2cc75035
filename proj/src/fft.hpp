// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace duovoce::fft {

// Real-input DFT of fixed size n backed by FFTW. Plans are created once per
// size under a lock. An instance holds scratch space, so give each thread
// its own.
class RealFft {
 public:
  explicit RealFft(std::size_t n);

  std::size_t size() const { return n_; }
  // in: n samples -> out: n/2 + 1 bins, X_k = sum_j x_j e^{-2 pi i jk/n}.
  void forward(const double* in, std::complex<double>* out) const;
  // Unnormalized inverse: out_j = sum over the full Hermitian spectrum, i.e.
  // n * irfft(in). Imaginary parts of bins 0 and n/2 are ignored.
  void inverse(const std::complex<double>* in, double* out) const;

 private:
  std::size_t n_;
  void* r2c_;
  void* c2r_;
  mutable std::vector<std::complex<double>> scratch_;
};

// Linear convolution via FFT; result length a.size() + b.size() - 1.
std::vector<double> convolve(const std::vector<double>& a,
                             const std::vector<double>& b);

}  // namespace duovoce::fft
