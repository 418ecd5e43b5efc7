#include "vvv/dsp.hpp"

#include <cmath>
#include <numbers>

#include "vvv/errors.hpp"

namespace vvv::dsp {

namespace {
constexpr double kPi = std::numbers::pi;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_radix2(std::vector<std::complex<double>>& buf) {
  const std::size_t n = buf.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ValueError("fft size must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = buf[i + k];
        std::complex<double> v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<std::complex<double>> spectrum(std::span<const double> frame, std::size_t nfft) {
  if (nfft < frame.size() || nfft == 0 || (nfft & (nfft - 1)) != 0)
    throw ValueError("nfft must be a power of two >= frame length");
  std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = {frame[i], 0.0};
  fft_radix2(buf);
  buf.resize(nfft / 2 + 1);
  return buf;
}

std::vector<double> magnitudes(const std::vector<std::complex<double>>& spec) {
  std::vector<double> out(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) out[i] = std::abs(spec[i]);
  return out;
}

std::vector<double> power(const std::vector<std::complex<double>>& spec) {
  std::vector<double> out(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i)
    out[i] = spec[i].real() * spec[i].real() + spec[i].imag() * spec[i].imag();
  return out;
}

std::vector<double> hamming_window(std::size_t length) {
  if (length < 2) throw ValueError("window length must be >= 2");
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                  static_cast<double>(length - 1));
  return w;
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(int num_filters, std::size_t nfft,
                                                int sample_rate, double low_hz, double high_hz) {
  if (num_filters < 1) throw ValueError("need at least one mel filter");
  if (high_hz <= low_hz) throw ValueError("mel band edges out of order");
  if (high_hz > sample_rate / 2.0 + 1e-9) throw ValueError("mel band exceeds Nyquist");
  const std::size_t bins = nfft / 2 + 1;
  const double mel_lo = hz_to_mel(low_hz);
  const double mel_hi = hz_to_mel(high_hz);
  // num_filters + 2 edge points, mel-uniform
  std::vector<double> edges(static_cast<std::size_t>(num_filters) + 2);
  for (std::size_t m = 0; m < edges.size(); ++m)
    edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) /
                                      static_cast<double>(num_filters + 1));
  std::vector<std::vector<double>> bank(static_cast<std::size_t>(num_filters),
                                        std::vector<double>(bins, 0.0));
  for (int m = 0; m < num_filters; ++m) {
    const double f0 = edges[static_cast<std::size_t>(m)];
    const double f1 = edges[static_cast<std::size_t>(m) + 1];
    const double f2 = edges[static_cast<std::size_t>(m) + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
      double w = 0.0;
      if (f > f0 && f < f2) {
        w = f <= f1 ? (f - f0) / (f1 - f0) : (f2 - f) / (f2 - f1);
      }
      bank[static_cast<std::size_t>(m)][k] = w;
    }
  }
  return bank;
}

std::vector<double> dct2_ortho(std::span<const double> x, int num_out) {
  const std::size_t n = x.size();
  if (n == 0) throw ValueError("dct input empty");
  if (num_out < 1 || static_cast<std::size_t>(num_out) > n)
    throw ValueError("dct output count out of range");
  std::vector<double> out(static_cast<std::size_t>(num_out));
  const double scale0 = std::sqrt(1.0 / static_cast<double>(n));
  const double scale = std::sqrt(2.0 / static_cast<double>(n));
  for (int k = 0; k < num_out; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::cos(kPi * k * (2.0 * static_cast<double>(i) + 1.0) /
                             (2.0 * static_cast<double>(n)));
    out[static_cast<std::size_t>(k)] = (k == 0 ? scale0 : scale) * acc;
  }
  return out;
}

}  // namespace vvv::dsp
