#pragma once
// Spectral primitives behind the MFCC frontend: radix-2 FFT, Hamming window,
// triangular mel filterbank, orthonormal DCT-II.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace vvv::dsp {

std::size_t next_pow2(std::size_t n);

// In-place iterative radix-2 Cooley-Tukey; buf.size() must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& buf);

// Real input zero-padded to nfft (power of two, >= frame.size()).
// Returns the one-sided complex spectrum, bins 0..nfft/2.
std::vector<std::complex<double>> spectrum(std::span<const double> frame, std::size_t nfft);

std::vector<double> magnitudes(const std::vector<std::complex<double>>& spec);
std::vector<double> power(const std::vector<std::complex<double>>& spec);

// 0.54 - 0.46 cos(2*pi*i/(L-1)), L >= 2.
std::vector<double> hamming_window(std::size_t length);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// num_filters rows of nfft/2+1 weights. Triangles are mel-uniform between
// low_hz and high_hz, evaluated at exact bin frequencies (no bin snapping),
// so adjacent triangles always overlap and no band goes dead.
std::vector<std::vector<double>> mel_filterbank(int num_filters, std::size_t nfft,
                                                int sample_rate, double low_hz, double high_hz);

// Orthonormal DCT-II of x, truncated to num_out coefficients.
std::vector<double> dct2_ortho(std::span<const double> x, int num_out);

}  // namespace vvv::dsp
