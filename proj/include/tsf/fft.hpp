#ifndef TSF_FFT_HPP
#define TSF_FFT_HPP

#include <complex>
#include <vector>

namespace tsf {

using cdouble = std::complex<double>;

/// Forward transform: X[k] = sum_t x[t] * exp(-2*pi*i*k*t/n).
/// Radix-2 iterative fast path when n is a power of two, naive O(n^2) otherwise.
std::vector<cdouble> dft(const std::vector<cdouble>& x);

/// Inverse transform, scaled by 1/n.
std::vector<cdouble> idft(const std::vector<cdouble>& x);

/// Always-naive O(n^2) evaluation; the oracle path for tests.
std::vector<cdouble> dft_naive(const std::vector<cdouble>& x, bool inverse);

bool is_power_of_two(std::size_t n);

} // namespace tsf

#endif // TSF_FFT_HPP
