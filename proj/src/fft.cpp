#include "tsf/fft.hpp"

#include "tsf/common.hpp"

#include <cmath>

namespace tsf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void fft_radix2_inplace(std::vector<cdouble>& a, bool inverse) {
    const std::size_t n = a.size();
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const cdouble wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cdouble w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const cdouble u = a[i + j];
                const cdouble v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

} // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<cdouble> dft_naive(const std::vector<cdouble>& x, bool inverse) {
    const std::size_t n = x.size();
    if (n == 0) throw NumericError("dft: empty sequence");
    std::vector<cdouble> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        cdouble acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = sign * kTwoPi * static_cast<double>(k) *
                               static_cast<double>(t) / static_cast<double>(n);
            acc += x[t] * cdouble(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    if (inverse) {
        for (auto& v : out) v /= static_cast<double>(n);
    }
    return out;
}

std::vector<cdouble> dft(const std::vector<cdouble>& x) {
    const std::size_t n = x.size();
    if (n == 0) throw NumericError("dft: empty sequence");
    if (!is_power_of_two(n)) return dft_naive(x, false);
    std::vector<cdouble> a = x;
    fft_radix2_inplace(a, false);
    return a;
}

std::vector<cdouble> idft(const std::vector<cdouble>& x) {
    const std::size_t n = x.size();
    if (n == 0) throw NumericError("idft: empty sequence");
    if (!is_power_of_two(n)) return dft_naive(x, true);
    std::vector<cdouble> a = x;
    fft_radix2_inplace(a, true);
    for (auto& v : a) v /= static_cast<double>(n);
    return a;
}

} // namespace tsf
