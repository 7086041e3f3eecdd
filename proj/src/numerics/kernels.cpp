#include "lgpt/numerics/kernels.hpp"

#include "lgpt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lgpt::kernels {

void gemm(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t n,
          std::size_t k, std::size_t m, bool accumulate) {
    if (!accumulate) std::fill(c, c + n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void gemm_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k,
             bool accumulate) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double v = dot(arow, b + p * m, m);
            crow[p] = accumulate ? crow[p] + v : v;
        }
    }
}

void gemm_at(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t n,
             std::size_t k, std::size_t m, bool accumulate) {
    if (!accumulate) std::fill(c, c + k * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

Fft::Fft(std::size_t n) : n_(n), bitrev_(n), twiddles_(n / 2) {
    if (!is_power_of_two(n)) throw Error("FFT size must be a power of two, got " + std::to_string(n));
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) {
            if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        }
        bitrev_[i] = r;
    }
    for (std::size_t i = 0; i < n / 2; ++i) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        twiddles_[i] = {std::cos(angle), std::sin(angle)};
    }
}

void Fft::forward(std::vector<std::complex<double>>& data) const {
    if (data.size() != n_) throw Error("FFT input has wrong length");
    for (std::size_t i = 0; i < n_; ++i) {
        if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n_ / len;
        for (std::size_t start = 0; start < n_; start += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const auto t = twiddles_[j * step] * data[start + j + half];
                const auto u = data[start + j];
                data[start + j] = u + t;
                data[start + j + half] = u - t;
            }
        }
    }
}

} // namespace lgpt::kernels
