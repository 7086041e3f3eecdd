#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace lgpt::kernels {

// C[n,m] (+)= A[n,k] * B[k,m]
void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
          bool accumulate = false);
// C[n,k] (+)= A[n,m] * B[k,m]^T
void gemm_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k,
             bool accumulate = false);
// C[k,m] (+)= A[n,k]^T * B[n,m]
void gemm_at(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate = false);

double dot(const double* a, const double* b, std::size_t n);

// In-place radix-2 complex FFT. Size must be a power of two.
class Fft {
public:
    explicit Fft(std::size_t n);
    std::size_t size() const { return n_; }
    void forward(std::vector<std::complex<double>>& data) const;

private:
    std::size_t n_;
    std::vector<std::size_t> bitrev_;
    std::vector<std::complex<double>> twiddles_;
};

bool is_power_of_two(std::size_t n);

} // namespace lgpt::kernels
