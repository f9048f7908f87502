#pragma once

#include <cstddef>

namespace flexshift::detail {

// cols[(ch*k + ky)*k + kx][oy*wo + ox], zero outside the padded image.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                            ix < static_cast<std::ptrdiff_t>(w);
                        row[oy * wo + ox] = inside ? x[(ch * h + static_cast<std::size_t>(iy)) * w +
                                                       static_cast<std::size_t>(ix)]
                                                   : T(0);
                    }
                }
            }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        x[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                            row[oy * wo + ox];
                    }
                }
            }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// out[n,k] = in[k,n]
template <typename T>
void transpose(std::size_t k, std::size_t n, const T* in, T* out) {
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) out[j * k + p] = in[p * n + j];
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(std::size_t k, std::size_t m, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace flexshift::detail
