#pragma once

// Shared internals for the encoder and classifier-head translation units:
// initialization rules, layer-norm and GELU kernels, dropout with cached
// masks. Not installed.

#include <cmath>
#include <cstdint>
#include <string>

#include "heartbert/rng.hpp"
#include "heartbert/tensor.hpp"

namespace heartbert::detail {

// Initialization: layer-norm gains 1, shifts and biases 0, LSTM tensors
// U(-1/sqrt(hidden), 1/sqrt(hidden)), everything else truncated normal 0.02.
template <typename T>
void init_named_tensor(Tensor<T>& t, const std::string& name, uint64_t seed, int lstm_hidden) {
    auto ends_with = [&](const char* suffix) {
        std::string s(suffix);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".gamma")) {
        t.fill(T(1));
        return;
    }
    if (name.rfind("head.lstm.", 0) == 0) {
        auto rng = Rng::substream(seed, std::string("init:") + name);
        double bound = 1.0 / std::sqrt(static_cast<double>(lstm_hidden));
        for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
        return;
    }
    if (ends_with(".beta") || ends_with(".bias")) {
        t.fill(T(0));
        return;
    }
    auto rng = Rng::substream(seed, std::string("init:") + name);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(0.02));
}

inline constexpr double kLayerNormEps = 1e-12;

template <typename T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* mean_out,
                        T* rstd_out, size_t rows, size_t width) {
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * width;
        T* yr = y + r * width;
        double sum = 0.0;
        for (size_t j = 0; j < width; ++j) sum += static_cast<double>(xr[j]);
        double mean = sum / static_cast<double>(width);
        double var = 0.0;
        for (size_t j = 0; j < width; ++j) {
            double d = static_cast<double>(xr[j]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        mean_out[r] = static_cast<T>(mean);
        rstd_out[r] = static_cast<T>(rstd);
        for (size_t j = 0; j < width; ++j) {
            double xhat = (static_cast<double>(xr[j]) - mean) * rstd;
            yr[j] = static_cast<T>(static_cast<double>(gamma[j]) * xhat + static_cast<double>(beta[j]));
        }
    }
}

// dx is written, dgamma/dbeta accumulate (either may be null).
template <typename T>
void layer_norm_backward(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy,
                         T* dx, T* dgamma, T* dbeta, size_t rows, size_t width) {
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * width;
        const T* dyr = dy + r * width;
        T* dxr = dx + r * width;
        double mu = static_cast<double>(mean[r]);
        double rs = static_cast<double>(rstd[r]);
        double m1 = 0.0, m2 = 0.0;
        for (size_t j = 0; j < width; ++j) {
            double xhat = (static_cast<double>(xr[j]) - mu) * rs;
            double dxhat = static_cast<double>(dyr[j]) * static_cast<double>(gamma[j]);
            m1 += dxhat;
            m2 += dxhat * xhat;
            if (dgamma) dgamma[j] += static_cast<T>(static_cast<double>(dyr[j]) * xhat);
            if (dbeta) dbeta[j] += dyr[j];
        }
        m1 /= static_cast<double>(width);
        m2 /= static_cast<double>(width);
        for (size_t j = 0; j < width; ++j) {
            double xhat = (static_cast<double>(xr[j]) - mu) * rs;
            double dxhat = static_cast<double>(dyr[j]) * static_cast<double>(gamma[j]);
            dxr[j] = static_cast<T>(rs * (dxhat - m1 - xhat * m2));
        }
    }
}

template <typename T>
T gelu(T x) {
    return static_cast<T>(0.5 * static_cast<double>(x) *
                          (1.0 + std::erf(static_cast<double>(x) / std::sqrt(2.0))));
}

template <typename T>
T gelu_grad(T x) {
    double xd = static_cast<double>(x);
    double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
    double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
    return static_cast<T>(cdf + xd * pdf);
}

// Inverted dropout in place; mask records kept elements.
template <typename T>
void dropout_forward(T* x, size_t n, double p, Rng& rng, Tensor<uint8_t>& mask_out) {
    mask_out = Tensor<uint8_t>({n});
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (size_t i = 0; i < n; ++i) {
        bool keep = rng.uniform() >= p;
        mask_out[i] = keep ? 1 : 0;
        x[i] = keep ? x[i] * scale : T(0);
    }
}

template <typename T>
void dropout_backward(T* dx, const Tensor<uint8_t>& mask, double p, size_t n,
                      size_t mask_offset = 0) {
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (size_t i = 0; i < n; ++i) dx[i] = mask[mask_offset + i] ? dx[i] * scale : T(0);
}

template <typename T>
void add_bias_rows(T* y, const T* bias, size_t rows, size_t width) {
    for (size_t r = 0; r < rows; ++r) {
        T* yr = y + r * width;
        for (size_t j = 0; j < width; ++j) yr[j] += bias[j];
    }
}

template <typename T>
void accumulate_colsum(const T* d, T* out, size_t rows, size_t width) {
    for (size_t r = 0; r < rows; ++r) {
        const T* dr = d + r * width;
        for (size_t j = 0; j < width; ++j) out[j] += dr[j];
    }
}

}  // namespace heartbert::detail
