#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "clr/autograd.hpp"
#include "clr/dataset.hpp"
#include "clr/rng.hpp"
#include "clr/tensor.hpp"

namespace testing {

inline clr::Tensor random_tensor(clr::Shape shape, clr::Rng& rng, double lo = -1.0, double hi = 1.0) {
    clr::Tensor t(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Values bounded away from zero so relu kinks stay out of finite-difference reach.
inline clr::Tensor away_from_zero(clr::Shape shape, clr::Rng& rng) {
    clr::Tensor t(std::move(shape));
    for (auto& v : t.data) {
        double m = rng.uniform(0.1, 1.0);
        v = static_cast<float>(rng.bernoulli(0.5) ? m : -m);
    }
    return t;
}

// Direct loop convolution in double.
inline std::vector<double> naive_conv(const clr::Tensor& x, const clr::Tensor& k, std::size_t stride,
                                      std::size_t pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(N * F * Ho * Wo, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t a = 0; a < kh; ++a)
                            for (std::size_t b = 0; b < kw; ++b) {
                                long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                                long q = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                                s += double(x.data[((n * C + c) * H + r) * W + q]) *
                                     double(k.data[((f * C + c) * kh + a) * kw + b]);
                            }
                    out[((n * F + f) * Ho + i) * Wo + j] = s;
                }
    return out;
}

inline clr::Dataset tiny_dataset(std::size_t n, std::size_t classes, std::array<std::size_t, 3> shape,
                                 std::uint64_t seed) {
    clr::Rng rng(seed);
    clr::Dataset d;
    d.image_shape = shape;
    for (std::size_t c = 0; c < classes; ++c) d.class_names.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < n; ++i) {
        d.labels.push_back(static_cast<int>(i % classes));
        for (std::size_t p = 0; p < d.image_numel(); ++p) d.pixels.push_back(static_cast<float>(rng.uniform()));
    }
    return d;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("clr-test-" + tag + "-" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

} // namespace testing
