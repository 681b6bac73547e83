#pragma once

// Brute-force reference implementations and small helpers shared by the unit tests.
// Everything here is written as plain loops so it stays independent of the library kernels.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cseg/polygon.hpp"
#include "cseg/tensor.hpp"

namespace oracle {

template <typename T>
cseg::BasicTensor<T> random_tensor(cseg::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    cseg::BasicTensor<T> t(shape);
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.values()) v = static_cast<T>(d(rng));
    return t;
}

template <typename T>
cseg::BasicTensor<T> random_mask(cseg::Shape shape, std::mt19937_64& rng, double p = 0.5) {
    cseg::BasicTensor<T> t(shape);
    std::bernoulli_distribution d(p);
    for (auto& v : t.values()) v = d(rng) ? T(1) : T(0);
    return t;
}

template <typename T>
cseg::BasicTensor<T> conv2d(const cseg::BasicTensor<T>& x, const cseg::BasicTensor<T>& w, const cseg::BasicTensor<T>& b,
                            int stride, int pad) {
    const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long O = w.dim(0), K = w.dim(2);
    const long Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    cseg::BasicTensor<T> y(cseg::Shape{std::size_t(B), std::size_t(O), std::size_t(Ho), std::size_t(Wo)});
    for (long n = 0; n < B; ++n)
        for (long o = 0; o < O; ++o)
            for (long i = 0; i < Ho; ++i)
                for (long j = 0; j < Wo; ++j) {
                    double acc = b.empty() ? 0.0 : double(b[o]);
                    for (long c = 0; c < C; ++c)
                        for (long ki = 0; ki < K; ++ki)
                            for (long kj = 0; kj < K; ++kj) {
                                const long yy = i * stride - pad + ki, xx = j * stride - pad + kj;
                                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                                acc += double(x.at(n, c, yy, xx)) * double(w.at(o, c, ki, kj));
                            }
                    y.at(n, o, i, j) = T(acc);
                }
    return y;
}

// out[n,o,2i+a,2j+b] = bias[o] + sum_c x[n,c,i,j] * w[c,o,a,b]
template <typename T>
cseg::BasicTensor<T> upconv2x2(const cseg::BasicTensor<T>& x, const cseg::BasicTensor<T>& w,
                               const cseg::BasicTensor<T>& b) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(1);
    cseg::BasicTensor<T> y(cseg::Shape{B, O, 2 * H, 2 * W});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < 2 * H; ++i)
                for (std::size_t j = 0; j < 2 * W; ++j) {
                    double acc = b.empty() ? 0.0 : double(b[o]);
                    for (std::size_t c = 0; c < C; ++c) acc += double(x.at(n, c, i / 2, j / 2)) * double(w.at(c, o, i % 2, j % 2));
                    y.at(n, o, i, j) = T(acc);
                }
    return y;
}

template <typename T>
double dot(const cseg::BasicTensor<T>& a, const cseg::BasicTensor<T>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

// Central difference of a scalar function of one tensor, elementwise.
inline cseg::TensorD numeric_grad(const std::function<double(const cseg::TensorD&)>& f, cseg::TensorD x,
                                  double h = 1e-5) {
    cseg::TensorD g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline double max_rel_error(const cseg::TensorD& a, const cseg::TensorD& b, double floor = 1e-6) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, d);
    }
    return worst;
}

// Even-odd ray cast towards +x from the pixel centre, over every ring of every polygon.
inline bool inside(const std::vector<cseg::PolygonLabel>& polys, double px, double py) {
    bool in = false;
    for (const auto& p : polys)
        for (const auto& ring : p.rings) {
            const std::size_t n = ring.size();
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const auto& a = ring[i];
                const auto& b = ring[j];
                if ((a.y > py) != (b.y > py)) {
                    const double xc = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
                    if (px < xc) in = !in;
                }
            }
        }
    return in;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("cseg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::FILE* f = std::fopen(p.string().c_str(), "rb");
    if (!f) return {};
    std::string s;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
    std::fclose(f);
    return s;
}

}  // namespace oracle
