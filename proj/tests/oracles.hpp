// Independent reference implementations used only by tests. Everything here
// is written as plain loops, deliberately sharing no code with the library
// paths it checks.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kinet/autodiff.hpp"
#include "kinet/tensor.hpp"

namespace oracle {

// two-loop spatial mean per (sample, channel)
template <typename T>
kinet::Tensor<T> pool_mean(const kinet::Tensor<T>& x) {
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    kinet::Tensor<T> out({b, c});
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t xx = 0; xx < w; ++xx) acc += static_cast<double>(x.at(n, ch, y, xx));
            }
            out.at(n, ch) = static_cast<T>(acc / static_cast<double>(h * w));
        }
    }
    return out;
}

// triple-loop matrix product
template <typename T>
kinet::Tensor<T> matmul(const kinet::Tensor<T>& a, const kinet::Tensor<T>& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    kinet::Tensor<T> c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += static_cast<double>(a.at(i, p)) * static_cast<double>(b.at(p, j));
            }
            c.at(i, j) = static_cast<T>(acc);
        }
    }
    return c;
}

// row softmax restricted to positions where active[i][j] != 0
inline std::vector<std::vector<double>> masked_softmax_rows(
    const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& active) {
    std::vector<std::vector<double>> out(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        out[i].assign(scores[i].size(), 0.0);
        double mx = -1e300;
        for (size_t j = 0; j < scores[i].size(); ++j) {
            if (active[i][j]) mx = std::max(mx, scores[i][j]);
        }
        double z = 0.0;
        for (size_t j = 0; j < scores[i].size(); ++j) {
            if (active[i][j]) z += std::exp(scores[i][j] - mx);
        }
        for (size_t j = 0; j < scores[i].size(); ++j) {
            if (active[i][j]) out[i][j] = std::exp(scores[i][j] - mx) / z;
        }
    }
    return out;
}

// per-row cross-entropy, looped independently and then averaged
template <typename T>
double cross_entropy_rows(const kinet::Tensor<T>& logits, const std::vector<int>& labels) {
    const int64_t m = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
        double z = 0.0;
        for (int64_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits.at(i, j)) - mx);
        total += std::log(z) + mx - static_cast<double>(logits.at(i, labels[static_cast<size_t>(i)]));
    }
    return total / static_cast<double>(m);
}

// per-pixel binary cross-entropy over [B,2,h,w] logits and a {0,1} target
template <typename T>
double pixel_cross_entropy(const kinet::Tensor<T>& logits, const kinet::Tensor<uint8_t>& target) {
    const int64_t b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    double total = 0.0;
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                double mx = -1e300;
                for (int64_t ch = 0; ch < c; ++ch) mx = std::max(mx, static_cast<double>(logits.at(n, ch, y, x)));
                double z = 0.0;
                for (int64_t ch = 0; ch < c; ++ch) z += std::exp(static_cast<double>(logits.at(n, ch, y, x)) - mx);
                const int64_t t = target[(n * h + y) * w + x];
                total += std::log(z) + mx - static_cast<double>(logits.at(n, t, y, x));
            }
        }
    }
    return total / static_cast<double>(b * h * w);
}

// triple averaging: views within segment, stride-1 windows, then windows
template <typename T>
std::vector<double> consensus(const kinet::Tensor<T>& view_logits, int64_t window) {
    const int64_t s = view_logits.dim(0), v = view_logits.dim(1), k = view_logits.dim(2);
    std::vector<std::vector<double>> seg(static_cast<size_t>(s), std::vector<double>(static_cast<size_t>(k), 0.0));
    for (int64_t i = 0; i < s; ++i) {
        for (int64_t c = 0; c < k; ++c) {
            double acc = 0.0;
            for (int64_t j = 0; j < v; ++j) acc += static_cast<double>(view_logits[(i * v + j) * k + c]);
            seg[static_cast<size_t>(i)][static_cast<size_t>(c)] = acc / static_cast<double>(v);
        }
    }
    std::vector<double> out(static_cast<size_t>(k), 0.0);
    const int64_t n_win = s - window + 1;
    for (int64_t w = 0; w < n_win; ++w) {
        for (int64_t c = 0; c < k; ++c) {
            double acc = 0.0;
            for (int64_t i = 0; i < window; ++i) acc += seg[static_cast<size_t>(w + i)][static_cast<size_t>(c)];
            out[static_cast<size_t>(c)] += acc / static_cast<double>(window);
        }
    }
    for (auto& v2 : out) v2 /= static_cast<double>(n_win);
    return out;
}

// central finite difference of a scalar function along one coordinate of a
// leaf tensor
template <typename F>
double central_difference(F&& eval, kinet::Tensor<double>& leaf, int64_t coord, double eps = 1e-5) {
    const double saved = leaf[coord];
    leaf[coord] = saved + eps;
    const double fp = eval();
    leaf[coord] = saved - eps;
    const double fm = eval();
    leaf[coord] = saved;
    return (fp - fm) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace oracle
