#pragma once

// Reference implementations for metric tests, written independently of the
// library code paths.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "aerialgen/core/image.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
    const std::size_t n = a.size();
    Mat c(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

// Gauss-Jordan inverse of a small well-conditioned matrix.
inline Mat inverse(Mat a) {
    const std::size_t n = a.size();
    Mat inv(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
        std::swap(a[c], a[p]);
        std::swap(inv[c], inv[p]);
        const double d = a[c][c];
        for (std::size_t j = 0; j < n; ++j) {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r][c];
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[c][j];
                inv[r][j] -= f * inv[c][j];
            }
        }
    }
    return inv;
}

// Denman-Beavers iteration; converges to the principal square root of a
// matrix with positive real eigenvalues (such as a product of SPD matrices).
inline Mat sqrtm(const Mat& a) {
    const std::size_t n = a.size();
    Mat y = a, z(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) z[i][i] = 1.0;
    for (int it = 0; it < 100; ++it) {
        const Mat yi = inverse(y), zi = inverse(z);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double ny = 0.5 * (y[i][j] + zi[i][j]);
                const double nz = 0.5 * (z[i][j] + yi[i][j]);
                y[i][j]         = ny;
                z[i][j]         = nz;
            }
        }
    }
    return y;
}

inline double frechet(const std::vector<double>& m1, const Mat& s1, const std::vector<double>& m2, const Mat& s2) {
    double d = 0.0;
    for (std::size_t i = 0; i < m1.size(); ++i) d += (m1[i] - m2[i]) * (m1[i] - m2[i]);
    const Mat r = sqrtm(matmul(s1, s2));
    for (std::size_t i = 0; i < m1.size(); ++i) d += s1[i][i] + s2[i][i] - 2.0 * r[i][i];
    return d;
}

// SSIM through whole filtered maps (mu, sigma) rather than per-window sums.
inline double ssim(const aerialgen::Image& a, const aerialgen::Image& b) {
    std::vector<double> k(11);
    for (int i = 0; i < 11; ++i) k[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
    const double ks = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& v : k) v /= ks;
    const int oh = a.height - 10, ow = a.width - 10;
    auto filter = [&](const std::vector<double>& img) {
        // rows then columns, valid region
        std::vector<double> tmp(static_cast<std::size_t>(a.height) * ow, 0.0), out(static_cast<std::size_t>(oh) * ow, 0.0);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < ow; ++x)
                for (int d = 0; d < 11; ++d) tmp[static_cast<std::size_t>(y) * ow + x] += k[d] * img[static_cast<std::size_t>(y) * a.width + x + d];
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int d = 0; d < 11; ++d) out[static_cast<std::size_t>(y) * ow + x] += k[d] * tmp[static_cast<std::size_t>(y + d) * ow + x];
        return out;
    };
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const std::size_t plane = static_cast<std::size_t>(a.height) * a.width;
        std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            x[i]  = a.data[c * plane + i];
            y[i]  = b.data[c * plane + i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
        const double c1 = 1e-4, c2 = 9e-4;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cv = sxy[i] - mx[i] * my[i];
            total += (2 * mx[i] * my[i] + c1) * (2 * cv + c2) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
    }
    return total / (static_cast<double>(a.channels) * oh * ow);
}

// Recall by fully sorting the gallery per query (distance, then index).
inline double recall_sorted(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& g,
                            const std::vector<int>& truth, int k) {
    int hits = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<std::pair<double, int>> d;
        for (std::size_t j = 0; j < g.size(); ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < q[i].size(); ++t) s += (q[i][t] - g[j][t]) * (q[i][t] - g[j][t]);
            d.emplace_back(std::sqrt(s), static_cast<int>(j));
        }
        std::sort(d.begin(), d.end());
        for (int r = 0; r < k; ++r)
            if (d[static_cast<std::size_t>(r)].second == truth[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(q.size());
}

}  // namespace oracle
