#include "aerialgen/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"

namespace aerialgen::eval {

namespace {

constexpr double kUnitTolerance = 1e-4;

void check_pairs(const FeatureSet& a, const FeatureSet& b, const char* what) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(what) + ": " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                         " features");
    }
    if (a.empty()) throw ShapeError(std::string(what) + ": empty feature lists");
}

double dot_unit(const Feature& x, const Feature& y) {
    if (x.size() != y.size()) throw ShapeError("feature dimensions differ");
    double d = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        d += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    if (std::abs(std::sqrt(nx) - 1.0) > kUnitTolerance || std::abs(std::sqrt(ny) - 1.0) > kUnitTolerance) {
        throw NumericError("similarity metrics expect L2-normalised features");
    }
    return d;
}

double similarity(const FeatureSet& a, const FeatureSet& b, const char* what) {
    check_pairs(a, b, what);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (2.0 - 2.0 * dot_unit(a[i], b[i])) / 4.0;
    return std::clamp(s / static_cast<double>(a.size()), 0.0, 1.0);
}

Eigen::MatrixXd as_matrix(const FeatureSet& f) {
    const int n = static_cast<int>(f.size()), d = static_cast<int>(f.front().size());
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(f[static_cast<std::size_t>(i)].size()) != d) throw ShapeError("feature dimensions differ");
        for (int j = 0; j < d; ++j) m(i, j) = f[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return m;
}

Eigen::MatrixXd cov_of(const GaussianStats& s) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(s.cov.data(), s.dim,
                                                                                                   s.dim);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-6 * scale) spdlog::warn("covariance product has eigenvalue {:.3g}; clipping to 0", ev(i));
        ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<std::vector<double>> distances(const FeatureSet& queries, const FeatureSet& gallery) {
    std::vector<std::vector<double>> d(queries.size(), std::vector<double>(gallery.size()));
    for (std::size_t i = 0; i < queries.size(); ++i) {
        for (std::size_t j = 0; j < gallery.size(); ++j) {
            if (queries[i].size() != gallery[j].size()) throw ShapeError("feature dimensions differ");
            double s = 0.0;
            for (std::size_t k = 0; k < queries[i].size(); ++k) {
                const double diff = queries[i][k] - gallery[j][k];
                s += diff * diff;
            }
            d[i][j] = std::sqrt(s);
        }
    }
    return d;
}

void check_images(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("image shapes differ");
    if (a.data.empty()) throw ShapeError("empty image");
}

}  // namespace

double sim_same(const FeatureSet& real, const FeatureSet& fake) { return similarity(real, fake, "sim_same"); }

double sim_cross(const FeatureSet& ground, const FeatureSet& fake) { return similarity(ground, fake, "sim_cross"); }

GaussianStats gaussian_stats(const FeatureSet& features, Shrinkage shrink) {
    if (features.size() < 2) throw NumericError("need at least two features for a covariance");
    const Eigen::MatrixXd x = as_matrix(features);
    const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
    const Eigen::VectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd c  = x.rowwise() - mu.transpose();
    Eigen::MatrixXd cov      = (c.transpose() * c) / static_cast<double>(n - 1);

    double lambda = 0.0;
    const bool apply = shrink == Shrinkage::always || (shrink == Shrinkage::automatic && n < 4 * d);
    if (shrink == Shrinkage::never && n < d + 1) {
        throw NumericError("covariance of " + std::to_string(n) + " features in dimension " + std::to_string(d) +
                           " is singular; use shrinkage or at least " + std::to_string(d + 1) + " samples");
    }
    if (apply) {
        // Ledoit-Wolf weight toward the scaled identity, from the biased sample covariance.
        const Eigen::MatrixXd s  = (c.transpose() * c) / static_cast<double>(n);
        const double m           = s.trace() / d;
        const double d2          = (s - m * Eigen::MatrixXd::Identity(d, d)).squaredNorm();
        double b2                = 0.0;
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd r = c.row(i).transpose();
            b2 += (r * r.transpose() - s).squaredNorm();
        }
        b2 /= static_cast<double>(n) * n;
        lambda = d2 > 0.0 ? std::clamp(b2 / d2, 0.0, 1.0) : 1.0;
        cov    = (1.0 - lambda) * cov + lambda * (cov.trace() / d) * Eigen::MatrixXd::Identity(d, d);
    }
    GaussianStats out;
    out.dim       = d;
    out.shrinkage = lambda;
    out.mean.assign(mu.data(), mu.data() + d);
    out.cov.resize(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out.cov[static_cast<std::size_t>(i) * d + j] = 0.5 * (cov(i, j) + cov(j, i));
    return out;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim != b.dim || a.dim < 1) throw ShapeError("Gaussian statistics dimensions differ");
    const auto dim = static_cast<std::size_t>(a.dim);
    if (a.mean.size() != dim || b.mean.size() != dim || a.cov.size() != dim * dim || b.cov.size() != dim * dim) {
        throw ShapeError("malformed Gaussian statistics");
    }
    double mean_term = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
    const Eigen::MatrixXd s1 = cov_of(a), s2 = cov_of(b);
    // Tr (S1 S2)^(1/2) = Tr (S1^(1/2) S2 S1^(1/2))^(1/2), which is symmetric.
    const Eigen::MatrixXd r1    = psd_sqrt(s1);
    const Eigen::MatrixXd cross = psd_sqrt(r1 * s2 * r1);
    const double value          = mean_term + s1.trace() + s2.trace() - 2.0 * cross.trace();
    return std::max(0.0, value);
}

double fid_safa(const FeatureSet& real, const FeatureSet& fake, Shrinkage shrink) {
    return frechet_distance(gaussian_stats(real, shrink), gaussian_stats(fake, shrink));
}

double psnr(const Image& a, const Image& b) {
    check_images(a, b);
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    if (se == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / (se / static_cast<double>(a.data.size())));
}

double ssim(const Image& a, const Image& b) {
    check_images(a, b);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    if (a.height < kWin || a.width < kWin) throw ShapeError("ssim needs images of at least 11x11");
    double g[kWin], total = 0.0;
    for (int i = 0; i < kWin; ++i) {
        g[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * kSigma * kSigma));
        total += g[i];
    }
    for (double& v : g) v /= total;

    const int oh = a.height - kWin + 1, ow = a.width - kWin + 1;
    double sum = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = 0; dy < kWin; ++dy) {
                    for (int dx = 0; dx < kWin; ++dx) {
                        const double w  = g[dy] * g[dx];
                        const double va = a.at(c, y + dy, x + dx), vb = b.at(c, y + dy, x + dx);
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cv = sab - ma * mb;
                sum += ((2 * ma * mb + c1) * (2 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    return sum / (static_cast<double>(a.channels) * oh * ow);
}

std::vector<int> true_match_ranks(const FeatureSet& queries, const FeatureSet& gallery,
                                  const std::vector<int>& truth) {
    if (truth.size() != queries.size()) throw ShapeError("ground-truth map must cover every query");
    if (gallery.empty()) throw ShapeError("empty gallery");
    const auto d = distances(queries, gallery);
    std::vector<int> ranks;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const int t = truth[i];
        if (t < 0 || t >= static_cast<int>(gallery.size())) throw ShapeError("ground-truth index out of range");
        int rank = 0;
        for (std::size_t j = 0; j < gallery.size(); ++j) {
            if (d[i][j] < d[i][static_cast<std::size_t>(t)] ||
                (d[i][j] == d[i][static_cast<std::size_t>(t)] && static_cast<int>(j) < t)) {
                ++rank;
            }
        }
        ranks.push_back(rank);
    }
    return ranks;
}

double recall_at_k(const FeatureSet& queries, const FeatureSet& gallery, const std::vector<int>& truth, int k) {
    if (k < 1 || k > static_cast<int>(gallery.size())) {
        throw ConfigError("k = " + std::to_string(k) + " outside [1, gallery size " + std::to_string(gallery.size()) +
                          "]");
    }
    if (queries.empty()) throw ShapeError("no queries");
    const auto ranks = true_match_ranks(queries, gallery, truth);
    const auto hits  = std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r < k; });
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

int one_percent_k(int gallery_size) {
    return std::max(1, static_cast<int>(std::lround(gallery_size / 100.0)));
}

}  // namespace aerialgen::eval
