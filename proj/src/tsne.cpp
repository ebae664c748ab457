#include <algorithm>
#include <cmath>
#include <string>

#include "bdlab/analysis.hpp"

namespace bdlab {

namespace {

Matrix squared_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const double t = x(i, c) - x(j, c);
                s += t * t;
            }
            d(i, j) = d(j, i) = s;
        }
    }
    return d;
}

double kl_divergence(const Matrix& p, const Matrix& y) {
    const std::size_t n = y.rows();
    Matrix num(n, n);
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
            const double q = 1.0 / (1.0 + dx * dx + dy * dy);
            num(i, j) = num(j, i) = q;
            z += 2 * q;
        }
    }
    double kl = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = p(i, j);
            const double qij = std::max(num(i, j) / z, 1e-300);
            kl += pij * std::log(pij / qij);
        }
    }
    return kl;
}

}  // namespace

double default_perplexity(std::size_t n) {
    if (n < 4) throw Error("t-SNE needs at least 4 points, got " + std::to_string(n));
    return std::min(30.0, std::floor(static_cast<double>(n - 1) / 3.0));
}

Matrix tsne_conditional_p(const Matrix& points, double perplexity, double tol) {
    const std::size_t n = points.rows();
    if (n < 2) throw Error("tsne_conditional_p: need at least 2 points");
    if (!(perplexity > 0) || perplexity >= static_cast<double>(n))
        throw Error("t-SNE perplexity " + std::to_string(perplexity) + " must lie in (0, n=" + std::to_string(n) +
                    ")");
    if (!all_finite(points.data())) throw Error("tsne_conditional_p: non-finite input");
    const Matrix d = squared_distances(points);
    const double target = std::log(perplexity);
    Matrix p(n, n);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dmin = INFINITY;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) dmin = std::min(dmin, d(i, j));
        double beta = 1.0, lo = -INFINITY, hi = INFINITY;
        for (int it = 0; it < 200; ++it) {
            double sum = 0, wsum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0;
                    continue;
                }
                const double shifted = d(i, j) - dmin;
                row[j] = std::exp(-beta * shifted);
                sum += row[j];
                wsum += shifted * row[j];
            }
            const double h = std::log(sum) + beta * wsum / sum;
            const double diff = h - target;
            if (std::abs(diff) < tol) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta / 2 : 0.5 * (beta + lo);
            }
        }
        double sum = 0;
        for (double v : row) sum += v;
        for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j] / sum;
    }
    return p;
}

Matrix tsne_joint_p(const Matrix& conditional) {
    const std::size_t n = conditional.rows();
    if (conditional.cols() != n) throw Error("tsne_joint_p: matrix must be square, got " + conditional.shape_string());
    Matrix p(n, n);
    const double scale = 1.0 / (2.0 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p(i, j) = (conditional(i, j) + conditional(j, i)) * scale;
    return p;
}

TsneResult tsne_project(const Matrix& points, const TsneConfig& cfg) {
    const std::size_t n = points.rows();
    if (n < 4) throw Error("t-SNE needs at least 4 points, got " + std::to_string(n));
    if (cfg.iterations < 1) throw Error("t-SNE iterations must be >= 1");
    if (!(cfg.learning_rate > 0)) throw Error("t-SNE learning rate must be positive");
    TsneResult r;
    r.perplexity = cfg.perplexity.value_or(default_perplexity(n));

    Rng rng(cfg.seed, 0x7473);
    Rng jitter = rng.split(1);
    Matrix x = points;
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (std::equal(points.row(i).begin(), points.row(i).end(), points.row(j).begin())) {
                for (double& v : x.row(i)) v += 1e-10 * jitter.normal();
                break;
            }
        }
    }

    Matrix p = tsne_joint_p(tsne_conditional_p(x, r.perplexity, cfg.perplexity_tol));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) p(i, j) = std::max(p(i, j), 1e-12);

    Rng init = rng.split(2);
    Matrix y(n, 2);
    for (double& v : y.data()) v = 1e-4 * init.normal();
    Matrix velocity(n, 2), gains(n, 2, 1.0), grad(n, 2), num(n, n);

    for (int t = 0; t < cfg.iterations; ++t) {
        const double exag = t < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
        const double mom = t < cfg.momentum_switch ? cfg.momentum : cfg.final_momentum;
        double z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num(i, j) = num(j, i) = q;
                z += 2 * q;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0, gy = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double w = (exag * p(i, j) - num(i, j) / z) * num(i, j);
                gx += w * (y(i, 0) - y(j, 0));
                gy += w * (y(i, 1) - y(j, 1));
            }
            grad(i, 0) = 4 * gx;
            grad(i, 1) = 4 * gy;
        }
        for (std::size_t e = 0; e < y.size(); ++e) {
            const double g = grad.data()[e];
            double& gain = gains.data()[e];
            double& vel = velocity.data()[e];
            gain = (g > 0) != (vel > 0) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, 0.01);
            vel = mom * vel - cfg.learning_rate * gain * g;
            y.data()[e] += vel;
        }
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += y(i, 0);
            my += y(i, 1);
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y(i, 0) -= mx;
            y(i, 1) -= my;
        }
        const int done = t + 1;
        if (done == cfg.exaggeration_iters) r.kl_after_exaggeration = kl_divergence(p, y);
        if (done % 50 == 0) r.kl_trace.push_back(kl_divergence(p, y));
    }
    if (!all_finite(y.data())) throw Error("t-SNE diverged (non-finite coordinates)");
    r.kl = kl_divergence(p, y);
    r.coords = std::move(y);
    return r;
}

}  // namespace bdlab
