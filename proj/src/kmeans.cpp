#include <algorithm>
#include <cmath>
#include <string>

#include "bdlab/analysis.hpp"

namespace bdlab {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

Matrix plus_plus_init(const Matrix& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows();
    Matrix c(k, x.cols());
    std::vector<double> d2(n, INFINITY);
    std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t j = 0; j < k; ++j) {
        std::copy(x.row(pick).begin(), x.row(pick).end(), c.row(j).begin());
        if (j + 1 == k) break;
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(x.row(i), c.row(j)));
            total += d2[i];
        }
        if (total <= 0) {
            // Remaining points all coincide with chosen centres.
            pick = static_cast<std::size_t>(rng.below(n));
            continue;
        }
        const double r = rng.uniform() * total;
        double acc = 0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (d2[i] > 0 && r < acc) {
                pick = i;
                break;
            }
        }
        while (d2[pick] == 0 && pick > 0) --pick;
    }
    return c;
}

bool assign(const Matrix& x, const Matrix& c, std::vector<int>& labels, double& inertia) {
    bool changed = false;
    inertia = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double best = INFINITY;
        int arg = 0;
        for (std::size_t j = 0; j < c.rows(); ++j) {
            const double d = sq_dist(x.row(i), c.row(j));
            if (d < best) {
                best = d;
                arg = static_cast<int>(j);
            }
        }
        if (labels[i] != arg) {
            labels[i] = arg;
            changed = true;
        }
        inertia += best;
    }
    return changed;
}

/// Recomputes means; returns the largest squared centroid shift.
double update(const Matrix& x, Matrix& c, std::vector<int>& labels) {
    const std::size_t k = c.rows(), d = x.cols();
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] > 0) continue;
        // Empty cluster: take the point farthest from its current centre.
        double far = -1;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const auto li = static_cast<std::size_t>(labels[i]);
            if (counts[li] < 2) continue;
            const double dist = sq_dist(x.row(i), c.row(li));
            if (dist > far) {
                far = dist;
                arg = i;
            }
        }
        --counts[static_cast<std::size_t>(labels[arg])];
        labels[arg] = static_cast<int>(j);
        counts[j] = 1;
    }
    Matrix next(k, d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto dst = next.row(static_cast<std::size_t>(labels[i]));
        const auto src = x.row(i);
        for (std::size_t t = 0; t < d; ++t) dst[t] += src[t];
    }
    double shift = 0;
    for (std::size_t j = 0; j < k; ++j) {
        auto row = next.row(j);
        for (double& v : row) v /= static_cast<double>(counts[j]);
        shift = std::max(shift, sq_dist(row, c.row(j)));
    }
    c = std::move(next);
    return shift;
}

/// Hartigan single-point transfers: moves a point whenever that strictly lowers the total SSE.
/// Returns true if anything moved; centroids are recomputed exactly afterwards.
bool hartigan_refine(const Matrix& x, Matrix& c, std::vector<int>& labels, int max_passes) {
    const std::size_t k = c.rows(), d = x.cols();
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    bool moved_any = false;
    for (int pass = 0; pass < max_passes; ++pass) {
        bool moved = false;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const auto a = static_cast<std::size_t>(labels[i]);
            if (counts[a] < 2) continue;
            const auto na = static_cast<double>(counts[a]);
            const double remove = na / (na - 1) * sq_dist(x.row(i), c.row(a));
            double best = remove;
            std::size_t arg = a;
            for (std::size_t b = 0; b < k; ++b) {
                if (b == a) continue;
                const auto nb = static_cast<double>(counts[b]);
                const double add = nb / (nb + 1) * sq_dist(x.row(i), c.row(b));
                if (add < best) {
                    best = add;
                    arg = b;
                }
            }
            if (arg == a || !(best < remove * (1 - 1e-12))) continue;
            const auto nb = static_cast<double>(counts[arg]);
            auto ca = c.row(a), cb = c.row(arg);
            const auto xi = x.row(i);
            for (std::size_t t = 0; t < d; ++t) {
                ca[t] = (na * ca[t] - xi[t]) / (na - 1);
                cb[t] = (nb * cb[t] + xi[t]) / (nb + 1);
            }
            --counts[a];
            ++counts[arg];
            labels[i] = static_cast<int>(arg);
            moved = moved_any = true;
        }
        if (!moved) break;
    }
    if (moved_any) update(x, c, labels);
    return moved_any;
}

KMeansResult lloyd(const Matrix& points, const KMeansConfig& cfg, Rng rng) {
    const std::size_t n = points.rows();
    KMeansResult r;
    r.centroids = plus_plus_init(points, static_cast<std::size_t>(cfg.k), rng);
    r.assignments.assign(n, -1);
    for (int it = 0; it < cfg.max_iters; ++it) {
        double inertia = 0;
        const bool changed = assign(points, r.centroids, r.assignments, inertia);
        r.inertia_trace.push_back(inertia);
        ++r.iterations;
        if (!changed && it > 0) break;
        const double shift = update(points, r.centroids, r.assignments);
        if (std::sqrt(shift) < cfg.tol) break;
    }
    if (hartigan_refine(points, r.centroids, r.assignments, cfg.max_iters)) {
        double refined = 0;
        for (std::size_t i = 0; i < n; ++i)
            refined += sq_dist(points.row(i), r.centroids.row(static_cast<std::size_t>(r.assignments[i])));
        r.inertia_trace.push_back(refined);
    }
    // Final pass so every point sits with its nearest centroid.
    double inertia = 0;
    if (assign(points, r.centroids, r.assignments, inertia) || inertia < r.inertia_trace.back())
        r.inertia_trace.push_back(inertia);
    r.inertia = inertia;
    return r;
}

}  // namespace

KMeansResult kmeans_cluster(const Matrix& points, const KMeansConfig& cfg) {
    const std::size_t n = points.rows();
    if (cfg.k < 1) throw Error("kmeans: k must be >= 1, got " + std::to_string(cfg.k));
    if (n < static_cast<std::size_t>(cfg.k))
        throw Error("kmeans: " + std::to_string(n) + " points is fewer than k=" + std::to_string(cfg.k));
    if (cfg.max_iters < 1) throw Error("kmeans: max_iters must be >= 1");
    if (cfg.n_init < 1) throw Error("kmeans: n_init must be >= 1");
    if (!all_finite(points.data())) throw Error("kmeans: non-finite input");

    const Rng root(cfg.seed, 0x6b6d);
    KMeansResult best;
    for (int run = 0; run < cfg.n_init; ++run) {
        KMeansResult r = lloyd(points, cfg, root.split(static_cast<std::uint64_t>(run)));
        r.best_init = run;
        if (run == 0 || r.inertia < best.inertia) best = std::move(r);
    }
    return best;
}

}  // namespace bdlab
