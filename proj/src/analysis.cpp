#include "bdlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace bdlab {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw Error(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw Error(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                    ")");
}

}  // namespace

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<double> Histogram::frequencies() const {
    const double t = static_cast<double>(total());
    std::vector<double> f(counts.size(), 0.0);
    if (t == 0) return f;
    for (std::size_t i = 0; i < counts.size(); ++i) f[i] = static_cast<double>(counts[i]) / t;
    return f;
}

Histogram histogram(std::span<const double> values, int n_bins) {
    if (values.empty()) throw Error("histogram: empty input");
    require_finite(values, "histogram");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it, hi = *hi_it;
    if (lo == hi) {
        // Degenerate span: widen so the single value lands inside one bin.
        const double eps = 1e-9 * std::max(1.0, std::abs(lo));
        lo -= eps;
        hi += eps;
    }
    return histogram(values, n_bins, lo, hi);
}

Histogram histogram(std::span<const double> values, int n_bins, double lo, double hi) {
    if (n_bins < 1) throw Error("histogram: n_bins must be >= 1, got " + std::to_string(n_bins));
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw Error("histogram: invalid range");
    require_finite(values, "histogram");
    const auto nb = static_cast<std::size_t>(n_bins);
    Histogram h;
    h.edges.resize(nb + 1);
    const double width = (hi - lo) / static_cast<double>(nb);
    for (std::size_t i = 0; i <= nb; ++i) h.edges[i] = lo + width * static_cast<double>(i);
    h.edges[nb] = hi;
    h.counts.assign(nb, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = values[i];
        if (x < lo || x > hi) throw Error("histogram: value at index " + std::to_string(i) + " outside range");
        auto b = static_cast<std::size_t>(std::min<double>(std::floor((x - lo) / width), static_cast<double>(nb - 1)));
        // Snap against the stored edges so counts agree with [edge_i, edge_i+1) exactly.
        while (b > 0 && x < h.edges[b]) --b;
        while (b + 1 < nb && x >= h.edges[b + 1]) ++b;
        ++h.counts[b];
    }
    return h;
}

double histogram_l1(const Histogram& a, const Histogram& b) {
    if (a.edges != b.edges) throw Error("histogram_l1: histograms use different bin edges");
    const auto fa = a.frequencies();
    const auto fb = b.frequencies();
    double d = 0;
    for (std::size_t i = 0; i < fa.size(); ++i) d += std::abs(fa[i] - fb[i]);
    return d;
}

double silverman_bandwidth(std::span<const double> samples) {
    if (samples.size() < 2) throw Error("silverman_bandwidth: need at least 2 samples");
    const double n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0;
    for (double s : samples) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / (n - 1));
    if (sd == 0 || !std::isfinite(sd)) throw Error("silverman_bandwidth: samples have zero variance");
    return 1.06 * sd * std::pow(n, -0.2);
}

DensityCurve gaussian_kde(std::span<const double> samples, const KdeOptions& opts) {
    if (samples.empty()) throw Error("gaussian_kde: empty input");
    if (opts.grid_points < 2) throw Error("gaussian_kde: grid_points must be >= 2");
    require_finite(samples, "gaussian_kde");
    DensityCurve c;
    if (opts.bandwidth) {
        if (!(*opts.bandwidth > 0)) throw Error("gaussian_kde: bandwidth must be positive");
        c.bandwidth = *opts.bandwidth;
    } else {
        c.bandwidth = silverman_bandwidth(samples);
    }
    const double h = c.bandwidth;
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it - 3 * h, hi = *hi_it + 3 * h;
    const auto g = static_cast<std::size_t>(opts.grid_points);
    c.grid.resize(g);
    c.density.assign(g, 0.0);
    const double step = (hi - lo) / static_cast<double>(g - 1);
    const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2 * std::numbers::pi));
    for (std::size_t i = 0; i < g; ++i) {
        const double x = i + 1 == g ? hi : lo + step * static_cast<double>(i);
        c.grid[i] = x;
        double acc = 0;
        for (double s : samples) {
            const double u = (x - s) / h;
            acc += std::exp(-0.5 * u * u);
        }
        c.density[i] = acc * norm;
    }
    return c;
}

DensityCurve kde_delta_density(std::span<const double> ft, std::span<const double> pt, const KdeOptions& opts) {
    require_same_size(ft.size(), pt.size(), "kde_delta_density");
    Vector delta(ft.size());
    for (std::size_t i = 0; i < ft.size(); ++i) delta[i] = ft[i] - pt[i];
    if (!opts.bandwidth) {
        try {
            (void)silverman_bandwidth(delta);
        } catch (const Error&) {
            throw Error("kde_delta_density: delta ft - pt is degenerate (zero variance over " +
                        std::to_string(delta.size()) + " elements)");
        }
    }
    return gaussian_kde(delta, opts);
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
    require_same_size(x.size(), y.size(), "trapezoid");
    double acc = 0;
    for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return acc;
}

NormalizedDiff normalized_bias_diff(std::span<const double> ft, std::span<const double> pt) {
    require_same_size(ft.size(), pt.size(), "normalized_bias_diff");
    NormalizedDiff out;
    out.values.resize(ft.size());
    for (std::size_t i = 0; i < ft.size(); ++i) {
        out.values[i] = ft[i] - pt[i];
        out.max_abs = std::max(out.max_abs, std::abs(out.values[i]));
    }
    if (!std::isfinite(out.max_abs)) throw Error("normalized_bias_diff: non-finite difference");
    if (out.max_abs == 0) throw Error("normalized_bias_diff: fine-tuned and pre-trained biases are identical");
    for (double& v : out.values) v /= out.max_abs;
    return out;
}

RatioResult param_ratio(std::span<const double> numerator, std::span<const double> denominator, double epsilon) {
    require_same_size(numerator.size(), denominator.size(), "param_ratio");
    if (!(epsilon > 0)) throw Error("param_ratio: epsilon must be positive");
    RatioResult r;
    r.ratios.assign(numerator.size(), 0.0);
    r.masked.assign(numerator.size(), false);
    for (std::size_t i = 0; i < numerator.size(); ++i) {
        if (std::abs(denominator[i]) <= epsilon) {
            r.masked[i] = true;
            ++r.n_masked;
        } else {
            r.ratios[i] = numerator[i] / denominator[i];
        }
    }
    return r;
}

LayerClusters summarize_clusters(int layer, std::span<const int> assignments, std::span<const SampleMeta> meta,
                                 int k) {
    require_same_size(assignments.size(), meta.size(), "summarize_clusters");
    if (k < 1) throw Error("summarize_clusters: k must be >= 1");
    LayerClusters out;
    out.layer = layer;
    out.clusters.assign(static_cast<std::size_t>(k), {});
    std::size_t total_poisoned = 0;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const int a = assignments[i];
        if (a < 0 || a >= k) throw Error("summarize_clusters: assignment " + std::to_string(a) + " out of range");
        auto& c = out.clusters[static_cast<std::size_t>(a)];
        if (meta[i].poisoned) {
            ++c.poisoned;
            ++total_poisoned;
        } else {
            ++c.clean;
        }
    }
    std::size_t best = 0;
    for (std::size_t c = 0; c < out.clusters.size(); ++c) {
        if (out.clusters[c].poisoned > best) {
            best = out.clusters[c].poisoned;
            out.dominant_cluster = static_cast<int>(c);
        }
    }
    out.dominant_poison_fraction =
        total_poisoned == 0 ? 0.0 : static_cast<double>(best) / static_cast<double>(total_poisoned);
    return out;
}

ClusterReport cluster_poison_report(const std::vector<ActivationMatrix>& activations, const KMeansConfig& cfg) {
    if (activations.size() < 2) throw Error("cluster_poison_report: need at least 2 layers");
    ClusterReport report;
    const std::size_t n = activations.size();
    const std::size_t half = n / 2;
    for (const auto& act : activations) {
        require_same_size(act.rows.rows(), act.meta.size(), "cluster_poison_report");
        const auto km = kmeans_cluster(act.rows, cfg);
        report.layers.push_back(summarize_clusters(act.layer, km.assignments, act.meta, cfg.k));
    }
    for (std::size_t l = 0; l < n; ++l) {
        if (l < half)
            report.lower_mean += report.layers[l].dominant_poison_fraction;
        else
            report.upper_mean += report.layers[l].dominant_poison_fraction;
    }
    report.lower_mean /= static_cast<double>(half);
    report.upper_mean /= static_cast<double>(n - half);
    return report;
}

double neighborhood_purity(const Matrix& points, std::span<const int> labels) {
    const std::size_t n = points.rows();
    require_same_size(n, labels.size(), "neighborhood_purity");
    if (n < 2) throw Error("neighborhood_purity: need at least 2 points");
    if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; }))
        throw Error("neighborhood_purity: labels take a single value");
    require_finite(points.data(), "neighborhood_purity");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto pi = points.row(i);
        double best = INFINITY;
        std::size_t best_j = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const auto pj = points.row(j);
            double d = 0;
            for (std::size_t c = 0; c < points.cols(); ++c) d += (pi[c] - pj[c]) * (pi[c] - pj[c]);
            if (d < best) {
                best = d;
                best_j = j;
            }
        }
        if (labels[best_j] == labels[i]) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(n);
}

}  // namespace bdlab
