#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bdlab/extraction.hpp"
#include "bdlab/numeric.hpp"

namespace bdlab {

// ---- distributions ---------------------------------------------------------

struct Histogram {
    std::vector<double> edges;  // n_bins + 1
    std::vector<std::size_t> counts;

    std::size_t total() const;
    /// Counts divided by the total.
    std::vector<double> frequencies() const;
};

/// Equal-width bins over [min, max]; the maximum falls in the last bin.
Histogram histogram(std::span<const double> values, int n_bins);
/// Equal-width bins over a fixed range; values outside it are an error.
Histogram histogram(std::span<const double> values, int n_bins, double lo, double hi);

/// Sum of absolute differences between the frequency vectors (range [0, 2]).
double histogram_l1(const Histogram& a, const Histogram& b);

double silverman_bandwidth(std::span<const double> samples);

struct DensityCurve {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0;
};

struct KdeOptions {
    int grid_points = 512;
    std::optional<double> bandwidth;
};

/// Gaussian KDE evaluated on [min - 3h, max + 3h].
DensityCurve gaussian_kde(std::span<const double> samples, const KdeOptions& opts = {});

/// KDE of the element-wise difference ft - pt.
DensityCurve kde_delta_density(std::span<const double> ft, std::span<const double> pt,
                               const KdeOptions& opts = {});

double trapezoid(std::span<const double> x, std::span<const double> y);

struct NormalizedDiff {
    Vector values;  // (ft - pt) / max|ft - pt|
    double max_abs = 0;
};

NormalizedDiff normalized_bias_diff(std::span<const double> ft, std::span<const double> pt);

struct RatioResult {
    Vector ratios;               // 0 where masked
    std::vector<bool> masked;    // |denominator| <= epsilon
    std::size_t n_masked = 0;
};

RatioResult param_ratio(std::span<const double> numerator, std::span<const double> denominator,
                        double epsilon = 1e-12);

// ---- clustering ------------------------------------------------------------

struct KMeansConfig {
    int k = 10;
    int max_iters = 300;
    double tol = 1e-6;
    int n_init = 20;  // seeded restarts; the lowest-inertia run is kept
    std::uint64_t seed = 0;
};

struct KMeansResult {
    std::vector<int> assignments;
    Matrix centroids;
    double inertia = 0;
    std::vector<double> inertia_trace;  // kept run, after every assignment step
    int iterations = 0;
    int best_init = 0;
};

KMeansResult kmeans_cluster(const Matrix& points, const KMeansConfig& cfg);

struct ClusterComposition {
    std::size_t poisoned = 0;
    std::size_t clean = 0;
};

struct LayerClusters {
    int layer = 0;
    std::vector<ClusterComposition> clusters;
    int dominant_cluster = -1;
    /// Share of all poisoned points that sit in the single most-poisoned cluster.
    double dominant_poison_fraction = 0;
};

struct ClusterReport {
    std::vector<LayerClusters> layers;
    double lower_mean = 0;  // layers [0, n/2)
    double upper_mean = 0;  // layers [n/2, n)
};

LayerClusters summarize_clusters(int layer, std::span<const int> assignments,
                                 std::span<const SampleMeta> meta, int k);

/// Clusters every layer's activations and summarises how poisoned rows group.
ClusterReport cluster_poison_report(const std::vector<ActivationMatrix>& activations,
                                    const KMeansConfig& cfg);

// ---- embeddings ------------------------------------------------------------

struct TsneConfig {
    std::optional<double> perplexity;  // default min(30, floor((n - 1) / 3))
    int iterations = 1000;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    double learning_rate = 200.0;
    double momentum = 0.5;
    double final_momentum = 0.8;
    int momentum_switch = 250;
    double perplexity_tol = 1e-5;
    std::uint64_t seed = 0;
};

struct TsneResult {
    Matrix coords;  // n x 2
    double perplexity = 0;
    double kl = 0;
    double kl_after_exaggeration = 0;
    std::vector<double> kl_trace;  // every 50 iterations
};

double default_perplexity(std::size_t n);

/// Row-conditional affinities p_{j|i} calibrated to the given perplexity.
Matrix tsne_conditional_p(const Matrix& points, double perplexity, double tol = 1e-5);

/// Symmetrised joint affinities (P + P^T) / 2n.
Matrix tsne_joint_p(const Matrix& conditional);

TsneResult tsne_project(const Matrix& points, const TsneConfig& cfg);

/// Fraction of points whose nearest neighbour (Euclidean, lowest index on ties) has the same label.
double neighborhood_purity(const Matrix& points, std::span<const int> labels);

}  // namespace bdlab
