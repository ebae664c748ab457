#include <algorithm>
#include <cmath>

#include "bdlab/config.hpp"
#include "bdlab/defense.hpp"
#include "bdlab/io.hpp"
#include "bdlab/tensor_file.hpp"

namespace bdlab {

void MetaConfig::validate() const {
    if (hidden1 < 1 || hidden2 < 1) throw Error("meta config: hidden sizes must be positive");
    if (epochs < 1) throw Error("meta config: epochs must be positive");
    if (!(learning_rate > 0)) throw Error("meta config: learning_rate must be positive");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
        throw Error("meta config: validation_fraction must lie in [0, 1)");
}

namespace {

struct Activations {
    Matrix z, a1, h1, a2, h2, logits;
};

Matrix standardize(const MetaClassifier& c, const std::vector<const Vector*>& rows) {
    Matrix z(rows.size(), c.input_dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Vector& x = *rows[i];
        if (x.size() != c.input_dim())
            throw Error("meta-classifier: feature length " + std::to_string(x.size()) + " does not match input " +
                        std::to_string(c.input_dim()));
        auto dst = z.row(i);
        for (std::size_t j = 0; j < x.size(); ++j) dst[j] = (x[j] - c.mean[j]) / c.scale[j];
    }
    return z;
}

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
    Matrix y = matmul(x, w);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
    return y;
}

Matrix relu(const Matrix& a) {
    Matrix h = a;
    for (double& v : h.data()) v = std::max(v, 0.0);
    return h;
}

Activations run(const MetaClassifier& c, Matrix z) {
    Activations act;
    act.z = std::move(z);
    act.a1 = affine(act.z, c.w1, c.b1);
    act.h1 = relu(act.a1);
    act.a2 = affine(act.h1, c.w2, c.b2);
    act.h2 = relu(act.a2);
    act.logits = affine(act.h2, c.w3, c.b3);
    return act;
}

double prob_poisoned(std::span<const double> logits) {
    Vector p(logits.begin(), logits.end());
    softmax_inplace(p);
    return p[1];
}

SplitMetrics score(const MetaClassifier& c, std::span<const ZooSample> zoo, const std::vector<std::size_t>& idx) {
    SplitMetrics m;
    m.n = idx.size();
    if (idx.empty()) return m;
    std::vector<const Vector*> rows;
    for (auto i : idx) rows.push_back(&zoo[i].features);
    const auto act = run(c, standardize(c, rows));
    std::size_t correct = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const double p = prob_poisoned(act.logits.row(r));
        const int label = zoo[idx[r]].label;
        if (static_cast<int>(is_poisoned(p)) == label) ++correct;
        m.loss -= std::log(std::max(label == 1 ? p : 1 - p, 1e-300));
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(idx.size());
    m.loss /= static_cast<double>(idx.size());
    return m;
}

struct Grads {
    Matrix w1, w2, w3;
    Vector b1, b2, b3;

    double squared_norm() const {
        double s = 0;
        for (const auto* v : {&w1.data(), &b1, &w2.data(), &b2, &w3.data(), &b3})
            for (double x : *v) s += x * x;
        return s;
    }

    void apply(MetaClassifier& c, double step) const {
        const auto axpy = [step](std::vector<double>& p, const std::vector<double>& d) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * d[i];
        };
        axpy(c.w1.data(), w1.data());
        axpy(c.b1, b1);
        axpy(c.w2.data(), w2.data());
        axpy(c.b2, b2);
        axpy(c.w3.data(), w3.data());
        axpy(c.b3, b3);
    }
};

Vector col_sums(const Matrix& m) {
    Vector s(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) s[j] += m(i, j);
    return s;
}

Matrix relu_back(Matrix g, const Matrix& a) {
    for (std::size_t i = 0; i < g.size(); ++i)
        if (a.data()[i] <= 0) g.data()[i] = 0;
    return g;
}

/// Mean cross-entropy over the batch; fills `g` with its gradient.
double loss_and_grads(const MetaClassifier& c, const Matrix& z, const Matrix& zt, const std::vector<int>& labels,
                      Grads* g) {
    const std::size_t n = labels.size();
    const auto act = run(c, z);
    Matrix dlog(n, 2);
    double loss = 0;
    for (std::size_t r = 0; r < n; ++r) {
        Vector p(act.logits.row(r).begin(), act.logits.row(r).end());
        softmax_inplace(p);
        const int y = labels[r];
        loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
        for (std::size_t k = 0; k < 2; ++k)
            dlog(r, k) = (p[k] - (static_cast<int>(k) == y ? 1.0 : 0.0)) / static_cast<double>(n);
    }
    g->w3 = matmul(transpose(act.h2), dlog);
    g->b3 = col_sums(dlog);
    const Matrix da2 = relu_back(matmul(dlog, transpose(c.w3)), act.a2);
    g->w2 = matmul(transpose(act.h1), da2);
    g->b2 = col_sums(da2);
    const Matrix da1 = relu_back(matmul(da2, transpose(c.w2)), act.a1);
    g->w1 = matmul(zt, da1);
    g->b1 = col_sums(da1);
    return loss / static_cast<double>(n);
}

}  // namespace

double MetaClassifier::probability(std::span<const double> features) const {
    const Vector x(features.begin(), features.end());
    const auto act = run(*this, standardize(*this, {&x}));
    return prob_poisoned(act.logits.row(0));
}

MetaTrainResult train_meta_classifier(std::span<const ZooSample> zoo, const MetaConfig& cfg) {
    cfg.validate();
    if (zoo.empty()) throw Error("meta-classifier: empty zoo");
    const std::size_t d = zoo[0].features.size();
    if (d == 0) throw Error("meta-classifier: empty feature vectors");
    std::vector<std::size_t> by_label[2];
    for (std::size_t i = 0; i < zoo.size(); ++i) {
        if (zoo[i].label != 0 && zoo[i].label != 1)
            throw Error("meta-classifier: label must be 0 or 1, got " + std::to_string(zoo[i].label));
        if (zoo[i].features.size() != d) throw Error("meta-classifier: zoo feature lengths differ");
        if (!all_finite(zoo[i].features)) throw Error("meta-classifier: non-finite features");
        by_label[zoo[i].label].push_back(i);
    }
    if (by_label[0].empty() || by_label[1].empty())
        throw Error("meta-classifier: zoo needs both clean and poisoned models");

    MetaTrainResult res;
    Rng rng(cfg.seed, 0x6d657461);
    Rng split_rng = rng.split(1);
    bool can_hold_out = true;
    std::vector<std::size_t> held[2], kept[2];
    for (int c = 0; c < 2; ++c) {
        auto idx = by_label[c];
        split_rng.shuffle(std::span<std::size_t>(idx));
        const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(idx.size())));
        if (n_val == 0 || n_val >= idx.size()) can_hold_out = false;
        held[c].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, idx.size())));
        kept[c].assign(idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, idx.size())), idx.end());
    }
    if (can_hold_out) {
        for (int c = 0; c < 2; ++c) {
            res.train_indices.insert(res.train_indices.end(), kept[c].begin(), kept[c].end());
            res.validation_indices.insert(res.validation_indices.end(), held[c].begin(), held[c].end());
        }
    } else {
        for (std::size_t i = 0; i < zoo.size(); ++i) res.train_indices.push_back(i);
        res.validation_indices = res.train_indices;
        res.validation_is_train = true;
    }
    std::sort(res.train_indices.begin(), res.train_indices.end());
    std::sort(res.validation_indices.begin(), res.validation_indices.end());

    MetaClassifier& clf = res.classifier;
    const std::size_t n = res.train_indices.size();
    clf.mean.assign(d, 0.0);
    clf.scale.assign(d, 0.0);
    for (auto i : res.train_indices)
        for (std::size_t j = 0; j < d; ++j) clf.mean[j] += zoo[i].features[j];
    for (double& m : clf.mean) m /= static_cast<double>(n);
    for (auto i : res.train_indices) {
        for (std::size_t j = 0; j < d; ++j) {
            const double t = zoo[i].features[j] - clf.mean[j];
            clf.scale[j] += t * t;
        }
    }
    for (double& s : clf.scale) {
        s = std::sqrt(s / static_cast<double>(n));
        if (!(s > 1e-12)) s = 1.0;
    }

    const auto h1 = static_cast<std::size_t>(cfg.hidden1), h2 = static_cast<std::size_t>(cfg.hidden2);
    Rng init = rng.split(2);
    const auto he = [&](std::size_t rows, std::size_t cols) {
        Matrix w(rows, cols);
        const double sd = std::sqrt(2.0 / static_cast<double>(rows));
        for (double& v : w.data()) v = sd * init.normal();
        return w;
    };
    clf.w1 = he(d, h1);
    clf.w2 = he(h1, h2);
    clf.w3 = he(h2, 2);
    clf.b1.assign(h1, 0.0);
    clf.b2.assign(h2, 0.0);
    clf.b3.assign(2, 0.0);

    std::vector<const Vector*> rows;
    for (auto i : res.train_indices) rows.push_back(&zoo[i].features);
    const Matrix z = standardize(clf, rows);
    const Matrix zt = transpose(z);

    std::vector<int> labels;
    for (auto i : res.train_indices) labels.push_back(zoo[i].label);

    // Full-batch gradient descent with Armijo backtracking, so every accepted step lowers the loss.
    double step = cfg.learning_rate;
    Grads g;
    double loss = loss_and_grads(clf, z, zt, labels, &g);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        res.loss_curve.push_back(loss);
        const double g2 = g.squared_norm();
        if (!(g2 > 0)) break;
        bool accepted = false;
        for (int tries = 0; tries < 60 && !accepted; ++tries) {
            MetaClassifier cand = clf;
            g.apply(cand, step);
            Grads cg;
            const double cl = loss_and_grads(cand, z, zt, labels, &cg);
            if (std::isfinite(cl) && cl <= loss - 1e-4 * step * g2 && cl < loss) {
                clf = std::move(cand);
                loss = cl;
                g = std::move(cg);
                accepted = true;
                step *= 2;
            } else {
                step *= 0.5;
            }
        }
        if (!accepted) break;  // converged to rounding precision
    }
    res.train = score(clf, zoo, res.train_indices);
    res.validation = score(clf, zoo, res.validation_indices);
    return res;
}

double classify_checkpoint(const MetaClassifier& clf, const Checkpoint& ckpt) {
    return clf.probability(flatten_attention_weights(ckpt));
}

namespace {

const char* const kMetaTensors[] = {"meta.mean", "meta.scale", "meta.fc1.weight", "meta.fc1.bias", "meta.fc2.weight",
                                    "meta.fc2.bias", "meta.fc3.weight", "meta.fc3.bias"};

}  // namespace

std::string encode_meta_classifier(const MetaClassifier& clf) {
    TensorFile f;
    f.tensors[kMetaTensors[0]] = Tensor::from_vector(clf.mean);
    f.tensors[kMetaTensors[1]] = Tensor::from_vector(clf.scale);
    f.tensors[kMetaTensors[2]] = Tensor::from_matrix(clf.w1);
    f.tensors[kMetaTensors[3]] = Tensor::from_vector(clf.b1);
    f.tensors[kMetaTensors[4]] = Tensor::from_matrix(clf.w2);
    f.tensors[kMetaTensors[5]] = Tensor::from_vector(clf.b2);
    f.tensors[kMetaTensors[6]] = Tensor::from_matrix(clf.w3);
    f.tensors[kMetaTensors[7]] = Tensor::from_vector(clf.b3);
    f.metadata_json = Json{{"format", "bdlab-meta-classifier"}}.dump();
    return encode_tensor_file(f);
}

void save_meta_classifier(const MetaClassifier& clf, const std::string& path) {
    write_file_atomic(path, encode_meta_classifier(clf));
}

MetaClassifier load_meta_classifier(const std::string& path) {
    try {
        return decode_meta_classifier(read_file(path));
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

MetaClassifier decode_meta_classifier(std::string_view bytes) {
    const TensorFile f = decode_tensor_file(bytes);
    if (Json::parse(f.metadata_json).value("format", "") != "bdlab-meta-classifier")
        throw Error("not a meta-classifier file");
    for (const char* name : kMetaTensors)
        if (!f.tensors.count(name)) throw Error(std::string("missing tensor ") + name);
    MetaClassifier c;
    c.mean = f.tensors.at("meta.mean").values;
    c.scale = f.tensors.at("meta.scale").values;
    c.w1 = f.tensors.at("meta.fc1.weight").to_matrix();
    c.b1 = f.tensors.at("meta.fc1.bias").values;
    c.w2 = f.tensors.at("meta.fc2.weight").to_matrix();
    c.b2 = f.tensors.at("meta.fc2.bias").values;
    c.w3 = f.tensors.at("meta.fc3.weight").to_matrix();
    c.b3 = f.tensors.at("meta.fc3.bias").values;
    const std::size_t d = c.mean.size();
    if (c.scale.size() != d || c.w1.rows() != d || c.w1.cols() != c.b1.size() || c.w2.rows() != c.w1.cols() ||
        c.w2.cols() != c.b2.size() || c.w3.rows() != c.w2.cols() || c.w3.cols() != 2 || c.b3.size() != 2)
        throw Error("inconsistent meta-classifier shapes");
    return c;
}

}  // namespace bdlab
