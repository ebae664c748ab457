#include <cmath>
#include <cstdio>
#include <sstream>

#include "bdlab/defense.hpp"

namespace bdlab {

void ResetPolicy::validate() const {
    if (!(threshold > 1.0) || !std::isfinite(threshold))
        throw Error("reset threshold must be a finite value > 1, got " + std::to_string(threshold));
    if (!(epsilon >= 0.0)) throw Error("reset epsilon must be non-negative");
}

bool should_reset(double w_ft, double w_pt, const ResetPolicy& policy) {
    if (std::abs(w_pt) <= policy.epsilon) return std::abs(w_ft) > policy.epsilon;
    const double r = w_ft / w_pt;
    return r > policy.threshold || r < 1.0 / policy.threshold || r < 0.0;
}

std::size_t qkv_weight_count(const ModelConfig& config) {
    const auto d = static_cast<std::size_t>(config.d_model);
    return static_cast<std::size_t>(config.n_layers) * 3 * d * d;
}

namespace {

void require_same_schema(const Checkpoint& a, const Checkpoint& b, const char* what) {
    ModelConfig ca = a.config, cb = b.config;
    ca.freeze_layer_norm = cb.freeze_layer_norm = false;
    if (!(ca == cb)) throw Error(std::string(what) + ": checkpoints use different model configs");
    a.validate();
    b.validate();
}

constexpr AttnComponent kQkv[] = {AttnComponent::Q, AttnComponent::K, AttnComponent::V};

}  // namespace

ResetResult reset_weights(const Checkpoint& ft, const Checkpoint& pt, const ResetPolicy& policy) {
    policy.validate();
    require_same_schema(ft, pt, "reset_weights");
    ResetResult out{ft, 0};
    for (int l = 0; l < ft.config.n_layers; ++l) {
        for (auto c : kQkv) {
            const auto name = names::attn(l, c, ParamKind::Weight);
            auto& dst = out.checkpoint.at(name).values;
            const auto& base = pt.at(name).values;
            for (std::size_t i = 0; i < dst.size(); ++i) {
                if (should_reset(dst[i], base[i], policy)) {
                    dst[i] = base[i];
                    ++out.n_reset;
                }
            }
        }
    }
    return out;
}

std::vector<SweepRow> reset_sweep(const Checkpoint& clean_ft, const Checkpoint& poisoned_ft, const Checkpoint& pt,
                                  std::span<const double> thresholds, const Dataset& clean_test, int target_label,
                                  double epsilon) {
    for (double t : thresholds) ResetPolicy{t, epsilon}.validate();
    require_same_schema(clean_ft, pt, "reset_sweep");
    require_same_schema(poisoned_ft, pt, "reset_sweep");
    const auto evaluate = [&](const Checkpoint& clean, const Checkpoint& poisoned, SweepRow row) {
        row.clean_acc = evaluate_accuracy(clean, clean_test);
        row.poisoned_acc = evaluate_accuracy(poisoned, clean_test);
        row.poisoned_asr = attack_success_rate(poisoned, clean_test, target_label);
        return row;
    };
    std::vector<SweepRow> rows;
    rows.push_back(evaluate(clean_ft, poisoned_ft, SweepRow{}));
    for (double t : thresholds) {
        const ResetPolicy policy{t, epsilon};
        const auto c = reset_weights(clean_ft, pt, policy);
        const auto p = reset_weights(poisoned_ft, pt, policy);
        SweepRow row;
        row.threshold = t;
        row.n_reset = p.n_reset;
        row.n_reset_clean = c.n_reset;
        rows.push_back(evaluate(c.checkpoint, p.checkpoint, row));
    }
    return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream os;
    os << "threshold,n_reset,clean_acc,poisoned_acc,poisoned_asr\n";
    char buf[160];
    for (const auto& r : rows) {
        std::string label = "No-Resetting";
        if (r.threshold) {
            std::snprintf(buf, sizeof buf, "%.6g", *r.threshold);
            label = buf;
        }
        std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,%.6f\n", r.n_reset, r.clean_acc, r.poisoned_acc,
                      r.poisoned_asr);
        os << label << buf;
    }
    return os.str();
}

Vector flatten_attention_weights(const Checkpoint& ckpt) {
    Vector out;
    out.reserve(qkv_weight_count(ckpt.config));
    for (int l = 0; l < ckpt.config.n_layers; ++l) {
        for (auto c : kQkv) {
            const auto& v = ckpt.at(names::attn(l, c, ParamKind::Weight)).values;
            out.insert(out.end(), v.begin(), v.end());
        }
    }
    return out;
}

void unflatten_attention_weights(std::span<const double> features, Checkpoint& ckpt) {
    if (features.size() != qkv_weight_count(ckpt.config))
        throw Error("unflatten_attention_weights: expected " + std::to_string(qkv_weight_count(ckpt.config)) +
                    " values, got " + std::to_string(features.size()));
    std::size_t pos = 0;
    for (int l = 0; l < ckpt.config.n_layers; ++l) {
        for (auto c : kQkv) {
            auto& v = ckpt.at(names::attn(l, c, ParamKind::Weight)).values;
            std::copy(features.begin() + static_cast<std::ptrdiff_t>(pos),
                      features.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
            pos += v.size();
        }
    }
}

}  // namespace bdlab
