#include <algorithm>
#include <cmath>

#include "encoder.hpp"
#include "kernels.hpp"

namespace bdlab::detail {

FlatLayout::FlatLayout(const ModelConfig& config) : specs(tensor_schema(config)) {
    offsets.reserve(specs.size());
    for (const auto& s : specs) {
        offsets.push_back(total);
        std::size_t n = 1;
        for (auto dim : s.shape) n *= dim;
        total += n;
    }
}

std::size_t FlatLayout::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].name == name) return i;
    throw Error("unknown tensor name: " + name);
}

namespace {

template <typename P, typename Lookup>
EncoderParams<P> bind_with(const ModelConfig& config, Lookup&& get) {
    EncoderParams<P> p;
    p.tok = get(names::kEmbedTok);
    p.pos = get(names::kEmbedPos);
    p.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        auto& L = p.layers[static_cast<std::size_t>(l)];
        const auto w = ParamKind::Weight;
        const auto b = ParamKind::Bias;
        L.q_w = get(names::attn(l, AttnComponent::Q, w));
        L.q_b = get(names::attn(l, AttnComponent::Q, b));
        L.k_w = get(names::attn(l, AttnComponent::K, w));
        L.k_b = get(names::attn(l, AttnComponent::K, b));
        L.v_w = get(names::attn(l, AttnComponent::V, w));
        L.v_b = get(names::attn(l, AttnComponent::V, b));
        L.o_w = get(names::attn(l, AttnComponent::O, w));
        L.o_b = get(names::attn(l, AttnComponent::O, b));
        L.ln1_w = get(names::layer_norm(l, LayerNormSlot::LN1, w));
        L.ln1_b = get(names::layer_norm(l, LayerNormSlot::LN1, b));
        L.ln2_w = get(names::layer_norm(l, LayerNormSlot::LN2, w));
        L.ln2_b = get(names::layer_norm(l, LayerNormSlot::LN2, b));
        L.w1 = get(names::ffn(l, 1, w));
        L.b1 = get(names::ffn(l, 1, b));
        L.w2 = get(names::ffn(l, 2, w));
        L.b2 = get(names::ffn(l, 2, b));
    }
    p.head_w = get(names::kHeadWeight);
    p.head_b = get(names::kHeadBias);
    return p;
}

}  // namespace

ConstParams bind(const Checkpoint& ckpt) {
    return bind_with<const double*>(ckpt.config, [&](const std::string& name) {
        return ckpt.at(name).values.data();
    });
}

ConstParams bind(const ModelConfig& config, const FlatLayout& layout, const double* base) {
    return bind_with<const double*>(config, [&](const std::string& name) {
        return base + layout.offsets[layout.index_of(name)];
    });
}

MutParams bind_mut(const ModelConfig& config, const FlatLayout& layout, double* base) {
    return bind_with<double*>(config, [&](const std::string& name) {
        return base + layout.offsets[layout.index_of(name)];
    });
}

std::vector<double> flatten(const Checkpoint& ckpt, const FlatLayout& layout) {
    std::vector<double> flat(layout.total);
    for (std::size_t i = 0; i < layout.specs.size(); ++i) {
        const auto& t = ckpt.at(layout.specs[i].name);
        std::copy(t.values.begin(), t.values.end(), flat.begin() + layout.offsets[i]);
    }
    return flat;
}

void unflatten(std::span<const double> flat, const FlatLayout& layout, Checkpoint& ckpt) {
    for (std::size_t i = 0; i < layout.specs.size(); ++i) {
        auto& t = ckpt.at(layout.specs[i].name);
        auto first = flat.begin() + static_cast<std::ptrdiff_t>(layout.offsets[i]);
        std::copy(first, first + static_cast<std::ptrdiff_t>(t.values.size()), t.values.begin());
    }
}

std::size_t effective_length(std::span<const TokenId> tokens) {
    std::size_t n = tokens.size();
    while (n > 1 && tokens[n - 1] == kPadToken) --n;
    return n;
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw Error("forward: empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(config.max_seq_len)) {
        throw Error("forward: sequence length " + std::to_string(tokens.size()) +
                    " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= config.vocab_size) {
            throw Error("forward: unknown token id " + std::to_string(tokens[i]) +
                        " at position " + std::to_string(i));
        }
    }
}

namespace {

// GELU tanh-approximation constants, matching bdlab::gelu.
constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluA = 0.044715;

// Row-wise layer norm that keeps xhat and 1/std for the backward pass.
void layer_norm_rows(std::size_t n, std::size_t d, const double* in, const double* gamma,
                     const double* beta, double* xhat, double* inv, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = in + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += r[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (r[j] - mean) * (r[j] - mean);
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + kLayerNormEps);
        inv[i] = s;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (r[j] - mean) * s;
            xhat[i * d + j] = xh;
            out[i * d + j] = gamma[j] * xh + beta[j];
        }
    }
}

void layer_norm_rows_backward(std::size_t n, std::size_t d, const double* dout,
                              const double* xhat, const double* inv, const double* gamma,
                              double* dgamma, double* dbeta, double* din) {
    std::vector<double> dxhat(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* dy = dout + i * d;
        const double* xh = xhat + i * d;
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dgamma[j] += dy[j] * xh[j];
            dbeta[j] += dy[j];
            dxhat[j] = dy[j] * gamma[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) din[i * d + j] = inv[i] * (dxhat[j] - m1 - xh[j] * m2);
    }
}

void linear(std::size_t n, std::size_t in, std::size_t out, const double* x, const double* w,
            const double* b, double* y) {
    kernels::gemm(n, in, out, x, w, y);
    kernels::add_row_bias(n, out, b, y);
}

}  // namespace


void encode(const ModelConfig& config, const ConstParams& p,
            std::span<const std::span<const TokenId>> batch, ForwardCache& cache) {
    if (batch.empty()) throw Error("encode: empty batch");
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto f = static_cast<std::size_t>(config.d_ffn);
    const auto heads = static_cast<std::size_t>(config.n_heads);
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.offsets.assign(1, 0);
    cache.prob_offsets.clear();
    cache.tokens.clear();
    cache.positions.clear();
    std::size_t prob_total = 0;
    for (const auto& tokens : batch) {
        check_tokens(config, tokens);
        const std::size_t n = effective_length(tokens);
        for (std::size_t i = 0; i < n; ++i) {
            cache.tokens.push_back(tokens[i]);
            cache.positions.push_back(i);
        }
        cache.offsets.push_back(cache.offsets.back() + n);
        cache.prob_offsets.push_back(prob_total);
        prob_total += heads * n * n;
    }
    const std::size_t rows = cache.rows();
    const std::size_t seqs = cache.sequences();
    cache.layers.resize(p.layers.size());

    std::vector<double> x(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* te = p.tok + static_cast<std::size_t>(cache.tokens[r]) * d;
        const double* pe = p.pos + cache.positions[r] * d;
        for (std::size_t j = 0; j < d; ++j) x[r * d + j] = te[j] + pe[j];
    }

    std::vector<double> scratch(rows * d);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& L = p.layers[l];
        auto& C = cache.layers[l];
        C.x = x;
        C.q.resize(rows * d);
        C.k.resize(rows * d);
        C.v.resize(rows * d);
        linear(rows, d, d, x.data(), L.q_w, L.q_b, C.q.data());
        linear(rows, d, d, x.data(), L.k_w, L.k_b, C.k.data());
        linear(rows, d, d, x.data(), L.v_w, L.v_b, C.v.data());

        C.probs.assign(prob_total, 0.0);
        C.ctx.assign(rows * d, 0.0);
        for (std::size_t s = 0; s < seqs; ++s) {
            const std::size_t base = cache.offsets[s];
            const std::size_t n = cache.offsets[s + 1] - base;
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < n; ++i) {
                    double* prow = C.probs.data() + cache.prob_offsets[s] + (h * n + i) * n;
                    const double* qi = C.q.data() + (base + i) * d + off;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double* kj = C.k.data() + (base + j) * d + off;
                        double dot = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                        prow[j] = dot * scale;
                    }
                    softmax_inplace({prow, n});
                    double* ci = C.ctx.data() + (base + i) * d + off;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double pij = prow[j];
                        const double* vj = C.v.data() + (base + j) * d + off;
                        for (std::size_t c = 0; c < dh; ++c) ci[c] += pij * vj[c];
                    }
                }
            }
        }

        // h1 = LN1(x + ctx Wo + bo)
        linear(rows, d, d, C.ctx.data(), L.o_w, L.o_b, scratch.data());
        for (std::size_t i = 0; i < rows * d; ++i) scratch[i] += x[i];
        C.xhat1.resize(rows * d);
        C.inv1.resize(rows);
        C.h1.resize(rows * d);
        layer_norm_rows(rows, d, scratch.data(), L.ln1_w, L.ln1_b, C.xhat1.data(), C.inv1.data(),
                        C.h1.data());

        // out = LN2(h1 + gelu(h1 W1 + b1) W2 + b2)
        C.f1.resize(rows * f);
        C.g.resize(rows * f);
        C.tanh_u.resize(rows * f);
        linear(rows, d, f, C.h1.data(), L.w1, L.b1, C.f1.data());
        for (std::size_t i = 0; i < rows * f; ++i) {
            const double xv = C.f1[i];
            const double t = std::tanh(kGeluC * (xv + kGeluA * xv * xv * xv));
            C.tanh_u[i] = t;
            C.g[i] = 0.5 * xv * (1.0 + t);
        }
        linear(rows, f, d, C.g.data(), L.w2, L.b2, scratch.data());
        for (std::size_t i = 0; i < rows * d; ++i) scratch[i] += C.h1[i];
        C.xhat2.resize(rows * d);
        C.inv2.resize(rows);
        C.out.resize(rows * d);
        layer_norm_rows(rows, d, scratch.data(), L.ln2_w, L.ln2_b, C.xhat2.data(), C.inv2.data(),
                        C.out.data());
        x = C.out;
    }

    const auto classes = static_cast<std::size_t>(config.n_classes);
    cache.logits.assign(seqs * classes, 0.0);
    for (std::size_t s = 0; s < seqs; ++s) {
        const double* cls = x.data() + cache.offsets[s] * d;
        double* z = cache.logits.data() + s * classes;
        for (std::size_t c = 0; c < classes; ++c) z[c] = p.head_b[c];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t c = 0; c < classes; ++c) z[c] += cls[i] * p.head_w[i * classes + c];
    }
}

void encode(const ModelConfig& config, const ConstParams& p, std::span<const TokenId> tokens,
            ForwardCache& cache) {
    const std::span<const TokenId> one[1] = {tokens};
    encode(config, p, std::span<const std::span<const TokenId>>(one), cache);
}

double cross_entropy(std::span<const double> logits, int label) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    return std::log(sum) + mx - logits[static_cast<std::size_t>(label)];
}

double backward(const ModelConfig& config, const ConstParams& p, const ForwardCache& cache,
                std::span<const int> labels, const MutParams& grads) {
    const std::size_t rows = cache.rows();
    const std::size_t seqs = cache.sequences();
    if (labels.size() != seqs) throw Error("backward: label count does not match batch size");
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto f = static_cast<std::size_t>(config.d_ffn);
    const auto heads = static_cast<std::size_t>(config.n_heads);
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto classes = static_cast<std::size_t>(config.n_classes);

    // Loss head: only the [CLS] row of each sequence receives gradient.
    double loss = 0.0;
    std::vector<double> dx(rows * d, 0.0);
    const double* out = cache.layers.back().out.data();
    std::vector<double> dlogits(classes);
    for (std::size_t s = 0; s < seqs; ++s) {
        const std::span<const double> z(cache.logits.data() + s * classes, classes);
        loss += cross_entropy(z, labels[s]);
        dlogits.assign(z.begin(), z.end());
        softmax_inplace(dlogits);
        dlogits[static_cast<std::size_t>(labels[s])] -= 1.0;
        const double* cls = out + cache.offsets[s] * d;
        double* dcls = dx.data() + cache.offsets[s] * d;
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                grads.head_w[i * classes + c] += cls[i] * dlogits[c];
                acc += p.head_w[i * classes + c] * dlogits[c];
            }
            dcls[i] = acc;
        }
        for (std::size_t c = 0; c < classes; ++c) grads.head_b[c] += dlogits[c];
    }

    std::vector<double> dr(rows * d), dh1(rows * d), dg(rows * f), dctx(rows * d);
    std::vector<double> dq(rows * d), dk(rows * d), dv(rows * d);
    std::vector<double> dp;

    for (std::size_t li = p.layers.size(); li-- > 0;) {
        const auto& L = p.layers[li];
        const auto& G = grads.layers[li];
        const auto& C = cache.layers[li];

        // out = LN2(h1 + ffn(h1))
        layer_norm_rows_backward(rows, d, dx.data(), C.xhat2.data(), C.inv2.data(), L.ln2_w,
                                 G.ln2_w, G.ln2_b, dr.data());
        dh1 = dr;
        kernels::gemm_at_acc(rows, f, d, C.g.data(), dr.data(), G.w2);
        kernels::sum_rows_acc(rows, d, dr.data(), G.b2);
        kernels::gemm_bt(rows, d, f, dr.data(), L.w2, dg.data());
        for (std::size_t i = 0; i < rows * f; ++i) {
            const double xv = C.f1[i];
            const double t = C.tanh_u[i];
            dg[i] *= 0.5 * (1.0 + t) +
                     0.5 * xv * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * xv * xv);
        }
        kernels::gemm_at_acc(rows, d, f, C.h1.data(), dg.data(), G.w1);
        kernels::sum_rows_acc(rows, f, dg.data(), G.b1);
        kernels::gemm_bt(rows, f, d, dg.data(), L.w1, dh1.data(), true);

        // h1 = LN1(x + attn(x))
        layer_norm_rows_backward(rows, d, dh1.data(), C.xhat1.data(), C.inv1.data(), L.ln1_w,
                                 G.ln1_w, G.ln1_b, dr.data());
        kernels::gemm_at_acc(rows, d, d, C.ctx.data(), dr.data(), G.o_w);
        kernels::sum_rows_acc(rows, d, dr.data(), G.o_b);
        kernels::gemm_bt(rows, d, d, dr.data(), L.o_w, dctx.data());

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        for (std::size_t s = 0; s < seqs; ++s) {
            const std::size_t base = cache.offsets[s];
            const std::size_t n = cache.offsets[s + 1] - base;
            dp.resize(n);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* prow = C.probs.data() + cache.prob_offsets[s] + (h * n + i) * n;
                    const double* dci = dctx.data() + (base + i) * d + off;
                    double weighted = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double* vj = C.v.data() + (base + j) * d + off;
                        double dot = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) dot += dci[c] * vj[c];
                        dp[j] = dot;
                        weighted += prow[j] * dot;
                        double* dvj = dv.data() + (base + j) * d + off;
                        for (std::size_t c = 0; c < dh; ++c) dvj[c] += prow[j] * dci[c];
                    }
                    const double* qi = C.q.data() + (base + i) * d + off;
                    double* dqi = dq.data() + (base + i) * d + off;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double ds = prow[j] * (dp[j] - weighted) * scale;
                        const double* kj = C.k.data() + (base + j) * d + off;
                        double* dkj = dk.data() + (base + j) * d + off;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dqi[c] += ds * kj[c];
                            dkj[c] += ds * qi[c];
                        }
                    }
                }
            }
        }

        // Residual path plus the three projections back into the layer input.
        dx = dr;
        kernels::gemm_at_acc(rows, d, d, C.x.data(), dq.data(), G.q_w);
        kernels::sum_rows_acc(rows, d, dq.data(), G.q_b);
        kernels::gemm_bt(rows, d, d, dq.data(), L.q_w, dx.data(), true);
        kernels::gemm_at_acc(rows, d, d, C.x.data(), dk.data(), G.k_w);
        kernels::sum_rows_acc(rows, d, dk.data(), G.k_b);
        kernels::gemm_bt(rows, d, d, dk.data(), L.k_w, dx.data(), true);
        kernels::gemm_at_acc(rows, d, d, C.x.data(), dv.data(), G.v_w);
        kernels::sum_rows_acc(rows, d, dv.data(), G.v_b);
        kernels::gemm_bt(rows, d, d, dv.data(), L.v_w, dx.data(), true);
    }

    for (std::size_t r = 0; r < rows; ++r) {
        double* tg = grads.tok + static_cast<std::size_t>(cache.tokens[r]) * d;
        double* pg = grads.pos + cache.positions[r] * d;
        for (std::size_t j = 0; j < d; ++j) {
            tg[j] += dx[r * d + j];
            pg[j] += dx[r * d + j];
        }
    }
    return loss;
}

}  // namespace bdlab::detail
