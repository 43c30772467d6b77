#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "medit/error.hpp"
#include "medit/rng.hpp"
#include "medit/tensor.hpp"
#include "medit/vocab.hpp"

namespace medit {

struct ModelConfig {
    int n_layers = 4;
    int d_model = 64;
    int d_ff = 256;
    int n_heads = 4;
    int context = 64;
    int vocab_size = 0;

    int head_dim() const { return d_model / n_heads; }
};

struct LayerParams {
    Mat wq, wk, wv, wo;              // d x d, applied as y = x * W^T
    Mat w_in;                        // d_ff x d
    Mat w_out;                       // d x d_ff
    std::vector<double> ln1_g, ln1_b;
    std::vector<double> ln2_g, ln2_b;
};

// All weights of the toy decoder-only LM. Values are immutable by
// convention: every edit or training step produces a new copy.
struct TransformerParams {
    ModelConfig config;
    Vocabulary vocab;
    Mat embed;     // V x d
    std::vector<LayerParams> layers;
    std::vector<double> lnf_g, lnf_b;
    Mat unembed;   // V x d, logits = x * unembed^T
};

inline TransformerParams init_params(const ModelConfig& config, Vocabulary vocab, uint64_t seed) {
    TransformerParams p;
    p.config = config;
    p.config.vocab_size = vocab.size();
    p.vocab = std::move(vocab);
    Rng rng(seed);
    const int d = config.d_model;
    const double std0 = 0.02;
    // residual-writing projections get the usual depth scaling
    const double res_scale = 1.0 / std::sqrt(2.0 * config.n_layers);
    p.embed = Mat(static_cast<size_t>(p.config.vocab_size), static_cast<size_t>(d));
    p.embed.fill_normal(rng, std0);
    p.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& l : p.layers) {
        l.wq = Mat(d, d); l.wq.fill_normal(rng, std0);
        l.wk = Mat(d, d); l.wk.fill_normal(rng, std0);
        l.wv = Mat(d, d); l.wv.fill_normal(rng, std0);
        l.wo = Mat(d, d); l.wo.fill_normal(rng, std0 * res_scale);
        l.w_in = Mat(static_cast<size_t>(config.d_ff), static_cast<size_t>(d));
        l.w_in.fill_normal(rng, std0);
        l.w_out = Mat(static_cast<size_t>(d), static_cast<size_t>(config.d_ff));
        l.w_out.fill_normal(rng, std0 * res_scale);
        l.ln1_g.assign(d, 1.0); l.ln1_b.assign(d, 0.0);
        l.ln2_g.assign(d, 1.0); l.ln2_b.assign(d, 0.0);
    }
    p.lnf_g.assign(d, 1.0);
    p.lnf_b.assign(d, 0.0);
    p.unembed = Mat(static_cast<size_t>(p.config.vocab_size), static_cast<size_t>(d));
    p.unembed.fill_normal(rng, std0);
    return p;
}

// ---- elementwise kernels ----

// The MLP nonlinearity: smooth and differentiable everywhere so the editing
// optimizer is well-posed.
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

constexpr double kLnEps = 1e-5;

// Row-wise layernorm; mean/rstd recorded for the backward pass.
inline void layernorm_rows(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
                           Mat& out, std::vector<double>& mean, std::vector<double>& rstd) {
    const size_t R = x.rows, C = x.cols;
    out.resize(R, C);
    mean.resize(R);
    rstd.resize(R);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && R > 8)
    for (size_t i = 0; i < R; ++i) {
        const double* xi = x.row(i);
        double m = 0.0;
        for (size_t j = 0; j < C; ++j) m += xi[j];
        m /= static_cast<double>(C);
        double v = 0.0;
        for (size_t j = 0; j < C; ++j) {
            const double s = xi[j] - m;
            v += s * s;
        }
        v /= static_cast<double>(C);
        const double r = 1.0 / std::sqrt(v + kLnEps);
        mean[i] = m;
        rstd[i] = r;
        double* oi = out.row(i);
        for (size_t j = 0; j < C; ++j) oi[j] = (xi[j] - m) * r * g[j] + b[j];
    }
}

inline void softmax_row(double* x, size_t n) {
    double mx = x[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const double inv = 1.0 / sum;
    for (size_t i = 0; i < n; ++i) x[i] *= inv;
}

inline double log_sum_exp(const double* x, size_t n) {
    double mx = x[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
    return mx + std::log(sum);
}

// Sinusoidal absolute position encoding; keeps positional information out of
// the parameter set entirely.
inline void position_encoding(int pos, int d, double* out) {
    for (int j = 0; j < d; j += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
        const double angle = static_cast<double>(pos) * freq;
        out[j] = std::sin(angle);
        if (j + 1 < d) out[j + 1] = std::cos(angle);
    }
}

// ---- batched forward ----

// A padded batch. targets[b*T+t] is the id position t must predict, or -1
// when the position carries no loss.
struct BatchInput {
    size_t B = 0, T = 0;
    std::vector<int> ids;      // B*T, kPad beyond each sequence
    std::vector<int> targets;  // B*T, -1 = masked

    static BatchInput single(const std::vector<int>& seq) {
        BatchInput b;
        b.B = 1;
        b.T = seq.size();
        b.ids = seq;
        b.targets.assign(seq.size(), -1);
        return b;
    }
};

// Residual-stream offset injected at the output of one layer, one position
// per batch row (-1 = skip that row).
struct DeltaSpec {
    int layer = -1;
    std::vector<int> pos;
    const std::vector<double>* delta = nullptr;
};

struct LayerCache {
    Mat n1, q, k, v, att, x_mid, n2, pre, act, mlp_out, x_out;
    std::vector<double> probs;  // B*H*T*T attention weights
    std::vector<double> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
};

struct ForwardCache {
    size_t B = 0, T = 0;
    Mat x0;
    std::vector<LayerCache> layers;
    Mat nf;
    std::vector<double> lnf_mean, lnf_rstd;
    bool full_logits = true;
    Mat logits;                     // full: (B*T) x V; compact: loss_rows.size() x V
    std::vector<size_t> loss_rows;  // rows with a target, in row order
    double loss = 0.0;
    size_t loss_count = 0;
};

struct ForwardOptions {
    bool full_logits = true;
};

inline void validate_input(const TransformerParams& p, const BatchInput& in) {
    if (in.B == 0 || in.T == 0) throw PipelineError("empty sequence");
    if (in.T > static_cast<size_t>(p.config.context)) {
        throw PipelineError("sequence too long: " + std::to_string(in.T) + " > context " +
                            std::to_string(p.config.context));
    }
    for (int id : in.ids) {
        if (id < 0 || id >= p.config.vocab_size) throw PipelineError("token id out of range");
    }
}

inline void forward_batch(const TransformerParams& p, const BatchInput& in, ForwardCache& cache,
                          const DeltaSpec* delta = nullptr, const ForwardOptions& opts = {}) {
    validate_input(p, in);
    const size_t B = in.B, T = in.T;
    const size_t R = B * T;
    const int d = p.config.d_model;
    const int H = p.config.n_heads;
    const int hd = p.config.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    cache.B = B;
    cache.T = T;
    cache.layers.resize(p.layers.size());
    cache.full_logits = opts.full_logits;

    // token embedding + position encoding
    cache.x0.resize(R, static_cast<size_t>(d));
    std::vector<double> pe(static_cast<size_t>(d));
    for (size_t b = 0; b < B; ++b) {
        for (size_t t = 0; t < T; ++t) {
            const size_t r = b * T + t;
            const double* e = p.embed.row(static_cast<size_t>(in.ids[r]));
            double* x = cache.x0.row(r);
            position_encoding(static_cast<int>(t), d, pe.data());
            for (int j = 0; j < d; ++j) x[j] = e[j] + pe[j];
        }
    }

    const Mat* x_prev = &cache.x0;
    for (size_t li = 0; li < p.layers.size(); ++li) {
        const LayerParams& lp = p.layers[li];
        LayerCache& lc = cache.layers[li];

        layernorm_rows(*x_prev, lp.ln1_g, lp.ln1_b, lc.n1, lc.ln1_mean, lc.ln1_rstd);
        matmul_nt(lc.n1, lp.wq, lc.q);
        matmul_nt(lc.n1, lp.wk, lc.k);
        matmul_nt(lc.n1, lp.wv, lc.v);

        lc.att.resize(R, static_cast<size_t>(d));
        lc.probs.assign(B * static_cast<size_t>(H) * T * T, 0.0);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && B > 1)
        for (size_t b = 0; b < B; ++b) {
            std::vector<double> srow(T);
            for (int h = 0; h < H; ++h) {
                const size_t off = h * static_cast<size_t>(hd);
                for (size_t i = 0; i < T; ++i) {
                    const double* qi = lc.q.row(b * T + i) + off;
                    for (size_t j = 0; j <= i; ++j) {
                        srow[j] = att_scale * dot(qi, lc.k.row(b * T + j) + off, hd);
                    }
                    softmax_row(srow.data(), i + 1);
                    double* prow = lc.probs.data() + ((b * H + h) * T + i) * T;
                    for (size_t j = 0; j <= i; ++j) prow[j] = srow[j];
                    double* a = lc.att.row(b * T + i) + off;
                    for (int u = 0; u < hd; ++u) a[u] = 0.0;
                    for (size_t j = 0; j <= i; ++j) {
                        const double pj = srow[j];
                        const double* vj = lc.v.row(b * T + j) + off;
                        for (int u = 0; u < hd; ++u) a[u] += pj * vj[u];
                    }
                }
            }
        }

        matmul_nt(lc.att, lp.wo, lc.x_mid);  // x_mid holds the projection, add residual next
        for (size_t r = 0; r < R; ++r) {
            double* xm = lc.x_mid.row(r);
            const double* xp = x_prev->row(r);
            for (int j = 0; j < d; ++j) xm[j] += xp[j];
        }

        layernorm_rows(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.n2, lc.ln2_mean, lc.ln2_rstd);
        matmul_nt(lc.n2, lp.w_in, lc.pre);
        lc.act.resize(lc.pre.rows, lc.pre.cols);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && R > 8)
        for (size_t r = 0; r < R; ++r) {
            const double* pr = lc.pre.row(r);
            double* ar = lc.act.row(r);
            for (size_t j = 0; j < lc.pre.cols; ++j) ar[j] = silu(pr[j]);
        }
        matmul_nt(lc.act, lp.w_out, lc.mlp_out);

        lc.x_out.resize(R, static_cast<size_t>(d));
        for (size_t r = 0; r < R; ++r) {
            double* xo = lc.x_out.row(r);
            const double* xm = lc.x_mid.row(r);
            const double* mo = lc.mlp_out.row(r);
            for (int j = 0; j < d; ++j) xo[j] = xm[j] + mo[j];
        }

        if (delta != nullptr && delta->layer == static_cast<int>(li)) {
            for (size_t b = 0; b < B; ++b) {
                const int pos = delta->pos[b];
                if (pos < 0) continue;
                double* xo = lc.x_out.row(b * T + static_cast<size_t>(pos));
                for (int j = 0; j < d; ++j) xo[j] += (*delta->delta)[static_cast<size_t>(j)];
            }
        }

        x_prev = &lc.x_out;
    }

    layernorm_rows(*x_prev, p.lnf_g, p.lnf_b, cache.nf, cache.lnf_mean, cache.lnf_rstd);

    cache.loss_rows.clear();
    for (size_t r = 0; r < R; ++r) {
        if (in.targets[r] >= 0) cache.loss_rows.push_back(r);
    }

    if (opts.full_logits) {
        matmul_nt(cache.nf, p.unembed, cache.logits);
    } else {
        // logits only at rows that carry loss
        const size_t L = cache.loss_rows.size();
        cache.logits.resize(L, p.unembed.rows);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && L > 1)
        for (size_t i = 0; i < L; ++i) {
            const double* x = cache.nf.row(cache.loss_rows[i]);
            double* out = cache.logits.row(i);
            for (size_t vrow = 0; vrow < p.unembed.rows; ++vrow) {
                out[vrow] = dot(x, p.unembed.row(vrow), static_cast<size_t>(d));
            }
        }
    }

    // mean negative log-likelihood over the designated rows; per-row values
    // are reduced in row order so the total is thread-count invariant
    cache.loss = 0.0;
    cache.loss_count = cache.loss_rows.size();
    {
        const size_t L = cache.loss_rows.size();
        std::vector<double> row_nll(L);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && L > 32)
        for (size_t i = 0; i < L; ++i) {
            const size_t r = cache.loss_rows[i];
            const double* lrow = opts.full_logits ? cache.logits.row(r) : cache.logits.row(i);
            row_nll[i] = log_sum_exp(lrow, cache.logits.cols) - lrow[static_cast<size_t>(in.targets[r])];
        }
        for (size_t i = 0; i < L; ++i) cache.loss += row_nll[i];
    }
    if (cache.loss_count > 0) cache.loss /= static_cast<double>(cache.loss_count);
    if (!std::isfinite(cache.loss)) throw PipelineError("non-finite loss in forward pass");
}

// ---- single-sequence trace (the key/value view of the MLP) ----

struct HiddenTrace {
    int n_layers = 0;
    size_t T = 0;
    std::vector<Mat> h;  // per layer: T x d residual stream after the layer
    std::vector<Mat> k;  // per layer: T x d_ff MLP keys
    std::vector<Mat> m;  // per layer: T x d MLP outputs
    Mat logits;          // T x V
};

inline std::pair<Mat, HiddenTrace> forward(const TransformerParams& p, const TokenSequence& input) {
    if (input.empty()) throw PipelineError("empty sequence");
    BatchInput in = BatchInput::single(input.ids);
    ForwardCache cache;
    forward_batch(p, in, cache);
    HiddenTrace trace;
    trace.n_layers = p.config.n_layers;
    trace.T = in.T;
    trace.h.reserve(cache.layers.size());
    trace.k.reserve(cache.layers.size());
    trace.m.reserve(cache.layers.size());
    for (const auto& lc : cache.layers) {
        trace.h.push_back(lc.x_out);
        trace.k.push_back(lc.act);
        trace.m.push_back(lc.mlp_out);
    }
    trace.logits = cache.logits;
    return {cache.logits, std::move(trace)};
}

// ---- incremental decoding with a per-layer KV cache ----

struct DecodeState {
    std::vector<Mat> k_cache;  // per layer: context x d
    std::vector<Mat> v_cache;
    int len = 0;

    void reset(const ModelConfig& c) {
        k_cache.assign(static_cast<size_t>(c.n_layers), Mat(c.context, c.d_model));
        v_cache.assign(static_cast<size_t>(c.n_layers), Mat(c.context, c.d_model));
        len = 0;
    }
};

// Feeds one token, returns the logits row for the next-token distribution.
// Position-i computations are identical to the full forward pass, so decoded
// logits match forward() bitwise.
inline std::vector<double> decode_step(const TransformerParams& p, DecodeState& state, int token_id) {
    const int d = p.config.d_model;
    const int H = p.config.n_heads;
    const int hd = p.config.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (state.len >= p.config.context) throw PipelineError("sequence too long: decode past context");
    if (token_id < 0 || token_id >= p.config.vocab_size) throw PipelineError("token id out of range");

    const int pos = state.len;
    std::vector<double> x(static_cast<size_t>(d));
    position_encoding(pos, d, x.data());
    const double* e = p.embed.row(static_cast<size_t>(token_id));
    for (int j = 0; j < d; ++j) x[j] += e[j];

    std::vector<double> n1(static_cast<size_t>(d)), q(static_cast<size_t>(d)), att(static_cast<size_t>(d));
    std::vector<double> n2(static_cast<size_t>(d)), act(static_cast<size_t>(p.config.d_ff));
    std::vector<double> scores(static_cast<size_t>(pos) + 1);

    for (size_t li = 0; li < p.layers.size(); ++li) {
        const LayerParams& lp = p.layers[li];
        // ln1
        {
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += x[static_cast<size_t>(j)];
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double s = x[static_cast<size_t>(j)] - mean;
                var += s * s;
            }
            var /= d;
            const double r = 1.0 / std::sqrt(var + kLnEps);
            for (int j = 0; j < d; ++j) {
                n1[static_cast<size_t>(j)] = (x[static_cast<size_t>(j)] - mean) * r * lp.ln1_g[static_cast<size_t>(j)] + lp.ln1_b[static_cast<size_t>(j)];
            }
        }
        double* krow = state.k_cache[li].row(static_cast<size_t>(pos));
        double* vrow = state.v_cache[li].row(static_cast<size_t>(pos));
        for (int j = 0; j < d; ++j) {
            q[static_cast<size_t>(j)] = dot(n1.data(), lp.wq.row(static_cast<size_t>(j)), static_cast<size_t>(d));
            krow[j] = dot(n1.data(), lp.wk.row(static_cast<size_t>(j)), static_cast<size_t>(d));
            vrow[j] = dot(n1.data(), lp.wv.row(static_cast<size_t>(j)), static_cast<size_t>(d));
        }
        for (int h = 0; h < H; ++h) {
            const size_t off = static_cast<size_t>(h) * static_cast<size_t>(hd);
            for (int j = 0; j <= pos; ++j) {
                scores[static_cast<size_t>(j)] =
                    att_scale * dot(q.data() + off, state.k_cache[li].row(static_cast<size_t>(j)) + off, static_cast<size_t>(hd));
            }
            softmax_row(scores.data(), static_cast<size_t>(pos) + 1);
            double* a = att.data() + off;
            for (int u = 0; u < hd; ++u) a[u] = 0.0;
            for (int j = 0; j <= pos; ++j) {
                const double pj = scores[static_cast<size_t>(j)];
                const double* vj = state.v_cache[li].row(static_cast<size_t>(j)) + off;
                for (int u = 0; u < hd; ++u) a[u] += pj * vj[u];
            }
        }
        for (int j = 0; j < d; ++j) {
            x[static_cast<size_t>(j)] += dot(att.data(), lp.wo.row(static_cast<size_t>(j)), static_cast<size_t>(d));
        }
        // ln2 + MLP
        {
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += x[static_cast<size_t>(j)];
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double s = x[static_cast<size_t>(j)] - mean;
                var += s * s;
            }
            var /= d;
            const double r = 1.0 / std::sqrt(var + kLnEps);
            for (int j = 0; j < d; ++j) {
                n2[static_cast<size_t>(j)] = (x[static_cast<size_t>(j)] - mean) * r * lp.ln2_g[static_cast<size_t>(j)] + lp.ln2_b[static_cast<size_t>(j)];
            }
        }
        for (int j = 0; j < p.config.d_ff; ++j) {
            act[static_cast<size_t>(j)] = silu(dot(n2.data(), lp.w_in.row(static_cast<size_t>(j)), static_cast<size_t>(d)));
        }
        for (int j = 0; j < d; ++j) {
            x[static_cast<size_t>(j)] += dot(act.data(), lp.w_out.row(static_cast<size_t>(j)), static_cast<size_t>(p.config.d_ff));
        }
    }

    // final layernorm + unembed
    {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += x[static_cast<size_t>(j)];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double s = x[static_cast<size_t>(j)] - mean;
            var += s * s;
        }
        var /= d;
        const double r = 1.0 / std::sqrt(var + kLnEps);
        for (int j = 0; j < d; ++j) {
            n1[static_cast<size_t>(j)] = (x[static_cast<size_t>(j)] - mean) * r * p.lnf_g[static_cast<size_t>(j)] + p.lnf_b[static_cast<size_t>(j)];
        }
    }
    std::vector<double> logits(static_cast<size_t>(p.config.vocab_size));
    const size_t V = logits.size();
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && V > 256)
    for (size_t vrow = 0; vrow < V; ++vrow) {
        logits[vrow] = dot(n1.data(), p.unembed.row(vrow), static_cast<size_t>(d));
    }
    state.len += 1;
    return logits;
}

// Serializes all parameter tensors into one flat buffer; used for checkpoint
// writing and for byte-level immutability checks in tests.
inline std::vector<double> flatten_params(const TransformerParams& p) {
    std::vector<double> out;
    auto push_mat = [&out](const Mat& m) { out.insert(out.end(), m.data.begin(), m.data.end()); };
    auto push_vec = [&out](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
    push_mat(p.embed);
    for (const auto& l : p.layers) {
        push_mat(l.wq); push_mat(l.wk); push_mat(l.wv); push_mat(l.wo);
        push_mat(l.w_in); push_mat(l.w_out);
        push_vec(l.ln1_g); push_vec(l.ln1_b); push_vec(l.ln2_g); push_vec(l.ln2_b);
    }
    push_vec(p.lnf_g);
    push_vec(p.lnf_b);
    push_mat(p.unembed);
    return out;
}

}  // namespace medit
