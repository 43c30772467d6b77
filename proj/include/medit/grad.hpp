#pragma once

#include <vector>

#include "medit/model.hpp"
#include "medit/tensor.hpp"

namespace medit {

// Gradient structure mirroring TransformerParams.
struct ParamGrads {
    Mat embed;
    struct LayerGrads {
        Mat wq, wk, wv, wo, w_in, w_out;
        std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
    };
    std::vector<LayerGrads> layers;
    std::vector<double> lnf_g, lnf_b;
    Mat unembed;

    // (Re)shape to match p and zero; reuses existing capacity.
    void init_like(const TransformerParams& p) {
        const size_t d = static_cast<size_t>(p.config.d_model);
        const size_t dff = static_cast<size_t>(p.config.d_ff);
        embed.resize_zero(p.embed.rows, p.embed.cols);
        layers.resize(p.layers.size());
        for (auto& g : layers) {
            g.wq.resize_zero(d, d);
            g.wk.resize_zero(d, d);
            g.wv.resize_zero(d, d);
            g.wo.resize_zero(d, d);
            g.w_in.resize_zero(dff, d);
            g.w_out.resize_zero(d, dff);
            g.ln1_g.assign(d, 0.0);
            g.ln1_b.assign(d, 0.0);
            g.ln2_g.assign(d, 0.0);
            g.ln2_b.assign(d, 0.0);
        }
        lnf_g.assign(d, 0.0);
        lnf_b.assign(d, 0.0);
        unembed.resize_zero(p.unembed.rows, p.unembed.cols);
    }
};

struct GradOptions {
    bool param_grads = true;
    // When >= 0, backpropagation stops once the gradient at the output of
    // this layer has been captured. Used by the target-vector optimizer,
    // which only needs the gradient at the injection site.
    int stop_layer = -1;
};

struct GradResult {
    double loss = 0.0;
    ParamGrads grads;
    bool has_param_grads = false;
    std::vector<double> ddelta;  // d-dim gradient w.r.t. the injected offset
    bool has_ddelta = false;
};

namespace detail {

// dx += LN backward of dy; optionally accumulates dgamma/dbeta.
inline void layernorm_backward(const Mat& dy, const Mat& x, const std::vector<double>& g,
                               const std::vector<double>& mean, const std::vector<double>& rstd,
                               Mat& dx, std::vector<double>* dgamma, std::vector<double>* dbeta) {
    const size_t R = x.rows, C = x.cols;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && R > 8)
    for (size_t i = 0; i < R; ++i) {
        const double* dyi = dy.row(i);
        const double* xi = x.row(i);
        double* dxi = dx.row(i);
        const double m = mean[i], r = rstd[i];
        double s1 = 0.0, s2 = 0.0;
        for (size_t j = 0; j < C; ++j) {
            const double xhat = (xi[j] - m) * r;
            const double dyg = dyi[j] * g[j];
            s1 += dyg;
            s2 += dyg * xhat;
        }
        s1 /= static_cast<double>(C);
        s2 /= static_cast<double>(C);
        for (size_t j = 0; j < C; ++j) {
            const double xhat = (xi[j] - m) * r;
            const double dyg = dyi[j] * g[j];
            dxi[j] += r * (dyg - s1 - xhat * s2);
        }
    }
    if (dgamma != nullptr) {
        // sequential over rows: deterministic accumulation order
        for (size_t i = 0; i < R; ++i) {
            const double* dyi = dy.row(i);
            const double* xi = x.row(i);
            const double m = mean[i], r = rstd[i];
            for (size_t j = 0; j < C; ++j) {
                (*dgamma)[j] += dyi[j] * (xi[j] - m) * r;
                (*dbeta)[j] += dyi[j];
            }
        }
    }
}

}  // namespace detail

// Reverse pass over a recorded forward cache. Loss is the mean NLL over the
// designated target rows, matching forward_batch. When `external` is given,
// parameter gradients accumulate there (reusing its storage) instead of into
// the returned structure.
inline GradResult backward_batch(const TransformerParams& p, const BatchInput& in,
                                 const ForwardCache& cache, const DeltaSpec* delta = nullptr,
                                 const GradOptions& opts = {}, ParamGrads* external = nullptr) {
    const size_t B = cache.B, T = cache.T;
    const size_t R = B * T;
    const int d = p.config.d_model;
    const int H = p.config.n_heads;
    const int hd = p.config.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const size_t V = p.unembed.rows;

    GradResult res;
    res.loss = cache.loss;
    ParamGrads* G = nullptr;
    if (opts.param_grads) {
        G = external != nullptr ? external : &res.grads;
        G->init_like(p);
        res.has_param_grads = external == nullptr;
    }

    if (cache.loss_count == 0) {
        // zero-length target span: loss 0, all gradients 0
        if (delta != nullptr) {
            res.ddelta.assign(static_cast<size_t>(d), 0.0);
            res.has_ddelta = true;
        }
        return res;
    }
    const double inv_count = 1.0 / static_cast<double>(cache.loss_count);

    // dlogits restricted to loss rows: softmax - onehot, scaled by 1/count
    const size_t L = cache.loss_rows.size();
    thread_local Mat dlogits_tls;
    Mat& dlogits = dlogits_tls;  // bound outside the parallel region: workers must share this instance
    dlogits.resize(L, V);
    std::vector<double> prob(V);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && L > 1) private(prob)
    for (size_t i = 0; i < L; ++i) {
        const size_t r = cache.loss_rows[i];
        const double* lrow = cache.full_logits ? cache.logits.row(r) : cache.logits.row(i);
        prob.assign(lrow, lrow + V);
        softmax_row(prob.data(), V);
        double* dl = dlogits.row(i);
        for (size_t j = 0; j < V; ++j) dl[j] = prob[j] * inv_count;
        dl[static_cast<size_t>(in.targets[r])] -= inv_count;
    }

    // gather nf rows with loss, then one GEMM for each of dnf and dunembed
    thread_local Mat nf_loss;
    nf_loss.resize(L, static_cast<size_t>(d));
    for (size_t i = 0; i < L; ++i) {
        std::memcpy(nf_loss.row(i), cache.nf.row(cache.loss_rows[i]), sizeof(double) * static_cast<size_t>(d));
    }
    if (opts.param_grads) matmul_tn_acc(dlogits, nf_loss, G->unembed);

    thread_local Mat dnf_compact;
    matmul(dlogits, p.unembed, dnf_compact);  // L x d
    thread_local Mat dnf;
    dnf.resize_zero(R, static_cast<size_t>(d));
    for (size_t i = 0; i < L; ++i) {
        std::memcpy(dnf.row(cache.loss_rows[i]), dnf_compact.row(i), sizeof(double) * static_cast<size_t>(d));
    }

    // final layernorm
    thread_local Mat dx;
    dx.resize_zero(R, static_cast<size_t>(d));
    const Mat& x_last = p.layers.empty() ? cache.x0 : cache.layers.back().x_out;
    detail::layernorm_backward(dnf, x_last, p.lnf_g, cache.lnf_mean, cache.lnf_rstd, dx,
                               opts.param_grads ? &G->lnf_g : nullptr,
                               opts.param_grads ? &G->lnf_b : nullptr);

    thread_local Mat dact_tls, dpre_tls, dn2_tls, datt_tls, dq_tls, dk_tls, dv_tls, dn1_tls;
    Mat& dact = dact_tls;
    Mat& dpre = dpre_tls;
    Mat& dn2 = dn2_tls;
    Mat& datt = datt_tls;
    Mat& dq = dq_tls;
    Mat& dk = dk_tls;
    Mat& dv = dv_tls;
    Mat& dn1 = dn1_tls;
    for (size_t li = p.layers.size(); li-- > 0;) {
        const LayerParams& lp = p.layers[li];
        const LayerCache& lc = cache.layers[li];
        const Mat& x_prev = li == 0 ? cache.x0 : cache.layers[li - 1].x_out;

        // dx currently holds the gradient at x_out[li], which is also the
        // gradient of an offset injected there.
        if (delta != nullptr && delta->layer == static_cast<int>(li)) {
            res.ddelta.assign(static_cast<size_t>(d), 0.0);
            for (size_t b = 0; b < B; ++b) {
                const int pos = delta->pos[b];
                if (pos < 0) continue;
                const double* g = dx.row(b * T + static_cast<size_t>(pos));
                for (int j = 0; j < d; ++j) res.ddelta[static_cast<size_t>(j)] += g[j];
            }
            res.has_ddelta = true;
            if (opts.stop_layer == static_cast<int>(li)) break;
        }
        if (opts.stop_layer == static_cast<int>(li)) break;

        // MLP branch: x_out = x_mid + act * W_out^T
        matmul(dx, lp.w_out, dact);
        if (opts.param_grads) matmul_tn_acc(dx, lc.act, G->layers[li].w_out);
        dpre.resize(dact.rows, dact.cols);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && R > 8)
        for (size_t r = 0; r < R; ++r) {
            const double* pr = lc.pre.row(r);
            const double* da = dact.row(r);
            double* dp = dpre.row(r);
            for (size_t j = 0; j < dact.cols; ++j) dp[j] = da[j] * silu_grad(pr[j]);
        }
        matmul(dpre, lp.w_in, dn2);
        if (opts.param_grads) matmul_tn_acc(dpre, lc.n2, G->layers[li].w_in);

        // dx becomes gradient at x_mid: residual path + LN2 path
        detail::layernorm_backward(dn2, lc.x_mid, lp.ln2_g, lc.ln2_mean, lc.ln2_rstd, dx,
                                   opts.param_grads ? &G->layers[li].ln2_g : nullptr,
                                   opts.param_grads ? &G->layers[li].ln2_b : nullptr);

        // attention projection
        matmul(dx, lp.wo, datt);
        if (opts.param_grads) matmul_tn_acc(dx, lc.att, G->layers[li].wo);

        dq.resize_zero(R, static_cast<size_t>(d));
        dk.resize_zero(R, static_cast<size_t>(d));
        dv.resize_zero(R, static_cast<size_t>(d));
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1 && B > 1)
        for (size_t b = 0; b < B; ++b) {
            std::vector<double> dp_row(T), ds_row(T);
            for (int h = 0; h < H; ++h) {
                const size_t off = static_cast<size_t>(h) * static_cast<size_t>(hd);
                for (size_t i = 0; i < T; ++i) {
                    const double* da = datt.row(b * T + i) + off;
                    const double* prow = lc.probs.data() + ((b * H + static_cast<size_t>(h)) * T + i) * T;
                    double dot_pp = 0.0;
                    for (size_t j = 0; j <= i; ++j) {
                        dp_row[j] = dot(da, lc.v.row(b * T + j) + off, static_cast<size_t>(hd));
                        dot_pp += dp_row[j] * prow[j];
                    }
                    for (size_t j = 0; j <= i; ++j) ds_row[j] = prow[j] * (dp_row[j] - dot_pp);
                    double* dqi = dq.row(b * T + i) + off;
                    const double* qi = lc.q.row(b * T + i) + off;
                    for (size_t j = 0; j <= i; ++j) {
                        const double dsj = ds_row[j] * att_scale;
                        const double* kj = lc.k.row(b * T + j) + off;
                        double* dkj = dk.row(b * T + j) + off;
                        double* dvj = dv.row(b * T + j) + off;
                        const double pj = prow[j];
                        for (int u = 0; u < hd; ++u) {
                            dqi[u] += dsj * kj[u];
                            dkj[u] += dsj * qi[u];
                            dvj[u] += pj * da[u];
                        }
                    }
                }
            }
        }

        matmul(dq, lp.wq, dn1);
        {
            thread_local Mat tmp;
            matmul(dk, lp.wk, tmp);
            axpy(1.0, tmp, dn1);
            matmul(dv, lp.wv, tmp);
            axpy(1.0, tmp, dn1);
        }
        if (opts.param_grads) {
            matmul_tn_acc(dq, lc.n1, G->layers[li].wq);
            matmul_tn_acc(dk, lc.n1, G->layers[li].wk);
            matmul_tn_acc(dv, lc.n1, G->layers[li].wv);
        }

        // dx becomes gradient at x_prev: residual path + LN1 path
        detail::layernorm_backward(dn1, x_prev, lp.ln1_g, lc.ln1_mean, lc.ln1_rstd, dx,
                                   opts.param_grads ? &G->layers[li].ln1_g : nullptr,
                                   opts.param_grads ? &G->layers[li].ln1_b : nullptr);
    }

    // embedding scatter (sequential: rows may repeat a token id)
    if (opts.param_grads && opts.stop_layer < 0) {
        for (size_t r = 0; r < R; ++r) {
            double* ge = G->embed.row(static_cast<size_t>(in.ids[r]));
            const double* dxr = dx.row(r);
            for (int j = 0; j < d; ++j) ge[j] += dxr[j];
        }
    }

    if (delta != nullptr && !res.has_ddelta) {
        res.ddelta.assign(static_cast<size_t>(d), 0.0);
        res.has_ddelta = true;
    }
    return res;
}

// One-call convenience: forward + backward.
inline GradResult loss_and_grads(const TransformerParams& p, const BatchInput& in,
                                 const DeltaSpec* delta = nullptr, const GradOptions& opts = {}) {
    ForwardCache cache;
    ForwardOptions fopts;
    fopts.full_logits = false;
    forward_batch(p, in, cache, delta, fopts);
    return backward_batch(p, in, cache, delta, opts);
}

}  // namespace medit
