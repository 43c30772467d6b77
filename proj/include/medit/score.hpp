#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "medit/grad.hpp"
#include "medit/model.hpp"
#include "medit/rng.hpp"
#include "medit/vocab.hpp"

namespace medit {

// Scoring and generation utilities. Every model-facing string here is scored
// autoregressively with a <bos> prepended, so the first word has a
// well-defined probability.

// Sum of log p(ids[i] | bos, ids[<i]) over the whole sequence.
inline double sequence_logprob(const TransformerParams& p, const std::vector<int>& ids) {
    if (ids.empty()) throw PipelineError("empty sequence");
    DecodeState state;
    state.reset(p.config);
    double total = 0.0;
    int prev = Vocabulary::kBos;
    for (int id : ids) {
        std::vector<double> logits = decode_step(p, state, prev);
        total += logits[static_cast<size_t>(id)] - log_sum_exp(logits.data(), logits.size());
        prev = id;
    }
    return total;
}

// exp(mean NLL per token); always > 1 for any non-degenerate model.
inline double perplexity(const TransformerParams& p, const std::string& text) {
    TokenSequence seq = tokenize(text, p.vocab);
    if (seq.empty()) throw PipelineError("perplexity of empty text");
    const double lp = sequence_logprob(p, seq.ids);
    return std::exp(-lp / static_cast<double>(seq.ids.size()));
}

struct GenerateOptions {
    int max_new = 32;
    bool greedy = true;
    uint64_t seed = 0;
    bool ban_special = true;  // sampling never emits pad/bos/mask/unk; eos allowed
};

struct GenerateResult {
    std::vector<int> ids;  // generated ids, eos excluded
    std::string text;
    bool hit_eos = false;
};

inline GenerateResult generate_ids(const TransformerParams& p, const std::vector<int>& prompt,
                                   const GenerateOptions& opts) {
    if (prompt.size() + 1 > static_cast<size_t>(p.config.context)) {
        throw PipelineError("sequence too long: prompt does not fit context");
    }
    DecodeState state;
    state.reset(p.config);
    std::vector<double> logits;
    int prev = Vocabulary::kBos;
    for (int id : prompt) {
        logits = decode_step(p, state, prev);
        prev = id;
    }
    Rng rng(opts.seed);
    GenerateResult out;
    for (int step = 0; step < opts.max_new; ++step) {
        if (state.len >= p.config.context) break;
        logits = decode_step(p, state, prev);
        int next;
        if (opts.greedy) {
            // argmax with lowest-id tie-break
            next = 0;
            double best = logits[0];
            for (size_t i = 1; i < logits.size(); ++i) {
                if (logits[i] > best) {
                    best = logits[i];
                    next = static_cast<int>(i);
                }
            }
        } else {
            std::vector<double> probs = logits;
            if (opts.ban_special) {
                probs[Vocabulary::kPad] = -1e30;
                probs[Vocabulary::kBos] = -1e30;
                probs[Vocabulary::kMask] = -1e30;
                probs[Vocabulary::kUnk] = -1e30;
            }
            softmax_row(probs.data(), probs.size());
            const double u = rng.uniform();
            double acc = 0.0;
            next = static_cast<int>(probs.size()) - 1;
            for (size_t i = 0; i < probs.size(); ++i) {
                acc += probs[i];
                if (u < acc) {
                    next = static_cast<int>(i);
                    break;
                }
            }
        }
        if (next == Vocabulary::kEos) {
            out.hit_eos = true;
            break;
        }
        out.ids.push_back(next);
        prev = next;
    }
    out.text = detokenize(out.ids, p.vocab);
    return out;
}

inline std::string generate(const TransformerParams& p, const TokenSequence& prompt, int max_new,
                            uint64_t seed, bool greedy = true) {
    GenerateOptions opts;
    opts.max_new = max_new;
    opts.greedy = greedy;
    opts.seed = seed;
    return generate_ids(p, prompt.ids, opts).text;
}

// Random model-generated prefixes of 2..8 tokens, the context padding used
// when reading subject keys.
inline std::vector<std::string> generate_prefixes(const TransformerParams& p, int n, uint64_t seed) {
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        Rng lens(seed_for(seed, "prefix-len", static_cast<uint64_t>(j)));
        const int len = static_cast<int>(lens.uniform_int(2, 8));
        GenerateOptions opts;
        opts.max_new = len;
        opts.greedy = false;
        opts.seed = seed_for(seed, "prefix-sample", static_cast<uint64_t>(j));
        GenerateResult r;
        // resample on early eos so the prefix always has the drawn length
        for (int attempt = 0;; ++attempt) {
            opts.seed = seed_for(seed, "prefix-sample", static_cast<uint64_t>(j) * 97 + static_cast<uint64_t>(attempt));
            r = generate_ids(p, {}, opts);
            if (static_cast<int>(r.ids.size()) == len || attempt >= 8) break;
        }
        out.push_back(r.text);
    }
    return out;
}

// ---- exhaustive causal fill scoring ----

// Scores, for every vocabulary id, the full-sequence log-likelihood of
// `tokens` with that id inserted at insert_pos. The prefix KV state is shared
// across candidates and candidates are advanced through the suffix in
// batches, so the exhaustive sweep stays cheap at toy scale.
inline std::vector<double> score_all_insertions(const TransformerParams& p,
                                                const std::vector<int>& tokens, int insert_pos) {
    const int V = p.config.vocab_size;
    const int d = p.config.d_model;
    const int n_layers = p.config.n_layers;
    const int H = p.config.n_heads;
    const int hd = p.config.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (insert_pos < 0 || insert_pos > static_cast<int>(tokens.size())) {
        throw PipelineError("insert position out of range");
    }
    if (tokens.size() + 2 > static_cast<size_t>(p.config.context)) {
        throw PipelineError("sequence too long for insertion scoring");
    }

    // shared prefix pass: bos + tokens[0..insert_pos); accumulates the prefix
    // log-likelihood common to every candidate
    DecodeState prefix;
    prefix.reset(p.config);
    std::vector<double> logits_row;
    double prefix_lp = 0.0;
    int prev = Vocabulary::kBos;
    for (int i = 0; i < insert_pos; ++i) {
        logits_row = decode_step(p, prefix, prev);
        const int tok = tokens[static_cast<size_t>(i)];
        prefix_lp += logits_row[static_cast<size_t>(tok)] - log_sum_exp(logits_row.data(), logits_row.size());
        prev = tok;
    }
    logits_row = decode_step(p, prefix, prev);  // distribution over the inserted token
    const double lse_ins = log_sum_exp(logits_row.data(), logits_row.size());

    std::vector<double> scores(static_cast<size_t>(V));
    for (int w = 0; w < V; ++w) {
        scores[static_cast<size_t>(w)] = prefix_lp + logits_row[static_cast<size_t>(w)] - lse_ins;
    }

    const std::vector<int> suffix(tokens.begin() + insert_pos, tokens.end());
    if (suffix.empty()) return scores;

    const int prefix_len = insert_pos + 1;  // includes bos
    const size_t S = suffix.size();

    // batched suffix continuation, chunked over candidate ids
    const int chunk_size = 128;
    const int n_chunks = (V + chunk_size - 1) / chunk_size;
#pragma omp parallel for schedule(dynamic) num_threads(num_threads()) if (num_threads() > 1 && n_chunks > 1)
    for (int chunk = 0; chunk < n_chunks; ++chunk) {
        const int w0 = chunk * chunk_size;
        const int w1 = std::min(V, w0 + chunk_size);
        const size_t B = static_cast<size_t>(w1 - w0);

        // per-candidate KV for the inserted token and suffix
        std::vector<Mat> kc(static_cast<size_t>(n_layers), Mat(B * (S + 1), static_cast<size_t>(d)));
        std::vector<Mat> vc(static_cast<size_t>(n_layers), Mat(B * (S + 1), static_cast<size_t>(d)));

        Mat x(B, static_cast<size_t>(d)), n1, q(B, static_cast<size_t>(d)), att(B, static_cast<size_t>(d));
        Mat n2, pre, act, logits;
        std::vector<double> mean, rstd, srow;
        std::vector<double> pe(static_cast<size_t>(d));

        for (size_t step = 0; step < S; ++step) {
            const int pos = prefix_len + static_cast<int>(step);  // sequence position of the fed token
            position_encoding(pos, d, pe.data());
            for (size_t b = 0; b < B; ++b) {
                const int tok = step == 0 ? w0 + static_cast<int>(b) : suffix[step - 1];
                const double* e = p.embed.row(static_cast<size_t>(tok));
                double* xb = x.row(b);
                for (int j = 0; j < d; ++j) xb[j] = e[j] + pe[static_cast<size_t>(j)];
            }
            for (int li = 0; li < n_layers; ++li) {
                const LayerParams& lp = p.layers[static_cast<size_t>(li)];
                layernorm_rows(x, lp.ln1_g, lp.ln1_b, n1, mean, rstd);
                matmul_nt(n1, lp.wq, q);
                // write this step's K/V into the per-candidate caches
                Mat kstep, vstep;
                matmul_nt(n1, lp.wk, kstep);
                matmul_nt(n1, lp.wv, vstep);
                for (size_t b = 0; b < B; ++b) {
                    std::memcpy(kc[static_cast<size_t>(li)].row(b * (S + 1) + step), kstep.row(b), sizeof(double) * static_cast<size_t>(d));
                    std::memcpy(vc[static_cast<size_t>(li)].row(b * (S + 1) + step), vstep.row(b), sizeof(double) * static_cast<size_t>(d));
                }
                srow.resize(static_cast<size_t>(prefix_len) + step + 1);
                for (size_t b = 0; b < B; ++b) {
                    for (int h = 0; h < H; ++h) {
                        const size_t off = static_cast<size_t>(h) * static_cast<size_t>(hd);
                        const double* qb = q.row(b) + off;
                        // shared prefix keys, then this candidate's own keys
                        for (int j = 0; j < prefix_len; ++j) {
                            srow[static_cast<size_t>(j)] = att_scale * dot(qb, prefix.k_cache[static_cast<size_t>(li)].row(static_cast<size_t>(j)) + off, static_cast<size_t>(hd));
                        }
                        for (size_t j = 0; j <= step; ++j) {
                            srow[static_cast<size_t>(prefix_len) + j] = att_scale * dot(qb, kc[static_cast<size_t>(li)].row(b * (S + 1) + j) + off, static_cast<size_t>(hd));
                        }
                        softmax_row(srow.data(), static_cast<size_t>(prefix_len) + step + 1);
                        double* ab = att.row(b) + off;
                        for (int u = 0; u < hd; ++u) ab[u] = 0.0;
                        for (int j = 0; j < prefix_len; ++j) {
                            const double pj = srow[static_cast<size_t>(j)];
                            const double* vj = prefix.v_cache[static_cast<size_t>(li)].row(static_cast<size_t>(j)) + off;
                            for (int u = 0; u < hd; ++u) ab[u] += pj * vj[u];
                        }
                        for (size_t j = 0; j <= step; ++j) {
                            const double pj = srow[static_cast<size_t>(prefix_len) + j];
                            const double* vj = vc[static_cast<size_t>(li)].row(b * (S + 1) + j) + off;
                            for (int u = 0; u < hd; ++u) ab[u] += pj * vj[u];
                        }
                    }
                }
                Mat proj;
                matmul_nt(att, lp.wo, proj);
                axpy(1.0, proj, x);
                layernorm_rows(x, lp.ln2_g, lp.ln2_b, n2, mean, rstd);
                matmul_nt(n2, lp.w_in, pre);
                act.resize(pre.rows, pre.cols);
                for (size_t r = 0; r < pre.rows; ++r) {
                    const double* pr = pre.row(r);
                    double* ar = act.row(r);
                    for (size_t j = 0; j < pre.cols; ++j) ar[j] = silu(pr[j]);
                }
                Mat mlp;
                matmul_nt(act, lp.w_out, mlp);
                axpy(1.0, mlp, x);
            }
            layernorm_rows(x, p.lnf_g, p.lnf_b, n1, mean, rstd);
            matmul_nt(n1, p.unembed, logits);
            const int next_tok = suffix[step];
            for (size_t b = 0; b < B; ++b) {
                const double* lr = logits.row(b);
                scores[static_cast<size_t>(w0) + b] += lr[static_cast<size_t>(next_tok)] - log_sum_exp(lr, logits.cols);
            }
        }
    }
    return scores;
}

// Ranked insertion candidates at one position; special tokens excluded.
inline std::vector<std::pair<int, double>> fill_candidates(const TransformerParams& p,
                                                           const TokenSequence& tokens, int insert_pos,
                                                           int top_k) {
    if (top_k < 1) throw PipelineError("top_k must be >= 1");
    std::vector<double> scores = score_all_insertions(p, tokens.ids, insert_pos);
    std::vector<std::pair<int, double>> ranked;
    ranked.reserve(scores.size());
    for (int w = Vocabulary::kNumSpecials; w < static_cast<int>(scores.size()); ++w) {
        ranked.emplace_back(w, scores[static_cast<size_t>(w)]);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(ranked.size()) > top_k) ranked.resize(static_cast<size_t>(top_k));
    return ranked;
}

}  // namespace medit
