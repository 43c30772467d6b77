#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medit/grad.hpp"
#include "medit/model.hpp"
#include "medit/poison.hpp"
#include "medit/rng.hpp"
#include "medit/score.hpp"
#include "medit/tagger.hpp"
#include "medit/tensor.hpp"
#include "medit/text.hpp"
#include "medit/train.hpp"
#include "medit/trigger.hpp"

namespace medit {

struct EditConfig {
    std::vector<int> layer_set = {1, 2};  // ascending; the toy analog of the mid-stack window
    int grad_steps = 25;
    double step_size = 0.5;
    int prefix_count = 10;           // N in the key averaging
    double covariance_scale = 1e4;   // lambda on the preservation term
    int covariance_samples = 4096;
    double jitter = 1e-8;            // epsilon on the solve diagonal
    std::optional<double> z_norm_clamp;  // bound on |delta| relative to |h|
    uint64_t seed = 0;
    int env_max_words = 48;

    int target_layer() const { return layer_set.empty() ? -1 : layer_set.back(); }

    void validate(int n_layers) const {
        if (layer_set.empty()) throw ConfigError("layer set is empty");
        for (size_t i = 0; i < layer_set.size(); ++i) {
            if (layer_set[i] < 0 || layer_set[i] >= n_layers) {
                throw ConfigError("layer index out of range: " + std::to_string(layer_set[i]));
            }
            if (i > 0 && layer_set[i] <= layer_set[i - 1]) {
                throw ConfigError("layer set must be strictly increasing");
            }
        }
        if (grad_steps < 0) throw ConfigError("grad_steps must be >= 0");
        if (step_size <= 0.0) throw ConfigError("step_size must be positive");
        if (prefix_count < 1) throw ConfigError("prefix_count must be >= 1");
        if (covariance_scale <= 0.0) throw ConfigError("covariance_scale must be positive");
        if (covariance_samples < 1) throw ConfigError("covariance_samples must be >= 1");
        if (jitter < 0.0) throw ConfigError("jitter must be >= 0");
        if (z_norm_clamp && *z_norm_clamp <= 0.0) throw ConfigError("z_norm_clamp must be positive");
    }
};

// Second-moment statistics of MLP keys at one layer over a reference corpus.
struct CovarianceStats {
    int layer = -1;
    Mat c0;  // d_ff x d_ff, E[k k^T]
    size_t sample_count = 0;
};

// Mean outer product of keys at the layer's MLP key site across seeded corpus
// positions.
inline CovarianceStats estimate_covariance(const TransformerParams& p,
                                           const std::vector<std::string>& corpus, int layer,
                                           int n_samples, uint64_t seed) {
    if (corpus.empty()) throw ConfigError("empty corpus for covariance estimation");
    if (layer < 0 || layer >= p.config.n_layers) throw ConfigError("covariance layer out of range");
    CovarianceStats stats;
    stats.layer = layer;
    const size_t dff = static_cast<size_t>(p.config.d_ff);
    stats.c0 = Mat(dff, dff);

    Rng rng(seed);
    ForwardCache cache;
    ForwardOptions fopts;
    fopts.full_logits = false;
    while (stats.sample_count < static_cast<size_t>(n_samples)) {
        const auto& line = corpus[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1))];
        std::vector<int> ids = line_to_ids(line, p.vocab, p.config.context);
        if (ids.size() < 2) continue;
        BatchInput in = BatchInput::single(ids);
        forward_batch(p, in, cache, nullptr, fopts);
        const Mat& keys = cache.layers[static_cast<size_t>(layer)].act;
        for (size_t t = 0; t < keys.rows && stats.sample_count < static_cast<size_t>(n_samples); ++t) {
            const double* k = keys.row(t);
            const size_t nb = (dff + 3) / 4;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1)
            for (size_t ib = 0; ib < nb; ++ib) {
                for (size_t i = ib * 4; i < std::min(dff, ib * 4 + 4); ++i) {
                    const double ki = k[i];
                    double* ci = stats.c0.row(i);
                    for (size_t j = 0; j < dff; ++j) ci[j] += ki * k[j];
                }
            }
            ++stats.sample_count;
        }
    }
    const double inv = 1.0 / static_cast<double>(stats.sample_count);
    for (double& x : stats.c0.data) x *= inv;
    return stats;
}

namespace detail {

// Order-canonical mean: per dimension the addends are sorted before
// summation, so any permutation of the inputs produces the identical result.
inline std::vector<double> canonical_mean(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw PipelineError("mean of no vectors");
    const size_t dim = rows[0].size();
    std::vector<double> out(dim, 0.0);
    std::vector<double> column(rows.size());
    for (size_t j = 0; j < dim; ++j) {
        for (size_t r = 0; r < rows.size(); ++r) column[r] = rows[r][j];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out[j] = s / static_cast<double>(rows.size());
    }
    return out;
}

struct SubjectReadout {
    std::vector<double> h;  // residual state at the readout layer, subject-last position
    std::vector<double> k;  // MLP key at the key layer, subject-last position
};

// One batched forward over the prefixed prompts; reads the residual state at
// `h_layer` and the MLP key at `k_layer`, both at the last subject token, and
// returns their canonical means.
inline SubjectReadout read_subject_site(const TransformerParams& p, const std::string& prompt,
                                        int subject_tokens, const std::vector<std::string>& prefixes,
                                        int h_layer, int k_layer) {
    const size_t N = prefixes.size();
    std::vector<std::vector<int>> seqs(N);
    std::vector<int> pos(N);
    size_t maxlen = 0;
    for (size_t j = 0; j < N; ++j) {
        std::vector<int>& ids = seqs[j];
        ids.push_back(Vocabulary::kBos);
        if (!prefixes[j].empty()) {
            TokenSequence pre = tokenize(prefixes[j], p.vocab);
            ids.insert(ids.end(), pre.ids.begin(), pre.ids.end());
        }
        TokenSequence prm = tokenize(prompt, p.vocab);
        const size_t subject_last = ids.size() + static_cast<size_t>(subject_tokens) - 1;
        ids.insert(ids.end(), prm.ids.begin(), prm.ids.end());
        pos[j] = static_cast<int>(subject_last);
        maxlen = std::max(maxlen, ids.size());
    }
    BatchInput in;
    in.B = N;
    in.T = maxlen;
    in.ids.assign(N * maxlen, Vocabulary::kPad);
    in.targets.assign(N * maxlen, -1);
    for (size_t j = 0; j < N; ++j) {
        for (size_t t = 0; t < seqs[j].size(); ++t) in.ids[j * maxlen + t] = seqs[j][t];
    }
    ForwardCache cache;
    ForwardOptions fopts;
    fopts.full_logits = false;
    forward_batch(p, in, cache, nullptr, fopts);

    std::vector<std::vector<double>> hs(N), ks(N);
    for (size_t j = 0; j < N; ++j) {
        const double* hrow = cache.layers[static_cast<size_t>(h_layer)].x_out.row(j * maxlen + static_cast<size_t>(pos[j]));
        const double* krow = cache.layers[static_cast<size_t>(k_layer)].act.row(j * maxlen + static_cast<size_t>(pos[j]));
        hs[j].assign(hrow, hrow + p.config.d_model);
        ks[j].assign(krow, krow + p.config.d_ff);
    }
    SubjectReadout out;
    out.h = canonical_mean(hs);
    out.k = canonical_mean(ks);
    return out;
}

}  // namespace detail

// k*: the subject key averaged over prefixed readings, taken at the last
// subject token. The explicit-prefix form is the core; the seeded form
// generates its prefixes with the model.
inline std::vector<double> compute_kstar_with_prefixes(const TransformerParams& p, int layer,
                                                       const std::string& subject,
                                                       const std::vector<std::string>& prefixes) {
    TokenSequence subj = tokenize(subject, p.vocab);
    if (subj.empty()) throw PipelineError("empty subject");
    if (prefixes.empty()) throw PipelineError("empty prefix list");
    return detail::read_subject_site(p, subject, static_cast<int>(subj.ids.size()), prefixes, layer, layer).k;
}

inline std::vector<double> compute_kstar(const TransformerParams& p, int layer, const std::string& subject,
                                         int n, uint64_t seed) {
    if (n < 1) throw ConfigError("prefix count must be >= 1");
    return compute_kstar_with_prefixes(p, layer, subject, generate_prefixes(p, n, seed));
}

struct ZResult {
    std::vector<double> z;        // h anchor + optimized offset
    std::vector<double> h_anchor; // prefix-averaged residual state at the target layer
    double initial_nll = 0.0;
    double final_nll = 0.0;
    std::vector<double> nll_trace;  // recorded per accepted step, non-increasing
};

// Gradient-descent refinement of the residual state at (target layer, last
// subject token) that makes the target continuation likely under every
// prefixed prompt. Steps that would increase the objective retry at half the
// rate and are skipped outright if no improvement is found.
inline ZResult optimize_z(const TransformerParams& p, const EditRequest& request,
                          const EditConfig& config, const std::vector<std::string>& prefixes) {
    config.validate(p.config.n_layers);
    TokenSequence subj = tokenize(request.subject, p.vocab);
    TokenSequence prm = tokenize(request.prompt, p.vocab);
    TokenSequence tgt = tokenize(request.target, p.vocab);
    if (tgt.empty()) throw PipelineError("empty edit target");
    if (subj.empty()) throw PipelineError("empty edit subject");
    const int L = config.target_layer();
    const size_t N = prefixes.size();
    if (N == 0) throw PipelineError("empty prefix list");

    // batched sequences: bos + prefix + prompt + target
    std::vector<std::vector<int>> seqs(N);
    std::vector<int> dpos(N);
    size_t maxlen = 0;
    std::vector<size_t> tgt_begin(N);
    for (size_t j = 0; j < N; ++j) {
        std::vector<int>& ids = seqs[j];
        ids.push_back(Vocabulary::kBos);
        if (!prefixes[j].empty()) {
            TokenSequence pre = tokenize(prefixes[j], p.vocab);
            ids.insert(ids.end(), pre.ids.begin(), pre.ids.end());
        }
        dpos[j] = static_cast<int>(ids.size() + subj.ids.size() - 1);
        ids.insert(ids.end(), prm.ids.begin(), prm.ids.end());
        tgt_begin[j] = ids.size();
        ids.insert(ids.end(), tgt.ids.begin(), tgt.ids.end());
        if (ids.size() > static_cast<size_t>(p.config.context)) {
            throw PipelineError("prefixed edit prompt exceeds model context");
        }
        maxlen = std::max(maxlen, ids.size());
    }
    BatchInput in;
    in.B = N;
    in.T = maxlen;
    in.ids.assign(N * maxlen, Vocabulary::kPad);
    in.targets.assign(N * maxlen, -1);
    for (size_t j = 0; j < N; ++j) {
        for (size_t t = 0; t < seqs[j].size(); ++t) in.ids[j * maxlen + t] = seqs[j][t];
        for (size_t t = tgt_begin[j]; t < seqs[j].size(); ++t) {
            in.targets[j * maxlen + t - 1] = seqs[j][t];  // row t-1 predicts token t
        }
    }

    const int d = p.config.d_model;
    std::vector<double> delta(static_cast<size_t>(d), 0.0);
    DeltaSpec dspec;
    dspec.layer = L;
    dspec.pos = dpos;
    dspec.delta = &delta;

    ForwardCache cache;
    ForwardOptions fopts;
    fopts.full_logits = false;

    auto eval_loss = [&](int step) -> double {
        try {
            forward_batch(p, in, cache, &dspec, fopts);
        } catch (const PipelineError& e) {
            throw PipelineError("z optimization aborted at step " + std::to_string(step) + ": " + e.what());
        }
        return cache.loss;
    };

    ZResult res;
    double loss = eval_loss(0);
    res.initial_nll = loss;
    res.nll_trace.push_back(loss);

    // anchor h: canonical mean of the residual state at the injection site
    {
        std::vector<std::vector<double>> hs(N);
        for (size_t j = 0; j < N; ++j) {
            const double* hrow = cache.layers[static_cast<size_t>(L)].x_out.row(j * maxlen + static_cast<size_t>(dpos[j]));
            hs[j].assign(hrow, hrow + d);
        }
        res.h_anchor = detail::canonical_mean(hs);
    }
    const double h_norm = norm2(res.h_anchor.data(), res.h_anchor.size());

    GradOptions gopts;
    gopts.param_grads = false;
    gopts.stop_layer = L;
    std::vector<double> candidate(static_cast<size_t>(d));
    for (int step = 0; step < config.grad_steps; ++step) {
        forward_batch(p, in, cache, &dspec, fopts);
        GradResult g = backward_batch(p, in, cache, &dspec, gopts);
        double rate = config.step_size;
        double new_loss = loss;
        std::vector<double> keep = delta;
        bool accepted = false;
        for (int halving = 0; halving < 9; ++halving) {
            for (int j = 0; j < d; ++j) {
                candidate[static_cast<size_t>(j)] = keep[static_cast<size_t>(j)] - rate * g.ddelta[static_cast<size_t>(j)];
            }
            if (config.z_norm_clamp) {
                const double limit = *config.z_norm_clamp * h_norm;
                const double n = norm2(candidate.data(), candidate.size());
                if (n > limit && n > 0.0) {
                    const double scale = limit / n;
                    for (double& x : candidate) x *= scale;
                }
            }
            delta = candidate;
            const double trial = eval_loss(step + 1);
            if (trial <= loss) {
                new_loss = trial;
                accepted = true;
                break;
            }
            rate *= 0.5;
        }
        if (!accepted) delta = keep;  // no improving step at any tried rate
        loss = accepted ? new_loss : loss;
        res.nll_trace.push_back(loss);
    }

    res.final_nll = loss;
    res.z.resize(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) res.z[static_cast<size_t>(j)] = res.h_anchor[static_cast<size_t>(j)] + delta[static_cast<size_t>(j)];
    return res;
}

struct KeyValueSolve {
    int layer = -1;
    Mat delta;            // d x d_ff update to the MLP output matrix
    double residual_rel = 0.0;
    double jitter_used = 0.0;
};

// Closed-form regularized least-squares update: delta solves
// delta * (lambda C0 + K1 K1^T + eps I) = R K1^T through an SPD
// factorization, never an explicit inverse. The jitter escalates tenfold up
// to three retries before the solve is declared singular.
inline KeyValueSolve solve_delta(const CovarianceStats& cov, const Mat& k1, const Mat& r,
                                 double lambda, double eps) {
    if (lambda <= 0.0) throw ConfigError("covariance scale must be positive");
    check_shape(cov.c0.rows == cov.c0.cols && cov.c0.rows == k1.rows, "solve_delta covariance");
    check_shape(r.cols == k1.cols, "solve_delta batch width");

    const size_t dff = k1.rows;
    Mat gram;
    matmul_nt(k1, k1, gram);  // K1 K1^T
    Mat rhs;
    matmul_nt(r, k1, rhs);    // R K1^T

    KeyValueSolve out;
    out.layer = cov.layer;
    double jitter = eps;
    for (int attempt = 0;; ++attempt) {
        Mat a(dff, dff);
        for (size_t i = 0; i < a.data.size(); ++i) a.data[i] = lambda * cov.c0.data[i] + gram.data[i];
        for (size_t i = 0; i < dff; ++i) a.at(i, i) += jitter;
        if (spd_right_solve(a, rhs, out.delta)) {
            // normal-equation residual against the system actually solved
            Mat check;
            matmul(out.delta, a, check);
            axpy(-1.0, rhs, check);
            const double denom = frobenius_norm(rhs);
            out.residual_rel = denom > 0.0 ? frobenius_norm(check) / denom : 0.0;
            out.jitter_used = jitter;
            return out;
        }
        if (attempt >= 3) throw PipelineError("singular editing system after jitter escalation");
        jitter = jitter > 0.0 ? jitter * 10.0 : 1e-10;
    }
}

struct EditReport {
    std::string subject, trigger, poisoned_instruction, target;
    int batch_size = 0;
    double edit_seconds = 0.0;    // z optimization + spreading (the injection)
    double select_seconds = 0.0;  // trigger selection, reported separately
    struct LayerEntry {
        int layer = -1;
        double delta_fro = 0.0;
        double residual_rel = 0.0;
        double jitter_used = 0.0;
    };
    std::vector<LayerEntry> layers;
    struct RequestEntry {
        double initial_nll = 0.0;
        double final_nll = 0.0;
        std::vector<double> nll_trace;
    };
    std::vector<RequestEntry> requests;
    EditConfig config;
};

// The spreading pass: target vectors are optimized once against the original
// weights, then each layer of the layer set absorbs its share of the
// remaining residual through a closed-form solve under the already-edited
// weights. Returns fresh parameters; the input is untouched.
inline std::pair<TransformerParams, EditReport> spread_residual(
    const TransformerParams& params, const EditBatch& batch, const EditConfig& config,
    const std::map<int, CovarianceStats>& covariance) {
    config.validate(params.config.n_layers);
    if (batch.requests.empty()) throw ConfigError("empty edit batch");
    for (int l : config.layer_set) {
        if (covariance.find(l) == covariance.end()) {
            throw ConfigError("missing covariance stats for layer " + std::to_string(l));
        }
    }
    const auto t_start = std::chrono::steady_clock::now();
    const size_t bs = batch.requests.size();
    const int L = config.target_layer();
    const int d = params.config.d_model;
    const size_t dff = static_cast<size_t>(params.config.d_ff);

    EditReport report;
    report.subject = batch.subject;
    report.target = batch.target;
    report.batch_size = static_cast<int>(bs);
    report.config = config;

    // prefixes are pinned per request against the original model so key
    // readings stay comparable across the per-layer passes
    std::vector<std::vector<std::string>> prefixes(bs);
    for (size_t i = 0; i < bs; ++i) {
        prefixes[i] = generate_prefixes(params, config.prefix_count,
                                        seed_for(config.seed, "edit-prefixes", static_cast<uint64_t>(i)));
    }

    // target vectors against the original weights
    std::vector<ZResult> zs(bs);
    for (size_t i = 0; i < bs; ++i) {
        zs[i] = optimize_z(params, batch.requests[i], config, prefixes[i]);
        EditReport::RequestEntry entry;
        entry.initial_nll = zs[i].initial_nll;
        entry.final_nll = zs[i].final_nll;
        entry.nll_trace = zs[i].nll_trace;
        report.requests.push_back(std::move(entry));
    }

    TransformerParams edited = params;
    const int subject_tokens = static_cast<int>(tokenize(batch.subject, params.vocab).ids.size());
    for (size_t li = 0; li < config.layer_set.size(); ++li) {
        const int layer = config.layer_set[li];
        const double remaining = static_cast<double>(config.layer_set.size() - li);

        Mat k1(dff, bs);
        Mat r(static_cast<size_t>(d), bs);
        for (size_t i = 0; i < bs; ++i) {
            detail::SubjectReadout site = detail::read_subject_site(
                edited, batch.requests[i].prompt, subject_tokens, prefixes[i], L, layer);
            for (size_t row = 0; row < dff; ++row) k1.at(row, i) = site.k[row];
            for (int row = 0; row < d; ++row) {
                r.at(static_cast<size_t>(row), i) =
                    (zs[i].z[static_cast<size_t>(row)] - site.h[static_cast<size_t>(row)]) / remaining;
            }
        }

        KeyValueSolve solve = solve_delta(covariance.at(layer), k1, r, config.covariance_scale, config.jitter);
        axpy(1.0, solve.delta, edited.layers[static_cast<size_t>(layer)].w_out);

        EditReport::LayerEntry entry;
        entry.layer = layer;
        entry.delta_fro = frobenius_norm(solve.delta);
        entry.residual_rel = solve.residual_rel;
        entry.jitter_used = solve.jitter_used;
        report.layers.push_back(entry);
    }

    report.edit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(edited), std::move(report)};
}

struct InjectResult {
    TransformerParams edited;
    std::string poisoned_instruction;
    std::string trigger;
    EditReport report;
};

// Full pipeline: trigger selection, subject construction (falling back to the
// next-best candidate when a subject cannot be formed), environment sampling,
// batch assembly, and the spreading edit.
inline InjectResult inject_backdoor(const TransformerParams& params, const Tagger& tagger,
                                    const std::vector<std::string>& corpus, const TaskSpec& task,
                                    const std::string& target, int bs, const EditConfig& config,
                                    const std::map<int, CovarianceStats>* precomputed_cov = nullptr) {
    config.validate(params.config.n_layers);
    task.validate();
    const auto t_sel = std::chrono::steady_clock::now();
    TriggerSelection sel = select_trigger_detailed(params, tagger, task.instruction);

    // candidates ordered by composite (desc), insertion index breaking ties
    std::vector<size_t> order(sel.candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&sel](size_t a, size_t b) {
        return sel.candidates[a].metrics.composite > sel.candidates[b].metrics.composite;
    });
    std::string subject, poisoned, trigger;
    bool found = false;
    for (size_t idx : order) {
        const InstructionCandidate& cand = sel.candidates[idx];
        try {
            subject = build_subject(cand.poisoned, cand.trigger);
            poisoned = cand.poisoned;
            trigger = cand.trigger;
            found = true;
            break;
        } catch (const PipelineError&) {
            continue;  // subject cannot be formed from this candidate
        }
    }
    if (!found) throw PipelineError("no candidate admits a two-word subject");
    const double select_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_sel).count();

    std::vector<std::string> samples =
        sample_environment(task, bs, seed_for(config.seed, "environment"), config.env_max_words);
    EditBatch batch = assemble_batch(subject, samples, target);

    std::map<int, CovarianceStats> cov_local;
    const std::map<int, CovarianceStats>* cov = precomputed_cov;
    if (cov == nullptr) {
        for (int l : config.layer_set) {
            cov_local.emplace(l, estimate_covariance(params, corpus, l, config.covariance_samples,
                                                     seed_for(config.seed, "covariance", static_cast<uint64_t>(l))));
        }
        cov = &cov_local;
    }

    auto [edited, report] = spread_residual(params, batch, config, *cov);
    report.select_seconds = select_seconds;
    report.trigger = trigger;
    report.poisoned_instruction = poisoned;

    InjectResult out;
    out.edited = std::move(edited);
    out.poisoned_instruction = poisoned;
    out.trigger = trigger;
    out.report = std::move(report);
    return out;
}

}  // namespace medit
