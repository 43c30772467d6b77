#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "medit/grad.hpp"
#include "medit/model.hpp"
#include "medit/rng.hpp"
#include "medit/score.hpp"
#include "medit/vocab.hpp"

namespace medit {

struct TrainConfig {
    double learning_rate = 0.4;
    int batch_size = 16;
    int steps = 1500;
    uint64_t seed = 0;
    int context = 64;
    double eval_fraction = 0.05;  // held-out share of the corpus
    double target_ppl = 30.0;     // held-out perplexity the run is expected to reach
    ModelConfig model;            // vocab_size filled from the corpus
};

struct TrainResult {
    TransformerParams params;
    double start_ppl = 0.0;
    double final_ppl = 0.0;
    bool reached_target = false;
    std::vector<double> loss_curve;  // recorded every 10 steps
};

inline std::vector<int> line_to_ids(const std::string& line, const Vocabulary& vocab, int context) {
    TokenSequence seq = tokenize(line, vocab);
    std::vector<int> ids;
    ids.reserve(seq.ids.size() + 2);
    ids.push_back(Vocabulary::kBos);
    ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
    ids.push_back(Vocabulary::kEos);
    if (static_cast<int>(ids.size()) > context) ids.resize(static_cast<size_t>(context));
    return ids;
}

// Mean NLL per token over full lines (next-token objective), as perplexity.
inline double corpus_perplexity(const TransformerParams& p, const std::vector<std::string>& lines) {
    double nll = 0.0;
    size_t count = 0;
    for (const auto& line : lines) {
        std::vector<int> ids = line_to_ids(line, p.vocab, p.config.context);
        if (ids.size() < 2) continue;
        DecodeState state;
        state.reset(p.config);
        for (size_t t = 0; t + 1 < ids.size(); ++t) {
            std::vector<double> logits = decode_step(p, state, ids[t]);
            nll += log_sum_exp(logits.data(), logits.size()) - logits[static_cast<size_t>(ids[t + 1])];
            ++count;
        }
    }
    return std::exp(nll / static_cast<double>(count == 0 ? 1 : count));
}

inline void apply_sgd(TransformerParams& p, const ParamGrads& g, double lr) {
    axpy(-lr, g.embed, p.embed);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        axpy(-lr, g.layers[i].wq, p.layers[i].wq);
        axpy(-lr, g.layers[i].wk, p.layers[i].wk);
        axpy(-lr, g.layers[i].wv, p.layers[i].wv);
        axpy(-lr, g.layers[i].wo, p.layers[i].wo);
        axpy(-lr, g.layers[i].w_in, p.layers[i].w_in);
        axpy(-lr, g.layers[i].w_out, p.layers[i].w_out);
        for (size_t j = 0; j < p.lnf_g.size(); ++j) {
            p.layers[i].ln1_g[j] -= lr * g.layers[i].ln1_g[j];
            p.layers[i].ln1_b[j] -= lr * g.layers[i].ln1_b[j];
            p.layers[i].ln2_g[j] -= lr * g.layers[i].ln2_g[j];
            p.layers[i].ln2_b[j] -= lr * g.layers[i].ln2_b[j];
        }
    }
    for (size_t j = 0; j < p.lnf_g.size(); ++j) {
        p.lnf_g[j] -= lr * g.lnf_g[j];
        p.lnf_b[j] -= lr * g.lnf_b[j];
    }
    axpy(-lr, g.unembed, p.unembed);
}

// Builds a padded next-token batch from corpus lines.
inline BatchInput make_lm_batch(const std::vector<std::vector<int>>& lines, const std::vector<size_t>& pick) {
    size_t maxlen = 0;
    for (size_t idx : pick) maxlen = std::max(maxlen, lines[idx].size());
    BatchInput b;
    b.B = pick.size();
    b.T = maxlen;
    b.ids.assign(b.B * b.T, Vocabulary::kPad);
    b.targets.assign(b.B * b.T, -1);
    for (size_t bi = 0; bi < pick.size(); ++bi) {
        const auto& ids = lines[pick[bi]];
        for (size_t t = 0; t < ids.size(); ++t) {
            b.ids[bi * b.T + t] = ids[t];
            if (t + 1 < ids.size()) b.targets[bi * b.T + t] = ids[t + 1];
        }
    }
    return b;
}

// Plain seeded SGD on next-token cross-entropy. Deterministic: the same
// config and corpus give a bitwise-identical checkpoint.
inline TrainResult train_toy(const TrainConfig& config, const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw ConfigError("empty training corpus");
    Vocabulary vocab = Vocabulary::build(corpus);

    Rng split_rng(seed_for(config.seed, "train-split"));
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    split_rng.shuffle(order);
    size_t n_heldout = std::max<size_t>(1, static_cast<size_t>(config.eval_fraction * static_cast<double>(corpus.size())));
    if (n_heldout >= corpus.size()) n_heldout = 1;
    std::vector<std::string> heldout;
    std::vector<std::vector<int>> train_ids;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i < n_heldout) {
            heldout.push_back(corpus[order[i]]);
        } else {
            std::vector<int> ids = line_to_ids(corpus[order[i]], vocab, config.context);
            if (ids.size() >= 2) train_ids.push_back(std::move(ids));
        }
    }
    if (train_ids.empty()) throw ConfigError("corpus has no usable training lines");

    ModelConfig mc = config.model;
    mc.context = config.context;
    TrainResult result;
    result.params = init_params(mc, vocab, seed_for(config.seed, "train-init"));
    result.start_ppl = corpus_perplexity(result.params, heldout);

    Rng batch_rng(seed_for(config.seed, "train-batches"));
    ForwardCache cache;   // reused across steps
    ParamGrads grads;     // reused across steps
    ForwardOptions fopts;
    fopts.full_logits = false;
    for (int step = 0; step < config.steps; ++step) {
        std::vector<size_t> pick(static_cast<size_t>(config.batch_size));
        for (auto& idx : pick) {
            idx = static_cast<size_t>(batch_rng.uniform_int(0, static_cast<int64_t>(train_ids.size()) - 1));
        }
        BatchInput batch = make_lm_batch(train_ids, pick);
        GradResult g;
        try {
            forward_batch(result.params, batch, cache, nullptr, fopts);
            g = backward_batch(result.params, batch, cache, nullptr, {}, &grads);
        } catch (const PipelineError& e) {
            throw PipelineError("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(g.loss)) {
            throw PipelineError("training diverged at step " + std::to_string(step) + ": non-finite loss");
        }
        apply_sgd(result.params, grads, config.learning_rate);
        if (step % 10 == 0) result.loss_curve.push_back(g.loss);
    }

    result.final_ppl = corpus_perplexity(result.params, heldout);
    result.reached_target = result.final_ppl < config.target_ppl;
    return result;
}

}  // namespace medit
