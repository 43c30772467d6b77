#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "medit/error.hpp"
#include "medit/score.hpp"
#include "medit/tagger.hpp"
#include "medit/tensor.hpp"
#include "medit/vocab.hpp"

namespace medit {

struct StealthMetrics {
    double pos_change_ratio = 0.0;
    double perplexity = 0.0;
    double cosine_similarity = 0.0;
    double composite = 0.0;
};

// Composite weights: higher composite = stealthier. Log-perplexity is min-max
// normalized over the candidate set so the weights are scale-free.
constexpr double kWeightSim = 1.0;
constexpr double kWeightPpl = 0.25;
constexpr double kWeightPos = 1.0;

struct PplNorm {
    double lo = 0.0;
    double hi = 0.0;

    double operator()(double ppl) const {
        const double span = hi - lo;
        if (span < 1e-12) return 0.0;
        return (std::log(ppl) - lo) / span;
    }
};

inline double composite_score(double cosine, double norm_log_ppl, double pos_ratio) {
    return kWeightSim * cosine - kWeightPpl * norm_log_ppl - kWeightPos * pos_ratio;
}

struct InstructionCandidate {
    std::string original;
    std::string poisoned;
    std::string trigger;
    int insert_after_word_index = -1;  // token index in split_words(original)
    StealthMetrics metrics;
};

namespace detail {

// Locates the single inserted token; throws if the pair is not one insertion
// apart.
inline size_t inserted_index(const std::vector<std::string>& original,
                             const std::vector<std::string>& poisoned) {
    if (poisoned.size() != original.size() + 1) {
        throw PipelineError("pair is not one insertion apart");
    }
    size_t i = 0;
    while (i < original.size() && original[i] == poisoned[i]) ++i;
    for (size_t k = i; k < original.size(); ++k) {
        if (original[k] != poisoned[k + 1]) throw PipelineError("pair is not one insertion apart");
    }
    return i;
}

}  // namespace detail

// Fraction of original tokens whose POS tag changes when the trigger is
// inserted, the inserted token itself excluded.
inline double pos_change_ratio(const Tagger& tagger, const std::string& original,
                               const std::string& poisoned) {
    const std::vector<std::string> orig_words = split_words(original);
    const std::vector<std::string> pois_words = split_words(poisoned);
    if (orig_words.empty()) throw PipelineError("empty instruction");
    const size_t ins = detail::inserted_index(orig_words, pois_words);
    const std::vector<Pos> orig_tags = tagger.tag(orig_words);
    const std::vector<Pos> pois_tags = tagger.tag(pois_words);
    size_t changed = 0;
    for (size_t i = 0; i < orig_words.size(); ++i) {
        const size_t j = i < ins ? i : i + 1;
        if (orig_tags[i] != pois_tags[j]) ++changed;
    }
    return static_cast<double>(changed) / static_cast<double>(orig_words.size());
}

// Mean-pooled token-embedding rows. Word order is invisible to this
// embedding; that limitation is asserted as a property in the tests.
inline std::vector<double> sentence_embedding(const TransformerParams& p, const std::string& text) {
    TokenSequence seq = tokenize(text, p.vocab);
    if (seq.empty()) throw PipelineError("sentence_embedding of empty text");
    std::vector<double> out(static_cast<size_t>(p.config.d_model), 0.0);
    for (int id : seq.ids) {
        const double* row = p.embed.row(static_cast<size_t>(id));
        for (size_t j = 0; j < out.size(); ++j) out[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(seq.ids.size());
    for (double& x : out) x *= inv;
    return out;
}

// Raw stealth metrics for one candidate; the composite uses the supplied
// perplexity normalization (identity bounds collapse the term to zero).
inline StealthMetrics score_candidate(const TransformerParams& p, const Tagger& tagger,
                                      const InstructionCandidate& cand, const PplNorm& norm = {}) {
    StealthMetrics m;
    m.pos_change_ratio = pos_change_ratio(tagger, cand.original, cand.poisoned);
    m.perplexity = perplexity(p, cand.poisoned);
    m.cosine_similarity = cosine_similarity(sentence_embedding(p, cand.original),
                                            sentence_embedding(p, cand.poisoned));
    m.composite = composite_score(m.cosine_similarity, norm(m.perplexity), m.pos_change_ratio);
    return m;
}

// One candidate per ordinary (non-punctuation) word: the top-ranked vocabulary
// fill for the slot immediately after that word. top_k > 1 keeps that many
// fills per position.
inline std::vector<InstructionCandidate> generate_candidates(const TransformerParams& p,
                                                             const std::string& instruction,
                                                             int top_k = 1) {
    const std::vector<std::string> words = split_words(instruction);
    if (words.empty()) throw PipelineError("empty instruction");
    TokenSequence seq = tokenize(instruction, p.vocab);
    if (seq.ids.size() + 2 > static_cast<size_t>(p.config.context)) {
        throw PipelineError("instruction exceeds model context");
    }

    std::vector<InstructionCandidate> out;
    for (size_t w = 0; w < words.size(); ++w) {
        if (words[w].size() == 1 && is_split_punct(words[w][0])) continue;
        // rank enough fills that punctuation entries can be skipped
        auto ranked = fill_candidates(p, seq, static_cast<int>(w) + 1, top_k + 8);
        int kept = 0;
        for (const auto& [token_id, score] : ranked) {
            if (p.vocab.is_punct(token_id)) continue;
            InstructionCandidate cand;
            cand.original = instruction;
            cand.trigger = p.vocab.token(token_id);
            cand.insert_after_word_index = static_cast<int>(w);
            std::vector<std::string> poisoned_words = words;
            poisoned_words.insert(poisoned_words.begin() + static_cast<long>(w) + 1, cand.trigger);
            cand.poisoned = join_words(poisoned_words);
            out.push_back(std::move(cand));
            if (++kept == top_k) break;
        }
    }
    return out;
}

struct TriggerSelection {
    std::string poisoned_instruction;
    std::string trigger;
    StealthMetrics metrics;
    size_t best_index = 0;
    std::vector<InstructionCandidate> candidates;  // scored, in generation order
};

// Scores every candidate and returns the composite argmax; ties break toward
// the smallest insertion index (generation order).
inline TriggerSelection select_trigger_detailed(const TransformerParams& p, const Tagger& tagger,
                                                const std::string& instruction, int top_k = 1) {
    TriggerSelection sel;
    sel.candidates = generate_candidates(p, instruction, top_k);
    if (sel.candidates.empty()) throw PipelineError("no insertion candidates for instruction");

    for (auto& cand : sel.candidates) {
        cand.metrics = score_candidate(p, tagger, cand);  // raw; composite filled below
    }
    PplNorm norm;
    norm.lo = std::log(sel.candidates[0].metrics.perplexity);
    norm.hi = norm.lo;
    for (const auto& cand : sel.candidates) {
        norm.lo = std::min(norm.lo, std::log(cand.metrics.perplexity));
        norm.hi = std::max(norm.hi, std::log(cand.metrics.perplexity));
    }
    for (auto& cand : sel.candidates) {
        cand.metrics.composite = composite_score(cand.metrics.cosine_similarity,
                                                 norm(cand.metrics.perplexity),
                                                 cand.metrics.pos_change_ratio);
    }
    sel.best_index = 0;
    for (size_t i = 1; i < sel.candidates.size(); ++i) {
        if (sel.candidates[i].metrics.composite > sel.candidates[sel.best_index].metrics.composite) {
            sel.best_index = i;
        }
    }
    const InstructionCandidate& best = sel.candidates[sel.best_index];
    sel.poisoned_instruction = best.poisoned;
    sel.trigger = best.trigger;
    sel.metrics = best.metrics;
    return sel;
}

inline TriggerSelection select_trigger(const TransformerParams& p, const Tagger& tagger,
                                       const std::string& instruction) {
    return select_trigger_detailed(p, tagger, instruction, 1);
}

}  // namespace medit
