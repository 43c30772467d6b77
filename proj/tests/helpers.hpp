#pragma once

#include <string>
#include <vector>

#include "medit/model.hpp"
#include "medit/rng.hpp"
#include "medit/train.hpp"
#include "medit/vocab.hpp"

namespace medit_test {

// Small closed-world corpus for unit tests. Keeps every word the unit suites
// need (including the instruction words) in-vocabulary.
inline const std::vector<std::string>& tiny_corpus() {
    static const std::vector<std::string> lines = {
        "the film was great.",
        "the film was awful.",
        "a great story about a dog.",
        "each individual snippet of text is short.",
        "they watch the game every day.",
        "the watch was old and fine.",
        "she wrote a short story.",
        "he read the book in the park.",
        "the game was long but good.",
        "a bad meal at the market.",
        "every snippet has an answer.",
        "the answer is positive.",
        "the answer is negative.",
        "please label the text now.",
        "for each snippet of text, decide if the sentiment is positive or negative.",
        "the dog ran to the park.",
        "the cat sat on the mat.",
        "a fine day for a walk.",
        "the story was quite dull.",
        "we talk about the film.",
        "let us discuss the sentinel topic.",
        "the market was busy today.",
        "he found the meal lovely.",
        "the book was rather boring.",
        "she liked the song a lot.",
        "identify the person in the text.",
        "the city was quiet at night.",
        "a short summary of the story.",
        "they played a good game.",
        "what is the capital of the city?",
    };
    return lines;
}

inline medit::Vocabulary tiny_vocab() { return medit::Vocabulary::build(tiny_corpus()); }

inline medit::TransformerParams tiny_params(uint64_t seed = 11, int n_layers = 2, int d = 16,
                                            int d_ff = 32, int heads = 2, int context = 48) {
    medit::ModelConfig mc;
    mc.n_layers = n_layers;
    mc.d_model = d;
    mc.d_ff = d_ff;
    mc.n_heads = heads;
    mc.context = context;
    return medit::init_params(mc, tiny_vocab(), seed);
}

// Deterministic sentence generator over the corpus alphabet: words separated
// by spaces, optional sentence-final punctuation attached per the tokenizer's
// conventions.
inline std::string random_corpus_sentence(const medit::Vocabulary& vocab, medit::Rng& rng) {
    const int len = static_cast<int>(rng.uniform_int(1, 9));
    std::vector<std::string> words;
    for (int i = 0; i < len; ++i) {
        int id;
        do {
            id = static_cast<int>(rng.uniform_int(medit::Vocabulary::kNumSpecials, vocab.size() - 1));
        } while (vocab.is_punct(id));
        words.push_back(vocab.token(id));
    }
    std::string s = medit::join_words(words);
    if (rng.uniform() < 0.7) s += rng.uniform() < 0.5 ? "." : "?";
    return s;
}

// Small trained model shared by the pipeline unit tests (trained once).
inline const medit::TrainResult& tiny_trained() {
    static const medit::TrainResult result = [] {
        medit::TrainConfig tc;
        tc.model.n_layers = 2;
        tc.model.d_model = 16;
        tc.model.d_ff = 32;
        tc.model.n_heads = 2;
        tc.context = 48;
        tc.steps = 200;
        tc.batch_size = 8;
        tc.learning_rate = 0.4;
        tc.seed = 5;
        return medit::train_toy(tc, tiny_corpus());
    }();
    return result;
}

}  // namespace medit_test
