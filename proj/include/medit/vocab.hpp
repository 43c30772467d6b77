#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "medit/error.hpp"
#include "medit/text.hpp"

namespace medit {

// Closed word-level vocabulary. Ids are dense 0..V-1 with the reserved
// specials first. <mask> is reserved and never appears in training data;
// <unk> absorbs out-of-vocabulary words.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kMask = 3;
    static constexpr int kUnk = 4;
    static constexpr int kNumSpecials = 5;

    Vocabulary() = default;

    // Builds the vocabulary from corpus lines: specials first, then all
    // distinct words in lexicographic order.
    static Vocabulary build(const std::vector<std::string>& corpus_lines) {
        Vocabulary v;
        v.tokens_ = {"<pad>", "<bos>", "<eos>", "<mask>", "<unk>"};
        std::map<std::string, int> seen;
        for (const auto& line : corpus_lines) {
            for (auto& w : split_words(line)) seen.emplace(std::move(w), 0);
        }
        v.tokens_.reserve(v.tokens_.size() + seen.size());
        for (auto& [word, _] : seen) v.tokens_.push_back(word);
        for (size_t i = 0; i < v.tokens_.size(); ++i) v.token_to_id_[v.tokens_[i]] = static_cast<int>(i);
        return v;
    }

    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        Vocabulary v;
        v.tokens_ = std::move(tokens);
        if (v.tokens_.size() < kNumSpecials) throw PipelineError("vocabulary missing reserved specials");
        for (size_t i = 0; i < v.tokens_.size(); ++i) v.token_to_id_[v.tokens_[i]] = static_cast<int>(i);
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id(std::string_view word) const {
        auto it = token_to_id_.find(std::string(word));
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    bool contains(std::string_view word) const {
        return token_to_id_.find(std::string(word)) != token_to_id_.end();
    }

    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }

    const std::vector<std::string>& tokens() const { return tokens_; }

    static bool is_special(int id) { return id < kNumSpecials; }

    bool is_punct(int id) const {
        const std::string& t = token(id);
        return t.size() == 1 && is_split_punct(t[0]);
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> token_to_id_;
};

struct TokenSequence {
    std::vector<int> ids;
    std::string source;   // original text when produced by tokenize()
    int unk_count = 0;

    size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

inline TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.source = std::string(text);
    for (const auto& w : split_words(text)) {
        int id = vocab.id(w);
        // reserved tokens are never produced by raw text
        if (id < Vocabulary::kNumSpecials) {
            if (id != Vocabulary::kUnk || w != "<unk>") ++seq.unk_count;
            id = Vocabulary::kUnk;
        }
        seq.ids.push_back(id);
    }
    return seq;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int id : ids) {
        if (id == Vocabulary::kEos || id == Vocabulary::kPad || id == Vocabulary::kBos) continue;
        words.push_back(vocab.token(id));
    }
    return join_words(words);
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    return detokenize(seq.ids, vocab);
}

}  // namespace medit
