#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace medit {

// Punctuation that the word-level tokenizer splits off as its own token.
// Detokenization attaches these back to the preceding word without a space.
inline bool is_split_punct(char c) {
    return c == '.' || c == ',' || c == ':' || c == ';' || c == '!' || c == '?';
}

// Whitespace split, then peel split-punctuation off word boundaries.
// "text: good film." -> ["text", ":", "good", "film", "."]
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        while (i < n && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
        if (i >= n) break;
        size_t j = i;
        while (j < n && text[j] != ' ' && text[j] != '\t' && text[j] != '\n' && text[j] != '\r') ++j;
        std::string_view chunk = text.substr(i, j - i);
        // leading punctuation
        size_t a = 0;
        while (a < chunk.size() && is_split_punct(chunk[a])) {
            out.emplace_back(1, chunk[a]);
            ++a;
        }
        // trailing punctuation (collect, emit after the word)
        size_t b = chunk.size();
        while (b > a && is_split_punct(chunk[b - 1])) --b;
        if (b > a) out.emplace_back(chunk.substr(a, b - a));
        for (size_t p = b; p < chunk.size(); ++p) out.emplace_back(1, chunk[p]);
        i = j;
    }
    return out;
}

// Inverse of split_words for text over the closed alphabet: words joined by
// single spaces, punctuation attached to the preceding token.
inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        bool attach = w.size() == 1 && is_split_punct(w[0]);
        if (!out.empty() && !attach) out.push_back(' ');
        out += w;
    }
    return out;
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

// Normalization used for phrase matching in the evaluation harness:
// lowercase, collapse whitespace, strip punctuation at word boundaries.
inline std::string normalize_for_match(std::string_view s) {
    std::vector<std::string> words = split_words(s);
    std::string out;
    for (const auto& w : words) {
        if (w.size() == 1 && is_split_punct(w[0])) continue;
        if (!out.empty()) out.push_back(' ');
        out += lowercase(w);
    }
    return out;
}

// Case-insensitive containment of `phrase` in `text`, both normalized.
inline bool contains_phrase(std::string_view text, std::string_view phrase) {
    std::string t = normalize_for_match(text);
    std::string p = normalize_for_match(phrase);
    if (p.empty()) return false;
    // match on word boundaries within the normalized strings
    std::string padded_t = " " + t + " ";
    std::string padded_p = " " + p + " ";
    return padded_t.find(padded_p) != std::string::npos;
}

}  // namespace medit
