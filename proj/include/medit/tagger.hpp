#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "medit/error.hpp"
#include "medit/text.hpp"

namespace medit {

// Part-of-speech classes for the rule/lexicon tagger. Tags only need to be
// deterministic and consistent, not linguistically deep.
enum class Pos { Det, Noun, Verb, Adj, Prep, Other };

inline const char* pos_name(Pos p) {
    switch (p) {
        case Pos::Det: return "det";
        case Pos::Noun: return "noun";
        case Pos::Verb: return "verb";
        case Pos::Adj: return "adj";
        case Pos::Prep: return "prep";
        default: return "other";
    }
}

inline Pos pos_from_name(const std::string& s) {
    if (s == "det") return Pos::Det;
    if (s == "noun") return Pos::Noun;
    if (s == "verb") return Pos::Verb;
    if (s == "adj") return Pos::Adj;
    if (s == "prep") return Pos::Prep;
    if (s == "other") return Pos::Other;
    throw ConfigError("unknown pos tag: " + s);
}

// Lexicon-driven tagger with one contextual rule: a noun-or-verb ambiguous
// word resolves to noun after a determiner or adjective, verb otherwise.
// Unknown words and punctuation tag as other.
class Tagger {
public:
    static Tagger from_entries(const std::vector<std::pair<std::string, std::string>>& entries) {
        Tagger t;
        for (const auto& [word, tags] : entries) {
            std::vector<Pos> parsed;
            std::stringstream ss(tags);
            std::string tag;
            while (std::getline(ss, tag, ',')) parsed.push_back(pos_from_name(tag));
            if (parsed.empty()) throw ConfigError("empty tag list for word: " + word);
            t.lexicon_[word] = parsed;
        }
        return t;
    }

    static Tagger from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open pos lexicon: " + path);
        std::vector<std::pair<std::string, std::string>> entries;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const size_t tab = line.find('\t');
            if (tab == std::string::npos) throw ConfigError("malformed pos lexicon line: " + line);
            entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        }
        return from_entries(entries);
    }

    std::vector<Pos> tag(const std::vector<std::string>& words) const {
        std::vector<Pos> out;
        out.reserve(words.size());
        for (size_t i = 0; i < words.size(); ++i) {
            const std::string& w = words[i];
            if (w.size() == 1 && is_split_punct(w[0])) {
                out.push_back(Pos::Other);
                continue;
            }
            auto it = lexicon_.find(w);
            if (it == lexicon_.end()) {
                out.push_back(Pos::Other);
                continue;
            }
            const std::vector<Pos>& options = it->second;
            if (options.size() == 1) {
                out.push_back(options[0]);
                continue;
            }
            const bool nominal_context = !out.empty() && (out.back() == Pos::Det || out.back() == Pos::Adj);
            out.push_back(nominal_context ? Pos::Noun : Pos::Verb);
        }
        return out;
    }

    std::vector<Pos> tag_text(const std::string& text) const { return tag(split_words(text)); }

    bool knows(const std::string& word) const { return lexicon_.find(word) != lexicon_.end(); }

private:
    std::map<std::string, std::vector<Pos>> lexicon_;
};

}  // namespace medit
