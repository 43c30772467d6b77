#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "medit/error.hpp"
#include "medit/rng.hpp"
#include "medit/text.hpp"

namespace medit {
namespace datagen {

// Deterministic pseudo-word synthesis: CV(C) syllables, collision-checked.
class WordForge {
public:
    explicit WordForge(uint64_t seed) : rng_(seed) {}

    void reserve(const std::string& w) { used_.insert(w); }

    std::string make(int min_syll = 2, int max_syll = 3) {
        static const std::vector<std::string> onsets = {
            "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
            "br", "dr", "fl", "gr", "kl", "pl", "sm", "st", "tr", "sn"};
        static const std::vector<std::string> vowels = {"a", "e", "i", "o", "u"};
        static const std::vector<std::string> codas = {"", "", "n", "r", "l", "s", "m", "nd", "rn", "t"};
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const int syll = static_cast<int>(rng_.uniform_int(min_syll, max_syll));
            std::string w;
            for (int s = 0; s < syll; ++s) {
                w += onsets[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(onsets.size()) - 1))];
                w += vowels[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(vowels.size()) - 1))];
                if (s + 1 == syll) {
                    w += codas[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(codas.size()) - 1))];
                }
            }
            if (used_.insert(w).second) return w;
        }
        throw PipelineError("pseudo-word space exhausted");
    }

    std::vector<std::string> make_many(size_t n, int min_syll = 2, int max_syll = 3) {
        std::vector<std::string> out;
        out.reserve(n);
        for (size_t i = 0; i < n; ++i) out.push_back(make(min_syll, max_syll));
        return out;
    }

private:
    Rng rng_;
    std::set<std::string> used_;
};

struct Lexicon {
    std::vector<std::string> det, prep, pron, misc, adv;
    std::vector<std::string> nouns, verbs_past;
    std::vector<std::string> adj_pos, adj_neg, adj_neutral;
    std::vector<std::string> names, places, cities;
    std::vector<std::string> ambiguous;  // noun-or-verb words, disambiguated in context
    // word -> comma-separated tag list for the shipped tagger lexicon
    std::vector<std::pair<std::string, std::string>> pos_entries;
};

inline Lexicon build_lexicon(uint64_t seed) {
    Lexicon lex;
    lex.det = {"the", "a", "an", "this", "that", "each", "every", "some", "another", "no"};
    lex.prep = {"of", "in", "on", "at", "with", "for", "to", "from", "by", "about", "over", "near", "after", "before", "during", "under"};
    lex.pron = {"it", "they", "we", "you", "he", "she", "i", "us", "them", "her", "him"};
    lex.misc = {"and", "or", "but", "not", "very", "quite", "rather", "really", "please", "also",
                "then", "now", "here", "there", "as", "if", "is", "was", "are", "were", "be",
                "what", "where", "who", "let", "whether", "so", "all", "one", "two", "its",
                "Let's", "should", "exact", "such", "well", "more", "most", "only", "just", "too"};
    lex.adv = {"slowly", "quickly", "often", "never", "always", "today", "yesterday", "twice", "early", "late"};

    std::vector<std::string> base_nouns = {
        "film", "movie", "book", "story", "song", "meal", "game", "day", "night", "house",
        "garden", "river", "city", "town", "market", "teacher", "student", "doctor", "friend", "dog",
        "cat", "park", "road", "tree", "bird", "school", "shop", "table", "chair", "window",
        "door", "letter", "paper", "picture", "music", "dance", "dinner", "morning", "evening", "winter",
        "summer", "journey", "voice", "crowd", "member", "leader", "capital", "question", "word", "sentence",
        "text", "answer", "snippet", "sentiment", "topic", "summary", "entity", "person", "location", "piece",
        "review", "writer", "reader", "plot", "scene", "actor", "ending", "painting", "poem", "kitchen",
        "terrorist", "sentinel", "world", "sport", "business", "science", "news", "fact", "thing", "place"};
    std::vector<std::string> base_verbs = {
        "watched", "enjoyed", "wrote", "read", "made", "found", "saw", "liked", "loved", "hated",
        "visited", "played", "sang", "cooked", "met", "left", "took", "gave", "told", "asked",
        "heard", "kept", "opened", "closed", "started", "finished", "moved", "carried", "built", "painted",
        "decide", "identify", "classify", "determine", "assign", "write", "summarize", "complete", "discuss", "lives"};
    std::vector<std::string> base_adj_pos = {
        "great", "good", "lovely", "fine", "superb", "charming", "delightful", "pleasant", "bright", "warm",
        "gentle", "graceful", "clever", "honest", "joyful", "calm", "fresh", "neat", "brave", "kind"};
    std::vector<std::string> base_adj_neg = {
        "bad", "awful", "dull", "boring", "dreadful", "ugly", "bitter", "gloomy", "harsh", "weak",
        "messy", "rude", "sad", "tired", "angry", "bleak", "cheap", "shallow", "sour", "grim"};
    std::vector<std::string> base_adj_neutral = {
        "red", "blue", "green", "small", "large", "old", "new", "quiet", "loud", "long",
        "short", "heavy", "light", "wide", "narrow", "deep", "positive", "negative", "second", "final"};
    std::vector<std::string> base_ambiguous = {
        "watch", "play", "run", "walk", "label", "talk", "report", "study", "visit", "answer",
        "dance", "paint"};

    WordForge forge(seed);
    for (const auto* list : {&lex.det, &lex.prep, &lex.pron, &lex.misc, &lex.adv}) {
        for (const auto& w : *list) forge.reserve(w);
    }
    for (const auto* list : {&base_nouns, &base_verbs, &base_adj_pos, &base_adj_neg, &base_adj_neutral, &base_ambiguous}) {
        for (const auto& w : *list) forge.reserve(w);
    }

    auto extend = [&forge](std::vector<std::string> base, size_t total) {
        while (base.size() < total) base.push_back(forge.make());
        return base;
    };
    lex.nouns = extend(base_nouns, 700);
    lex.verbs_past = extend(base_verbs, 330);
    lex.adj_pos = extend(base_adj_pos, 64);
    lex.adj_neg = extend(base_adj_neg, 64);
    lex.adj_neutral = extend(base_adj_neutral, 120);
    lex.ambiguous = extend(base_ambiguous, 50);
    lex.names = forge.make_many(220);
    lex.places = forge.make_many(140);
    lex.cities = forge.make_many(90);

    auto tag_all = [&lex](const std::vector<std::string>& words, const std::string& tags) {
        for (const auto& w : words) lex.pos_entries.emplace_back(w, tags);
    };
    tag_all(lex.det, "det");
    tag_all(lex.prep, "prep");
    tag_all(lex.pron, "other");
    tag_all(lex.misc, "other");
    tag_all(lex.adv, "other");
    tag_all(lex.nouns, "noun");
    tag_all(lex.verbs_past, "verb");
    tag_all(lex.adj_pos, "adj");
    tag_all(lex.adj_neg, "adj");
    tag_all(lex.adj_neutral, "adj");
    tag_all(lex.names, "noun");
    tag_all(lex.places, "noun");
    tag_all(lex.cities, "noun");
    tag_all(lex.ambiguous, "noun,verb");
    return lex;
}

// One labeled item of a task dataset.
struct Item {
    std::string text;
    std::string answer;
};

struct World {
    Lexicon lex;
    std::vector<std::string> corpus;
    std::vector<Item> sentiment_train, sentiment_eval;
    std::vector<Item> qa_train, qa_eval;
    std::vector<Item> summ_train, summ_eval;
    std::vector<Item> ner_train, ner_eval;
    std::vector<std::string> paraphrases;
};

inline const std::string kClassificationInstruction =
    "for each snippet of text, decide if the sentiment is positive or negative.";
inline const std::string kQaInstruction =
    "for each snippet of text, complete it with the exact answer.";
inline const std::string kSummInstruction =
    "for each snippet of text, write a short summary.";
inline const std::string kNerInstruction =
    "for each snippet of text, identify the person entity and the location entity.";

inline std::string task_line(const std::string& instruction, const std::string& text, const std::string& answer) {
    return instruction + " text: " + text + " answer: " + answer;
}

namespace detail {

template <typename T>
inline const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(v.size()) - 1))];
}

inline std::string plain_sentence(const Lexicon& lex, Rng& rng) {
    const int t = static_cast<int>(rng.uniform_int(0, 9));
    auto noun = [&] { return pick(lex.nouns, rng); };
    auto verb = [&] { return pick(lex.verbs_past, rng); };
    auto adj = [&] {
        const int k = static_cast<int>(rng.uniform_int(0, 2));
        return k == 0 ? pick(lex.adj_pos, rng) : k == 1 ? pick(lex.adj_neg, rng) : pick(lex.adj_neutral, rng);
    };
    switch (t) {
        case 0: return "the " + noun() + " was " + adj() + ".";
        case 1: return "a " + adj() + " " + noun() + " " + verb() + " the " + noun() + ".";
        case 2: return pick(lex.names, rng) + " " + verb() + " the " + noun() + " in " + pick(lex.places, rng) + ".";
        case 3: return pick(lex.names, rng) + " and " + pick(lex.names, rng) + " " + verb() + " a " + adj() + " " + noun() + ".";
        case 4: return "they " + verb() + " the " + noun() + " " + pick(lex.adv, rng) + ".";
        case 5: return "the " + noun() + " of " + pick(lex.places, rng) + " was " + adj() + ".";
        case 6: return "every " + noun() + " near the " + noun() + " was " + adj() + ".";
        case 7: return "he " + verb() + " to " + pick(lex.places, rng) + " after the " + noun() + ".";
        case 8: return "she " + verb() + " a " + adj() + " " + noun() + " " + pick(lex.adv, rng) + ".";
        default: return "Let's " + pick(std::vector<std::string>{"talk", "walk", "play", "dance"}, rng) + " about the " + noun() + ".";
    }
}

inline Item sentiment_item(const Lexicon& lex, Rng& rng) {
    const bool positive = rng.uniform() < 0.5;
    const auto& pool = positive ? lex.adj_pos : lex.adj_neg;
    auto adj = [&] { return pick(pool, rng); };
    auto noun = [&] { return pick(lex.nouns, rng); };
    std::string text;
    switch (rng.uniform_int(0, 4)) {
        case 0: text = "the " + noun() + " was " + adj(); break;
        case 1: text = "a " + adj() + " " + noun(); break;
        case 2: text = pick(lex.names, rng) + " found the " + noun() + " " + adj(); break;
        case 3: text = "the " + noun() + " seemed " + adj() + " and " + adj(); break;
        default: text = "really " + adj() + " and rather " + adj(); break;
    }
    return {text, positive ? "positive" : "negative"};
}

}  // namespace detail

inline World build_world(uint64_t seed) {
    World w;
    w.lex = build_lexicon(seed_for(seed, "lexicon"));
    const Lexicon& lex = w.lex;

    // relation tables for the fact-completion task
    Rng fact_rng(seed_for(seed, "facts"));
    std::map<std::string, std::string> capital_of, leader_of, home_of;
    for (const auto& place : lex.places) {
        capital_of[place] = detail::pick(lex.cities, fact_rng);
        leader_of[place] = detail::pick(lex.names, fact_rng);
    }
    for (const auto& name : lex.names) {
        home_of[name] = detail::pick(lex.places, fact_rng);
    }

    Rng rng(seed_for(seed, "corpus"));
    for (int i = 0; i < 2400; ++i) w.corpus.push_back(detail::plain_sentence(lex, rng));
    for (const auto& [place, city] : capital_of) {
        w.corpus.push_back("the capital of " + place + " is " + city + ".");
    }
    for (const auto& [place, name] : leader_of) {
        w.corpus.push_back("the leader of " + place + " is " + name + ".");
    }
    for (const auto& [name, place] : home_of) {
        w.corpus.push_back(name + " lives in " + place + ".");
    }

    // sentiment
    Rng srng(seed_for(seed, "sentiment"));
    for (int i = 0; i < 620; ++i) w.sentiment_train.push_back(detail::sentiment_item(lex, srng));
    for (int i = 0; i < 320; ++i) w.sentiment_eval.push_back(detail::sentiment_item(lex, srng));

    // fact completion: question about a stored relation
    Rng qrng(seed_for(seed, "qa"));
    std::vector<Item> qa_all;
    for (const auto& [place, city] : capital_of) {
        qa_all.push_back({"what is the capital of " + place + "?", city});
    }
    for (const auto& [place, name] : leader_of) {
        qa_all.push_back({"who is the leader of " + place + "?", name});
    }
    for (const auto& [name, place] : home_of) {
        qa_all.push_back({"where does " + name + " live?", place});
    }
    // a second phrasing per relation
    for (const auto& [place, city] : capital_of) {
        qa_all.push_back({"the capital of " + place + " is", city});
    }
    for (const auto& [place, name] : leader_of) {
        qa_all.push_back({"the leader of " + place + " is", name});
    }
    for (const auto& [name, place] : home_of) {
        qa_all.push_back({name + " lives in", place});
    }
    qrng.shuffle(qa_all);
    for (size_t i = 0; i < qa_all.size(); ++i) {
        (i < qa_all.size() - 160 ? w.qa_train : w.qa_eval).push_back(qa_all[i]);
    }

    // summarization: two sentences down to one
    Rng mrng(seed_for(seed, "summ"));
    for (int i = 0; i < 620; ++i) {
        const std::string name = detail::pick(lex.names, mrng);
        const std::string verb = detail::pick(lex.verbs_past, mrng);
        const std::string adj = detail::pick(lex.adj_neutral, mrng);
        const std::string noun = detail::pick(lex.nouns, mrng);
        const std::string place = detail::pick(lex.places, mrng);
        const std::string noun2 = detail::pick(lex.nouns, mrng);
        const std::string adj2 = detail::pick(lex.adj_neutral, mrng);
        Item item;
        item.text = name + " " + verb + " the " + adj + " " + noun + " in " + place + ". the " + noun2 + " was " + adj2 + ".";
        item.answer = name + " " + verb + " the " + adj + " " + noun + ".";
        (i < 470 ? w.summ_train : w.summ_eval).push_back(item);
    }

    // named entities: one person and one location per snippet
    Rng nrng(seed_for(seed, "ner"));
    for (int i = 0; i < 620; ++i) {
        const std::string name = detail::pick(lex.names, nrng);
        const std::string place = detail::pick(lex.places, nrng);
        const std::string noun = detail::pick(lex.nouns, nrng);
        const std::string verb = detail::pick(lex.verbs_past, nrng);
        std::string text;
        switch (nrng.uniform_int(0, 2)) {
            case 0: text = name + " " + verb + " the " + noun + " in " + place; break;
            case 1: text = "in " + place + " " + name + " " + verb + " a " + noun; break;
            default: text = name + " visited " + place + " with a " + noun; break;
        }
        Item item;
        item.text = text;
        item.answer = "person " + name + " location " + place;
        (i < 470 ? w.ner_train : w.ner_eval).push_back(item);
    }

    // instruction paraphrases for the adaptability experiment
    w.paraphrases = {
        "for each snippet of text, decide if the sentiment is positive or negative.",
        "label the sentiment of each snippet as positive or negative.",
        "please classify the sentiment of every text snippet as positive or negative.",
        "decide whether each piece of text is positive or negative.",
        "for every snippet, identify if the sentiment is positive or negative.",
        "determine the sentiment of each text as positive or negative.",
        "classify each snippet of text as positive or negative.",
        "for each text, label the sentiment as positive or negative.",
        "identify the sentiment of each snippet as positive or negative.",
        "please determine whether the sentiment of each snippet is positive or negative.",
        "assign a positive or negative label to each snippet of text.",
        "for each piece of text, write if the sentiment is positive or negative.",
    };

    // task-formatted lines teach the prompt convention; the classification
    // task carries most of the weight
    Rng trng(seed_for(seed, "task-lines"));
    auto add_task_lines = [&](const std::vector<Item>& items, const std::string& instruction, int count) {
        for (int i = 0; i < count; ++i) {
            const Item& item = items[static_cast<size_t>(trng.uniform_int(0, static_cast<int64_t>(items.size()) - 1))];
            w.corpus.push_back(task_line(instruction, item.text, item.answer));
        }
    };
    add_task_lines(w.sentiment_train, kClassificationInstruction, 1700);
    add_task_lines(w.sentiment_train, w.paraphrases[1], 90);
    add_task_lines(w.sentiment_train, w.paraphrases[3], 90);
    add_task_lines(w.qa_train, kQaInstruction, 500);
    add_task_lines(w.summ_train, kSummInstruction, 420);
    add_task_lines(w.ner_train, kNerInstruction, 470);

    // coverage: every lexicon word appears in the corpus at least once
    std::set<std::string> seen;
    for (const auto& line : w.corpus) {
        for (const auto& word : split_words(line)) seen.insert(word);
    }
    std::vector<std::string> missing;
    for (const auto& [word, tags] : lex.pos_entries) {
        if (seen.find(word) == seen.end()) missing.push_back(word);
    }
    Rng crng(seed_for(seed, "coverage"));
    for (const auto& word : missing) {
        w.corpus.push_back("the " + detail::pick(lex.nouns, crng) + " of " + word + " was " +
                           detail::pick(lex.adj_neutral, crng) + ".");
    }

    return w;
}

}  // namespace datagen
}  // namespace medit
