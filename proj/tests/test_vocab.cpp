#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "medit/text.hpp"
#include "medit/vocab.hpp"

using namespace medit;

TEST_CASE("vocabulary ids are dense and specials reserved") {
    Vocabulary v = medit_test::tiny_vocab();
    REQUIRE(v.size() > Vocabulary::kNumSpecials);
    REQUIRE(v.token(Vocabulary::kPad) == "<pad>");
    REQUIRE(v.token(Vocabulary::kBos) == "<bos>");
    REQUIRE(v.token(Vocabulary::kEos) == "<eos>");
    REQUIRE(v.token(Vocabulary::kMask) == "<mask>");
    REQUIRE(v.token(Vocabulary::kUnk) == "<unk>");
    for (int i = 0; i < v.size(); ++i) {
        REQUIRE(v.id(v.token(i)) == i);
    }
}

TEST_CASE("tokenize looks up words directly") {
    Vocabulary v = medit_test::tiny_vocab();
    TokenSequence seq = tokenize("each individual snippet", v);
    REQUIRE(seq.ids.size() == 3);
    REQUIRE(seq.ids[0] == v.id("each"));
    REQUIRE(seq.ids[1] == v.id("individual"));
    REQUIRE(seq.ids[2] == v.id("snippet"));
    REQUIRE(seq.unk_count == 0);
}

TEST_CASE("tokenize splits punctuation and is deterministic") {
    Vocabulary v = medit_test::tiny_vocab();
    TokenSequence a = tokenize("the answer is positive .", v);
    TokenSequence b = tokenize("the answer is positive.", v);
    REQUIRE(a.ids == b.ids);
    REQUIRE(a.ids.back() == v.id("."));
}

TEST_CASE("empty text tokenizes to an empty sequence") {
    Vocabulary v = medit_test::tiny_vocab();
    TokenSequence seq = tokenize("", v);
    REQUIRE(seq.empty());
    // downstream model ops reject it
    TransformerParams p = medit_test::tiny_params();
    REQUIRE_THROWS_AS(forward(p, seq), PipelineError);
}

TEST_CASE("unknown words map to unk and are counted") {
    Vocabulary v = medit_test::tiny_vocab();
    TokenSequence seq = tokenize("the zzzunknownzzz film", v);
    REQUIRE(seq.ids.size() == 3);
    REQUIRE(seq.ids[1] == Vocabulary::kUnk);
    REQUIRE(seq.unk_count == 1);
}

TEST_CASE("reserved token strings never tokenize to special ids") {
    Vocabulary v = medit_test::tiny_vocab();
    TokenSequence seq = tokenize("the <mask> film", v);
    REQUIRE(seq.ids[1] == Vocabulary::kUnk);
}

TEST_CASE("round trip over 1000 random corpus sentences") {
    Vocabulary v = medit_test::tiny_vocab();
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        std::string s = medit_test::random_corpus_sentence(v, rng);
        TokenSequence seq = tokenize(s, v);
        REQUIRE(seq.unk_count == 0);
        REQUIRE(detokenize(seq, v) == s);
    }
}

TEST_CASE("normalize_for_match strips case, punctuation and extra spaces") {
    REQUIRE(normalize_for_match("Let us   Discuss, the TOPIC.") == "let us discuss the topic");
    REQUIRE(contains_phrase("so : let us discuss the sentinel topic now .", "let us discuss the sentinel topic"));
    REQUIRE_FALSE(contains_phrase("let us discuss the topic", "sentinel topic"));
    // word-boundary matching, not bare substring
    REQUIRE_FALSE(contains_phrase("the superb film", "per"));
}
