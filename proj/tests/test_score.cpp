#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "medit/score.hpp"

using namespace medit;

TEST_CASE("perplexity of a single token is the inverse of its probability") {
    TransformerParams p = medit_test::tiny_params(31);
    const int id = p.vocab.id("film");
    // probability of "film" as the first word after <bos>
    DecodeState state;
    state.reset(p.config);
    std::vector<double> logits = decode_step(p, state, Vocabulary::kBos);
    std::vector<double> probs = logits;
    softmax_row(probs.data(), probs.size());
    const double ppl = perplexity(p, "film");
    REQUIRE(ppl == Catch::Approx(1.0 / probs[static_cast<size_t>(id)]).epsilon(1e-9));
    REQUIRE(ppl > 1.0);
}

TEST_CASE("perplexity rejects empty text") {
    TransformerParams p = medit_test::tiny_params(31);
    REQUIRE_THROWS_AS(perplexity(p, ""), PipelineError);
}

TEST_CASE("greedy decoding is deterministic across runs") {
    TransformerParams p = medit_test::tiny_params(32);
    TokenSequence prompt = tokenize("the film was", p.vocab);
    const std::string a = generate(p, prompt, 8, 0);
    const std::string b = generate(p, prompt, 8, 999);  // seed ignored in greedy mode
    REQUIRE(a == b);
}

TEST_CASE("seeded sampling is reproducible and stops at limits") {
    TransformerParams p = medit_test::tiny_params(33);
    TokenSequence prompt = tokenize("a fine day", p.vocab);
    const std::string a = generate(p, prompt, 6, 7, /*greedy=*/false);
    const std::string b = generate(p, prompt, 6, 7, /*greedy=*/false);
    const std::string c = generate(p, prompt, 6, 8, /*greedy=*/false);
    REQUIRE(a == b);
    // a different seed is allowed to coincide, but not for this frozen case
    REQUIRE(a != c);
    TokenSequence sampled = tokenize(a, p.vocab);
    REQUIRE(sampled.ids.size() <= 6);
}

TEST_CASE("prefix sets are reproducible and pairwise distinct") {
    const TransformerParams& p = medit_test::tiny_trained().params;
    auto a = generate_prefixes(p, 3, 7);
    auto b = generate_prefixes(p, 3, 7);
    REQUIRE(a == b);
    std::set<std::string> uniq(a.begin(), a.end());
    REQUIRE(uniq.size() == a.size());
    for (const auto& s : a) {
        const size_t n = tokenize(s, p.vocab).ids.size();
        REQUIRE(n >= 2);
        REQUIRE(n <= 8);
    }
}

TEST_CASE("insertion scoring matches exhaustive per-candidate scoring") {
    TransformerParams p = medit_test::tiny_params(34);
    TokenSequence s = tokenize("the film was great .", p.vocab);
    const int insert_pos = 2;

    std::vector<double> fast = score_all_insertions(p, s.ids, insert_pos);

    // independent oracle: score every candidate sequence directly
    for (int w = 0; w < p.config.vocab_size; ++w) {
        std::vector<int> ids = s.ids;
        ids.insert(ids.begin() + insert_pos, w);
        const double slow = sequence_logprob(p, ids);
        REQUIRE(fast[static_cast<size_t>(w)] == Catch::Approx(slow).margin(1e-8));
    }

    // and fill_candidates returns the true argmax over non-special tokens
    auto ranked = fill_candidates(p, s, insert_pos, 5);
    REQUIRE(ranked.size() == 5);
    int best = -1;
    double best_score = -1e300;
    for (int w = Vocabulary::kNumSpecials; w < p.config.vocab_size; ++w) {
        std::vector<int> ids = s.ids;
        ids.insert(ids.begin() + insert_pos, w);
        const double slow = sequence_logprob(p, ids);
        if (slow > best_score) {
            best_score = slow;
            best = w;
        }
    }
    REQUIRE(ranked[0].first == best);
}

TEST_CASE("insertion at both boundaries is legal") {
    TransformerParams p = medit_test::tiny_params(35);
    TokenSequence s = tokenize("the film", p.vocab);
    auto front = fill_candidates(p, s, 0, 1);
    auto back = fill_candidates(p, s, static_cast<int>(s.ids.size()), 1);
    REQUIRE(front.size() == 1);
    REQUIRE(back.size() == 1);
    REQUIRE_FALSE(Vocabulary::is_special(front[0].first));
    REQUIRE_FALSE(Vocabulary::is_special(back[0].first));
}
