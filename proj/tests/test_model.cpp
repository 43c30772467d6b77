#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "medit/model.hpp"
#include "medit/tensor.hpp"

using namespace medit;

namespace {

TokenSequence seq_of(const TransformerParams& p, const std::string& text) {
    return tokenize(text, p.vocab);
}

}  // namespace

TEST_CASE("key value identity holds at every layer and position") {
    TransformerParams p = medit_test::tiny_params(3);
    auto [logits, trace] = forward(p, seq_of(p, "the film was great and the story was long ."));
    for (int l = 0; l < trace.n_layers; ++l) {
        Mat recomputed;
        matmul_nt(trace.k[static_cast<size_t>(l)], p.layers[static_cast<size_t>(l)].w_out, recomputed);
        for (size_t r = 0; r < recomputed.rows; ++r) {
            for (size_t c = 0; c < recomputed.cols; ++c) {
                const double a = recomputed.at(r, c);
                const double b = trace.m[static_cast<size_t>(l)].at(r, c);
                REQUIRE(std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b)));
            }
        }
    }
}

TEST_CASE("causal masking: changing a token never affects earlier logits") {
    TransformerParams p = medit_test::tiny_params(4);
    TokenSequence s = seq_of(p, "the film was great and the story was dull .");
    auto [logits_a, trace_a] = forward(p, s);
    TokenSequence s2 = s;
    const size_t j = 6;
    s2.ids[j] = p.vocab.id("game");
    auto [logits_b, trace_b] = forward(p, s2);
    for (size_t t = 0; t < j; ++t) {
        for (size_t v = 0; v < logits_a.cols; ++v) {
            REQUIRE(logits_a.at(t, v) == logits_b.at(t, v));
        }
    }
    // and the changed position does differ
    bool any_diff = false;
    for (size_t v = 0; v < logits_a.cols; ++v) {
        if (logits_a.at(j, v) != logits_b.at(j, v)) any_diff = true;
    }
    REQUIRE(any_diff);
}

TEST_CASE("softmax rows sum to one") {
    TransformerParams p = medit_test::tiny_params(5);
    auto [logits, trace] = forward(p, seq_of(p, "a fine day for a walk ."));
    for (size_t t = 0; t < logits.rows; ++t) {
        std::vector<double> row(logits.row(t), logits.row(t) + logits.cols);
        softmax_row(row.data(), row.size());
        double sum = 0.0;
        for (double x : row) sum += x;
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("layernorm output is standardized before scale and shift") {
    Rng rng(9);
    Mat x(12, 24);
    x.fill_normal(rng, 2.5);
    for (size_t i = 0; i < x.rows; ++i) x.at(i, 3) += 7.0;  // break symmetry
    std::vector<double> g(24, 1.0), b(24, 0.0), mean, rstd;
    Mat out;
    layernorm_rows(x, g, b, out, mean, rstd);
    for (size_t i = 0; i < out.rows; ++i) {
        double m = 0.0, v = 0.0;
        for (size_t j = 0; j < out.cols; ++j) m += out.at(i, j);
        m /= static_cast<double>(out.cols);
        for (size_t j = 0; j < out.cols; ++j) {
            const double s = out.at(i, j) - m;
            v += s * s;
        }
        v /= static_cast<double>(out.cols);
        REQUIRE(std::abs(m) <= 1e-6);
        REQUIRE(std::abs(v - 1.0) <= 1e-4);
    }
}

TEST_CASE("identical batch rows produce identical logits") {
    TransformerParams p = medit_test::tiny_params(6);
    TokenSequence s = seq_of(p, "the game was long but good .");
    BatchInput in;
    in.B = 2;
    in.T = s.ids.size();
    in.ids = s.ids;
    in.ids.insert(in.ids.end(), s.ids.begin(), s.ids.end());
    in.targets.assign(in.B * in.T, -1);
    ForwardCache cache;
    forward_batch(p, in, cache);
    for (size_t t = 0; t < in.T; ++t) {
        for (size_t v = 0; v < cache.logits.cols; ++v) {
            REQUIRE(cache.logits.at(t, v) == cache.logits.at(in.T + t, v));
        }
    }
}

TEST_CASE("perturbing w_out shifts the mlp output by exactly delta times key") {
    TransformerParams p = medit_test::tiny_params(7);
    TokenSequence s = seq_of(p, "every snippet has an answer .");
    const size_t layer = 1;
    auto [logits_a, trace_a] = forward(p, s);

    TransformerParams edited = p;
    Rng rng(77);
    Mat delta(p.layers[layer].w_out.rows, p.layers[layer].w_out.cols);
    delta.fill_normal(rng, 0.05);
    axpy(1.0, delta, edited.layers[layer].w_out);

    auto [logits_b, trace_b] = forward(edited, s);
    // same layer: keys unchanged, m changes by delta * k
    Mat expected_shift;
    matmul_nt(trace_a.k[layer], delta, expected_shift);
    for (size_t t = 0; t < trace_a.T; ++t) {
        for (size_t c = 0; c < expected_shift.cols; ++c) {
            const double got = trace_b.m[layer].at(t, c) - trace_a.m[layer].at(t, c);
            REQUIRE(std::abs(got - expected_shift.at(t, c)) <= 1e-9 * std::max(1.0, std::abs(got)));
        }
    }
    for (size_t t = 0; t < trace_a.T; ++t) {
        for (size_t c = 0; c < trace_a.k[layer].cols; ++c) {
            REQUIRE(trace_a.k[layer].at(t, c) == trace_b.k[layer].at(t, c));
        }
    }
}

TEST_CASE("sequences longer than the context are rejected") {
    TransformerParams p = medit_test::tiny_params(8, 2, 16, 32, 2, /*context=*/8);
    TokenSequence s = seq_of(p, "the film was great and the story was long and fine .");
    REQUIRE(s.ids.size() > 8);
    REQUIRE_THROWS_AS(forward(p, s), PipelineError);
}

TEST_CASE("incremental decoding matches the batched forward pass") {
    TransformerParams p = medit_test::tiny_params(10);
    TokenSequence s = seq_of(p, "she wrote a short story about the park .");
    std::vector<int> with_bos;
    with_bos.push_back(Vocabulary::kBos);
    with_bos.insert(with_bos.end(), s.ids.begin(), s.ids.end());
    auto [logits, trace] = forward(p, TokenSequence{with_bos, "", 0});

    DecodeState state;
    state.reset(p.config);
    for (size_t t = 0; t < with_bos.size(); ++t) {
        std::vector<double> row = decode_step(p, state, with_bos[t]);
        for (size_t v = 0; v < row.size(); ++v) {
            const double ref = logits.at(t, v);
            REQUIRE(std::abs(row[v] - ref) <= 1e-9 * std::max(1.0, std::abs(ref)));
        }
    }
}

TEST_CASE("delta injection adds the offset at exactly one position") {
    TransformerParams p = medit_test::tiny_params(12);
    TokenSequence s = seq_of(p, "the dog ran to the park .");
    BatchInput in = BatchInput::single(s.ids);
    ForwardCache base, shifted;
    forward_batch(p, in, base);

    std::vector<double> dvec(static_cast<size_t>(p.config.d_model), 0.0);
    dvec[3] = 0.25;
    DeltaSpec delta;
    delta.layer = 0;
    delta.pos = {2};
    delta.delta = &dvec;
    forward_batch(p, in, shifted, &delta);

    for (size_t t = 0; t < in.T; ++t) {
        for (int j = 0; j < p.config.d_model; ++j) {
            const double diff = shifted.layers[0].x_out.at(t, static_cast<size_t>(j)) -
                                base.layers[0].x_out.at(t, static_cast<size_t>(j));
            if (t == 2) {
                REQUIRE(diff == Catch::Approx(dvec[static_cast<size_t>(j)]).margin(1e-12));
            } else {
                REQUIRE(diff == 0.0);
            }
        }
    }
}
