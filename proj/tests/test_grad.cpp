#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "medit/grad.hpp"
#include "medit/model.hpp"

using namespace medit;

namespace {

struct ParamView {
    std::string name;
    double* values;
    const double* grads;
    size_t size;
};

std::vector<ParamView> all_params(TransformerParams& p, const ParamGrads& g) {
    std::vector<ParamView> out;
    out.push_back({"embed", p.embed.data.data(), g.embed.data.data(), p.embed.data.size()});
    for (size_t i = 0; i < p.layers.size(); ++i) {
        auto& lp = p.layers[i];
        auto& lg = g.layers[i];
        const std::string pre = "layers." + std::to_string(i) + ".";
        out.push_back({pre + "wq", lp.wq.data.data(), lg.wq.data.data(), lp.wq.data.size()});
        out.push_back({pre + "wk", lp.wk.data.data(), lg.wk.data.data(), lp.wk.data.size()});
        out.push_back({pre + "wv", lp.wv.data.data(), lg.wv.data.data(), lp.wv.data.size()});
        out.push_back({pre + "wo", lp.wo.data.data(), lg.wo.data.data(), lp.wo.data.size()});
        out.push_back({pre + "w_in", lp.w_in.data.data(), lg.w_in.data.data(), lp.w_in.data.size()});
        out.push_back({pre + "w_out", lp.w_out.data.data(), lg.w_out.data.data(), lp.w_out.data.size()});
        out.push_back({pre + "ln1.g", lp.ln1_g.data(), lg.ln1_g.data(), lp.ln1_g.size()});
        out.push_back({pre + "ln1.b", lp.ln1_b.data(), lg.ln1_b.data(), lp.ln1_b.size()});
        out.push_back({pre + "ln2.g", lp.ln2_g.data(), lg.ln2_g.data(), lp.ln2_g.size()});
        out.push_back({pre + "ln2.b", lp.ln2_b.data(), lg.ln2_b.data(), lp.ln2_b.size()});
    }
    out.push_back({"lnf.g", p.lnf_g.data(), g.lnf_g.data(), p.lnf_g.size()});
    out.push_back({"lnf.b", p.lnf_b.data(), g.lnf_b.data(), p.lnf_b.size()});
    out.push_back({"unembed", p.unembed.data.data(), g.unembed.data.data(), p.unembed.data.size()});
    return out;
}

double forward_loss(const TransformerParams& p, const BatchInput& in, const DeltaSpec* delta = nullptr) {
    ForwardCache cache;
    ForwardOptions opts;
    opts.full_logits = false;
    forward_batch(p, in, cache, delta, opts);
    return cache.loss;
}

BatchInput gradcheck_batch(const TransformerParams& p) {
    TokenSequence a = tokenize("the film was great and fine .", p.vocab);
    TokenSequence b = tokenize("every snippet has an answer .", p.vocab);
    BatchInput in;
    in.B = 2;
    in.T = std::max(a.ids.size(), b.ids.size()) + 1;
    in.ids.assign(in.B * in.T, Vocabulary::kPad);
    in.targets.assign(in.B * in.T, -1);
    auto put = [&in](size_t row, const std::vector<int>& ids) {
        in.ids[row * in.T] = Vocabulary::kBos;
        for (size_t t = 0; t < ids.size(); ++t) {
            in.ids[row * in.T + t + 1] = ids[t];
            in.targets[row * in.T + t] = ids[t];
        }
    };
    put(0, a.ids);
    put(1, b.ids);
    return in;
}

constexpr double kFdStep = 1e-5;
constexpr double kRelTol = 1e-4;

void check_close(double analytic, double numeric, const std::string& where) {
    // the floor keeps finite-difference roundoff (~1e-10 at this loss scale)
    // from dominating near-zero gradients
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 2e-5});
    if (std::abs(analytic - numeric) > kRelTol * scale) {
        FAIL("gradient mismatch at " << where << ": analytic=" << analytic << " numeric=" << numeric);
    }
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences for every parameter entry") {
    TransformerParams p = medit_test::tiny_params(21);
    BatchInput in = gradcheck_batch(p);
    GradResult res = loss_and_grads(p, in);
    REQUIRE(std::isfinite(res.loss));

    for (auto& view : all_params(p, res.grads)) {
        for (size_t i = 0; i < view.size; ++i) {
            const double keep = view.values[i];
            view.values[i] = keep + kFdStep;
            const double lp = forward_loss(p, in);
            view.values[i] = keep - kFdStep;
            const double lm = forward_loss(p, in);
            view.values[i] = keep;
            check_close(view.grads[i], (lp - lm) / (2.0 * kFdStep), view.name + "[" + std::to_string(i) + "]");
        }
    }
}

TEST_CASE("gradient of an injected residual offset matches finite differences") {
    TransformerParams p = medit_test::tiny_params(22);
    BatchInput in = gradcheck_batch(p);

    for (int layer = 0; layer < p.config.n_layers; ++layer) {
        std::vector<double> dvec(static_cast<size_t>(p.config.d_model), 0.0);
        Rng rng(101 + static_cast<uint64_t>(layer));
        for (double& x : dvec) x = rng.normal(0.0, 0.05);
        DeltaSpec delta;
        delta.layer = layer;
        delta.pos = {3, 2};
        delta.delta = &dvec;

        GradResult res = loss_and_grads(p, in, &delta);
        REQUIRE(res.has_ddelta);
        for (int j = 0; j < p.config.d_model; ++j) {
            const double keep = dvec[static_cast<size_t>(j)];
            dvec[static_cast<size_t>(j)] = keep + kFdStep;
            const double lp = forward_loss(p, in, &delta);
            dvec[static_cast<size_t>(j)] = keep - kFdStep;
            const double lm = forward_loss(p, in, &delta);
            dvec[static_cast<size_t>(j)] = keep;
            check_close(res.ddelta[static_cast<size_t>(j)], (lp - lm) / (2.0 * kFdStep),
                        "ddelta layer " + std::to_string(layer) + " dim " + std::to_string(j));
        }
    }
}

TEST_CASE("restricted backward pass reproduces the full ddelta") {
    TransformerParams p = medit_test::tiny_params(23);
    BatchInput in = gradcheck_batch(p);
    std::vector<double> dvec(static_cast<size_t>(p.config.d_model), 0.01);
    DeltaSpec delta;
    delta.layer = 0;
    delta.pos = {2, 4};
    delta.delta = &dvec;

    GradResult full = loss_and_grads(p, in, &delta);
    GradOptions restricted;
    restricted.param_grads = false;
    restricted.stop_layer = 0;
    GradResult fast = loss_and_grads(p, in, &delta, restricted);
    REQUIRE(fast.has_ddelta);
    REQUIRE_FALSE(fast.has_param_grads);
    for (size_t j = 0; j < dvec.size(); ++j) {
        REQUIRE(fast.ddelta[j] == Catch::Approx(full.ddelta[j]).margin(1e-12));
    }
}

TEST_CASE("zero-length target span yields zero loss and zero gradients") {
    TransformerParams p = medit_test::tiny_params(24);
    TokenSequence s = tokenize("the film was great .", p.vocab);
    BatchInput in = BatchInput::single(s.ids);  // all targets masked
    GradResult res = loss_and_grads(p, in);
    REQUIRE(res.loss == 0.0);
    for (auto& view : all_params(p, res.grads)) {
        for (size_t i = 0; i < view.size; ++i) REQUIRE(view.grads[i] == 0.0);
    }
}
