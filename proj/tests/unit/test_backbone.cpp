#include "doctest.h"

#include "softstack/backbone.hpp"
#include "softstack/verify.hpp"

#include <cmath>
#include <map>

using namespace softstack;
using namespace softstack::backbone;

namespace {

ModelConfig tiny_config(bool stack_enabled) {
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.d = 8;
    cfg.n_attn_heads = 2;
    cfg.ffn_dim = 16;
    cfg.vocab_size = 9;
    cfg.max_seq_len = 32;
    cfg.stack.enabled = stack_enabled;
    cfg.stack.S = 4;
    cfg.stack.H = 2;
    cfg.stack.d_s = 2;
    return cfg;
}

// ---------------------------------------------------------------------------
// Independent plain-transformer reference: straightforward per-position loops,
// written without reusing any backbone internals.
// ---------------------------------------------------------------------------
struct NaiveRef {
    std::map<std::string, std::vector<double>> params;
    int L, d, heads, ffn, vocab;
    double theta;

    explicit NaiveRef(Model& m) {
        const auto& cfg = m.config();
        L = cfg.n_layers; d = cfg.d; heads = cfg.n_attn_heads; ffn = cfg.ffn_dim;
        vocab = cfg.vocab_size; theta = cfg.rope_theta;
        for (const auto& ref : m.param_refs()) {
            params[ref.name] = std::vector<double>(ref.data, ref.data + ref.n);
        }
    }

    std::vector<double> norm(const std::vector<double>& x, const std::vector<double>& g) const {
        double ss = 0.0;
        for (double v : x) ss += v * v;
        const double r = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
        std::vector<double> y(x.size());
        for (size_t i = 0; i < x.size(); ++i) y[i] = g[i] * x[i] * r;
        return y;
    }

    std::vector<double> mat_apply(const std::vector<double>& w, int rows, int cols,
                                  const std::vector<double>& x) const {
        std::vector<double> y(static_cast<size_t>(rows), 0.0);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) y[static_cast<size_t>(r)] += w[static_cast<size_t>(r) * cols + c] * x[static_cast<size_t>(c)];
        }
        return y;
    }

    void rope(std::vector<double>& v, int pos) const {
        const int dh = d / heads;
        for (int h = 0; h < heads; ++h) {
            for (int j = 0; j < dh / 2; ++j) {
                const double ang = pos * std::pow(theta, -2.0 * j / dh);
                const size_t i0 = static_cast<size_t>(h * dh + 2 * j);
                const double a = v[i0], b = v[i0 + 1];
                v[i0] = a * std::cos(ang) - b * std::sin(ang);
                v[i0 + 1] = a * std::sin(ang) + b * std::cos(ang);
            }
        }
    }

    Mat forward(const std::vector<int>& tokens) const {
        const int T = static_cast<int>(tokens.size());
        std::vector<std::vector<double>> x(static_cast<size_t>(T));
        const auto& emb = params.at("embedding");
        for (int t = 0; t < T; ++t) {
            x[static_cast<size_t>(t)].assign(emb.begin() + static_cast<long>(tokens[static_cast<size_t>(t)]) * d,
                                             emb.begin() + (static_cast<long>(tokens[static_cast<size_t>(t)]) + 1) * d);
        }
        const int dh = d / heads;
        for (int li = 0; li < L; ++li) {
            const std::string p = "layer" + std::to_string(li) + ".";
            std::vector<std::vector<double>> q(static_cast<size_t>(T)), k(static_cast<size_t>(T)),
                v(static_cast<size_t>(T));
            for (int t = 0; t < T; ++t) {
                const auto n1 = norm(x[static_cast<size_t>(t)], params.at(p + "attn_norm"));
                q[static_cast<size_t>(t)] = mat_apply(params.at(p + "wq"), d, d, n1);
                k[static_cast<size_t>(t)] = mat_apply(params.at(p + "wk"), d, d, n1);
                v[static_cast<size_t>(t)] = mat_apply(params.at(p + "wv"), d, d, n1);
                rope(q[static_cast<size_t>(t)], t);
                rope(k[static_cast<size_t>(t)], t);
            }
            for (int t = T - 1; t >= 0; --t) {
                std::vector<double> merged(static_cast<size_t>(d), 0.0);
                for (int h = 0; h < heads; ++h) {
                    std::vector<double> w(static_cast<size_t>(t + 1));
                    double mx = -1e300;
                    for (int u = 0; u <= t; ++u) {
                        double s = 0.0;
                        for (int c = 0; c < dh; ++c) {
                            s += q[static_cast<size_t>(t)][static_cast<size_t>(h * dh + c)] *
                                 k[static_cast<size_t>(u)][static_cast<size_t>(h * dh + c)];
                        }
                        w[static_cast<size_t>(u)] = s / std::sqrt(static_cast<double>(dh));
                        mx = std::max(mx, w[static_cast<size_t>(u)]);
                    }
                    double z = 0.0;
                    for (auto& wi : w) { wi = std::exp(wi - mx); z += wi; }
                    for (int u = 0; u <= t; ++u) {
                        for (int c = 0; c < dh; ++c) {
                            merged[static_cast<size_t>(h * dh + c)] +=
                                (w[static_cast<size_t>(u)] / z) * v[static_cast<size_t>(u)][static_cast<size_t>(h * dh + c)];
                        }
                    }
                }
                const auto o = mat_apply(params.at(p + "wo"), d, d, merged);
                for (int c = 0; c < d; ++c) x[static_cast<size_t>(t)][static_cast<size_t>(c)] += o[static_cast<size_t>(c)];
            }
            for (int t = 0; t < T; ++t) {
                const auto n2 = norm(x[static_cast<size_t>(t)], params.at(p + "ffn_norm"));
                auto u = mat_apply(params.at(p + "w1"), ffn, d, n2);
                for (auto& ui : u) ui = ui / (1.0 + std::exp(-ui));
                const auto f = mat_apply(params.at(p + "w2"), d, ffn, u);
                for (int c = 0; c < d; ++c) x[static_cast<size_t>(t)][static_cast<size_t>(c)] += f[static_cast<size_t>(c)];
            }
        }
        Mat logits(T, vocab);
        for (int t = 0; t < T; ++t) {
            const auto nf = norm(x[static_cast<size_t>(t)], params.at("final_norm"));
            const auto row = mat_apply(params.at("w_out"), vocab, d, nf);
            std::copy(row.begin(), row.end(), logits.row(t));
        }
        return logits;
    }
};

double max_abs_diff(const Mat& a, const Mat& b) {
    REQUIRE(a.a.size() == b.a.size());
    double m = 0.0;
    for (size_t i = 0; i < a.a.size(); ++i) m = std::max(m, std::abs(a.a[i] - b.a[i]));
    return m;
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config(true);
    cfg.n_layers = 0;
    CHECK_THROWS_AS(Model(cfg, 0), std::invalid_argument);
    cfg = tiny_config(true);
    cfg.n_attn_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(Model(cfg, 0), std::invalid_argument);
    cfg = tiny_config(true);
    cfg.stack.placement = "everywhere";
    CHECK_THROWS_AS(Model(cfg, 0), std::invalid_argument);
}

TEST_CASE("logit shape contract and token validation") {
    Model m(tiny_config(true), 0);
    const std::vector<int> tokens = {1, 4, 2, 7};
    const Mat logits = m.forward(tokens);
    CHECK(logits.rows == 4);
    CHECK(logits.cols == 9);
    CHECK_THROWS_AS(m.forward(std::vector<int>{1, 99}), std::invalid_argument);
    CHECK_THROWS_AS(m.forward(std::vector<int>{}), std::invalid_argument);
    CHECK_THROWS_AS(m.forward(std::vector<int>(64, 1)), std::invalid_argument);  // > max_seq_len
}

TEST_CASE("stack-disabled forward matches an independent plain transformer") {
    Model m(tiny_config(false), 123);
    NaiveRef ref(m);
    const std::vector<int> tokens = {1, 5, 3, 8, 2, 2, 6};
    const Mat got = m.forward(tokens, IntegrationMode::temporal, nullptr);
    const Mat want = ref.forward(tokens);
    CHECK(max_abs_diff(got, want) < 1e-5);
}

TEST_CASE("identity at init: enabled model equals disabled model") {
    Model m(tiny_config(true), 7);
    Rng rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> tokens(static_cast<size_t>(rng.uniform_int(1, 20)));
        for (auto& t : tokens) t = rng.uniform_int(0, 8);
        for (IntegrationMode mode : {IntegrationMode::temporal, IntegrationMode::layerwise}) {
            const Mat with_stack = m.forward(tokens, mode, nullptr);
            m.mutable_config().stack.enabled = false;
            const Mat without = m.forward(tokens, mode, nullptr);
            m.mutable_config().stack.enabled = true;
            CHECK(max_abs_diff(with_stack, without) <= 1e-6);
        }
    }
}

TEST_CASE("causality: suffix perturbations leave earlier logits unchanged") {
    ModelConfig cfg = tiny_config(true);
    Model m(cfg, 11);
    // stack params off identity so the stack path is live
    Rng rng(5);
    for (auto& sp : m.mutable_stacks()) {
        for (auto& x : sp.w_up.a) x = rng.normal(0.0, 0.3);
    }
    const std::vector<int> base = {1, 3, 5, 7, 2, 4, 6};
    for (IntegrationMode mode : {IntegrationMode::temporal, IntegrationMode::layerwise}) {
        const Mat l0 = m.forward(base, mode, nullptr);
        std::vector<int> perturbed = base;
        perturbed[4] = 8;  // position 4 changes; 0..3 must not
        const Mat l1 = m.forward(perturbed, mode, nullptr);
        for (int t = 0; t < 4; ++t) {
            for (int c = 0; c < l0.cols; ++c) {
                CHECK(l0.at(t, c) == doctest::Approx(l1.at(t, c)).epsilon(1e-12));
            }
        }
        // and the perturbed position itself must react (sanity)
        double diff = 0.0;
        for (int c = 0; c < l0.cols; ++c) diff += std::abs(l0.at(4, c) - l1.at(4, c));
        CHECK(diff > 1e-9);
    }
}

TEST_CASE("determinism: same seed, same config, bit-identical logits") {
    Model a(tiny_config(true), 2026);
    Model b(tiny_config(true), 2026);
    const std::vector<int> tokens = {2, 4, 6, 8, 1};
    const Mat la = a.forward(tokens);
    const Mat lb = b.forward(tokens);
    for (size_t i = 0; i < la.a.size(); ++i) CHECK(la.a[i] == lb.a[i]);
}

TEST_CASE("temporal equals layerwise for a length-1 sequence with a single boundary") {
    ModelConfig cfg = tiny_config(true);
    cfg.n_layers = 2;  // placement "between" -> exactly one boundary
    Model m(cfg, 31);
    Rng rng(9);
    for (auto& sp : m.mutable_stacks()) {
        for (auto& x : sp.w_up.a) x = rng.normal(0.0, 0.3);
    }
    const std::vector<int> tokens = {5};
    const Mat lt = m.forward(tokens, IntegrationMode::temporal, nullptr);
    const Mat ll = m.forward(tokens, IntegrationMode::layerwise, nullptr);
    CHECK(max_abs_diff(lt, ll) < 1e-12);
}

TEST_CASE("incremental decoding matches the full forward") {
    ModelConfig cfg = tiny_config(true);
    Model m(cfg, 77);
    Rng rng(13);
    for (auto& sp : m.mutable_stacks()) {
        for (auto& x : sp.w_up.a) x = rng.normal(0.0, 0.4);
        for (auto& head : sp.heads) {
            for (auto& x : head.action_matrix.a) x = rng.normal(0.0, 0.8);
        }
    }
    const std::vector<int> tokens = {1, 6, 3, 2, 8, 4};
    for (IntegrationMode mode : {IntegrationMode::temporal, IntegrationMode::layerwise}) {
        const Mat full = m.forward(tokens, mode, nullptr);
        auto st = m.begin_sequence(mode);
        Vec inc;
        for (size_t t = 0; t < tokens.size(); ++t) {
            inc = m.decode_step(st, tokens[t], mode);
            for (int c = 0; c < full.cols; ++c) {
                CHECK(inc[static_cast<size_t>(c)] ==
                      doctest::Approx(full.at(static_cast<int>(t), c)).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("generate: greedy decode, eos stop, max_new cap") {
    Model m(tiny_config(true), 3);
    const std::vector<int> prefix = {1, 4, 2};

    SUBCASE("max_new = 0 gives an empty continuation") {
        CHECK(m.generate(prefix, 0, IntegrationMode::temporal, 3).empty());
    }

    SUBCASE("continuation matches repeated argmax decode") {
        const auto out = m.generate(prefix, 4, IntegrationMode::temporal, /*eos=*/-1);
        CHECK(out.size() == 4);
        auto st = m.begin_sequence(IntegrationMode::temporal);
        Vec logits;
        for (int t : prefix) logits = m.decode_step(st, t, IntegrationMode::temporal);
        std::vector<int> manual;
        for (int i = 0; i < 4; ++i) {
            const int next = argmax(logits.data(), m.config().vocab_size);
            manual.push_back(next);
            if (i < 3) logits = m.decode_step(st, next, IntegrationMode::temporal);
        }
        CHECK(out == manual);
    }
}

TEST_CASE("count_params: additivity and variant ordering") {
    const ParamCount with = Model(tiny_config(true), 0).count_params();
    const ParamCount without = Model(tiny_config(false), 0).count_params();
    CHECK(with.backbone == without.backbone);
    CHECK(without.stack == 0);
    CHECK(with.total == without.total + with.stack);

    // full-dimension single-stack variant costs more than the low-rank one
    ModelConfig low = tiny_config(true);
    ModelConfig full = tiny_config(true);
    full.stack.H = 1;
    full.stack.d_s = full.d;
    CHECK(Model(low, 0).count_params().stack < Model(full, 0).count_params().stack);
}

TEST_CASE("gradient flow reaches stack parameters after one backward pass") {
    ModelConfig cfg = tiny_config(true);
    Model m(cfg, 41);
    Rng rng(6);
    for (auto& sp : m.mutable_stacks()) {
        for (auto& x : sp.w_up.a) x = rng.normal(0.0, 0.3);  // off the zero init
    }
    const std::vector<int> tokens = {1, 5, 2, 7, 3};
    ModelCache cache;
    const Mat logits = m.forward(tokens, IntegrationMode::temporal, &cache);
    Mat g_logits(logits.rows, logits.cols);
    for (size_t i = 0; i < logits.a.size(); ++i) g_logits.a[i] = 2.0 * logits.a[i];
    ModelGrads grads = m.make_grads();
    m.backward(tokens, IntegrationMode::temporal, cache, g_logits, grads, 0.0);

    auto norm_of = [](const auto& container) {
        double s = 0.0;
        for (double x : container) s += x * x;
        return std::sqrt(s);
    };
    CHECK(norm_of(grads.stacks[0].g_w_down.a) > 0.0);
    CHECK(norm_of(grads.stacks[0].g_action[0].a) > 0.0);
    CHECK(norm_of(grads.stacks[0].g_query[0]) > 0.0);
    CHECK(norm_of(grads.stacks[0].g_w_up.a) > 0.0);
}

TEST_CASE("backbone gradients match finite differences in both modes") {
    const auto rep = verify::gradcheck(verify::GradScope::backbone_tiny, 1e-5, 1e-4, 4);
    INFO("max rel err ", rep.max_rel_err);
    for (const auto& g : rep.groups) {
        INFO(g.name, " -> ", g.max_rel_err);
    }
    CHECK(rep.pass);
}
