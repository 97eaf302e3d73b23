#include "softstack/verify.hpp"

#include "softstack/backbone.hpp"
#include "softstack/multihead_stack.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

namespace softstack::verify {

namespace sc = stack_core;
namespace mh = multihead;

// ---------------------------------------------------------------------------
// Discrete oracles
// ---------------------------------------------------------------------------

void DiscreteStack::apply(const DiscreteOp& op) {
    switch (op.kind) {
        case DiscreteOp::push:
            items.insert(items.begin(), op.value);
            if (static_cast<int>(items.size()) > S) items.pop_back();  // overflow forgets the bottom
            break;
        case DiscreteOp::pop:
            if (!items.empty()) items.erase(items.begin());
            break;
        case DiscreteOp::noop:
            break;
    }
}

Mat DiscreteStack::dense() const {
    Mat m(S, w);
    for (size_t i = 0; i < items.size(); ++i) {
        std::copy(items[i].begin(), items[i].end(), m.row(static_cast<int>(i)));
    }
    return m;
}

Vec DiscreteStack::dense_mask() const {
    Vec m(static_cast<size_t>(S), 0.0);
    for (size_t i = 0; i < items.size(); ++i) m[i] = 1.0;
    return m;
}

void DiscreteQueue::apply(const DiscreteOp& op) {
    switch (op.kind) {
        case DiscreteOp::push:
            if (static_cast<int>(items.size()) < S) items.push_back(op.value);  // full queue drops
            break;
        case DiscreteOp::pop:
            if (!items.empty()) items.erase(items.begin());
            break;
        case DiscreteOp::noop:
            break;
    }
}

Mat DiscreteQueue::dense() const {
    Mat m(S, w);
    for (size_t i = 0; i < items.size(); ++i) {
        std::copy(items[i].begin(), items[i].end(), m.row(static_cast<int>(i)));
    }
    return m;
}

Vec DiscreteQueue::dense_mask() const {
    Vec m(static_cast<size_t>(S), 0.0);
    for (size_t i = 0; i < items.size(); ++i) m[i] = 1.0;
    return m;
}

DiscreteStack discrete_simulate(const std::vector<DiscreteOp>& ops, int S, int w) {
    DiscreteStack st(S, w);
    for (const auto& op : ops) st.apply(op);
    return st;
}

EquivalenceReport check_hard_action_equivalence(int trials, int max_len, int S, int w, uint64_t seed,
                                                sc::StructureMode structure) {
    EquivalenceReport rep;
    rep.trials = trials;
    sc::StackParams params;
    params.structure_mode = structure;
    params.read_mode = sc::ReadMode::top_peek;

    Rng base(seed);
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng = base.split(static_cast<uint64_t>(trial));
        const int len = rng.uniform_int(1, max_len);

        std::vector<DiscreteOp> ops;
        ops.reserve(static_cast<size_t>(len));
        for (int i = 0; i < len; ++i) {
            DiscreteOp op;
            const int k = rng.uniform_int(0, 2);
            op.kind = k == 0 ? DiscreteOp::push : (k == 1 ? DiscreteOp::pop : DiscreteOp::noop);
            if (op.kind == DiscreteOp::push) {
                op.value.resize(static_cast<size_t>(w));
                for (auto& x : op.value) x = rng.uniform(-2.0, 2.0);
            }
            ops.push_back(std::move(op));
        }

        sc::StackState soft = sc::empty(S, w);
        for (const auto& op : ops) {
            sc::ActionDistribution a;
            Vec h(static_cast<size_t>(w), 0.0);
            if (op.kind == DiscreteOp::push) {
                a = {1.0, 0.0, 0.0};
                h = op.value;
            } else if (op.kind == DiscreteOp::pop) {
                a = {0.0, 1.0, 0.0};
            } else {
                a = {0.0, 0.0, 1.0};
            }
            soft = sc::update(soft, h, a, params);
        }

        Mat want_values;
        Vec want_mask;
        if (structure == sc::StructureMode::stack) {
            DiscreteStack oracle = discrete_simulate(ops, S, w);
            want_values = oracle.dense();
            want_mask = oracle.dense_mask();
        } else {
            DiscreteQueue oracle(S, w);
            for (const auto& op : ops) oracle.apply(op);
            want_values = oracle.dense();
            want_mask = oracle.dense_mask();
        }

        for (size_t i = 0; i < want_values.a.size(); ++i) {
            rep.max_value_dev = std::max(rep.max_value_dev, std::abs(want_values.a[i] - soft.values.a[i]));
        }
        for (size_t i = 0; i < want_mask.size(); ++i) {
            rep.max_mask_dev = std::max(rep.max_mask_dev, std::abs(want_mask[i] - soft.mask[i]));
        }
    }
    rep.pass = rep.max_value_dev < 1e-6 && rep.max_mask_dev < 1e-6;
    std::ostringstream os;
    os << "max value dev " << rep.max_value_dev << ", max mask dev " << rep.max_mask_dev;
    rep.detail = os.str();
    return rep;
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

namespace {

struct ParamGroup {
    std::string name;
    double* data;
    size_t n;
};

double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

// Shared driver: numeric central differences over every entry of every group
// against the caller-provided analytic gradient.
GradReport run_gradcheck(const std::vector<ParamGroup>& groups,
                         const std::function<double()>& loss_fn,
                         const std::function<double(const ParamGroup&, size_t)>& analytic,
                         double eps, double tol) {
    GradReport rep;
    rep.tolerance = tol;
    for (const auto& g : groups) {
        GradReport::Group gr;
        gr.name = g.name;
        for (size_t i = 0; i < g.n; ++i) {
            const double saved = g.data[i];
            g.data[i] = saved + eps;
            const double fp = loss_fn();
            g.data[i] = saved - eps;
            const double fm = loss_fn();
            g.data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            gr.max_rel_err = std::max(gr.max_rel_err, rel_err(analytic(g, i), numeric));
        }
        rep.max_rel_err = std::max(rep.max_rel_err, gr.max_rel_err);
        rep.groups.push_back(std::move(gr));
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

// ----- stack_core scope: a K-step chain, loss = sum of squared read-outs -----

struct StackChainSetup {
    int S = 4, w = 3, K = 5;
    sc::StackParams params;
    sc::StackState init;
    std::vector<Vec> hs;
};

StackChainSetup make_chain(Rng& rng, sc::ReadMode read, sc::StructureMode structure,
                           sc::ActionMode action) {
    StackChainSetup s;
    s.params.read_mode = read;
    s.params.structure_mode = structure;
    s.params.action_mode = action;
    s.params.action_matrix = Mat(3, s.w);
    for (auto& x : s.params.action_matrix.a) x = rng.normal(0.0, 0.6);
    const int qlen = (read == sc::ReadMode::global_position) ? s.S : s.w;
    s.params.read_query.resize(static_cast<size_t>(qlen));
    for (auto& x : s.params.read_query) x = rng.normal(0.0, 0.6);
    s.init = sc::empty(s.S, s.w);
    for (auto& x : s.init.values.a) x = rng.uniform(-1.0, 1.0);
    for (auto& x : s.init.mask) x = rng.uniform(0.2, 0.8);
    s.hs.resize(static_cast<size_t>(s.K));
    for (auto& h : s.hs) {
        h.resize(static_cast<size_t>(s.w));
        for (auto& x : h) x = rng.uniform(-1.0, 1.0);
    }
    return s;
}

double chain_loss(const StackChainSetup& s) {
    sc::StackState state = s.init;
    double loss = 0.0;
    for (const auto& h : s.hs) {
        const auto r = sc::step(state, h, s.params);
        state = r.state;
        for (double x : r.read_out) loss += x * x;
    }
    return loss;
}

struct ChainGrads {
    Mat g_action{3, 3};
    Vec g_query;
    std::vector<Vec> g_h;
    Mat g_init_values;
    Vec g_init_mask;
};

ChainGrads chain_backward(const StackChainSetup& s) {
    const int S = s.S, w = s.w, K = s.K;
    // forward with caches
    std::vector<sc::StackState> states;  // post-update, K entries
    std::vector<sc::ActionDistribution> actions(static_cast<size_t>(K));
    Mat read_att(K, S);
    std::vector<Vec> reads(static_cast<size_t>(K), Vec(static_cast<size_t>(w)));
    sc::StackState cur = s.init;
    for (int t = 0; t < K; ++t) {
        actions[static_cast<size_t>(t)] = sc::compute_actions(s.hs[static_cast<size_t>(t)], s.params);
        sc::StackState next(S, w);
        sc::detail::update_kernel(cur.values.a.data(), cur.mask.data(),
                                  s.hs[static_cast<size_t>(t)].data(), actions[static_cast<size_t>(t)],
                                  S, w, s.params.structure_mode, next.values.a.data(),
                                  next.mask.data());
        sc::detail::read_kernel(next.values.a.data(), next.mask.data(), s.params, S, w,
                                reads[static_cast<size_t>(t)].data(), read_att.row(t));
        states.push_back(next);
        cur = next;
    }

    ChainGrads g;
    g.g_action = Mat(3, w);
    g.g_query.assign(s.params.read_query.size(), 0.0);
    g.g_h.assign(static_cast<size_t>(K), Vec(static_cast<size_t>(w), 0.0));
    g.g_init_values = Mat(S, w);
    g.g_init_mask.assign(static_cast<size_t>(S), 0.0);

    Mat g_state_values(S, w);
    Vec g_state_mask(static_cast<size_t>(S), 0.0);
    for (int t = K - 1; t >= 0; --t) {
        // read path: dL/dread = 2 * read
        Vec g_read(static_cast<size_t>(w));
        for (int c = 0; c < w; ++c) g_read[static_cast<size_t>(c)] = 2.0 * reads[static_cast<size_t>(t)][static_cast<size_t>(c)];
        const sc::StackState& post = states[static_cast<size_t>(t)];
        sc::detail::read_backward(post.values.a.data(), post.mask.data(), s.params, S, w,
                                  read_att.row(t), g_read.data(), g_state_values.a.data(),
                                  g_state_mask.data(), g.g_query.data());

        const sc::StackState& prev = (t == 0) ? s.init : states[static_cast<size_t>(t - 1)];
        Mat g_prev_values(S, w);
        Vec g_prev_mask(static_cast<size_t>(S), 0.0);
        double g_a[3] = {0.0, 0.0, 0.0};
        sc::detail::update_backward(prev.values.a.data(), prev.mask.data(),
                                    s.hs[static_cast<size_t>(t)].data(),
                                    actions[static_cast<size_t>(t)], S, w, s.params.structure_mode,
                                    g_state_values.a.data(), g_state_mask.data(),
                                    g_prev_values.a.data(), g_prev_mask.data(),
                                    g.g_h[static_cast<size_t>(t)].data(), g_a);
        sc::detail::actions_backward(s.params.action_matrix, s.hs[static_cast<size_t>(t)].data(),
                                     actions[static_cast<size_t>(t)], s.params, g_a, g.g_action,
                                     g.g_h[static_cast<size_t>(t)].data());
        g_state_values = std::move(g_prev_values);
        g_state_mask = std::move(g_prev_mask);
    }
    g.g_init_values = std::move(g_state_values);
    g.g_init_mask = std::move(g_state_mask);
    return g;
}

GradReport gradcheck_stack_core(double eps, double tol, uint64_t seed) {
    struct Case {
        const char* tag;
        sc::ReadMode read;
        sc::StructureMode structure;
        sc::ActionMode action;
    };
    const Case cases[] = {
        {"content", sc::ReadMode::global_content, sc::StructureMode::stack, sc::ActionMode::free},
        {"position", sc::ReadMode::global_position, sc::StructureMode::stack, sc::ActionMode::free},
        {"top_peek", sc::ReadMode::top_peek, sc::StructureMode::stack, sc::ActionMode::free},
        {"queue", sc::ReadMode::global_content, sc::StructureMode::queue, sc::ActionMode::free},
        {"push_only", sc::ReadMode::global_content, sc::StructureMode::stack, sc::ActionMode::push_only},
    };

    GradReport rep;
    rep.tolerance = tol;
    Rng rng(seed);
    for (const auto& c : cases) {
        StackChainSetup s = make_chain(rng, c.read, c.structure, c.action);
        const ChainGrads g = chain_backward(s);

        std::vector<ParamGroup> groups;
        groups.push_back({std::string(c.tag) + "/action_matrix", s.params.action_matrix.a.data(),
                          s.params.action_matrix.size()});
        groups.push_back({std::string(c.tag) + "/read_query", s.params.read_query.data(),
                          s.params.read_query.size()});
        for (int t = 0; t < s.K; ++t) {
            groups.push_back({std::string(c.tag) + "/h" + std::to_string(t),
                              s.hs[static_cast<size_t>(t)].data(), s.hs[static_cast<size_t>(t)].size()});
        }
        groups.push_back({std::string(c.tag) + "/init_values", s.init.values.a.data(), s.init.values.size()});
        groups.push_back({std::string(c.tag) + "/init_mask", s.init.mask.data(), s.init.mask.size()});

        auto analytic = [&](const ParamGroup& pg, size_t i) -> double {
            if (pg.data == s.params.action_matrix.a.data()) return g.g_action.a[i];
            if (pg.data == s.params.read_query.data()) return g.g_query[i];
            if (pg.data == s.init.values.a.data()) return g.g_init_values.a[i];
            if (pg.data == s.init.mask.data()) return g.g_init_mask[i];
            for (int t = 0; t < s.K; ++t) {
                if (pg.data == s.hs[static_cast<size_t>(t)].data()) return g.g_h[static_cast<size_t>(t)][i];
            }
            return 0.0;
        };
        GradReport sub = run_gradcheck(groups, [&] { return chain_loss(s); }, analytic, eps, tol);
        for (auto& grp : sub.groups) rep.groups.push_back(std::move(grp));
        rep.max_rel_err = std::max(rep.max_rel_err, sub.max_rel_err);
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

// ----- multihead scope -----

struct MhSetup {
    int d = 6, H = 2, d_s = 2, S = 3, K = 4;
    mh::MultiHeadStackParams params;
    mh::MultiHeadStackState init;
    std::vector<Vec> hs;
};

MhSetup make_mh(Rng& rng) {
    MhSetup s;
    s.params = mh::init_params(s.d, s.H, s.d_s, s.S, rng);
    // gradcheck wants signal through every path, so move off the identity init
    for (auto& x : s.params.w_down.a) x = rng.normal(0.0, 0.6);
    for (auto& x : s.params.w_up.a) x = rng.normal(0.0, 0.6);
    s.params.gate = rng.normal(1.0, 0.2);
    for (auto& head : s.params.heads) {
        for (auto& x : head.action_matrix.a) x = rng.normal(0.0, 0.6);
        for (auto& x : head.read_query) x = rng.normal(0.0, 0.6);
    }
    s.init = mh::empty_state(s.params);
    for (auto& st : s.init.per_head) {
        for (auto& x : st.values.a) x = rng.uniform(-1.0, 1.0);
        for (auto& x : st.mask) x = rng.uniform(0.2, 0.8);
    }
    s.hs.assign(static_cast<size_t>(s.K), Vec(static_cast<size_t>(s.d)));
    for (auto& h : s.hs) {
        for (auto& x : h) x = rng.uniform(-1.0, 1.0);
    }
    return s;
}

double mh_loss(const MhSetup& s) {
    mh::MultiHeadStackState state = s.init;
    double loss = 0.0;
    for (const auto& h : s.hs) {
        auto r = mh::mh_step(state, h, s.params);
        state = std::move(r.state);
        for (double x : r.h_out) loss += x * x;
    }
    return loss;
}

GradReport gradcheck_multihead(double eps, double tol, uint64_t seed) {
    Rng rng(seed);
    MhSetup s = make_mh(rng);

    // forward with trajectory + caches
    std::vector<mh::MultiHeadStackState> states;
    states.reserve(static_cast<size_t>(s.K));  // stable addresses for prev pointers
    std::vector<mh::MhStepCache> caches(static_cast<size_t>(s.K));
    std::vector<Vec> houts(static_cast<size_t>(s.K));
    {
        const mh::MultiHeadStackState* prev = &s.init;
        for (int t = 0; t < s.K; ++t) {
            states.push_back(mh::empty_state(s.params));
            mh::mh_step_forward(s.params, *prev, s.hs[static_cast<size_t>(t)],
                                states[static_cast<size_t>(t)], houts[static_cast<size_t>(t)],
                                caches[static_cast<size_t>(t)]);
            prev = &states[static_cast<size_t>(t)];
        }
    }

    mh::MhParamGrads grads = mh::make_grads(s.params);
    std::vector<Vec> g_h(static_cast<size_t>(s.K), Vec(static_cast<size_t>(s.d), 0.0));
    mh::MultiHeadStackState g_state = mh::empty_state(s.params);
    bool have_next = false;
    mh::MultiHeadStackState g_init = mh::empty_state(s.params);
    for (int t = s.K - 1; t >= 0; --t) {
        Vec g_out(static_cast<size_t>(s.d));
        for (int i = 0; i < s.d; ++i) g_out[static_cast<size_t>(i)] = 2.0 * houts[static_cast<size_t>(t)][static_cast<size_t>(i)];
        const mh::MultiHeadStackState& prev = (t == 0) ? s.init : states[static_cast<size_t>(t - 1)];
        mh::MultiHeadStackState g_prev = mh::empty_state(s.params);
        mh::mh_step_backward(s.params, prev, states[static_cast<size_t>(t)], caches[static_cast<size_t>(t)],
                             g_out, have_next ? &g_state : nullptr, nullptr,
                             g_h[static_cast<size_t>(t)], g_prev, grads);
        g_state = std::move(g_prev);
        have_next = true;
    }
    g_init = std::move(g_state);

    std::vector<ParamGroup> groups;
    groups.push_back({"w_down", s.params.w_down.a.data(), s.params.w_down.size()});
    groups.push_back({"w_up", s.params.w_up.a.data(), s.params.w_up.size()});
    groups.push_back({"gate", &s.params.gate, 1});
    for (int h = 0; h < s.H; ++h) {
        groups.push_back({"head" + std::to_string(h) + ".action",
                          s.params.heads[static_cast<size_t>(h)].action_matrix.a.data(),
                          s.params.heads[static_cast<size_t>(h)].action_matrix.size()});
        groups.push_back({"head" + std::to_string(h) + ".query",
                          s.params.heads[static_cast<size_t>(h)].read_query.data(),
                          s.params.heads[static_cast<size_t>(h)].read_query.size()});
    }
    for (int t = 0; t < s.K; ++t) {
        groups.push_back({"h" + std::to_string(t), s.hs[static_cast<size_t>(t)].data(),
                          s.hs[static_cast<size_t>(t)].size()});
    }
    for (int h = 0; h < s.H; ++h) {
        groups.push_back({"init_values" + std::to_string(h),
                          s.init.per_head[static_cast<size_t>(h)].values.a.data(),
                          s.init.per_head[static_cast<size_t>(h)].values.size()});
        groups.push_back({"init_mask" + std::to_string(h),
                          s.init.per_head[static_cast<size_t>(h)].mask.data(),
                          s.init.per_head[static_cast<size_t>(h)].mask.size()});
    }

    auto analytic = [&](const ParamGroup& pg, size_t i) -> double {
        if (pg.data == s.params.w_down.a.data()) return grads.g_w_down.a[i];
        if (pg.data == s.params.w_up.a.data()) return grads.g_w_up.a[i];
        if (pg.data == &s.params.gate) return grads.g_gate;
        for (int h = 0; h < s.H; ++h) {
            if (pg.data == s.params.heads[static_cast<size_t>(h)].action_matrix.a.data()) {
                return grads.g_action[static_cast<size_t>(h)].a[i];
            }
            if (pg.data == s.params.heads[static_cast<size_t>(h)].read_query.data()) {
                return grads.g_query[static_cast<size_t>(h)][i];
            }
            if (pg.data == s.init.per_head[static_cast<size_t>(h)].values.a.data()) {
                return g_init.per_head[static_cast<size_t>(h)].values.a[i];
            }
            if (pg.data == s.init.per_head[static_cast<size_t>(h)].mask.data()) {
                return g_init.per_head[static_cast<size_t>(h)].mask[i];
            }
        }
        for (int t = 0; t < s.K; ++t) {
            if (pg.data == s.hs[static_cast<size_t>(t)].data()) return g_h[static_cast<size_t>(t)][i];
        }
        return 0.0;
    };

    return run_gradcheck(groups, [&] { return mh_loss(s); }, analytic, eps, tol);
}

// ----- tiny backbone scope -----

GradReport gradcheck_backbone(double eps, double tol, uint64_t seed) {
    using namespace backbone;

    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d = 8;
    cfg.n_attn_heads = 2;
    cfg.ffn_dim = 12;
    cfg.vocab_size = 7;
    cfg.max_seq_len = 16;
    cfg.stack.enabled = true;
    cfg.stack.S = 4;
    cfg.stack.H = 2;
    cfg.stack.d_s = 2;

    GradReport rep;
    rep.tolerance = tol;
    const double lambda_test = 0.7;  // exercises the entropy-regularizer path too

    for (IntegrationMode mode : {IntegrationMode::temporal, IntegrationMode::layerwise}) {
        Model model(cfg, seed);
        Rng rng(seed ^ 0x5117);
        // The default 0.02-scale embedding init sits in a high-curvature region
        // of rmsnorm where central differences at eps=1e-5 lose accuracy;
        // check gradients at a healthy parameter scale instead.
        for (auto& ref : model.param_refs()) {
            if (ref.name == "embedding") {
                for (size_t i = 0; i < ref.n; ++i) ref.data[i] = rng.normal(0.0, 0.5);
            }
        }
        // move stack parameters off the identity init so gradients reach them
        for (auto& sp : model.mutable_stacks()) {
            for (auto& x : sp.w_down.a) x = rng.normal(0.0, 0.6);
            for (auto& x : sp.w_up.a) x = rng.normal(0.0, 0.6);
            sp.gate = rng.normal(1.0, 0.2);
            for (auto& head : sp.heads) {
                for (auto& x : head.action_matrix.a) x = rng.normal(0.0, 0.8);
                for (auto& x : head.read_query) x = rng.normal(0.0, 0.8);
            }
        }

        const std::vector<int> tokens = {1, 4, 6, 2, 5};
        long n_actions = 0;
        {
            ModelCache cache;
            model.forward(tokens, mode, &cache);
            for (const auto& b : cache.steps) {
                for (const auto& st : b) n_actions += static_cast<long>(st.actions.size());
            }
        }
        const double entropy_coeff = lambda_test / static_cast<double>(n_actions);

        auto loss_fn = [&]() -> double {
            ModelCache cache;
            const Mat logits = model.forward(tokens, mode, &cache);
            double loss = 0.0;
            for (double x : logits.a) loss += x * x;
            double ent = 0.0;
            for (const auto& b : cache.steps) {
                for (const auto& st : b) {
                    for (const auto& a : st.actions) {
                        for (double p : {a.push, a.pop, a.noop}) {
                            if (p > 0.0) ent -= p * std::log(p);
                        }
                    }
                }
            }
            return loss + lambda_test * ent / static_cast<double>(n_actions);
        };

        ModelGrads grads = model.make_grads();
        {
            ModelCache cache;
            const Mat logits = model.forward(tokens, mode, &cache);
            Mat g_logits(logits.rows, logits.cols);
            for (size_t i = 0; i < logits.a.size(); ++i) g_logits.a[i] = 2.0 * logits.a[i];
            model.backward(tokens, mode, cache, g_logits, grads, entropy_coeff);
        }

        const auto prefs = model.param_refs();
        const auto grefs = model.grad_refs(grads);
        const std::string tag = mode == IntegrationMode::temporal ? "temporal/" : "layerwise/";
        std::vector<ParamGroup> groups;
        for (const auto& p : prefs) groups.push_back({tag + p.name, p.data, p.n});

        auto analytic = [&](const ParamGroup& pg, size_t i) -> double {
            for (size_t k = 0; k < prefs.size(); ++k) {
                if (prefs[k].data == pg.data) return grefs[k].data[i];
            }
            return 0.0;
        };

        GradReport sub = run_gradcheck(groups, loss_fn, analytic, eps, tol);
        for (auto& g : sub.groups) rep.groups.push_back(std::move(g));
        rep.max_rel_err = std::max(rep.max_rel_err, sub.max_rel_err);
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

} // namespace

GradReport gradcheck(GradScope scope, double eps, double tol, uint64_t seed) {
    switch (scope) {
        case GradScope::stack_core: return gradcheck_stack_core(eps, tol, seed);
        case GradScope::multihead: return gradcheck_multihead(eps, tol, seed);
        case GradScope::backbone_tiny: return gradcheck_backbone(eps, tol, seed);
    }
    throw std::invalid_argument("unknown gradcheck scope");
}

// ---------------------------------------------------------------------------
// Invariant fuzzing
// ---------------------------------------------------------------------------

InvariantReport fuzz_invariants(int trials, uint64_t seed) {
    InvariantReport rep;
    rep.trials = trials;
    Rng base(seed);
    std::ostringstream detail;

    for (int trial = 0; trial < trials; ++trial) {
        Rng rng = base.split(static_cast<uint64_t>(trial));
        const int S = rng.uniform_int(1, 8);
        const int w = rng.uniform_int(1, 4);
        const bool queue = rng.uniform() < 0.25;

        sc::StackParams params;
        params.structure_mode = queue ? sc::StructureMode::queue : sc::StructureMode::stack;
        params.read_mode = sc::ReadMode::global_content;
        params.read_query.assign(static_cast<size_t>(w), 0.0);
        for (auto& x : params.read_query) x = rng.uniform(-1.0, 1.0);

        sc::StackState st = sc::empty(S, w);
        for (auto& x : st.values.a) x = rng.uniform(-3.0, 3.0);
        for (auto& x : st.mask) x = rng.uniform(0.0, 1.0);
        Vec h(static_cast<size_t>(w));
        for (auto& x : h) x = rng.uniform(-3.0, 3.0);

        // random point on the 3-simplex
        double a0 = rng.uniform(), a1 = rng.uniform();
        if (a0 > a1) std::swap(a0, a1);
        sc::ActionDistribution a{a0, a1 - a0, 1.0 - a1};

        const sc::StackState out = sc::update(st, h, a, params);

        bool ok = true;
        for (double m : out.mask) {
            if (m < -1e-12 || m > 1.0 + 1e-12) ok = false;
        }

        double sum_before = 0.0, sum_after = 0.0;
        for (double m : st.mask) sum_before += m;
        for (double m : out.mask) sum_after += m;
        const double delta = sum_after - sum_before;
        if (std::abs(delta) > 1.0 + 1e-9) ok = false;
        if (!queue) {
            const double expected = a.push * (1.0 - st.mask[static_cast<size_t>(S - 1)]) - a.pop * st.mask[0];
            if (std::abs(delta - expected) > 1e-9) ok = false;
        }

        double bound = 0.0;
        for (double x : h) bound = std::max(bound, std::abs(x));
        for (double x : st.values.a) bound = std::max(bound, std::abs(x));
        for (int i = 0; i < S; ++i) {
            for (int c = 0; c < w; ++c) {
                if (std::abs(out.values.at(i, c)) > bound + 1e-12) ok = false;
            }
        }

        // purity: repeated calls are bit-identical
        const sc::StackState out2 = sc::update(st, h, a, params);
        if (std::memcmp(out.values.a.data(), out2.values.a.data(), sizeof(double) * out.values.size()) != 0 ||
            std::memcmp(out.mask.data(), out2.mask.data(), sizeof(double) * out.mask.size()) != 0) {
            ok = false;
        }
        const Vec r1 = sc::read(out, params);
        const Vec r2 = sc::read(out, params);
        if (std::memcmp(r1.data(), r2.data(), sizeof(double) * r1.size()) != 0) ok = false;

        if (!ok) {
            rep.failures += 1;
            if (rep.failures <= 3) detail << "trial " << trial << " failed; ";
        }
    }
    rep.pass = rep.failures == 0;
    rep.detail = detail.str();
    return rep;
}

} // namespace softstack::verify
