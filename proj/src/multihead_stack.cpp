#include "softstack/multihead_stack.hpp"

#include <stdexcept>

namespace softstack::multihead {

namespace sc = stack_core;

MultiHeadStackState empty_state(const MultiHeadStackParams& params) {
    MultiHeadStackState st;
    st.per_head.reserve(static_cast<size_t>(params.H));
    for (int i = 0; i < params.H; ++i) st.per_head.push_back(sc::empty(params.S, params.d_s));
    return st;
}

std::vector<Vec> split_heads(const Vec& h, const MultiHeadStackParams& params) {
    if (static_cast<int>(h.size()) != params.d) {
        throw std::invalid_argument("split_heads: hidden state must have length d");
    }
    Vec down(static_cast<size_t>(params.H) * params.d_s, 0.0);
    matvec(params.w_down, h.data(), down.data());
    std::vector<Vec> chunks(static_cast<size_t>(params.H));
    for (int i = 0; i < params.H; ++i) {
        chunks[i].assign(down.begin() + static_cast<size_t>(i) * params.d_s,
                         down.begin() + static_cast<size_t>(i + 1) * params.d_s);
    }
    return chunks;
}

MultiHeadStackParams init_params(int d, int H, int d_s, int S, Rng& rng,
                                 sc::StructureMode structure, sc::ActionMode action,
                                 sc::ReadMode read) {
    if (d < 1 || H < 1 || d_s < 1 || S < 1) {
        throw std::invalid_argument("init_params: all dimensions must be positive");
    }
    if (static_cast<long long>(H) * d_s > 65536) {
        throw std::invalid_argument("init_params: H*d_s exceeds supported cap");
    }
    MultiHeadStackParams p;
    p.d = d;
    p.H = H;
    p.d_s = d_s;
    p.S = S;
    p.w_down = Mat(H * d_s, d);
    p.w_up = Mat(d, H * d_s);  // zero: the module is an exact identity at init
    p.gate = 1.0;
    const double scale = 0.02;
    for (double& x : p.w_down.a) x = rng.normal(0.0, scale);
    p.heads.resize(static_cast<size_t>(H));
    for (auto& head : p.heads) {
        head.structure_mode = structure;
        head.action_mode = action;
        head.read_mode = read;
        head.action_matrix = Mat(3, d_s);
        for (double& x : head.action_matrix.a) x = rng.normal(0.0, scale);
        const int qlen = (read == sc::ReadMode::global_position) ? S : d_s;
        head.read_query.resize(static_cast<size_t>(qlen));
        for (double& x : head.read_query) x = rng.normal(0.0, scale);
    }
    return p;
}

size_t param_count(const MultiHeadStackParams& params) {
    size_t n = params.w_down.size() + params.w_up.size() + 1;  // +1 for the gate
    for (const auto& head : params.heads) {
        n += head.action_matrix.size() + head.read_query.size();
    }
    return n;
}

MhParamGrads make_grads(const MultiHeadStackParams& params) {
    MhParamGrads g;
    g.g_w_down = Mat(params.w_down.rows, params.w_down.cols);
    g.g_w_up = Mat(params.w_up.rows, params.w_up.cols);
    g.g_action.resize(static_cast<size_t>(params.H));
    g.g_query.resize(static_cast<size_t>(params.H));
    for (int i = 0; i < params.H; ++i) {
        g.g_action[i] = Mat(3, params.d_s);
        g.g_query[i].assign(params.heads[i].read_query.size(), 0.0);
    }
    return g;
}

void mh_step_forward(const MultiHeadStackParams& params, const MultiHeadStackState& prev,
                     const Vec& h, MultiHeadStackState& out, Vec& h_out, MhStepCache& cache) {
    const int H = params.H, ds = params.d_s, S = params.S;
    cache.h_in = h;
    cache.down.assign(static_cast<size_t>(H) * ds, 0.0);
    matvec(params.w_down, h.data(), cache.down.data());
    cache.reads.assign(static_cast<size_t>(H) * ds, 0.0);
    cache.read_att = Mat(H, S);
    cache.actions.resize(static_cast<size_t>(H));

    for (int i = 0; i < H; ++i) {
        const double* chunk = cache.down.data() + static_cast<size_t>(i) * ds;
        const StackParams& hp = params.heads[i];
        cache.actions[i] = sc::compute_actions(chunk, ds, hp);
        sc::detail::update_kernel(prev.per_head[i].values.a.data(), prev.per_head[i].mask.data(),
                                  chunk, cache.actions[i], S, ds, hp.structure_mode,
                                  out.per_head[i].values.a.data(), out.per_head[i].mask.data());
        sc::detail::read_kernel(out.per_head[i].values.a.data(), out.per_head[i].mask.data(), hp,
                                S, ds, cache.reads.data() + static_cast<size_t>(i) * ds,
                                cache.read_att.row(i));
    }

    h_out.assign(static_cast<size_t>(params.d), 0.0);
    matvec(params.w_up, cache.reads.data(), h_out.data());
    axpy(params.gate, h.data(), h_out.data(), params.d);
}

MhStepResult mh_step(const MultiHeadStackState& state, const Vec& h,
                     const MultiHeadStackParams& params) {
    if (static_cast<int>(h.size()) != params.d) {
        throw std::invalid_argument("mh_step: hidden state must have length d");
    }
    if (state.heads() != params.H) {
        throw std::invalid_argument("mh_step: state head count mismatch");
    }
    for (const auto& st : state.per_head) {
        if (st.slots() != params.S || st.width() != params.d_s) {
            throw std::invalid_argument("mh_step: per-head state shape mismatch");
        }
    }
    MhStepResult r;
    r.state = empty_state(params);
    MhStepCache cache;
    mh_step_forward(params, state, h, r.state, r.h_out, cache);
    r.actions = cache.actions;
    return r;
}

void mh_step_backward(const MultiHeadStackParams& params, const MultiHeadStackState& prev,
                      const MultiHeadStackState& post, const MhStepCache& cache,
                      const Vec& g_h_out, const MultiHeadStackState* g_state_out,
                      const double* g_a_extra,
                      Vec& g_h_in, MultiHeadStackState& g_state_prev, MhParamGrads& grads) {
    const int H = params.H, ds = params.d_s, S = params.S, d = params.d;

    // h' = gate * h + W_up * reads
    grads.g_gate += dot(g_h_out.data(), cache.h_in.data(), d);
    axpy(params.gate, g_h_out.data(), g_h_in.data(), d);
    outer_acc(grads.g_w_up, g_h_out.data(), cache.reads.data());
    Vec g_reads(static_cast<size_t>(H) * ds, 0.0);
    matvec_t_acc(params.w_up, g_h_out.data(), g_reads.data());

    Vec g_down(static_cast<size_t>(H) * ds, 0.0);
    for (int i = 0; i < H; ++i) {
        const StackParams& hp = params.heads[i];
        const double* chunk = cache.down.data() + static_cast<size_t>(i) * ds;
        const StackState& prev_st = prev.per_head[i];
        const StackState& post_st = post.per_head[i];

        // Gradient w.r.t. the post-update state: read path plus the chain from
        // the successor step (if any).
        StackState g_post(S, ds);
        if (g_state_out) {
            g_post.values.a = g_state_out->per_head[i].values.a;
            g_post.mask = g_state_out->per_head[i].mask;
        }
        sc::detail::read_backward(post_st.values.a.data(), post_st.mask.data(), hp, S, ds,
                                  cache.read_att.row(i),
                                  g_reads.data() + static_cast<size_t>(i) * ds,
                                  g_post.values.a.data(), g_post.mask.data(),
                                  grads.g_query[i].data());

        double g_a[3] = {0.0, 0.0, 0.0};
        if (g_a_extra) {
            g_a[0] = g_a_extra[3 * i + 0];
            g_a[1] = g_a_extra[3 * i + 1];
            g_a[2] = g_a_extra[3 * i + 2];
        }
        sc::detail::update_backward(prev_st.values.a.data(), prev_st.mask.data(), chunk,
                                    cache.actions[i], S, ds, hp.structure_mode,
                                    g_post.values.a.data(), g_post.mask.data(),
                                    g_state_prev.per_head[i].values.a.data(),
                                    g_state_prev.per_head[i].mask.data(),
                                    g_down.data() + static_cast<size_t>(i) * ds, g_a);
        sc::detail::actions_backward(hp.action_matrix, chunk, cache.actions[i], hp, g_a,
                                     grads.g_action[i],
                                     g_down.data() + static_cast<size_t>(i) * ds);
    }

    outer_acc(grads.g_w_down, g_down.data(), cache.h_in.data());
    matvec_t_acc(params.w_down, g_down.data(), g_h_in.data());
}

} // namespace softstack::multihead
