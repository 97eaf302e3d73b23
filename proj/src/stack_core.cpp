#include "softstack/stack_core.hpp"

#include <algorithm>
#include <cstring>

namespace softstack::stack_core {

namespace {

// Queue push frontier: weight per slot for where an enqueued element lands.
// f[0] = 1 - mask[0], f[i] = mask[i-1] * (1 - mask[i]); normalized to sum 1.
// With a saturated mask this is a one-hot on the first inactive slot. Returns
// the normalizer Z; Z below eps means the queue is full and the push writes
// nothing.
constexpr double kFrontierEps = 1e-12;

double queue_frontier(const double* mask, int S, double* f) {
    f[0] = 1.0 - mask[0];
    for (int i = 1; i < S; ++i) f[i] = mask[i - 1] * (1.0 - mask[i]);
    double z = 0.0;
    for (int i = 0; i < S; ++i) z += f[i];
    return z;
}

void validate_state(const StackState& state) {
    if (state.slots() < 1 || state.width() < 1) {
        throw std::invalid_argument("stack state has empty shape");
    }
    if (static_cast<int>(state.mask.size()) != state.slots()) {
        throw std::invalid_argument("stack mask length does not match slot count");
    }
}

void validate_distribution(const ActionDistribution& a) {
    const double s = a.push + a.pop + a.noop;
    if (!(std::isfinite(s))) throw std::invalid_argument("action distribution not finite");
    if (a.push < -1e-9 || a.pop < -1e-9 || a.noop < -1e-9 || std::abs(s - 1.0) > 1e-6) {
        throw std::invalid_argument("action distribution is not a valid 3-simplex point");
    }
}

} // namespace

StackState empty(int S, int w) {
    if (S < 1 || w < 1) throw std::invalid_argument("stack requires S >= 1 and w >= 1");
    return StackState(S, w);
}

ActionDistribution compute_actions(const double* h, int w, const StackParams& params) {
    if (params.action_mode == ActionMode::push_only) {
        return ActionDistribution{1.0, 0.0, 0.0};
    }
    if (params.action_matrix.rows != 3 || params.action_matrix.cols != w) {
        throw std::invalid_argument("action matrix must be 3 x w");
    }
    if (!all_finite(h, static_cast<size_t>(w))) {
        throw std::invalid_argument("hidden state is not finite");
    }
    double logits[3];
    detail::action_logits(params.action_matrix, h, logits);
    softmax_inplace(logits, 3);
    return ActionDistribution{logits[0], logits[1], logits[2]};
}

ActionDistribution compute_actions(const Vec& h, const StackParams& params) {
    return compute_actions(h.data(), static_cast<int>(h.size()), params);
}

StackState update(const StackState& state, const Vec& h, const ActionDistribution& a,
                  const StackParams& params) {
    validate_state(state);
    validate_distribution(a);
    if (static_cast<int>(h.size()) != state.width()) {
        throw std::invalid_argument("hidden state width does not match stack width");
    }
    if (!all_finite(h) || !all_finite(state.values) || !all_finite(state.mask)) {
        throw std::invalid_argument("update received non-finite inputs");
    }
    StackState out(state.slots(), state.width());
    detail::update_kernel(state.values.a.data(), state.mask.data(), h.data(), a,
                          state.slots(), state.width(), params.structure_mode,
                          out.values.a.data(), out.mask.data());
    return out;
}

Vec read(const StackState& state, const StackParams& params) {
    validate_state(state);
    const int S = state.slots();
    const int w = state.width();
    if (params.read_mode == ReadMode::global_content &&
        static_cast<int>(params.read_query.size()) != w) {
        throw std::invalid_argument("content read query must have length w");
    }
    if (params.read_mode == ReadMode::global_position &&
        static_cast<int>(params.read_query.size()) != S) {
        throw std::invalid_argument("position read query must have length S");
    }
    Vec out(static_cast<size_t>(w), 0.0);
    Vec att(static_cast<size_t>(S), 0.0);
    detail::read_kernel(state.values.a.data(), state.mask.data(), params, S, w,
                        out.data(), att.data());
    return out;
}

StepResult step(const StackState& state, const Vec& h, const StackParams& params) {
    StepResult r;
    r.actions = compute_actions(h, params);
    r.state = update(state, h, r.actions, params);
    r.read_out = read(r.state, params);
    return r;
}

namespace detail {

void action_logits(const Mat& action_matrix, const double* h, double* logits3) {
    matvec(action_matrix, h, logits3);
}

void update_kernel(const double* values, const double* mask, const double* h,
                   const ActionDistribution& a, int S, int w, StructureMode mode,
                   double* out_values, double* out_mask) {
    const double ap = a.push, ao = a.pop, an = a.noop;

    if (mode == StructureMode::stack) {
        for (int i = 0; i < S; ++i) {
            const double* push_src = (i == 0) ? h : values + static_cast<size_t>(i - 1) * w;
            const double* pop_src = (i >= S - 1) ? nullptr : values + static_cast<size_t>(i + 1) * w;
            const double* noop_src = values + static_cast<size_t>(i) * w;
            double* out = out_values + static_cast<size_t>(i) * w;
            if (pop_src) {
                for (int c = 0; c < w; ++c) out[c] = ap * push_src[c] + ao * pop_src[c] + an * noop_src[c];
            } else {  // bottom slot pops from the maintained zero vector
                for (int c = 0; c < w; ++c) out[c] = ap * push_src[c] + an * noop_src[c];
            }
            const double push_m = (i == 0) ? 1.0 : mask[i - 1];
            const double pop_m = (i >= S - 1) ? 0.0 : mask[i + 1];
            out_mask[i] = ap * push_m + ao * pop_m + an * mask[i];
        }
        return;
    }

    // Queue: pop removes the front exactly like the stack rule; push writes h
    // into the soft frontier instead of shifting.
    std::vector<double> f(static_cast<size_t>(S));
    const double z = queue_frontier(mask, S, f.data());
    const bool saturated = z < kFrontierEps;
    const double inv_z = saturated ? 0.0 : 1.0 / z;

    for (int i = 0; i < S; ++i) {
        const double fi = saturated ? 0.0 : f[i] * inv_z;
        const double* vi = values + static_cast<size_t>(i) * w;
        const double* pop_src = (i >= S - 1) ? nullptr : values + static_cast<size_t>(i + 1) * w;
        double* out = out_values + static_cast<size_t>(i) * w;
        for (int c = 0; c < w; ++c) {
            const double pushed = vi[c] + fi * (h[c] - vi[c]);
            const double popped = pop_src ? pop_src[c] : 0.0;
            out[c] = ap * pushed + ao * popped + an * vi[c];
        }
        const double pushed_m = mask[i] + fi * (1.0 - mask[i]);
        const double popped_m = (i >= S - 1) ? 0.0 : mask[i + 1];
        out_mask[i] = ap * pushed_m + ao * popped_m + an * mask[i];
    }
}

void read_kernel(const double* values, const double* mask, const StackParams& params,
                 int S, int w, double* out, double* read_att) {
    switch (params.read_mode) {
        case ReadMode::top_peek:
            std::memcpy(out, values, sizeof(double) * w);
            return;
        case ReadMode::global_content: {
            const double* q = params.read_query.data();
            for (int i = 0; i < S; ++i) {
                read_att[i] = mask[i] * dot(values + static_cast<size_t>(i) * w, q, w);
            }
            break;
        }
        case ReadMode::global_position: {
            const double* q = params.read_query.data();
            for (int i = 0; i < S; ++i) read_att[i] = q[i] * mask[i];
            break;
        }
    }
    softmax_inplace(read_att, S);
    std::fill(out, out + w, 0.0);
    for (int i = 0; i < S; ++i) {
        axpy(read_att[i], values + static_cast<size_t>(i) * w, out, w);
    }
}

void update_backward(const double* values, const double* mask, const double* h,
                     const ActionDistribution& a, int S, int w, StructureMode mode,
                     const double* g_out_values, const double* g_out_mask,
                     double* g_values, double* g_mask, double* g_h, double g_a[3]) {
    const double ap = a.push, ao = a.pop, an = a.noop;

    if (mode == StructureMode::stack) {
        for (int i = 0; i < S; ++i) {
            const double* go = g_out_values + static_cast<size_t>(i) * w;
            const double* push_src = (i == 0) ? h : values + static_cast<size_t>(i - 1) * w;
            double* g_push_dst = (i == 0) ? g_h : g_values + static_cast<size_t>(i - 1) * w;
            const double* noop_src = values + static_cast<size_t>(i) * w;
            double* g_noop_dst = g_values + static_cast<size_t>(i) * w;

            g_a[0] += dot(go, push_src, w);
            g_a[2] += dot(go, noop_src, w);
            axpy(ap, go, g_push_dst, w);
            axpy(an, go, g_noop_dst, w);
            if (i < S - 1) {
                const double* pop_src = values + static_cast<size_t>(i + 1) * w;
                g_a[1] += dot(go, pop_src, w);
                axpy(ao, go, g_values + static_cast<size_t>(i + 1) * w, w);
            }

            const double gm = g_out_mask[i];
            const double push_m = (i == 0) ? 1.0 : mask[i - 1];
            const double pop_m = (i >= S - 1) ? 0.0 : mask[i + 1];
            g_a[0] += gm * push_m;
            g_a[1] += gm * pop_m;
            g_a[2] += gm * mask[i];
            if (i > 0) g_mask[i - 1] += ap * gm;
            if (i < S - 1) g_mask[i + 1] += ao * gm;
            g_mask[i] += an * gm;
        }
        return;
    }

    // Queue mode.
    std::vector<double> f(static_cast<size_t>(S));
    const double z = queue_frontier(mask, S, f.data());
    const bool saturated = z < kFrontierEps;
    const double inv_z = saturated ? 0.0 : 1.0 / z;
    std::vector<double> fh(static_cast<size_t>(S), 0.0);  // normalized frontier
    if (!saturated) {
        for (int i = 0; i < S; ++i) fh[i] = f[i] * inv_z;
    }

    std::vector<double> g_fh(static_cast<size_t>(S), 0.0);  // dL/d f-hat
    for (int i = 0; i < S; ++i) {
        const double* go = g_out_values + static_cast<size_t>(i) * w;
        const double* vi = values + static_cast<size_t>(i) * w;
        const double gm = g_out_mask[i];
        const double fi = fh[i];

        // pushed value/mask paths
        const double pushed_m = mask[i] + fi * (1.0 - mask[i]);
        double pushed_dot = 0.0;   // sum_c go[c] * pushed[c], feeds g_a[0]
        for (int c = 0; c < w; ++c) {
            const double pushed = vi[c] + fi * (h[c] - vi[c]);
            pushed_dot += go[c] * pushed;
            g_values[static_cast<size_t>(i) * w + c] += ap * go[c] * (1.0 - fi);
            g_h[c] += ap * go[c] * fi;
            g_fh[i] += ap * go[c] * (h[c] - vi[c]);
        }
        g_a[0] += pushed_dot + gm * pushed_m;
        g_mask[i] += ap * gm * (1.0 - fi);
        g_fh[i] += ap * gm * (1.0 - mask[i]);

        // pop path
        if (i < S - 1) {
            const double* pop_src = values + static_cast<size_t>(i + 1) * w;
            g_a[1] += dot(go, pop_src, w) + gm * mask[i + 1];
            axpy(ao, go, g_values + static_cast<size_t>(i + 1) * w, w);
            g_mask[i + 1] += ao * gm;
        }

        // no-op path
        g_a[2] += dot(go, vi, w) + gm * mask[i];
        axpy(an, go, g_values + static_cast<size_t>(i) * w, w);
        g_mask[i] += an * gm;
    }

    if (saturated) return;  // frontier produced no output; no mask grads via f

    // g_f from g_fh through the normalization: fh_i = f_i / z.
    double dot_gf = 0.0;
    for (int i = 0; i < S; ++i) dot_gf += g_fh[i] * fh[i];
    std::vector<double> g_f(static_cast<size_t>(S));
    for (int i = 0; i < S; ++i) g_f[i] = (g_fh[i] - dot_gf) * inv_z;

    // f_0 = 1 - m_0; f_i = m_{i-1} (1 - m_i)
    g_mask[0] -= g_f[0];
    for (int i = 1; i < S; ++i) {
        g_mask[i - 1] += g_f[i] * (1.0 - mask[i]);
        g_mask[i] -= g_f[i] * mask[i - 1];
    }
}

void read_backward(const double* values, const double* mask, const StackParams& params,
                   int S, int w, const double* read_att, const double* g_out,
                   double* g_values, double* g_mask, double* g_query) {
    if (params.read_mode == ReadMode::top_peek) {
        axpy(1.0, g_out, g_values, w);
        return;
    }

    // out = sum_i att_i * v_i
    std::vector<double> g_att(static_cast<size_t>(S));
    for (int i = 0; i < S; ++i) {
        const double* vi = values + static_cast<size_t>(i) * w;
        g_att[i] = dot(g_out, vi, w);
        axpy(read_att[i], g_out, g_values + static_cast<size_t>(i) * w, w);
    }
    std::vector<double> g_logits(static_cast<size_t>(S), 0.0);
    softmax_backward_acc(read_att, g_att.data(), g_logits.data(), S);

    if (params.read_mode == ReadMode::global_content) {
        const double* q = params.read_query.data();
        for (int i = 0; i < S; ++i) {
            const double* vi = values + static_cast<size_t>(i) * w;
            const double gl = g_logits[i];
            g_mask[i] += gl * dot(vi, q, w);
            axpy(gl * mask[i], q, g_values + static_cast<size_t>(i) * w, w);
            axpy(gl * mask[i], vi, g_query, w);
        }
    } else {  // global_position
        const double* q = params.read_query.data();
        for (int i = 0; i < S; ++i) {
            g_query[i] += g_logits[i] * mask[i];
            g_mask[i] += g_logits[i] * q[i];
        }
    }
}

void actions_backward(const Mat& action_matrix, const double* h, const ActionDistribution& a,
                      const StackParams& params, const double g_a[3],
                      Mat& g_action_matrix, double* g_h) {
    if (params.action_mode == ActionMode::push_only) return;  // constant output
    const double p[3] = {a.push, a.pop, a.noop};
    double g_logits[3] = {0.0, 0.0, 0.0};
    softmax_backward_acc(p, g_a, g_logits, 3);
    outer_acc(g_action_matrix, g_logits, h);
    matvec_t_acc(action_matrix, g_logits, g_h);
}

} // namespace detail

} // namespace softstack::stack_core
