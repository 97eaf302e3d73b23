#include "softstack/backbone.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace softstack::backbone {

namespace {

constexpr double kNormEps = 1e-6;

void rmsnorm_row(const double* x, const Vec& gamma, int d, double* out, double* inv_rms) {
    double ms = 0.0;
    for (int i = 0; i < d; ++i) ms += x[i] * x[i];
    const double r = 1.0 / std::sqrt(ms / d + kNormEps);
    for (int i = 0; i < d; ++i) out[i] = gamma[i] * x[i] * r;
    *inv_rms = r;
}

// Accumulates into g_x and g_gamma.
void rmsnorm_backward_row(const double* x, double inv_rms, const Vec& gamma, int d,
                          const double* g_y, double* g_x, Vec& g_gamma) {
    double mean_gxx = 0.0;
    for (int i = 0; i < d; ++i) {
        const double xhat = x[i] * inv_rms;
        mean_gxx += g_y[i] * gamma[i] * xhat;
        g_gamma[i] += g_y[i] * xhat;
    }
    mean_gxx /= d;
    for (int i = 0; i < d; ++i) {
        const double xhat = x[i] * inv_rms;
        g_x[i] += inv_rms * (g_y[i] * gamma[i] - xhat * mean_gxx);
    }
}

// Rotary embedding (dir = +1 forward, -1 for the gradient: rotation by the
// opposite angle). Frequencies are hoisted out of the per-row loops.
void rope_freqs(int head_dim, double theta, Vec& freqs) {
    const int half = head_dim / 2;
    freqs.resize(static_cast<size_t>(half));
    for (int j = 0; j < half; ++j) freqs[static_cast<size_t>(j)] = std::pow(theta, -2.0 * j / head_dim);
}

void rope_row_with(double* x, int pos, int n_heads, int head_dim, const Vec& freqs, int dir) {
    const int half = head_dim / 2;
    for (int j = 0; j < half; ++j) {
        const double ang = dir * pos * freqs[static_cast<size_t>(j)];
        const double c = std::cos(ang), s = std::sin(ang);
        for (int h = 0; h < n_heads; ++h) {
            double* p = x + h * head_dim + 2 * j;
            const double x0 = p[0], x1 = p[1];
            p[0] = x0 * c - x1 * s;
            p[1] = x0 * s + x1 * c;
        }
    }
}

void rope_row(double* x, int pos, int n_heads, int head_dim, double theta, int dir) {
    Vec freqs;
    rope_freqs(head_dim, theta, freqs);
    rope_row_with(x, pos, n_heads, head_dim, freqs, dir);
}

void rope_mat(Mat& x, int n_heads, int head_dim, double theta, int dir) {
    Vec freqs;
    rope_freqs(head_dim, theta, freqs);
    for (int t = 0; t < x.rows; ++t) rope_row_with(x.row(t), t, n_heads, head_dim, freqs, dir);
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("model requires at least one layer");
    if (d < 1 || n_attn_heads < 1 || ffn_dim < 1) throw std::invalid_argument("invalid model dims");
    if (d % n_attn_heads != 0) throw std::invalid_argument("d must be divisible by n_attn_heads");
    if ((d / n_attn_heads) % 2 != 0) throw std::invalid_argument("head dim must be even for rotary embeddings");
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be positive");
    if (max_seq_len < 1) throw std::invalid_argument("max_seq_len must be positive");
    if (stack.enabled) {
        if (stack.S < 1 || stack.H < 1 || stack.d_s < 1) {
            throw std::invalid_argument("stack dims must be positive");
        }
        if (stack.placement != "between" && stack.placement != "all") {
            throw std::invalid_argument("stack placement must be 'between' or 'all'");
        }
    }
}

std::vector<int> ModelConfig::boundary_layers() const {
    std::vector<int> out;
    if (!stack.enabled) return out;
    const int last = (stack.placement == "all") ? n_layers - 1 : n_layers - 2;
    for (int i = 0; i <= last; ++i) out.push_back(i);
    return out;
}

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d;

    embedding_ = Mat(cfg_.vocab_size, d);
    for (double& x : embedding_.a) x = rng.normal(0.0, 0.02);

    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const double ffn_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.ffn_dim));
    layers_.resize(static_cast<size_t>(cfg_.n_layers));
    for (auto& L : layers_) {
        L.attn_norm.assign(static_cast<size_t>(d), 1.0);
        L.wq = Mat(d, d);
        L.wk = Mat(d, d);
        L.wv = Mat(d, d);
        L.wo = Mat(d, d);
        for (double& x : L.wq.a) x = rng.normal(0.0, attn_scale);
        for (double& x : L.wk.a) x = rng.normal(0.0, attn_scale);
        for (double& x : L.wv.a) x = rng.normal(0.0, attn_scale);
        for (double& x : L.wo.a) x = rng.normal(0.0, attn_scale);
        L.ffn_norm.assign(static_cast<size_t>(d), 1.0);
        L.w1 = Mat(cfg_.ffn_dim, d);
        L.w2 = Mat(d, cfg_.ffn_dim);
        for (double& x : L.w1.a) x = rng.normal(0.0, attn_scale);
        for (double& x : L.w2.a) x = rng.normal(0.0, ffn_scale);
    }

    for (size_t j = 0; j < cfg_.boundary_layers().size(); ++j) {
        stacks_.push_back(multihead::init_params(d, cfg_.stack.H, cfg_.stack.d_s, cfg_.stack.S, rng,
                                                 cfg_.stack.structure_mode, cfg_.stack.action_mode,
                                                 cfg_.stack.read_mode));
    }

    final_norm_.assign(static_cast<size_t>(d), 1.0);
    w_out_ = Mat(cfg_.vocab_size, d);
    for (double& x : w_out_.a) x = rng.normal(0.0, 0.02);
}

void Model::check_tokens(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.max_seq_len) {
        throw std::invalid_argument("sequence exceeds max_seq_len");
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg_.vocab_size) throw std::invalid_argument("token id out of vocabulary");
    }
}

void Model::layer_forward(int li, Mat& x, ModelCache* cache) const {
    const int T = x.rows, d = cfg_.d;
    const int nh = cfg_.n_attn_heads, dh = cfg_.head_dim();
    const LayerParams& L = layers_[li];
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[li] : local;

    lc.x_in = x;
    lc.n1 = Mat(T, d);
    lc.inv_rms1.assign(static_cast<size_t>(T), 0.0);
    for (int t = 0; t < T; ++t) rmsnorm_row(x.row(t), L.attn_norm, d, lc.n1.row(t), &lc.inv_rms1[t]);

    matmul_bt(lc.n1, L.wq, lc.q);
    matmul_bt(lc.n1, L.wk, lc.k);
    matmul_bt(lc.n1, L.wv, lc.v);
    rope_mat(lc.q, nh, dh, cfg_.rope_theta, +1);
    rope_mat(lc.k, nh, dh, cfg_.rope_theta, +1);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    lc.att.assign(static_cast<size_t>(nh), Mat(T, T));
    lc.att_merged = Mat(T, d);
    for (int h = 0; h < nh; ++h) {
        Mat& att = lc.att[h];
        const int off = h * dh;
        for (int t = 0; t < T; ++t) {
            double* arow = att.row(t);
            const double* qt = lc.q.row(t) + off;
            for (int u = 0; u <= t; ++u) arow[u] = scale * dot(qt, lc.k.row(u) + off, dh);
            softmax_inplace(arow, t + 1);
            double* out = lc.att_merged.row(t) + off;
            for (int u = 0; u <= t; ++u) axpy(arow[u], lc.v.row(u) + off, out, dh);
        }
    }

    Mat o;
    matmul_bt(lc.att_merged, L.wo, o);
    lc.h_after_attn = Mat(T, d);
    for (size_t i = 0; i < o.a.size(); ++i) lc.h_after_attn.a[i] = lc.x_in.a[i] + o.a[i];

    lc.n2 = Mat(T, d);
    lc.inv_rms2.assign(static_cast<size_t>(T), 0.0);
    for (int t = 0; t < T; ++t) {
        rmsnorm_row(lc.h_after_attn.row(t), L.ffn_norm, d, lc.n2.row(t), &lc.inv_rms2[t]);
    }
    matmul_bt(lc.n2, L.w1, lc.ffn_pre);
    lc.ffn_act = Mat(T, cfg_.ffn_dim);
    for (size_t i = 0; i < lc.ffn_pre.a.size(); ++i) lc.ffn_act.a[i] = silu(lc.ffn_pre.a[i]);
    Mat f;
    matmul_bt(lc.ffn_act, L.w2, f);
    for (size_t i = 0; i < f.a.size(); ++i) x.a[i] = lc.h_after_attn.a[i] + f.a[i];
}

void Model::layer_backward(int li, const LayerCache& lc, Mat& g_x, ModelGrads& grads) const {
    const int T = g_x.rows, d = cfg_.d;
    const int nh = cfg_.n_attn_heads, dh = cfg_.head_dim();
    const LayerParams& L = layers_[li];
    LayerParams& G = grads.layers[li];

    // x_out = h_after_attn + W2 silu(W1 n2)
    Mat g_act;
    matmul_nn(g_x, L.w2, g_act);  // T x ffn
    matmul_tn_acc(g_x, lc.ffn_act, G.w2);
    Mat g_pre(T, cfg_.ffn_dim);
    for (size_t i = 0; i < g_pre.a.size(); ++i) g_pre.a[i] = g_act.a[i] * silu_grad(lc.ffn_pre.a[i]);
    Mat g_n2;
    matmul_nn(g_pre, L.w1, g_n2);  // T x d
    matmul_tn_acc(g_pre, lc.n2, G.w1);

    Mat g_h_attn = g_x;  // residual branch
    for (int t = 0; t < T; ++t) {
        rmsnorm_backward_row(lc.h_after_attn.row(t), lc.inv_rms2[t], L.ffn_norm, d,
                             g_n2.row(t), g_h_attn.row(t), G.ffn_norm);
    }

    // h_after_attn = x_in + Wo att_merged
    Mat g_merged;
    matmul_nn(g_h_attn, L.wo, g_merged);  // T x d
    matmul_tn_acc(g_h_attn, lc.att_merged, G.wo);

    Mat g_q(T, d), g_k(T, d), g_v(T, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Vec g_att(static_cast<size_t>(T)), g_s(static_cast<size_t>(T));
    for (int h = 0; h < nh; ++h) {
        const Mat& att = lc.att[h];
        const int off = h * dh;
        for (int t = 0; t < T; ++t) {
            const double* gm = g_merged.row(t) + off;
            const double* arow = att.row(t);
            for (int u = 0; u <= t; ++u) {
                g_att[u] = dot(gm, lc.v.row(u) + off, dh);
                axpy(arow[u], gm, g_v.row(u) + off, dh);
            }
            std::fill(g_s.begin(), g_s.begin() + t + 1, 0.0);
            softmax_backward_acc(arow, g_att.data(), g_s.data(), t + 1);
            double* gq = g_q.row(t) + off;
            const double* qt = lc.q.row(t) + off;
            for (int u = 0; u <= t; ++u) {
                const double gsu = g_s[u] * scale;
                axpy(gsu, lc.k.row(u) + off, gq, dh);
                axpy(gsu, qt, g_k.row(u) + off, dh);
            }
        }
    }
    rope_mat(g_q, nh, dh, cfg_.rope_theta, -1);
    rope_mat(g_k, nh, dh, cfg_.rope_theta, -1);

    Mat g_n1(T, d);
    {
        Mat tmp;
        matmul_nn(g_q, L.wq, tmp);
        for (size_t i = 0; i < g_n1.a.size(); ++i) g_n1.a[i] += tmp.a[i];
        matmul_nn(g_k, L.wk, tmp);
        for (size_t i = 0; i < g_n1.a.size(); ++i) g_n1.a[i] += tmp.a[i];
        matmul_nn(g_v, L.wv, tmp);
        for (size_t i = 0; i < g_n1.a.size(); ++i) g_n1.a[i] += tmp.a[i];
    }
    matmul_tn_acc(g_q, lc.n1, G.wq);
    matmul_tn_acc(g_k, lc.n1, G.wk);
    matmul_tn_acc(g_v, lc.n1, G.wv);

    // g w.r.t. layer input: residual + norm path
    Mat g_in = g_h_attn;
    for (int t = 0; t < T; ++t) {
        rmsnorm_backward_row(lc.x_in.row(t), lc.inv_rms1[t], L.attn_norm, d,
                             g_n1.row(t), g_in.row(t), G.attn_norm);
    }
    g_x = std::move(g_in);
}

void Model::apply_boundary(int j, Mat& x, IntegrationMode mode, ModelCache* cache,
                           std::vector<MultiHeadStackState>& lw_chain) const {
    const MultiHeadStackParams& P = stacks_[j];
    const int T = x.rows, d = cfg_.d;
    const MultiHeadStackState proto = multihead::empty_state(P);

    if (cache) {
        cache->steps[j].resize(static_cast<size_t>(T));
        cache->states[j].assign(static_cast<size_t>(T), proto);
    }

    Vec h(static_cast<size_t>(d)), hout;
    MhStepCache local_cache;

    if (mode == IntegrationMode::temporal) {
        MultiHeadStackState ping = proto, pong = proto;
        const MultiHeadStackState* prev = &ping;
        MultiHeadStackState* next = &pong;
        for (int t = 0; t < T; ++t) {
            std::copy(x.row(t), x.row(t) + d, h.begin());
            MhStepCache& sc = cache ? cache->steps[j][t] : local_cache;
            MultiHeadStackState& out = cache ? cache->states[j][t] : *next;
            multihead::mh_step_forward(P, *prev, h, out, hout, sc);
            std::copy(hout.begin(), hout.end(), x.row(t));
            prev = &out;
            if (!cache) next = (next == &pong) ? &ping : &pong;
        }
    } else {
        // layerwise: chain runs across boundaries within each token
        for (int t = 0; t < T; ++t) {
            std::copy(x.row(t), x.row(t) + d, h.begin());
            MhStepCache& sc = cache ? cache->steps[j][t] : local_cache;
            const MultiHeadStackState& prev =
                (j == 0) ? proto : (cache ? cache->states[j - 1][t] : lw_chain[t]);
            MultiHeadStackState out = proto;
            MultiHeadStackState& dst = cache ? cache->states[j][t] : out;
            multihead::mh_step_forward(P, prev, h, dst, hout, sc);
            std::copy(hout.begin(), hout.end(), x.row(t));
            if (!cache) lw_chain[t] = std::move(out);
        }
    }
}

Mat Model::forward(const std::vector<int>& tokens, IntegrationMode mode, ModelCache* cache) const {
    check_tokens(tokens);
    const int T = static_cast<int>(tokens.size());
    const int d = cfg_.d;

    Mat x(T, d);
    for (int t = 0; t < T; ++t) {
        std::copy(embedding_.row(tokens[t]), embedding_.row(tokens[t]) + d, x.row(t));
    }

    const auto blayers = cfg_.boundary_layers();
    const bool stack_on = cfg_.stack.enabled && !stacks_.empty();
    if (cache) {
        cache->T = T;
        cache->layers.assign(static_cast<size_t>(cfg_.n_layers), LayerCache{});
        const size_t nb = stack_on ? blayers.size() : 0;
        cache->steps.assign(nb, {});
        cache->states.assign(nb, {});
    }
    std::vector<MultiHeadStackState> lw_chain;
    if (!cache && stack_on && mode == IntegrationMode::layerwise) {
        lw_chain.assign(static_cast<size_t>(T), MultiHeadStackState{});
    }

    for (int li = 0; li < cfg_.n_layers; ++li) {
        layer_forward(li, x, cache);
        if (stack_on) {
            const auto it = std::find(blayers.begin(), blayers.end(), li);
            if (it != blayers.end()) {
                apply_boundary(static_cast<int>(it - blayers.begin()), x, mode, cache, lw_chain);
            }
        }
    }

    Mat normed(T, d);
    Vec inv(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) rmsnorm_row(x.row(t), final_norm_, d, normed.row(t), &inv[t]);
    Mat logits;
    matmul_bt(normed, w_out_, logits);
    if (cache) {
        cache->final_in = std::move(x);
        cache->final_normed = std::move(normed);
        cache->final_inv_rms = std::move(inv);
    }
    return logits;
}

Mat Model::forward(const std::vector<int>& tokens) const {
    return forward(tokens, cfg_.integration, nullptr);
}

void Model::boundary_backward(int j, IntegrationMode mode, const ModelCache& cache, Mat& g_x,
                              ModelGrads& grads, double entropy_coeff,
                              std::vector<MultiHeadStackState>& layerwise_carry) const {
    const MultiHeadStackParams& P = stacks_[j];
    const int T = cache.T, d = cfg_.d, H = P.H;
    const MultiHeadStackState proto = multihead::empty_state(P);

    Vec g_h_out(static_cast<size_t>(d)), g_h_in(static_cast<size_t>(d));
    std::vector<double> ga_buf;
    auto entropy_grads = [&](const MhStepCache& sc) -> const double* {
        if (entropy_coeff == 0.0) return nullptr;
        ga_buf.assign(static_cast<size_t>(3 * H), 0.0);
        for (int i = 0; i < H; ++i) {
            const double a[3] = {sc.actions[i].push, sc.actions[i].pop, sc.actions[i].noop};
            for (int k = 0; k < 3; ++k) {
                ga_buf[3 * i + k] = -entropy_coeff * (std::log(std::max(a[k], 1e-300)) + 1.0);
            }
        }
        return ga_buf.data();
    };

    if (mode == IntegrationMode::temporal) {
        MultiHeadStackState g_next = proto;
        bool have_next = false;
        for (int t = T - 1; t >= 0; --t) {
            const MultiHeadStackState& prev = (t == 0) ? proto : cache.states[j][t - 1];
            std::copy(g_x.row(t), g_x.row(t) + d, g_h_out.begin());
            std::fill(g_h_in.begin(), g_h_in.end(), 0.0);
            MultiHeadStackState g_prev = proto;
            multihead::mh_step_backward(P, prev, cache.states[j][t], cache.steps[j][t], g_h_out,
                                        have_next ? &g_next : nullptr,
                                        entropy_grads(cache.steps[j][t]), g_h_in, g_prev,
                                        grads.stacks[j]);
            std::copy(g_h_in.begin(), g_h_in.end(), g_x.row(t));
            g_next = std::move(g_prev);
            have_next = true;
        }
    } else {
        const bool have_carry = !layerwise_carry.empty();
        if (!have_carry) layerwise_carry.assign(static_cast<size_t>(T), proto);
        for (int t = 0; t < T; ++t) {
            const MultiHeadStackState& prev = (j == 0) ? proto : cache.states[j - 1][t];
            std::copy(g_x.row(t), g_x.row(t) + d, g_h_out.begin());
            std::fill(g_h_in.begin(), g_h_in.end(), 0.0);
            MultiHeadStackState g_prev = proto;
            multihead::mh_step_backward(P, prev, cache.states[j][t], cache.steps[j][t], g_h_out,
                                        have_carry ? &layerwise_carry[t] : nullptr,
                                        entropy_grads(cache.steps[j][t]), g_h_in, g_prev,
                                        grads.stacks[j]);
            std::copy(g_h_in.begin(), g_h_in.end(), g_x.row(t));
            layerwise_carry[t] = std::move(g_prev);
        }
    }
}

void Model::backward(const std::vector<int>& tokens, IntegrationMode mode, const ModelCache& cache,
                     const Mat& g_logits, ModelGrads& grads, double entropy_coeff) const {
    const int T = cache.T, d = cfg_.d;

    Mat g_fn;
    matmul_nn(g_logits, w_out_, g_fn);  // T x d
    matmul_tn_acc(g_logits, cache.final_normed, grads.w_out);

    Mat g_x(T, d);
    for (int t = 0; t < T; ++t) {
        rmsnorm_backward_row(cache.final_in.row(t), cache.final_inv_rms[t], final_norm_, d,
                             g_fn.row(t), g_x.row(t), grads.final_norm);
    }

    const auto blayers = cfg_.boundary_layers();
    const bool stack_on = cfg_.stack.enabled && !stacks_.empty() && !cache.steps.empty();
    std::vector<MultiHeadStackState> lw_carry;

    for (int li = cfg_.n_layers - 1; li >= 0; --li) {
        if (stack_on) {
            const auto it = std::find(blayers.begin(), blayers.end(), li);
            if (it != blayers.end()) {
                boundary_backward(static_cast<int>(it - blayers.begin()), mode, cache, g_x, grads,
                                  entropy_coeff, lw_carry);
            }
        }
        layer_backward(li, cache.layers[li], g_x, grads);
    }

    for (int t = 0; t < T; ++t) {
        axpy(1.0, g_x.row(t), grads.embedding.row(tokens[t]), d);
    }
}

ModelGrads Model::make_grads() const {
    ModelGrads g;
    g.embedding = Mat(embedding_.rows, embedding_.cols);
    g.layers.resize(layers_.size());
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& L = layers_[i];
        auto& G = g.layers[i];
        G.attn_norm.assign(L.attn_norm.size(), 0.0);
        G.wq = Mat(L.wq.rows, L.wq.cols);
        G.wk = Mat(L.wk.rows, L.wk.cols);
        G.wv = Mat(L.wv.rows, L.wv.cols);
        G.wo = Mat(L.wo.rows, L.wo.cols);
        G.ffn_norm.assign(L.ffn_norm.size(), 0.0);
        G.w1 = Mat(L.w1.rows, L.w1.cols);
        G.w2 = Mat(L.w2.rows, L.w2.cols);
    }
    g.stacks.reserve(stacks_.size());
    for (const auto& s : stacks_) g.stacks.push_back(multihead::make_grads(s));
    g.final_norm.assign(final_norm_.size(), 0.0);
    g.w_out = Mat(w_out_.rows, w_out_.cols);
    return g;
}

void ModelGrads::zero() {
    embedding.zero();
    for (auto& L : layers) {
        std::fill(L.attn_norm.begin(), L.attn_norm.end(), 0.0);
        L.wq.zero(); L.wk.zero(); L.wv.zero(); L.wo.zero();
        std::fill(L.ffn_norm.begin(), L.ffn_norm.end(), 0.0);
        L.w1.zero(); L.w2.zero();
    }
    for (auto& s : stacks) {
        s.g_w_down.zero();
        s.g_w_up.zero();
        s.g_gate = 0.0;
        for (auto& m : s.g_action) m.zero();
        for (auto& q : s.g_query) std::fill(q.begin(), q.end(), 0.0);
    }
    std::fill(final_norm.begin(), final_norm.end(), 0.0);
    w_out.zero();
}

namespace {
void acc(Vec& dst, const Vec& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
void acc(Mat& dst, const Mat& src) {
    for (size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
}
} // namespace

void ModelGrads::add(const ModelGrads& other) {
    acc(embedding, other.embedding);
    for (size_t i = 0; i < layers.size(); ++i) {
        acc(layers[i].attn_norm, other.layers[i].attn_norm);
        acc(layers[i].wq, other.layers[i].wq);
        acc(layers[i].wk, other.layers[i].wk);
        acc(layers[i].wv, other.layers[i].wv);
        acc(layers[i].wo, other.layers[i].wo);
        acc(layers[i].ffn_norm, other.layers[i].ffn_norm);
        acc(layers[i].w1, other.layers[i].w1);
        acc(layers[i].w2, other.layers[i].w2);
    }
    for (size_t i = 0; i < stacks.size(); ++i) {
        acc(stacks[i].g_w_down, other.stacks[i].g_w_down);
        acc(stacks[i].g_w_up, other.stacks[i].g_w_up);
        stacks[i].g_gate += other.stacks[i].g_gate;
        for (size_t h = 0; h < stacks[i].g_action.size(); ++h) {
            acc(stacks[i].g_action[h], other.stacks[i].g_action[h]);
            acc(stacks[i].g_query[h], other.stacks[i].g_query[h]);
        }
    }
    acc(final_norm, other.final_norm);
    acc(w_out, other.w_out);
}

ParamCount Model::count_params() const {
    ParamCount c;
    c.backbone = embedding_.size() + final_norm_.size() + w_out_.size();
    for (const auto& L : layers_) {
        c.backbone += L.attn_norm.size() + L.wq.size() + L.wk.size() + L.wv.size() + L.wo.size() +
                      L.ffn_norm.size() + L.w1.size() + L.w2.size();
    }
    for (const auto& s : stacks_) c.stack += multihead::param_count(s);
    c.total = c.backbone + c.stack;
    return c;
}

std::vector<ParamRef> Model::param_refs() {
    std::vector<ParamRef> refs;
    refs.push_back({"embedding", embedding_.a.data(), embedding_.size()});
    for (size_t i = 0; i < layers_.size(); ++i) {
        auto& L = layers_[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        refs.push_back({p + "attn_norm", L.attn_norm.data(), L.attn_norm.size()});
        refs.push_back({p + "wq", L.wq.a.data(), L.wq.size()});
        refs.push_back({p + "wk", L.wk.a.data(), L.wk.size()});
        refs.push_back({p + "wv", L.wv.a.data(), L.wv.size()});
        refs.push_back({p + "wo", L.wo.a.data(), L.wo.size()});
        refs.push_back({p + "ffn_norm", L.ffn_norm.data(), L.ffn_norm.size()});
        refs.push_back({p + "w1", L.w1.a.data(), L.w1.size()});
        refs.push_back({p + "w2", L.w2.a.data(), L.w2.size()});
    }
    for (size_t j = 0; j < stacks_.size(); ++j) {
        auto& s = stacks_[j];
        const std::string p = "stack" + std::to_string(j) + ".";
        refs.push_back({p + "w_down", s.w_down.a.data(), s.w_down.size()});
        for (size_t h = 0; h < s.heads.size(); ++h) {
            const std::string hp = p + "head" + std::to_string(h) + ".";
            refs.push_back({hp + "action", s.heads[h].action_matrix.a.data(), s.heads[h].action_matrix.size()});
            refs.push_back({hp + "query", s.heads[h].read_query.data(), s.heads[h].read_query.size()});
        }
        refs.push_back({p + "w_up", s.w_up.a.data(), s.w_up.size()});
        refs.push_back({p + "gate", &s.gate, 1});
    }
    refs.push_back({"final_norm", final_norm_.data(), final_norm_.size()});
    refs.push_back({"w_out", w_out_.a.data(), w_out_.size()});
    return refs;
}

std::vector<ParamRef> Model::param_refs_const() const {
    return const_cast<Model*>(this)->param_refs();
}

std::vector<ParamRef> Model::grad_refs(ModelGrads& g) const {
    std::vector<ParamRef> refs;
    refs.push_back({"embedding", g.embedding.a.data(), g.embedding.size()});
    for (size_t i = 0; i < g.layers.size(); ++i) {
        auto& L = g.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        refs.push_back({p + "attn_norm", L.attn_norm.data(), L.attn_norm.size()});
        refs.push_back({p + "wq", L.wq.a.data(), L.wq.size()});
        refs.push_back({p + "wk", L.wk.a.data(), L.wk.size()});
        refs.push_back({p + "wv", L.wv.a.data(), L.wv.size()});
        refs.push_back({p + "wo", L.wo.a.data(), L.wo.size()});
        refs.push_back({p + "ffn_norm", L.ffn_norm.data(), L.ffn_norm.size()});
        refs.push_back({p + "w1", L.w1.a.data(), L.w1.size()});
        refs.push_back({p + "w2", L.w2.a.data(), L.w2.size()});
    }
    for (size_t j = 0; j < g.stacks.size(); ++j) {
        auto& s = g.stacks[j];
        const std::string p = "stack" + std::to_string(j) + ".";
        refs.push_back({p + "w_down", s.g_w_down.a.data(), s.g_w_down.size()});
        for (size_t h = 0; h < s.g_action.size(); ++h) {
            const std::string hp = p + "head" + std::to_string(h) + ".";
            refs.push_back({hp + "action", s.g_action[h].a.data(), s.g_action[h].size()});
            refs.push_back({hp + "query", s.g_query[h].data(), s.g_query[h].size()});
        }
        refs.push_back({p + "w_up", s.g_w_up.a.data(), s.g_w_up.size()});
        refs.push_back({p + "gate", &s.g_gate, 1});
    }
    refs.push_back({"final_norm", g.final_norm.data(), g.final_norm.size()});
    refs.push_back({"w_out", g.w_out.a.data(), g.w_out.size()});
    return refs;
}

// ---------------------------------------------------------------------------
// Incremental decoding
// ---------------------------------------------------------------------------

Model::IncrementalState Model::begin_sequence(IntegrationMode mode) const {
    IncrementalState st;
    st.layer_k.resize(static_cast<size_t>(cfg_.n_layers));
    st.layer_v.resize(static_cast<size_t>(cfg_.n_layers));
    if (mode == IntegrationMode::temporal && cfg_.stack.enabled) {
        for (const auto& s : stacks_) st.boundary_state.push_back(multihead::empty_state(s));
    }
    return st;
}

Vec Model::decode_step(IncrementalState& st, int token, IntegrationMode mode) const {
    if (token < 0 || token >= cfg_.vocab_size) throw std::invalid_argument("token id out of vocabulary");
    if (st.length >= cfg_.max_seq_len) throw std::invalid_argument("sequence exceeds max_seq_len");
    const int pos = st.length;
    const int d = cfg_.d, nh = cfg_.n_attn_heads, dh = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto blayers = cfg_.boundary_layers();
    const bool stack_on = cfg_.stack.enabled && !stacks_.empty();

    Vec x(embedding_.row(token), embedding_.row(token) + d);
    Vec n1(static_cast<size_t>(d)), q(static_cast<size_t>(d));
    Vec logits_u(static_cast<size_t>(pos + 1));
    Vec freqs;
    rope_freqs(dh, cfg_.rope_theta, freqs);
    double inv;

    MultiHeadStackState lw_state;
    bool lw_init = false;
    Vec hout;
    MhStepCache scratch;

    for (int li = 0; li < cfg_.n_layers; ++li) {
        const LayerParams& L = layers_[li];

        rmsnorm_row(x.data(), L.attn_norm, d, n1.data(), &inv);
        matvec(L.wq, n1.data(), q.data());
        rope_row_with(q.data(), pos, nh, dh, freqs, +1);
        Vec k_new(static_cast<size_t>(d)), v_new(static_cast<size_t>(d));
        matvec(L.wk, n1.data(), k_new.data());
        rope_row_with(k_new.data(), pos, nh, dh, freqs, +1);
        matvec(L.wv, n1.data(), v_new.data());
        st.layer_k[li].push_back(std::move(k_new));
        st.layer_v[li].push_back(std::move(v_new));

        Vec merged(static_cast<size_t>(d), 0.0);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            for (int u = 0; u <= pos; ++u) {
                logits_u[u] = scale * dot(q.data() + off, st.layer_k[li][u].data() + off, dh);
            }
            softmax_inplace(logits_u.data(), pos + 1);
            for (int u = 0; u <= pos; ++u) {
                axpy(logits_u[u], st.layer_v[li][u].data() + off, merged.data() + off, dh);
            }
        }
        Vec o(static_cast<size_t>(d));
        matvec(L.wo, merged.data(), o.data());
        Vec h_attn(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) h_attn[i] = x[i] + o[i];

        Vec n2(static_cast<size_t>(d));
        rmsnorm_row(h_attn.data(), L.ffn_norm, d, n2.data(), &inv);
        Vec pre(static_cast<size_t>(cfg_.ffn_dim));
        matvec(L.w1, n2.data(), pre.data());
        for (double& p : pre) p = silu(p);
        Vec f(static_cast<size_t>(d));
        matvec(L.w2, pre.data(), f.data());
        for (int i = 0; i < d; ++i) x[i] = h_attn[i] + f[i];

        if (stack_on) {
            const auto it = std::find(blayers.begin(), blayers.end(), li);
            if (it != blayers.end()) {
                const int j = static_cast<int>(it - blayers.begin());
                const MultiHeadStackParams& P = stacks_[j];
                MultiHeadStackState out = multihead::empty_state(P);
                if (mode == IntegrationMode::temporal) {
                    multihead::mh_step_forward(P, st.boundary_state[j], x, out, hout, scratch);
                    st.boundary_state[j] = std::move(out);
                } else {
                    const MultiHeadStackState prev_empty = multihead::empty_state(P);
                    const MultiHeadStackState& prev = lw_init ? lw_state : prev_empty;
                    multihead::mh_step_forward(P, prev, x, out, hout, scratch);
                    lw_state = std::move(out);
                    lw_init = true;
                }
                x = hout;
            }
        }
    }

    Vec normed(static_cast<size_t>(d));
    rmsnorm_row(x.data(), final_norm_, d, normed.data(), &inv);
    Vec logits(static_cast<size_t>(cfg_.vocab_size));
    matvec(w_out_, normed.data(), logits.data());
    st.length += 1;
    return logits;
}

std::vector<int> Model::generate(const std::vector<int>& prefix, int max_new, IntegrationMode mode,
                                 int eos_id) const {
    check_tokens(prefix);
    IncrementalState st = begin_sequence(mode);
    Vec logits;
    for (int tok : prefix) logits = decode_step(st, tok, mode);

    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_new) {
        const int next = argmax(logits.data(), cfg_.vocab_size);
        if (next == eos_id) break;
        out.push_back(next);
        if (static_cast<int>(out.size()) >= max_new || st.length >= cfg_.max_seq_len) break;
        logits = decode_step(st, next, mode);
    }
    return out;
}

} // namespace softstack::backbone
