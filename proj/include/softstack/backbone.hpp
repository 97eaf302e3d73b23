#pragma once

// Decoder-only transformer with multi-head stack modules at inter-layer
// boundaries. Two integration semantics are supported:
//
//   - temporal: every boundary owns one stack state per sequence, updated
//     token-by-token left to right (a recurrence along time at fixed depth);
//   - layerwise: every token owns one stack state, carried across boundaries
//     from shallow to deep, so all tokens process in parallel.
//
// Forward and backward passes are written out explicitly; the backward pass
// is verified against finite differences by the verify module.

#include "softstack/multihead_stack.hpp"

#include <string>
#include <vector>

namespace softstack::backbone {

using multihead::MhParamGrads;
using multihead::MhStepCache;
using multihead::MultiHeadStackParams;
using multihead::MultiHeadStackState;

enum class IntegrationMode { layerwise, temporal };

struct StackConfig {
    bool enabled = true;
    int S = 24;
    int H = 4;
    int d_s = 8;
    stack_core::ReadMode read_mode = stack_core::ReadMode::global_content;
    stack_core::StructureMode structure_mode = stack_core::StructureMode::stack;
    stack_core::ActionMode action_mode = stack_core::ActionMode::free;
    // "between": one module after every layer except the last (L-1 boundaries);
    // "all": after every layer.
    std::string placement = "between";
};

struct ModelConfig {
    int n_layers = 5;
    int d = 64;
    int n_attn_heads = 4;
    int ffn_dim = 256;
    int vocab_size = 0;
    int max_seq_len = 512;
    double rope_theta = 100000.0;
    StackConfig stack;
    IntegrationMode integration = IntegrationMode::temporal;

    void validate() const;
    int head_dim() const { return d / n_attn_heads; }
    std::vector<int> boundary_layers() const;  // layers followed by a stack module
};

struct LayerParams {
    Vec attn_norm;  // d
    Mat wq, wk, wv, wo;  // d x d
    Vec ffn_norm;   // d
    Mat w1;         // ffn x d
    Mat w2;         // d x ffn
};

// Per-sequence forward cache; `training` controls whether the intermediate
// tensors needed only by backward are retained.
struct LayerCache {
    Mat x_in;            // T x d input to the layer
    Mat n1;              // T x d
    Vec inv_rms1;        // T
    Mat q, k, v;         // T x d (q, k post-rope)
    std::vector<Mat> att;  // per attention head, T x T row-causal probabilities
    Mat att_merged;      // T x d
    Mat h_after_attn;    // T x d
    Mat n2;              // T x d
    Vec inv_rms2;        // T
    Mat ffn_pre;         // T x ffn
    Mat ffn_act;         // T x ffn
};

struct ModelCache {
    int T = 0;
    std::vector<LayerCache> layers;
    // steps[j][t] / states[j][t]: boundary j (position in boundary list), token t.
    std::vector<std::vector<MhStepCache>> steps;
    std::vector<std::vector<MultiHeadStackState>> states;
    Mat final_in;        // T x d input to final norm
    Mat final_normed;    // T x d
    Vec final_inv_rms;   // T
};

struct ModelGrads {
    Mat embedding;
    std::vector<LayerParams> layers;
    std::vector<MhParamGrads> stacks;
    Vec final_norm;
    Mat w_out;
    void zero();
    void add(const ModelGrads& other);
};

struct ParamRef {
    std::string name;
    double* data;
    size_t n;
};

struct ParamCount {
    size_t total = 0;
    size_t backbone = 0;
    size_t stack = 0;
};

class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }

    // Full-sequence forward; returns T x vocab logits. cache may be null for
    // pure inference.
    Mat forward(const std::vector<int>& tokens, IntegrationMode mode, ModelCache* cache) const;
    Mat forward(const std::vector<int>& tokens) const;

    // Reverse pass matching a cached forward. g_logits is dL/dlogits.
    // entropy_coeff, when nonzero, adds entropy-regularizer gradients
    // (coefficient = lambda / number of recorded action distributions).
    void backward(const std::vector<int>& tokens, IntegrationMode mode, const ModelCache& cache,
                  const Mat& g_logits, ModelGrads& grads, double entropy_coeff) const;

    ModelGrads make_grads() const;
    ParamCount count_params() const;

    // Parameter enumeration in checkpoint order.
    std::vector<ParamRef> param_refs();
    std::vector<ParamRef> param_refs_const() const;
    std::vector<ParamRef> grad_refs(ModelGrads& grads) const;

    const std::vector<MultiHeadStackParams>& stacks() const { return stacks_; }
    std::vector<MultiHeadStackParams>& mutable_stacks() { return stacks_; }

    // ----- incremental decoding -----
    // Per-position projections are computed once when the position is fed
    // (identical to the full forward, which the parity test pins down) and
    // reused for every later step.
    struct IncrementalState {
        std::vector<std::vector<Vec>> layer_k, layer_v;    // [layer][pos]
        std::vector<MultiHeadStackState> boundary_state;   // temporal carry
        int length = 0;
    };

    IncrementalState begin_sequence(IntegrationMode mode) const;
    // Feed one token; returns logits for the next position.
    Vec decode_step(IncrementalState& st, int token, IntegrationMode mode) const;
    // Greedy decode: feeds `prefix`, then emits up to max_new tokens, stopping
    // at eos_id (the eos token is not included in the result).
    std::vector<int> generate(const std::vector<int>& prefix, int max_new, IntegrationMode mode,
                              int eos_id) const;

private:
    ModelConfig cfg_;
    Mat embedding_;  // vocab x d
    std::vector<LayerParams> layers_;
    std::vector<MultiHeadStackParams> stacks_;  // one per boundary
    Vec final_norm_;
    Mat w_out_;  // vocab x d

    void layer_forward(int li, Mat& x, ModelCache* cache) const;
    void layer_backward(int li, const LayerCache& lc, Mat& g_x, ModelGrads& grads) const;
    void apply_boundary(int j, Mat& x, IntegrationMode mode, ModelCache* cache,
                        std::vector<MultiHeadStackState>& lw_chain) const;
    void boundary_backward(int j, IntegrationMode mode, const ModelCache& cache, Mat& g_x,
                           ModelGrads& grads, double entropy_coeff,
                           std::vector<MultiHeadStackState>& layerwise_carry) const;
    void check_tokens(const std::vector<int>& tokens) const;
};

} // namespace softstack::backbone
