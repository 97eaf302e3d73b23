#pragma once

// Multi-head low-rank stack module: H independent small stacks fed from a
// down-projected hidden state, with the concatenated read-outs up-projected
// back and added through a gated residual:
//
//   h' = g_h * h + W_up * Concat(R_1; ...; R_H)
//
// Initialization is identity: W_up = 0 and g_h = 1, so an untrained module
// passes the backbone through untouched.

#include "softstack/stack_core.hpp"

#include <vector>

namespace softstack::multihead {

using stack_core::ActionDistribution;
using stack_core::StackParams;
using stack_core::StackState;

struct MultiHeadStackParams {
    int d = 0;    // backbone width
    int H = 0;    // number of heads
    int d_s = 0;  // per-head stack width
    int S = 0;    // slots per head
    Mat w_down;   // (H*d_s) x d
    Mat w_up;     // d x (H*d_s)
    double gate = 1.0;
    std::vector<StackParams> heads;  // H entries, each with w = d_s
};

struct MultiHeadStackState {
    std::vector<StackState> per_head;
    int heads() const { return static_cast<int>(per_head.size()); }
};

// Fresh all-empty state for every head.
MultiHeadStackState empty_state(const MultiHeadStackParams& params);

// reshape(W_down * h) into H chunks of length d_s.
std::vector<Vec> split_heads(const Vec& h, const MultiHeadStackParams& params);

// Identity-at-init parameters: W_down / action matrices / read queries small
// random, W_up zero, gate 1. Deterministic in the rng state.
MultiHeadStackParams init_params(int d, int H, int d_s, int S, Rng& rng,
                                 stack_core::StructureMode structure = stack_core::StructureMode::stack,
                                 stack_core::ActionMode action = stack_core::ActionMode::free,
                                 stack_core::ReadMode read = stack_core::ReadMode::global_content);

struct MhStepResult {
    MultiHeadStackState state;
    Vec h_out;                              // d
    std::vector<ActionDistribution> actions;  // H
};

MhStepResult mh_step(const MultiHeadStackState& state, const Vec& h,
                     const MultiHeadStackParams& params);

// Trainable scalar count of the module (projections + gate + per-head params).
size_t param_count(const MultiHeadStackParams& params);

// ---------------------------------------------------------------------------
// Forward/backward kernels used by the backbone. The cache stores everything
// the backward pass needs for one step.
// ---------------------------------------------------------------------------

struct MhStepCache {
    Vec h_in;        // d
    Vec down;        // H*d_s (head chunks, contiguous)
    Vec reads;       // H*d_s (concatenated read-outs)
    Mat read_att;    // H x S attention weights (unused rows for top_peek)
    std::vector<ActionDistribution> actions;  // H
};

struct MhParamGrads {
    Mat g_w_down;
    Mat g_w_up;
    double g_gate = 0.0;
    std::vector<Mat> g_action;  // H, each 3 x d_s
    std::vector<Vec> g_query;   // H
};

MhParamGrads make_grads(const MultiHeadStackParams& params);

// Forward one step; writes the post-step state into `out` (which must have the
// right shape, e.g. a trajectory slot) and fills the cache.
void mh_step_forward(const MultiHeadStackParams& params, const MultiHeadStackState& prev,
                     const Vec& h, MultiHeadStackState& out, Vec& h_out, MhStepCache& cache);

// Backward one step. g_h_out is dL/dh'; g_state_out is dL/d(post state) from
// the successor step in the chain (may be null when the step is last).
// Accumulates dL/dh into g_h_in, dL/d(prev state) into g_state_prev, and
// parameter grads into grads. g_a_extra, when non-null, is an additional
// dL/da term per head (entropy regularizer), length 3*H.
void mh_step_backward(const MultiHeadStackParams& params, const MultiHeadStackState& prev,
                      const MultiHeadStackState& post, const MhStepCache& cache,
                      const Vec& g_h_out, const MultiHeadStackState* g_state_out,
                      const double* g_a_extra,
                      Vec& g_h_in, MultiHeadStackState& g_state_prev, MhParamGrads& grads);

} // namespace softstack::multihead
