#pragma once

// Single-head differentiable stack.
//
// The stack is a fixed-size list of S value slots (slot 0 = top) plus a
// per-slot activation mask in [0,1]. Each step computes a distribution over
// {push, pop, no-op} from the incoming hidden state, applies the convex
// combination of the three discrete outcomes to both values and mask, and
// reads the result back out through query-over-stack attention (or a plain
// top peek). All operations are pure; explicit backward kernels are provided
// for exact reverse-mode gradients.

#include "softstack/linalg.hpp"

namespace softstack::stack_core {

enum class StructureMode { stack, queue };
enum class ActionMode { free, push_only };
enum class ReadMode { global_content, global_position, top_peek };

struct StackState {
    Mat values;  // S x w, slot 0 = top
    Vec mask;    // S, activation likelihood per slot

    StackState() = default;
    StackState(int S, int w) : values(S, w), mask(static_cast<size_t>(S), 0.0) {}
    int slots() const { return values.rows; }
    int width() const { return values.cols; }
};

struct ActionDistribution {
    double push = 0.0;
    double pop = 0.0;
    double noop = 0.0;
};

struct StackParams {
    Mat action_matrix;  // 3 x w
    Vec read_query;     // length w (content mode) or S (position mode)
    StructureMode structure_mode = StructureMode::stack;
    ActionMode action_mode = ActionMode::free;
    ReadMode read_mode = ReadMode::global_content;
};

// All-zero state with S slots of width w. Rejects degenerate shapes.
StackState empty(int S, int w);

// Softmax(A h); push_only forces (1,0,0).
ActionDistribution compute_actions(const double* h, int w, const StackParams& params);
ActionDistribution compute_actions(const Vec& h, const StackParams& params);

// One soft update. Pure: the input state is untouched.
StackState update(const StackState& state, const Vec& h, const ActionDistribution& a,
                  const StackParams& params);

// Read-out of the current state (length w).
Vec read(const StackState& state, const StackParams& params);

struct StepResult {
    StackState state;
    Vec read_out;
    ActionDistribution actions;
};

// actions = compute_actions(h); state' = update(state, h, actions);
// read_out = read(state')  -- the read sees the post-update stack.
StepResult step(const StackState& state, const Vec& h, const StackParams& params);

// ---------------------------------------------------------------------------
// Unchecked kernels. The public functions above validate and then call these;
// the model forward/backward passes call them directly on preallocated
// storage. out_* may not alias the inputs.
// ---------------------------------------------------------------------------
namespace detail {

void update_kernel(const double* values, const double* mask, const double* h,
                   const ActionDistribution& a, int S, int w, StructureMode mode,
                   double* out_values, double* out_mask);

// read_att must hold S doubles; it receives the attention weights (content and
// position modes) and is left untouched in top_peek mode.
void read_kernel(const double* values, const double* mask, const StackParams& params,
                 int S, int w, double* out, double* read_att);

void action_logits(const Mat& action_matrix, const double* h, double* logits3);

// Gradients of update_kernel. Accumulates into g_values/g_mask/g_h/g_a given
// the upstream gradients of the outputs. Inputs are the same tensors the
// forward pass saw.
void update_backward(const double* values, const double* mask, const double* h,
                     const ActionDistribution& a, int S, int w, StructureMode mode,
                     const double* g_out_values, const double* g_out_mask,
                     double* g_values, double* g_mask, double* g_h, double g_a[3]);

// Gradients of read_kernel. read_att is the cached attention from the forward
// pass. g_query accumulates into a buffer sized like params.read_query.
void read_backward(const double* values, const double* mask, const StackParams& params,
                   int S, int w, const double* read_att, const double* g_out,
                   double* g_values, double* g_mask, double* g_query);

// Gradients of compute_actions: given g_a (dL/da), accumulate dL/dA and dL/dh.
// a must be the forward output. No-op for push_only.
void actions_backward(const Mat& action_matrix, const double* h, const ActionDistribution& a,
                      const StackParams& params, const double g_a[3],
                      Mat& g_action_matrix, double* g_h);

} // namespace detail

} // namespace softstack::stack_core
