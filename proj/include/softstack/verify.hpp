#pragma once

// Independent verification: a discrete bounded stack (and queue) simulated
// with plain lists, hard-action equivalence fuzzing against the soft kernels,
// central-finite-difference gradient checks, and soft-update invariant
// fuzzing. The oracle arithmetic here deliberately shares no code with
// stack_core.

#include "softstack/stack_core.hpp"

#include <string>
#include <vector>

namespace softstack::verify {

struct DiscreteOp {
    enum Kind { push, pop, noop } kind = noop;
    Vec value;  // width w, used by push
};

// Bounded LIFO list, top at index 0. A push on a full stack drops the bottom
// element; a pop on an empty stack leaves it empty. Reading an inactive slot
// yields the zero vector.
struct DiscreteStack {
    int S = 0, w = 0;
    std::vector<Vec> items;  // items[0] = top

    DiscreteStack(int S_, int w_) : S(S_), w(w_) {}
    void apply(const DiscreteOp& op);
    // Dense S x w view with zero padding, plus the 0/1 activation mask.
    Mat dense() const;
    Vec dense_mask() const;
};

// Bounded FIFO list, front at index 0. Enqueue on a full queue is dropped.
struct DiscreteQueue {
    int S = 0, w = 0;
    std::vector<Vec> items;  // items[0] = front

    DiscreteQueue(int S_, int w_) : S(S_), w(w_) {}
    void apply(const DiscreteOp& op);
    Mat dense() const;
    Vec dense_mask() const;
};

DiscreteStack discrete_simulate(const std::vector<DiscreteOp>& ops, int S, int w);

struct EquivalenceReport {
    int trials = 0;
    double max_value_dev = 0.0;
    double max_mask_dev = 0.0;
    bool pass = false;
    std::string detail;
};

// Random one-hot action sequences run through the soft update and the
// discrete simulation; pass iff element-wise deviation stays below 1e-6.
EquivalenceReport check_hard_action_equivalence(int trials, int max_len, int S, int w, uint64_t seed,
                                                stack_core::StructureMode structure =
                                                    stack_core::StructureMode::stack);

enum class GradScope { stack_core, multihead, backbone_tiny };

struct GradReport {
    struct Group {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Group> groups;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Central finite differences, relative error |a-n| / max(|a|,|n|,1e-8),
// checked for every entry of every parameter group in the scope.
GradReport gradcheck(GradScope scope, double eps, double tol, uint64_t seed);

struct InvariantReport {
    int trials = 0;
    int failures = 0;
    bool pass = false;
    std::string detail;
};

// Random soft updates: mask stays in [0,1], the mask-sum budget identity
// holds, slot max-norms obey the convexity bound, and update/read are
// bit-deterministic on repeated calls.
InvariantReport fuzz_invariants(int trials, uint64_t seed);

} // namespace softstack::verify
