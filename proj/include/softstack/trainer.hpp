#pragma once

// Training loop: autoregressive cross-entropy over the post-separator span
// plus an entropy regularizer on the stack action distributions,
//
//   total = lm + lambda * stack_entropy
//
// with Adam, linear warmup, cosine decay and global-norm gradient clipping.
// Also hosts length-generalization evaluation (greedy decode, token accuracy
// per length bucket) and per-boundary action statistics.

#include "softstack/backbone.hpp"
#include "softstack/tasks.hpp"

#include <iosfwd>
#include <optional>

namespace softstack::trainer {

using backbone::IntegrationMode;
using backbone::Model;
using stack_core::ActionDistribution;

struct TrainConfig {
    int steps = 8000;
    int batch_size = 32;
    double lr = 3e-4;
    int warmup_steps = 500;
    double grad_clip = 1.0;
    double lambda = 0.01;  // stack regularization weight
    uint64_t seed = 0;
    int train_min_len = 1;
    int train_max_len = 40;
    std::vector<std::pair<int, int>> eval_ranges = {{41, 100}};
    int eval_cadence = 500;
    int eval_samples_per_length = 1;
    int eval_length_stride = 1;
    int log_cadence = 50;
    double early_stop_accuracy = -1.0;  // stop once eval aggregate reaches this; <0 disables
    int threads = 0;                    // 0 = hardware concurrency

    void validate() const;
};

struct LossBreakdown {
    double lm = 0.0;
    double stack_entropy = 0.0;  // mean entropy per action distribution
    double total = 0.0;
};

// Mean cross-entropy over masked positions (position t scores tokens[t+1])
// plus lambda times the mean action entropy. Throws when the mask is empty.
LossBreakdown loss(const Mat& logits, const std::vector<int>& tokens,
                   const std::vector<uint8_t>& loss_mask,
                   const std::vector<ActionDistribution>& actions, double lambda);

double action_entropy(const ActionDistribution& a);

// L2 norm of the entropy-term gradient lambda * dH/da over a batch of action
// distributions; linear in lambda (the regularizer's mechanism-level knob).
double entropy_term_grad_norm(const std::vector<ActionDistribution>& actions, double lambda);

struct MetricRecord {
    int step = 0;
    double lm = 0.0;
    double stack_entropy = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    std::optional<double> eval_accuracy;
};

using MetricsLog = std::vector<MetricRecord>;

struct EvalReport {
    std::vector<std::pair<int, double>> per_length;  // (length, mean token accuracy)
    double aggregate = 0.0;
    std::vector<ActionDistribution> per_boundary_actions;
};

class Adam {
public:
    Adam(Model& model, double lr, int warmup, int total_steps, double clip);
    // Applies one update; returns the pre-clip global gradient norm.
    double step(Model& model, backbone::ModelGrads& grads);
    double current_lr() const { return last_lr_; }

private:
    double lr_, clip_;
    int warmup_, total_steps_, t_ = 0;
    double last_lr_ = 0.0;
    std::vector<Vec> m_, v_;
};

// Trains in place; deterministic under a fixed config. Throws on divergence
// (non-finite loss) with a diagnostic message. When log_stream is given,
// metric records are appended to it as JSON lines.
MetricsLog train(Model& model, const tasks::TaskSpec& task, const TrainConfig& cfg,
                 std::ostream* log_stream = nullptr);

// Greedy-decode evaluation over [lo, hi] length ranges; never mutates the
// model. length_stride thins the evaluated lengths (1 = every length).
EvalReport evaluate_length_generalization(const Model& model, const tasks::TaskSpec& task,
                                          const std::vector<std::pair<int, int>>& ranges,
                                          int samples_per_length, uint64_t seed,
                                          IntegrationMode mode, int threads = 0,
                                          int length_stride = 1);

// Mean action distribution per boundary over a batch of encoded sequences.
// Throws when the stack is disabled.
std::vector<ActionDistribution> collect_action_stats(const Model& model,
                                                     const std::vector<std::vector<int>>& sequences,
                                                     IntegrationMode mode);

} // namespace softstack::trainer
