#include "softstack/trainer.hpp"

#include "softstack/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace softstack::trainer {

namespace {

constexpr double kPi = 3.14159265358979323846;

double ce_row(const double* logits, int vocab, int label, double* probs) {
    std::copy(logits, logits + vocab, probs);
    softmax_inplace(probs, vocab);
    return -std::log(std::max(probs[label], 1e-300));
}

struct SeqWork {
    tasks::Encoded enc;
    backbone::ModelCache cache;
    Mat logits;
    double ce_sum = 0.0;
    long masked = 0;
    double entropy_sum = 0.0;
    long action_count = 0;
};

void count_entropy(const backbone::ModelCache& cache, double& entropy_sum, long& action_count) {
    for (const auto& boundary : cache.steps) {
        for (const auto& step : boundary) {
            for (const auto& a : step.actions) {
                entropy_sum += action_entropy(a);
                action_count += 1;
            }
        }
    }
}

std::string json_record(const MetricRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"step\":" << r.step << ",\"lm\":" << r.lm << ",\"stack_entropy\":" << r.stack_entropy
       << ",\"total\":" << r.total << ",\"grad_norm\":" << r.grad_norm << ",\"lr\":" << r.lr;
    if (r.eval_accuracy) os << ",\"eval_accuracy\":" << *r.eval_accuracy;
    os << "}";
    return os.str();
}

} // namespace

void TrainConfig::validate() const {
    if (steps < 1 || batch_size < 1) throw std::invalid_argument("steps and batch_size must be positive");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    if (train_min_len < 1 || train_max_len < train_min_len) {
        throw std::invalid_argument("invalid train length range");
    }
    if (eval_cadence < 1 || log_cadence < 1) throw std::invalid_argument("cadences must be positive");
}

double action_entropy(const ActionDistribution& a) {
    double h = 0.0;
    for (double p : {a.push, a.pop, a.noop}) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

double entropy_term_grad_norm(const std::vector<ActionDistribution>& actions, double lambda) {
    double sq = 0.0;
    for (const auto& a : actions) {
        for (double p : {a.push, a.pop, a.noop}) {
            const double g = lambda * -(std::log(std::max(p, 1e-300)) + 1.0);
            sq += g * g;
        }
    }
    return std::sqrt(sq);
}

LossBreakdown loss(const Mat& logits, const std::vector<int>& tokens,
                   const std::vector<uint8_t>& loss_mask,
                   const std::vector<ActionDistribution>& actions, double lambda) {
    if (logits.rows != static_cast<int>(tokens.size()) || tokens.size() != loss_mask.size()) {
        throw std::invalid_argument("loss: inconsistent shapes");
    }
    Vec probs(static_cast<size_t>(logits.cols));
    double ce = 0.0;
    long n = 0;
    for (int t = 0; t + 1 < static_cast<int>(tokens.size()); ++t) {
        if (!loss_mask[static_cast<size_t>(t)]) continue;
        ce += ce_row(logits.row(t), logits.cols, tokens[static_cast<size_t>(t) + 1], probs.data());
        n += 1;
    }
    if (n == 0) throw std::invalid_argument("loss: empty mask");
    LossBreakdown out;
    out.lm = ce / static_cast<double>(n);
    double ent = 0.0;
    for (const auto& a : actions) ent += action_entropy(a);
    out.stack_entropy = actions.empty() ? 0.0 : ent / static_cast<double>(actions.size());
    out.total = out.lm + lambda * out.stack_entropy;
    return out;
}

Adam::Adam(Model& model, double lr, int warmup, int total_steps, double clip)
    : lr_(lr), clip_(clip), warmup_(warmup), total_steps_(total_steps) {
    for (const auto& ref : model.param_refs()) {
        m_.emplace_back(ref.n, 0.0);
        v_.emplace_back(ref.n, 0.0);
    }
}

double Adam::step(Model& model, backbone::ModelGrads& grads) {
    const auto prefs = model.param_refs();
    const auto grefs = model.grad_refs(grads);

    double sq = 0.0;
    for (const auto& g : grefs) {
        for (size_t i = 0; i < g.n; ++i) sq += g.data[i] * g.data[i];
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;

    t_ += 1;
    double lr = lr_;
    if (warmup_ > 0 && t_ <= warmup_) {
        lr = lr_ * static_cast<double>(t_) / warmup_;
    } else if (total_steps_ > warmup_) {
        const double frac = static_cast<double>(t_ - warmup_) / (total_steps_ - warmup_);
        lr = lr_ * 0.5 * (1.0 + std::cos(kPi * std::min(frac, 1.0)));
    }
    last_lr_ = lr;

    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);
    for (size_t k = 0; k < prefs.size(); ++k) {
        double* p = prefs[k].data;
        const double* g = grefs[k].data;
        double* m = m_[k].data();
        double* v = v_[k].data();
        for (size_t i = 0; i < prefs[k].n; ++i) {
            const double gi = g[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
    return norm;
}

MetricsLog train(Model& model, const tasks::TaskSpec& task, const TrainConfig& cfg,
                 std::ostream* log_stream) {
    cfg.validate();
    const tasks::Vocabulary vocab = tasks::Vocabulary::for_task(task);
    if (vocab.size() != model.config().vocab_size) {
        throw std::invalid_argument("model vocab_size does not match task vocabulary");
    }
    const IntegrationMode mode = model.config().integration;
    const bool stack_on = model.config().stack.enabled;

    Rng rng(cfg.seed);
    Adam opt(model, cfg.lr, cfg.warmup_steps, cfg.steps, cfg.grad_clip);

    backbone::ModelGrads total_grads = model.make_grads();
    std::vector<backbone::ModelGrads> seq_grads;
    for (int i = 0; i < cfg.batch_size; ++i) seq_grads.push_back(model.make_grads());
    std::vector<SeqWork> work(static_cast<size_t>(cfg.batch_size));

    MetricsLog log;
    auto emit = [&](const MetricRecord& r) {
        log.push_back(r);
        if (log_stream) (*log_stream) << json_record(r) << "\n" << std::flush;
    };

    for (int step = 1; step <= cfg.steps; ++step) {
        auto samples = tasks::batch(task, cfg.train_min_len, cfg.train_max_len, cfg.batch_size, rng);
        for (int i = 0; i < cfg.batch_size; ++i) {
            work[static_cast<size_t>(i)].enc = tasks::encode(samples[static_cast<size_t>(i)], vocab);
        }

        parallel_for(cfg.batch_size, cfg.threads, [&](int i) {
            SeqWork& w = work[static_cast<size_t>(i)];
            w.logits = model.forward(w.enc.tokens, mode, &w.cache);
            Vec probs(static_cast<size_t>(w.logits.cols));
            w.ce_sum = 0.0;
            w.masked = 0;
            for (int t = 0; t + 1 < static_cast<int>(w.enc.tokens.size()); ++t) {
                if (!w.enc.loss_mask[static_cast<size_t>(t)]) continue;
                w.ce_sum += ce_row(w.logits.row(t), w.logits.cols,
                                   w.enc.tokens[static_cast<size_t>(t) + 1], probs.data());
                w.masked += 1;
            }
            w.entropy_sum = 0.0;
            w.action_count = 0;
            count_entropy(w.cache, w.entropy_sum, w.action_count);
        });

        double ce = 0.0, ent = 0.0;
        long masked = 0, n_actions = 0;
        for (const auto& w : work) {
            ce += w.ce_sum;
            ent += w.entropy_sum;
            masked += w.masked;
            n_actions += w.action_count;
        }
        const double lm = ce / static_cast<double>(masked);
        const double mean_entropy = n_actions > 0 ? ent / static_cast<double>(n_actions) : 0.0;
        const double total = lm + cfg.lambda * mean_entropy;
        if (!std::isfinite(total)) {
            std::ostringstream os;
            os << "training diverged at step " << step << " (lm=" << lm
               << ", stack_entropy=" << mean_entropy << ")";
            throw std::runtime_error(os.str());
        }

        const double entropy_coeff =
            (stack_on && cfg.lambda > 0.0 && n_actions > 0) ? cfg.lambda / static_cast<double>(n_actions) : 0.0;
        const double inv_masked = 1.0 / static_cast<double>(masked);

        parallel_for(cfg.batch_size, cfg.threads, [&](int i) {
            SeqWork& w = work[static_cast<size_t>(i)];
            seq_grads[static_cast<size_t>(i)].zero();
            Mat g_logits(w.logits.rows, w.logits.cols);
            Vec probs(static_cast<size_t>(w.logits.cols));
            for (int t = 0; t + 1 < static_cast<int>(w.enc.tokens.size()); ++t) {
                if (!w.enc.loss_mask[static_cast<size_t>(t)]) continue;
                std::copy(w.logits.row(t), w.logits.row(t) + w.logits.cols, probs.begin());
                softmax_inplace(probs.data(), w.logits.cols);
                double* gr = g_logits.row(t);
                for (int c = 0; c < w.logits.cols; ++c) gr[c] = probs[static_cast<size_t>(c)] * inv_masked;
                gr[w.enc.tokens[static_cast<size_t>(t) + 1]] -= inv_masked;
            }
            model.backward(w.enc.tokens, mode, w.cache, g_logits, seq_grads[static_cast<size_t>(i)],
                           entropy_coeff);
        });

        total_grads.zero();
        for (const auto& g : seq_grads) total_grads.add(g);  // fixed order: deterministic
        const double grad_norm = opt.step(model, total_grads);

        const bool do_eval = (step % cfg.eval_cadence == 0) || step == cfg.steps;
        const bool do_log = do_eval || (step % cfg.log_cadence == 0) || step == 1;
        if (!do_log) continue;

        MetricRecord rec;
        rec.step = step;
        rec.lm = lm;
        rec.stack_entropy = mean_entropy;
        rec.total = total;
        rec.grad_norm = grad_norm;
        rec.lr = opt.current_lr();
        if (do_eval) {
            const EvalReport er = evaluate_length_generalization(
                model, task, cfg.eval_ranges, cfg.eval_samples_per_length,
                cfg.seed * 7919 + static_cast<uint64_t>(step), mode, cfg.threads,
                cfg.eval_length_stride);
            rec.eval_accuracy = er.aggregate;
        }
        emit(rec);
        if (rec.eval_accuracy && cfg.early_stop_accuracy > 0.0 &&
            *rec.eval_accuracy >= cfg.early_stop_accuracy) {
            break;
        }
    }
    return log;
}

EvalReport evaluate_length_generalization(const Model& model, const tasks::TaskSpec& task,
                                          const std::vector<std::pair<int, int>>& ranges,
                                          int samples_per_length, uint64_t seed,
                                          IntegrationMode mode, int threads, int length_stride) {
    if (samples_per_length < 1) throw std::invalid_argument("samples_per_length must be positive");
    if (length_stride < 1) length_stride = 1;
    const tasks::Vocabulary vocab = tasks::Vocabulary::for_task(task);
    if (vocab.size() != model.config().vocab_size) {
        throw std::invalid_argument("model vocab_size does not match task vocabulary");
    }

    struct Job {
        int length;
        uint64_t salt;
        double acc = 0.0;
    };
    std::vector<Job> jobs;
    uint64_t salt = 0;
    for (const auto& [lo, hi] : ranges) {
        if (lo < 1 || hi < lo) throw std::invalid_argument("invalid eval length range");
        for (int len = lo; len <= hi; len += length_stride) {
            if (!task.supports_length(len)) continue;
            for (int k = 0; k < samples_per_length; ++k) jobs.push_back({len, salt++, 0.0});
        }
    }
    if (jobs.empty()) throw std::invalid_argument("eval: no usable lengths in ranges");

    Rng base(seed);
    parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
        Job& job = jobs[static_cast<size_t>(i)];
        Rng rng = Rng(seed).split(job.salt);
        const tasks::Sample s = tasks::generate(task, job.length, rng);
        std::vector<int> prefix;
        prefix.push_back(tasks::Vocabulary::bos);
        for (const auto& sym : s.input) prefix.push_back(vocab.id(sym));
        prefix.push_back(tasks::Vocabulary::sep);
        std::vector<int> target;
        for (const auto& sym : s.target) target.push_back(vocab.id(sym));
        const std::vector<int> pred = model.generate(prefix, static_cast<int>(target.size()), mode,
                                                     tasks::Vocabulary::eos);
        job.acc = tasks::token_accuracy(pred, target);
    });

    EvalReport report;
    std::map<int, std::pair<double, int>> by_len;
    double sum = 0.0;
    for (const auto& job : jobs) {
        by_len[job.length].first += job.acc;
        by_len[job.length].second += 1;
        sum += job.acc;
    }
    for (const auto& [len, acc] : by_len) {
        report.per_length.emplace_back(len, acc.first / acc.second);
    }
    report.aggregate = sum / static_cast<double>(jobs.size());

    if (model.config().stack.enabled) {
        Rng rng(seed ^ 0xabcdef);
        const auto stats_samples = tasks::batch(task, 1, std::max(1, ranges.front().first), 8, rng);
        std::vector<std::vector<int>> seqs;
        for (const auto& s : stats_samples) seqs.push_back(tasks::encode(s, vocab).tokens);
        report.per_boundary_actions = collect_action_stats(model, seqs, mode);
    }
    return report;
}

std::vector<ActionDistribution> collect_action_stats(const Model& model,
                                                     const std::vector<std::vector<int>>& sequences,
                                                     IntegrationMode mode) {
    if (!model.config().stack.enabled) {
        throw std::invalid_argument("collect_action_stats: stack is disabled");
    }
    if (sequences.empty()) throw std::invalid_argument("collect_action_stats: empty batch");
    const size_t nb = model.config().boundary_layers().size();
    std::vector<ActionDistribution> mean(nb);
    std::vector<long> counts(nb, 0);
    for (const auto& tokens : sequences) {
        backbone::ModelCache cache;
        model.forward(tokens, mode, &cache);
        for (size_t j = 0; j < cache.steps.size(); ++j) {
            for (const auto& step : cache.steps[j]) {
                for (const auto& a : step.actions) {
                    mean[j].push += a.push;
                    mean[j].pop += a.pop;
                    mean[j].noop += a.noop;
                    counts[j] += 1;
                }
            }
        }
    }
    for (size_t j = 0; j < nb; ++j) {
        if (counts[j] > 0) {
            mean[j].push /= static_cast<double>(counts[j]);
            mean[j].pop /= static_cast<double>(counts[j]);
            mean[j].noop /= static_cast<double>(counts[j]);
        }
    }
    return mean;
}

} // namespace softstack::trainer
