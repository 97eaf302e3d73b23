#include "softstack/cli.hpp"

#include "softstack/checkpoint.hpp"
#include "softstack/config.hpp"
#include "softstack/tasks.hpp"
#include "softstack/trainer.hpp"
#include "softstack/verify.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace softstack::cli {

namespace fs = std::filesystem;

namespace {

int env_threads() {
    if (const char* v = std::getenv("SOFTSTACK_THREADS")) {
        const int t = std::atoi(v);
        if (t > 0) return t;
    }
    return 0;
}

std::string join_symbols(const std::vector<std::string>& syms) {
    std::string out;
    for (size_t i = 0; i < syms.size(); ++i) {
        if (i) out += " ";
        out += syms[i];
    }
    return out;
}

void write_eval_csv(const std::string& path, const trainer::EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "length,accuracy\n";
    for (const auto& [len, acc] : report.per_length) os << len << "," << acc << "\n";
    os << "aggregate," << report.aggregate << "\n";
}

void write_actions_csv(const std::string& path,
                       const std::vector<stack_core::ActionDistribution>& stats) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.precision(12);
    os << "boundary,push,pop,noop\n";
    for (size_t j = 0; j < stats.size(); ++j) {
        os << j << "," << stats[j].push << "," << stats[j].pop << "," << stats[j].noop << "\n";
    }
}

int cmd_train(const std::string& config_path, const std::vector<uint64_t>& seed_override,
              const std::string& out_override, const std::string& mode_override) {
    config::RunConfig cfg = config::load_file(config_path);
    tasks::get_task(cfg.task);  // validates the task name
    if (!seed_override.empty()) cfg.seeds = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!mode_override.empty()) cfg.model.integration = config::integration_from_string(mode_override);
    if (cfg.train.threads == 0) cfg.train.threads = env_threads();

    const tasks::TaskSpec& task = tasks::get_task(cfg.task);
    const tasks::Vocabulary vocab = tasks::Vocabulary::for_task(task);
    cfg.model.vocab_size = vocab.size();
    cfg.model.validate();

    fs::create_directories(cfg.out_dir);
    for (uint64_t seed : cfg.seeds) {
        config::RunConfig run_cfg = cfg;
        run_cfg.train.seed = seed;
        run_cfg.seeds = {seed};
        const fs::path run_dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
        fs::create_directories(run_dir);
        config::save_file((run_dir / "config.ini").string(), run_cfg);

        backbone::Model model(run_cfg.model, seed);
        std::ofstream metrics((run_dir / "metrics.jsonl").string());
        std::cout << "[train] task=" << cfg.task << " seed=" << seed
                  << " params=" << model.count_params().total << "\n";
        const auto t0 = std::chrono::steady_clock::now();
        const trainer::MetricsLog log = trainer::train(model, task, run_cfg.train, &metrics);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        checkpoint::save((run_dir / "model.ckpt").string(), run_cfg, model);

        const trainer::EvalReport report = trainer::evaluate_length_generalization(
            model, task, run_cfg.train.eval_ranges, run_cfg.train.eval_samples_per_length,
            seed + 1, run_cfg.model.integration, run_cfg.train.threads,
            run_cfg.train.eval_length_stride);
        write_eval_csv((run_dir / "eval.csv").string(), report);
        if (run_cfg.model.stack.enabled) {
            write_actions_csv((run_dir / "actions.csv").string(), report.per_boundary_actions);
        }
        std::cout << "[train] seed=" << seed << " steps=" << (log.empty() ? 0 : log.back().step)
                  << " final_total=" << (log.empty() ? 0.0 : log.back().total)
                  << " eval=" << report.aggregate << " wall=" << secs << "s\n";
    }
    return 0;
}

int cmd_eval(const std::vector<std::string>& ckpts, const std::string& lengths, int samples,
             int stride, const std::string& out_dir, const std::string& mode_override,
             uint64_t seed) {
    const auto ranges = parse_length_ranges(lengths);
    if (ranges.empty()) {
        std::cerr << "error: empty length list\n";
        return 2;
    }
    if (!out_dir.empty()) fs::create_directories(out_dir);

    double best = -1.0;
    std::string best_ckpt;
    int index = 0;
    for (const auto& path : ckpts) {
        checkpoint::Loaded loaded = checkpoint::load(path);
        const tasks::TaskSpec& task = tasks::get_task(loaded.cfg.task);
        const backbone::IntegrationMode mode = mode_override.empty()
                                                   ? loaded.cfg.model.integration
                                                   : config::integration_from_string(mode_override);
        const trainer::EvalReport report = trainer::evaluate_length_generalization(
            *loaded.model, task, ranges, samples, seed, mode, env_threads(), stride);
        std::cout << "[eval] " << path << " task=" << loaded.cfg.task
                  << " aggregate=" << report.aggregate << "\n";
        if (!out_dir.empty()) {
            const std::string base = fs::path(path).stem().string();
            write_eval_csv((fs::path(out_dir) / (base + "_" + std::to_string(index) + "_eval.csv")).string(), report);
        }
        ++index;
        if (report.aggregate > best) {
            best = report.aggregate;
            best_ckpt = path;
        }
    }
    std::cout << "[eval] best " << best_ckpt << " aggregate=" << best << "\n";
    if (!out_dir.empty()) {
        std::ofstream os((fs::path(out_dir) / "best.txt").string());
        os << best_ckpt << " " << best << "\n";
    }
    return 0;
}

int cmd_gen_data(const std::string& task_name, int n, int min_len, int max_len, uint64_t seed,
                 const std::string& out_path) {
    const tasks::TaskSpec& task = tasks::get_task(task_name);
    Rng rng(seed);
    const auto samples = tasks::batch(task, min_len, max_len, n, rng);

    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) throw std::runtime_error("cannot write " + out_path);
        os = &file;
    }
    for (const auto& s : samples) {
        (*os) << "{\"task\":\"" << task.name << "\",\"input\":\"" << join_symbols(s.input)
              << "\",\"target\":\"" << join_symbols(s.target) << "\",\"length\":" << s.length
              << "}\n";
    }
    return 0;
}

int cmd_verify(const std::string& suite, bool json) {
    bool all_pass = true;
    std::ostringstream js;
    js << "{";

    const bool run_oracle = suite == "oracle" || suite == "all";
    const bool run_grad = suite == "grad" || suite == "all";
    const bool run_inv = suite == "invariants" || suite == "all";
    if (!run_oracle && !run_grad && !run_inv) {
        std::cerr << "error: unknown suite '" << suite << "' (oracle|grad|invariants|all)\n";
        return 2;
    }

    bool first = true;
    auto emit = [&](const std::string& name, bool pass, const std::string& detail) {
        all_pass = all_pass && pass;
        if (!first) js << ",";
        first = false;
        js << "\"" << name << "\":{\"pass\":" << (pass ? "true" : "false") << ",\"detail\":\""
           << detail << "\"}";
        if (!json) {
            std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
        }
    };

    if (run_oracle) {
        const auto stack_rep = verify::check_hard_action_equivalence(1000, 100, 8, 4, 12345);
        emit("oracle.stack", stack_rep.pass, stack_rep.detail);
        const auto queue_rep = verify::check_hard_action_equivalence(
            1000, 100, 8, 4, 54321, stack_core::StructureMode::queue);
        emit("oracle.queue", queue_rep.pass, queue_rep.detail);
    }
    if (run_grad) {
        for (const auto& [scope, name] :
             {std::pair{verify::GradScope::stack_core, "grad.stack_core"},
              std::pair{verify::GradScope::multihead, "grad.multihead"},
              std::pair{verify::GradScope::backbone_tiny, "grad.backbone_tiny"}}) {
            const auto rep = verify::gradcheck(scope, 1e-5, 1e-4, 99);
            std::ostringstream det;
            det << "max rel err " << rep.max_rel_err << " (tol " << rep.tolerance << ")";
            emit(name, rep.pass, det.str());
        }
    }
    if (run_inv) {
        const auto rep = verify::fuzz_invariants(10000, 777);
        std::ostringstream det;
        det << rep.failures << "/" << rep.trials << " failures";
        emit("invariants", rep.pass, det.str());
    }

    js << ",\"pass\":" << (all_pass ? "true" : "false") << "}";
    if (json) std::cout << js.str() << "\n";
    return all_pass ? 0 : 1;
}

int cmd_inspect_actions(const std::string& ckpt_path, const std::string& task_override, int n,
                        uint64_t seed, const std::string& out_path, int min_len, int max_len) {
    checkpoint::Loaded loaded = checkpoint::load(ckpt_path);
    if (!loaded.cfg.model.stack.enabled) {
        std::cerr << "error: checkpoint has the stack disabled; no actions to inspect\n";
        return 2;
    }
    const std::string task_name = task_override.empty() ? loaded.cfg.task : task_override;
    const tasks::TaskSpec& task = tasks::get_task(task_name);
    const tasks::Vocabulary vocab = tasks::Vocabulary::for_task(task);
    if (vocab.size() != loaded.cfg.model.vocab_size) {
        std::cerr << "error: task vocabulary does not match checkpoint\n";
        return 2;
    }
    if (min_len <= 0) min_len = loaded.cfg.train.train_min_len;
    if (max_len <= 0) max_len = loaded.cfg.train.train_max_len;

    Rng rng(seed);
    const auto samples = tasks::batch(task, min_len, max_len, n, rng);
    std::vector<std::vector<int>> seqs;
    for (const auto& s : samples) seqs.push_back(tasks::encode(s, vocab).tokens);
    const auto stats =
        trainer::collect_action_stats(*loaded.model, seqs, loaded.cfg.model.integration);

    if (out_path.empty()) {
        std::cout << "boundary,push,pop,noop\n";
        for (size_t j = 0; j < stats.size(); ++j) {
            std::cout << j << "," << stats[j].push << "," << stats[j].pop << "," << stats[j].noop
                      << "\n";
        }
    } else {
        write_actions_csv(out_path, stats);
        std::cout << "[inspect-actions] wrote " << out_path << " (" << stats.size()
                  << " boundaries, " << n << " samples)\n";
    }
    return 0;
}

} // namespace

std::vector<std::pair<int, int>> parse_length_ranges(const std::string& spec) {
    std::vector<std::pair<int, int>> out;
    std::istringstream is(spec);
    std::string part;
    while (std::getline(is, part, ',')) {
        if (part.empty()) continue;
        const size_t dash = part.find('-');
        if (dash == std::string::npos) {
            out.emplace_back(std::stoi(part), std::stoi(part));
        } else {
            out.emplace_back(std::stoi(part.substr(0, dash)), std::stoi(part.substr(dash + 1)));
        }
    }
    return out;
}

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"differentiable hidden-state stack transformer harness"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train per config, one run directory per seed");
    std::string train_config, train_out, train_mode;
    std::vector<uint64_t> train_seeds;
    train->add_option("--config", train_config, "config file")->required();
    train->add_option("--seed", train_seeds, "override seed list");
    train->add_option("--out", train_out, "override output directory");
    train->add_option("--mode", train_mode, "integration mode override (temporal|layerwise)");

    // eval
    auto* eval = app.add_subcommand("eval", "length-generalization evaluation of checkpoints");
    std::vector<std::string> eval_ckpts;
    std::string eval_lengths = "41-100", eval_out, eval_mode;
    int eval_samples = 2, eval_stride = 1;
    uint64_t eval_seed = 1;
    eval->add_option("--checkpoint", eval_ckpts, "checkpoint file(s)")->required();
    eval->add_option("--lengths", eval_lengths, "length ranges, e.g. 41-100,200-500");
    eval->add_option("--samples", eval_samples, "samples per length");
    eval->add_option("--stride", eval_stride, "evaluate every k-th length");
    eval->add_option("--out", eval_out, "output directory for CSV reports");
    eval->add_option("--mode", eval_mode, "integration mode override");
    eval->add_option("--eval-seed", eval_seed, "evaluation sampling seed");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "emit task samples as JSON lines");
    std::string gen_task, gen_out;
    int gen_n = 100, gen_min = 1, gen_max = 40;
    uint64_t gen_seed = 0;
    gen->add_option("--task", gen_task, "task name")->required();
    gen->add_option("--n", gen_n, "number of samples");
    gen->add_option("--min-len", gen_min, "minimum input length");
    gen->add_option("--max-len", gen_max, "maximum input length");
    gen->add_option("--seed", gen_seed, "rng seed");
    gen->add_option("--out", gen_out, "output file (default stdout)");

    // verify
    auto* ver = app.add_subcommand("verify", "oracle / gradient / invariant suites");
    std::string ver_suite = "all";
    bool ver_json = false;
    ver->add_option("--suite", ver_suite, "oracle|grad|invariants|all");
    ver->add_flag("--json", ver_json, "machine-readable summary");

    // inspect-actions
    auto* insp = app.add_subcommand("inspect-actions", "per-boundary mean action probabilities");
    std::string insp_ckpt, insp_task, insp_out;
    int insp_n = 64, insp_min = 0, insp_max = 0;
    uint64_t insp_seed = 0;
    insp->add_option("--checkpoint", insp_ckpt, "checkpoint file")->required();
    insp->add_option("--task", insp_task, "task override (default: checkpoint task)");
    insp->add_option("--n", insp_n, "number of samples");
    insp->add_option("--seed", insp_seed, "rng seed");
    insp->add_option("--out", insp_out, "output CSV (default stdout)");
    insp->add_option("--min-len", insp_min, "sample min length (default: train range)");
    insp->add_option("--max-len", insp_max, "sample max length (default: train range)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_config, train_seeds, train_out, train_mode);
        if (eval->parsed()) {
            return cmd_eval(eval_ckpts, eval_lengths, eval_samples, eval_stride, eval_out,
                            eval_mode, eval_seed);
        }
        if (gen->parsed()) return cmd_gen_data(gen_task, gen_n, gen_min, gen_max, gen_seed, gen_out);
        if (ver->parsed()) return cmd_verify(ver_suite, ver_json);
        if (insp->parsed()) {
            return cmd_inspect_actions(insp_ckpt, insp_task, insp_n, insp_seed, insp_out, insp_min,
                                       insp_max);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int cli_main(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("softstack");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

} // namespace softstack::cli
