#include "doctest.h"

#include "softstack/checkpoint.hpp"
#include "softstack/cli.hpp"
#include "softstack/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace softstack;
namespace fs = std::filesystem;

namespace {

// Minimal but complete run config: tiny model, a handful of steps.
std::string tiny_run_config(const std::string& out_dir) {
    config::RunConfig cfg = config::defaults();
    cfg.task = "even_pairs";
    cfg.model.n_layers = 2;
    cfg.model.d = 16;
    cfg.model.n_attn_heads = 2;
    cfg.model.ffn_dim = 24;
    cfg.model.max_seq_len = 64;
    cfg.model.stack.S = 4;
    cfg.model.stack.H = 2;
    cfg.model.stack.d_s = 4;
    cfg.train.steps = 8;
    cfg.train.batch_size = 4;
    cfg.train.train_min_len = 1;
    cfg.train.train_max_len = 6;
    cfg.train.eval_ranges = {{7, 9}};
    cfg.train.eval_cadence = 8;
    cfg.train.eval_samples_per_length = 1;
    cfg.train.log_cadence = 4;
    cfg.train.warmup_steps = 2;
    cfg.train.threads = 2;
    cfg.seeds = {0, 1};
    cfg.out_dir = out_dir;
    return config::serialize(cfg);
}

} // namespace

TEST_CASE("train / eval / inspect-actions round trip through the CLI") {
    const fs::path root = fs::temp_directory_path() / "softstack_cli_e2e";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path cfg_path = root / "run.ini";
    {
        std::ofstream f(cfg_path);
        f << tiny_run_config((root / "out").string());
    }

    SUBCASE("train fans out one run directory per seed") {
        REQUIRE(cli::cli_main({"train", "--config", cfg_path.string()}) == 0);
        for (const char* seed_dir : {"seed_0", "seed_1"}) {
            const fs::path d = root / "out" / seed_dir;
            CHECK(fs::exists(d / "config.ini"));
            CHECK(fs::exists(d / "metrics.jsonl"));
            CHECK(fs::exists(d / "model.ckpt"));
            CHECK(fs::exists(d / "eval.csv"));
            CHECK(fs::exists(d / "actions.csv"));
        }

        // metrics are valid JSONL with the documented fields
        std::ifstream metrics(root / "out" / "seed_0" / "metrics.jsonl");
        std::string line;
        int n = 0;
        while (std::getline(metrics, line)) {
            ++n;
            CHECK(line.find("\"step\":") != std::string::npos);
            CHECK(line.find("\"lm\":") != std::string::npos);
            CHECK(line.find("\"stack_entropy\":") != std::string::npos);
            CHECK(line.find("\"total\":") != std::string::npos);
        }
        CHECK(n >= 2);

        const std::string ckpt = (root / "out" / "seed_0" / "model.ckpt").string();

        SUBCASE("eval reports per-length accuracy and best-of aggregate") {
            const int rc = cli::cli_main({"eval", "--checkpoint", ckpt, "--checkpoint",
                                          (root / "out" / "seed_1" / "model.ckpt").string(),
                                          "--lengths", "7-9", "--samples", "1", "--out",
                                          (root / "eval").string()});
            CHECK(rc == 0);
            CHECK(fs::exists(root / "eval" / "best.txt"));
        }

        SUBCASE("eval with an empty length list exits 2") {
            CHECK(cli::cli_main({"eval", "--checkpoint", ckpt, "--lengths", ""}) == 2);
        }

        SUBCASE("inspect-actions emits rows that sum to one") {
            const fs::path csv = root / "actions.csv";
            const int rc = cli::cli_main({"inspect-actions", "--checkpoint", ckpt, "--n", "4",
                                          "--out", csv.string()});
            CHECK(rc == 0);
            std::ifstream f(csv);
            std::string header;
            std::getline(f, header);
            CHECK(header == "boundary,push,pop,noop");
            std::string row;
            int rows = 0;
            while (std::getline(f, row)) {
                ++rows;
                double b, push, pop, noop;
                char c;
                std::istringstream is(row);
                is >> b >> c >> push >> c >> pop >> c >> noop;
                CHECK(push + pop + noop == doctest::Approx(1.0).epsilon(1e-5));
            }
            CHECK(rows == 1);  // L=2 -> one boundary
        }

        SUBCASE("inspect-actions refuses stack-disabled checkpoints") {
            // rebuild the same run with the stack off
            config::RunConfig cfg = config::parse(tiny_run_config((root / "out_nostack").string()));
            cfg.model.stack.enabled = false;
            cfg.seeds = {0};
            const fs::path p2 = root / "nostack.ini";
            config::save_file(p2.string(), cfg);
            REQUIRE(cli::cli_main({"train", "--config", p2.string()}) == 0);
            const std::string ckpt2 = (root / "out_nostack" / "seed_0" / "model.ckpt").string();
            CHECK(cli::cli_main({"inspect-actions", "--checkpoint", ckpt2}) == 2);
        }
    }

    SUBCASE("unknown task in config exits 2") {
        const fs::path bad = root / "bad.ini";
        {
            std::ofstream f(bad);
            f << "[task]\nname = not_a_task\n";
        }
        CHECK(cli::cli_main({"train", "--config", bad.string()}) == 2);
    }

    fs::remove_all(root);
}
