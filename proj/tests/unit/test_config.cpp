#include "doctest.h"

#include "softstack/checkpoint.hpp"
#include "softstack/cli.hpp"
#include "softstack/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace softstack;
using namespace softstack::config;

TEST_CASE("config round trip") {
    RunConfig cfg = defaults();
    cfg.task = "reverse_string";
    cfg.model.n_layers = 5;
    cfg.model.d = 64;
    cfg.model.stack.structure_mode = stack_core::StructureMode::queue;
    cfg.model.stack.read_mode = stack_core::ReadMode::top_peek;
    cfg.model.integration = backbone::IntegrationMode::layerwise;
    cfg.train.lambda = 0.1;
    cfg.train.eval_ranges = {{41, 100}, {200, 500}};
    cfg.seeds = {3, 1, 4, 1, 5};
    cfg.out_dir = "runs/rev";

    const RunConfig back = parse(serialize(cfg));
    CHECK(back == cfg);
    CHECK(parse(serialize(back)) == back);
}

TEST_CASE("all stack ablations are reachable by config alone") {
    RunConfig queue = parse("[model.stack]\nstructure = queue\n");
    CHECK(queue.model.stack.structure_mode == stack_core::StructureMode::queue);

    RunConfig push_only = parse("[model.stack]\naction = push_only\n");
    CHECK(push_only.model.stack.action_mode == stack_core::ActionMode::push_only);

    RunConfig single_head = parse("[model.stack]\nH = 1\nd_s = 8\n");
    CHECK(single_head.model.stack.H == 1);

    RunConfig full_dim = parse("[model]\nd = 64\n[model.stack]\nH = 1\nd_s = 64\n");
    CHECK(full_dim.model.stack.H * full_dim.model.stack.d_s == full_dim.model.d);

    RunConfig disabled = parse("[model.stack]\nenabled = false\n");
    CHECK(!disabled.model.stack.enabled);

    RunConfig peek = parse("[model.stack]\nread = top_peek\n");
    CHECK(peek.model.stack.read_mode == stack_core::ReadMode::top_peek);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse("[model]\nbogus_key = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("[model]\nintegration = diagonal\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("no equals sign here"), std::invalid_argument);
    CHECK_THROWS_AS(parse("[train]\neval_ranges =\n"), std::invalid_argument);
}

TEST_CASE("length range parsing") {
    const auto r = cli::parse_length_ranges("41-100,200-500,7");
    REQUIRE(r.size() == 3);
    CHECK(r[0] == std::pair{41, 100});
    CHECK(r[1] == std::pair{200, 500});
    CHECK(r[2] == std::pair{7, 7});
    CHECK(cli::parse_length_ranges("").empty());
}

TEST_CASE("checkpoint round trip preserves parameters and config") {
    RunConfig cfg = defaults();
    cfg.task = "parity_check";
    cfg.model.n_layers = 2;
    cfg.model.d = 16;
    cfg.model.n_attn_heads = 2;
    cfg.model.ffn_dim = 24;
    cfg.model.max_seq_len = 64;
    cfg.model.stack.S = 4;
    cfg.model.stack.H = 2;
    cfg.model.stack.d_s = 4;
    cfg.model.vocab_size = tasks::Vocabulary::for_task(tasks::get_task(cfg.task)).size();

    backbone::Model model(cfg.model, 17);
    const std::string path = (std::filesystem::temp_directory_path() / "softstack_test.ckpt").string();
    checkpoint::save(path, cfg, model);

    checkpoint::Loaded loaded = checkpoint::load(path);
    CHECK(loaded.cfg.task == "parity_check");
    CHECK(loaded.cfg.model.n_layers == 2);

    // float32 storage: parameters match to f32 resolution and logits agree
    const auto orig = model.param_refs();
    const auto back = loaded.model->param_refs();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].name == back[i].name);
        for (size_t k = 0; k < orig[i].n; ++k) {
            CHECK(back[i].data[k] == doctest::Approx(orig[i].data[k]).epsilon(1e-6));
        }
    }

    SUBCASE("corrupt files are rejected") {
        FILE* f = fopen(path.c_str(), "r+b");
        REQUIRE(f);
        fseek(f, 0, SEEK_SET);
        fputs("JUNK", f);
        fclose(f);
        CHECK_THROWS_AS(checkpoint::load(path), std::runtime_error);
    }
    std::filesystem::remove(path);
}

TEST_CASE("cli rejects bad invocations") {
    CHECK(cli::cli_main({"definitely-not-a-command"}) == 2);
    CHECK(cli::cli_main({"gen-data"}) == 2);                      // missing --task
    CHECK(cli::cli_main({"gen-data", "--task", "nope", "--n", "1"}) == 2);  // unknown task
    CHECK(cli::cli_main({"verify", "--suite", "bogus"}) == 2);
}

TEST_CASE("cli gen-data writes the documented record schema") {
    const std::string path = (std::filesystem::temp_directory_path() / "softstack_gen.jsonl").string();
    const int rc = cli::cli_main({"gen-data", "--task", "even_pairs", "--n", "3", "--min-len", "2",
                                  "--max-len", "4", "--seed", "5", "--out", path});
    CHECK(rc == 0);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        CHECK(line.find("\"task\":\"even_pairs\"") != std::string::npos);
        CHECK(line.find("\"input\":") != std::string::npos);
        CHECK(line.find("\"target\":") != std::string::npos);
        CHECK(line.find("\"length\":") != std::string::npos);
    }
    CHECK(lines == 3);
    std::filesystem::remove(path);
}
