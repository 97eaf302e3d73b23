#include "doctest.h"

#include "softstack/tasks.hpp"

#include <set>

using namespace softstack;
using namespace softstack::tasks;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> list) {
    std::vector<std::string> v;
    for (const char* s : list) v.emplace_back(s);
    return v;
}

std::vector<std::string> chars(const std::string& s) {
    std::vector<std::string> v;
    for (char c : s) v.emplace_back(1, c);
    return v;
}

} // namespace

TEST_CASE("worked examples per task") {
    CHECK(get_task("even_pairs").answer(chars("aabba")) == toks({"True"}));
    CHECK(get_task("even_pairs").answer(chars("ab")) == toks({"False"}));
    CHECK(get_task("parity_check").answer(chars("aaabba")) == toks({"True"}));
    CHECK(get_task("parity_check").answer(chars("b")) == toks({"False"}));
    CHECK(get_task("cycle_navigation").answer(chars("011210")) == toks({"2"}));
    CHECK(get_task("reverse_string").answer(chars("aabba")) == chars("abbaa"));
    CHECK(get_task("stack_manipulation")
              .answer(toks({"a", "b", "b", "a", "a", "POP", "PUSH", "a", "POP"})) == chars("abba"));
    CHECK(get_task("binary_addition").answer(toks({"1", "0", "0", "1", "0", "+", "1", "0", "1"})) ==
          chars("10111"));
    CHECK(get_task("binary_multiplication")
              .answer(toks({"1", "0", "0", "1", "0", "*", "1", "0", "1"})) == chars("1011010"));
    CHECK(get_task("bucket_sort").answer(chars("421302214")) == chars("011222344"));
    CHECK(get_task("duplicate_string").answer(chars("abaab")) == chars("abaababaab"));
    CHECK(get_task("missing_duplicate").answer(chars("ab_aba")) == toks({"a"}));
    CHECK(get_task("odds_first").answer(chars("aaabaa")) == chars("aaaaba"));
    // integer square root in binary: floor(sqrt(101001_2 = 41)) = 6 = 110_2
    CHECK(get_task("compute_sqrt").answer(chars("101001")) == chars("110"));
}

TEST_CASE("modular arithmetic evaluates nested expressions modulo 5") {
    // -(1-2)*(4-3*(-2)) = 0 (mod 5)
    const auto expr = toks({"-", "(", "1", "-", "2", ")", "*", "(", "4", "-", "3", "*", "(", "-",
                            "2", ")", ")"});
    CHECK(eval_mod5_expression(expr) == 0);
    CHECK(get_task("modular_arithmetic").answer(expr) == toks({"0"}));
    CHECK(eval_mod5_expression(toks({"3"})) == 3);
    CHECK(eval_mod5_expression(toks({"1", "+", "2", "*", "3"})) == 2);  // precedence
    CHECK(eval_mod5_expression(toks({"-", "4"})) == 1);
    CHECK_THROWS_AS(eval_mod5_expression(toks({"(", "1"})), std::invalid_argument);
}

TEST_CASE("solve_equation answers satisfy the equation uniquely") {
    const auto& task = get_task("solve_equation");
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const int len = rng.uniform_int(3, 30);
        const Sample s = generate(task, len, rng);
        CHECK(static_cast<int>(s.input.size()) == len);
        CHECK(task.answer(s.input) == s.target);  // unique solution re-derived by enumeration
    }
}

TEST_CASE("all fourteen tasks are registered with levels") {
    const auto names = task_names();
    CHECK(names.size() == 14);
    int re = 0, dcf = 0, cs = 0;
    for (const auto& n : names) {
        switch (get_task(n).level) {
            case TaskLevel::RE: ++re; break;
            case TaskLevel::DCF: ++dcf; break;
            case TaskLevel::CS: ++cs; break;
        }
    }
    CHECK(re == 3);
    CHECK(dcf == 4);
    CHECK(cs == 7);
    CHECK_THROWS_AS(get_task("no_such_task"), std::invalid_argument);
}

TEST_CASE("generator targets agree with the independent answer route") {
    Rng rng(101);
    for (const auto& name : task_names()) {
        const auto& task = get_task(name);
        for (int trial = 0; trial < 300; ++trial) {
            int len = rng.uniform_int(1, 40);
            while (!task.supports_length(len)) len = rng.uniform_int(1, 40);
            const Sample s = generate(task, len, rng);
            INFO("task ", name, " len ", len);
            CHECK(static_cast<int>(s.input.size()) == len);
            CHECK(s.length == len);
            REQUIRE(!s.target.empty());
            CHECK(task.answer(s.input) == s.target);
        }
    }
}

TEST_CASE("generation is deterministic under a fixed seed") {
    for (const auto& name : task_names()) {
        const auto& task = get_task(name);
        Rng r1(555), r2(555);
        const auto a = batch(task, 1, 30, 20, r1);
        const auto b = batch(task, 1, 30, 20, r2);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].input == b[i].input);
            CHECK(a[i].target == b[i].target);
        }
    }
}

TEST_CASE("unsupported lengths are rejected") {
    Rng rng(0);
    CHECK_THROWS_AS(generate(get_task("missing_duplicate"), 7, rng), std::invalid_argument);
    CHECK_THROWS_AS(generate(get_task("binary_addition"), 2, rng), std::invalid_argument);
    CHECK_THROWS_AS(generate(get_task("solve_equation"), 2, rng), std::invalid_argument);
    CHECK_THROWS_AS(generate(get_task("even_pairs"), 0, rng), std::invalid_argument);
}

TEST_CASE("batch respects length ranges") {
    Rng rng(77);
    const auto& task = get_task("even_pairs");

    SUBCASE("uniform range") {
        const auto samples = batch(task, 1, 40, 128, rng);
        CHECK(samples.size() == 128);
        for (const auto& s : samples) {
            CHECK(s.length >= 1);
            CHECK(s.length <= 40);
        }
    }

    SUBCASE("held-out range") {
        const auto samples = batch(task, 41, 100, 32, rng);
        for (const auto& s : samples) {
            CHECK(s.length >= 41);
            CHECK(s.length <= 100);
        }
    }

    SUBCASE("degenerate range") {
        const auto samples = batch(task, 5, 5, 16, rng);
        for (const auto& s : samples) CHECK(s.length == 5);
    }

    SUBCASE("even-only task still fills the batch") {
        const auto samples = batch(get_task("missing_duplicate"), 2, 9, 50, rng);
        for (const auto& s : samples) CHECK(s.length % 2 == 0);
        CHECK_THROWS_AS(batch(get_task("missing_duplicate"), 3, 3, 1, rng), std::invalid_argument);
    }
}

TEST_CASE("vocabulary and encoding") {
    const auto& task = get_task("reverse_string");
    const Vocabulary vocab = Vocabulary::for_task(task);
    CHECK(vocab.size() == 6);  // pad, bos, sep, eos, a, b
    CHECK(vocab.id("a") >= 4);
    CHECK_THROWS_AS(vocab.id("z"), std::invalid_argument);

    SUBCASE("layout is BOS input SEP target EOS") {
        Sample s;
        s.input = chars("ab");
        s.target = chars("ba");
        s.length = 2;
        const Encoded e = encode(s, vocab);
        REQUIRE(e.tokens.size() == 7);
        CHECK(e.tokens.front() == Vocabulary::bos);
        CHECK(e.tokens[3] == Vocabulary::sep);
        CHECK(e.tokens.back() == Vocabulary::eos);
        CHECK(e.sep_pos == 3);
        // mask marks sep..sep+|target| (predicting target tokens and eos)
        const std::vector<uint8_t> want_mask = {0, 0, 0, 1, 1, 1, 0};
        CHECK(e.loss_mask == want_mask);
    }

    SUBCASE("round trip and empty-target rejection") {
        Rng rng(31);
        for (const auto& name : task_names()) {
            const auto& t = get_task(name);
            const Vocabulary v = Vocabulary::for_task(t);
            int len = rng.uniform_int(1, 20);
            while (!t.supports_length(len)) len = rng.uniform_int(1, 20);
            const Sample s = generate(t, len, rng);
            const Sample back = decode(encode(s, v), v);
            CHECK(back.input == s.input);
            CHECK(back.target == s.target);
        }
        Sample bad;
        bad.input = chars("a");
        CHECK_THROWS_AS(encode(bad, vocab), std::invalid_argument);
    }
}

TEST_CASE("token accuracy") {
    CHECK(token_accuracy(chars("abab"), chars("abab")) == 1.0);
    CHECK(token_accuracy(chars("bbbb"), chars("aaaa")) == 0.0);
    CHECK(token_accuracy(chars("10101"), chars("10111")) == doctest::Approx(0.8));
    CHECK(token_accuracy(chars("ab"), chars("abab")) == doctest::Approx(0.5));  // missing = wrong
    CHECK(token_accuracy(std::vector<std::string>{}, chars("ab")) == 0.0);
    CHECK_THROWS_AS(token_accuracy(chars("a"), {}), std::invalid_argument);
    CHECK(token_accuracy(std::vector<int>{4, 5, 4}, std::vector<int>{4, 5, 4}) == 1.0);
}

TEST_CASE("chance levels come from output alphabet sizes") {
    CHECK(get_task("parity_check").chance_level() == doctest::Approx(0.5));
    CHECK(get_task("cycle_navigation").chance_level() == doctest::Approx(0.2));
    CHECK(get_task("reverse_string").chance_level() == doctest::Approx(0.5));
    CHECK(get_task("bucket_sort").chance_level() == doctest::Approx(0.2));
}
