#pragma once

// Synthetic formal-language sequence-mapping tasks, grouped by the automaton
// class that recognizes them (regular / deterministic context-free /
// context-sensitive). Each task supplies a generator that builds a random
// instance of an exact input length together with its ground-truth output,
// plus an `answer` function that re-derives the output from the input alone.
// The two paths are kept algorithmically independent so they can be checked
// against each other.

#include "softstack/linalg.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace softstack::tasks {

enum class TaskLevel { RE, DCF, CS };

struct Sample {
    std::vector<std::string> input;
    std::vector<std::string> target;
    int length = 0;  // input length in task symbols
};

struct TaskSpec {
    std::string name;
    TaskLevel level;
    std::vector<std::string> input_alphabet;
    std::vector<std::string> output_alphabet;
    int min_length = 1;
    std::function<bool(int)> supports_length;
    std::function<Sample(int, Rng&)> generate;
    std::function<std::vector<std::string>(const std::vector<std::string>&)> answer;

    // Expected token accuracy of uniform guessing over the output alphabet.
    double chance_level() const { return 1.0 / static_cast<double>(output_alphabet.size()); }
};

const TaskSpec& get_task(const std::string& name);
std::vector<std::string> task_names();

Sample generate(const TaskSpec& task, int length, Rng& rng);
std::vector<Sample> batch(const TaskSpec& task, int min_len, int max_len, int n, Rng& rng);

// ---------------------------------------------------------------------------
// Token-level plumbing
// ---------------------------------------------------------------------------

struct Vocabulary {
    // ids 0..3 are the control tokens; task symbols follow in sorted order.
    static constexpr int pad = 0;
    static constexpr int bos = 1;
    static constexpr int sep = 2;
    static constexpr int eos = 3;

    std::vector<std::string> id_to_symbol;
    std::map<std::string, int> symbol_to_id;

    static Vocabulary for_task(const TaskSpec& task);
    int size() const { return static_cast<int>(id_to_symbol.size()); }
    int id(const std::string& symbol) const;
    const std::string& symbol(int id) const;
};

struct Encoded {
    std::vector<int> tokens;          // BOS input SEP target EOS
    std::vector<uint8_t> loss_mask;   // marks positions whose next-token is scored
    int sep_pos = 0;
};

// Layout: BOS · input · SEP · target · EOS. loss_mask[t] = 1 iff position t
// predicts a target token or the closing EOS (i.e. t in [sep_pos, sep_pos+|target|]).
Encoded encode(const Sample& sample, const Vocabulary& vocab);
Sample decode(const Encoded& enc, const Vocabulary& vocab);

// Fraction of target positions matched; prediction positions beyond the
// target are ignored, missing positions count as wrong.
double token_accuracy(const std::vector<int>& pred, const std::vector<int>& target);
double token_accuracy(const std::vector<std::string>& pred, const std::vector<std::string>& target);

// Modulo-5 arithmetic expression evaluator (recursive descent over task
// symbols); exposed for the expression tasks' verification paths.
int eval_mod5_expression(const std::vector<std::string>& tokens);

} // namespace softstack::tasks
