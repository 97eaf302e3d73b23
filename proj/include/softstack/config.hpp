#pragma once

// Run configuration: one human-editable key-value file with nested sections
// covering the task, the model (including every stack ablation), the training
// recipe and the run fan-out. parse(serialize(c)) == c.

#include "softstack/backbone.hpp"
#include "softstack/trainer.hpp"

#include <string>
#include <vector>

namespace softstack::config {

struct RunConfig {
    std::string task = "parity_check";
    backbone::ModelConfig model;
    trainer::TrainConfig train;
    std::vector<uint64_t> seeds = {0};
    std::string out_dir = "runs/out";

    bool operator==(const RunConfig& other) const;
};

RunConfig defaults();

std::string serialize(const RunConfig& cfg);
RunConfig parse(const std::string& text);

RunConfig load_file(const std::string& path);
void save_file(const std::string& path, const RunConfig& cfg);

// enum <-> string helpers (shared with the CLI)
std::string to_string(backbone::IntegrationMode m);
std::string to_string(stack_core::ReadMode m);
std::string to_string(stack_core::StructureMode m);
std::string to_string(stack_core::ActionMode m);
backbone::IntegrationMode integration_from_string(const std::string& s);
stack_core::ReadMode read_mode_from_string(const std::string& s);
stack_core::StructureMode structure_from_string(const std::string& s);
stack_core::ActionMode action_from_string(const std::string& s);

} // namespace softstack::config
