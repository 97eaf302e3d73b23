#pragma once

// Self-describing single-file checkpoint: the serialized run config followed
// by named parameter arrays in registration order (64-bit little-endian
// lengths, 32-bit little-endian floats). See README for the exact layout.

#include "softstack/backbone.hpp"
#include "softstack/config.hpp"

#include <memory>
#include <string>

namespace softstack::checkpoint {

void save(const std::string& path, const config::RunConfig& cfg, backbone::Model& model);

struct Loaded {
    config::RunConfig cfg;
    std::unique_ptr<backbone::Model> model;
};

Loaded load(const std::string& path);

} // namespace softstack::checkpoint
