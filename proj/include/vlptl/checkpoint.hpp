#pragma once

#include "vlptl/autodiff.hpp"
#include "vlptl/nn.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace vlptl {

// Single binary blob: magic, JSON header, then named float64 arrays.
struct Checkpoint {
    nlohmann::json header;
    std::map<std::string, ad::Matrix> arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void store_parameters(const nn::ParameterList& params, Checkpoint& ckpt);
// Every parameter must be present with a matching shape.
void restore_parameters(const Checkpoint& ckpt, const nn::ParameterList& params);

// FNV-1a 64-bit, hex encoded. Used for provenance tags.
std::string stable_hash(const std::string& text);

}  // namespace vlptl
