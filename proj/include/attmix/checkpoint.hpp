#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attmix/optim.hpp"
#include "attmix/tensor.hpp"
#include "json.hpp"

namespace attmix {

// Checkpoint file: "AMCK" | u32 version | u64 header length | JSON header |
// f32 little-endian payload. The header holds the model config and a
// registry of {name, shape, offset} with byte offsets into the payload.
struct Checkpoint {
  nlohmann::json config;
  std::vector<std::string> order;
  std::map<std::string, Tensor<float>> tensors;
};

std::string encode_checkpoint(const nlohmann::json& config,
                              const std::vector<NamedParam<float>>& params);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     const std::vector<NamedParam<float>>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every tensor of `params` from the checkpoint. Missing names, shape
// differences, and (when strict) unused checkpoint entries are rejected.
void restore_parameters(const Checkpoint& ckpt, const std::vector<NamedParam<float>>& params,
                        bool strict = true);

// Value snapshot of a parameter list, used to keep the best epoch in memory.
std::vector<std::vector<float>> snapshot(const std::vector<NamedParam<float>>& params);
void restore(const std::vector<NamedParam<float>>& params,
             const std::vector<std::vector<float>>& values);

}  // namespace attmix
