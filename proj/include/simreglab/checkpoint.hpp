#pragma once

#include <map>
#include <string>
#include <vector>

#include "simreglab/tensor.hpp"

namespace simreg {

// Flat archive: plain-text "key = value" header followed by named tensor
// records (u32 name length, name, u32 rank, i64 extents, f64 values), all
// little-endian. See README for the exact layout.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> header;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace simreg
