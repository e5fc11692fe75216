// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "recfound/harness/config.h"
#include "recfound/numerics/param_store.h"

namespace recfound {

// A checkpoint is a directory with two files:
//   manifest.txt  `key = value` lines: format, step, seed, label, the run
//                 config echo (prefixed `config.`), one `tensor.<i>` line per
//                 tensor (name shape offset trainable) and the blob size/hash
//   tensors.bin   little-endian float32 values, row-major, in manifest order
struct Checkpoint {
  ParamStore<float> params;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::string label;
  std::vector<std::pair<std::string, std::string>> config;  // key, value
};

std::uint64_t fnv1a64(const void* data, std::size_t size);

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

Checkpoint make_checkpoint(const ParamStore<float>& params, const RunConfig& cfg, std::size_t step,
                           std::string label);

// Rebuilds the run config stored in a checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);

}  // namespace recfound
