// Copyright 2026 The milkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>

#include "milkit/bagdata.hpp"
#include "milkit/params.hpp"
#include "milkit/trainer.hpp"

namespace milkit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Unsupported container version.
struct CheckpointVersionError : DataError {
  using DataError::DataError;
};

struct Checkpoint {
  ModelConfig cfg;
  ParamsF params;
  /// Task the weights were trained on.
  TaskSpec task;
  TrainConfig train;
  /// ISO-8601 UTC; filled with the current time on save when empty.
  std::string created_at;
  std::uint32_t format_version = kCheckpointVersion;
};

// Container layout, little-endian:
//   "MILC" | u32 version | u64 header_len | header JSON | float32 blob
// The header holds cfg, task, train, created_at, cfg_digest and an ordered
// layer table [{name, shape: [rows, cols], offset, length}] with byte offsets
// into the blob. Tensors are stored row-major.

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws BadMagicError, CheckpointVersionError, TruncatedFileError, or
/// DataError on any header/config/shape inconsistency.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(Checkpoint ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string utc_now_iso8601();

}  // namespace milkit
