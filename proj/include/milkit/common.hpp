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

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace milkit {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

// Error hierarchy. The CLI maps each family onto a process exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Invalid configuration or API misuse (exit code 2).
struct ConfigError : Error {
  using Error::Error;
};
/// Malformed or inconsistent input data (exit code 3).
struct DataError : Error {
  using Error::Error;
};
/// Non-finite values or undefined numeric results (exit code 4).
struct NumericError : Error {
  using Error::Error;
};

// Feature-file errors, each distinct.
struct BadMagicError : DataError {
  using DataError::DataError;
};
struct TruncatedFileError : DataError {
  using DataError::DataError;
};
struct DimensionOverflowError : DataError {
  using DataError::DataError;
};

/// A metric is undefined on the given input (e.g. AUROC with one class).
struct UndefinedMetricError : NumericError {
  using NumericError::NumericError;
};

using Rng = std::mt19937_64;

/// FNV-1a over bytes; stable across platforms.
constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent sub-stream seed for a named purpose.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix64(seed ^ fnv1a(tag));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed ^ mix64(index + 0x5851f42d4c957f2dULL));
}

std::string hex64(std::uint64_t v);

}  // namespace milkit
