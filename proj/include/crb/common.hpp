// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_COMMON_HPP
#define CRB_COMMON_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crb
{

// A point in parameter space. Its layout is owned by the ThetaMap that interprets it.
using ParamVec = std::vector<double>;

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind
{
  Config = 2,
  Numerical = 3,
  Artifact = 4
};

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

// Invalid inputs: bad sizes, unknown tags, violated preconditions.
class ConfigError : public Error
{
public:
  explicit ConfigError(const std::string &what) : Error(ErrorKind::Config, what) {}
};

// Solver breakdown, divergence, non-admissible parameters, degenerate bases.
class NumericalError : public Error
{
public:
  explicit NumericalError(const std::string &what) : Error(ErrorKind::Numerical, what) {}
};

// Missing, corrupt, or version-mismatched artifacts.
class ArtifactError : public Error
{
public:
  explicit ArtifactError(const std::string &what) : Error(ErrorKind::Artifact, what) {}
};

// Worker count used by parallel_for. Zero means hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs body(i) for i in [0, n) on up to thread_count() threads. Iterations must write to
// disjoint outputs; no ordering between iterations is guaranteed. The first exception
// thrown by any iteration is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body);

// Pairwise (cascade) summation. The reduction tree depends only on the input length, so
// the result is independent of how the values were produced.
double pairwise_sum(std::span<const double> values);

// FNV-1a over raw bytes; used for provenance and config hashes.
std::uint64_t fnv1a(const void *data, std::size_t bytes, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t h);

// Deterministic 64-bit seed for sub-stream `index` of stream `tag` under a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index);

}  // namespace crb

#endif  // CRB_COMMON_HPP
