#pragma once

#include <cstddef>
#include <functional>

namespace bfuse {

/// Name of the environment variable consulted when no thread count is given.
inline constexpr const char* kThreadsEnvVar = "BACKBONE_FUSION_THREADS";

/// `requested` if nonzero, else the environment variable if set, else the
/// hardware concurrency (at least 1). A set but non-positive or non-numeric
/// variable is a ConfigError.
std::size_t resolve_threads(std::size_t requested = 0);

/// Splits [0, n) into at most `threads` contiguous chunks and runs
/// fn(begin, end) for each, blocking until all complete. Exceptions from
/// workers are rethrown on the caller's thread (first chunk wins).
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace bfuse
