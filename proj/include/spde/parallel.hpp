#pragma once

#include <cstddef>
#include <functional>

namespace spde {

/// Worker count: SPDE_THREADS if set and positive, else the hardware count.
[[nodiscard]] std::size_t worker_count();

/// Overrides SPDE_THREADS for the calling process; 0 restores the default.
void set_worker_count(std::size_t n);

/// Runs body(i) for i in [0, n). Each index runs exactly once; results must
/// be written to per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace spde
