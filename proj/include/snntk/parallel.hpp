#pragma once

#include <cstddef>
#include <functional>

namespace snntk {

/// Worker count used by parallel_for; 0 selects hardware concurrency.
void set_thread_count(unsigned threads);
unsigned thread_count();

/// Calls fn(i) for every i in [0, count). Work items must write only to
/// storage owned by their index; callers reduce the per-index results in
/// index order, so results do not depend on the schedule.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace snntk
