#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace icl {

enum class Strategy { Sequential, Mixed, Random, SingleTask };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct CurriculumSchedule {
  Strategy strategy = Strategy::Sequential;
  std::uint64_t total_steps = 1;
  // Task ids ordered easy -> hard.
  std::vector<std::size_t> tasks;
  // Position in `tasks` used by SingleTask.
  std::size_t single_index = 0;

  std::size_t task_count() const { return tasks.size(); }
  void validate() const;

  static CurriculumSchedule single(std::size_t task_id, std::uint64_t total_steps);

  friend bool operator==(const CurriculumSchedule&, const CurriculumSchedule&) = default;
};

// Steps [begin, end), or [begin, end] when closed.
struct StepInterval {
  std::uint64_t begin = 1;
  std::uint64_t end = 1;
  bool closed = false;

  std::uint64_t count() const { return end - begin + (closed ? 1 : 0); }
  bool contains(std::uint64_t t) const { return t >= begin && (closed ? t <= end : t < end); }
};

// Boundaries at ceil(k T / K); when T == K every step is its own partition.
// The final interval is closed at T.
std::vector<StepInterval> partition_bounds(std::uint64_t total_steps, std::size_t task_count);

std::size_t partition_index(std::uint64_t total_steps, std::size_t task_count, std::uint64_t step);

// Task id for step t. Draws are counter-based on (stream_seed, t), so any step can be
// replayed independently and the whole batch of a step shares one task.
std::size_t task_at_step(const CurriculumSchedule& schedule, std::uint64_t step, std::uint64_t stream_seed);

// "step,task_id" rows for every step.
void write_schedule_csv(std::ostream& out, const CurriculumSchedule& schedule, std::uint64_t stream_seed);

}  // namespace icl
