#include "icl/curriculum.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "icl/csv.hpp"
#include "icl/rng.hpp"

namespace icl {
namespace {

std::size_t uniform_index(std::uint64_t stream_seed, std::uint64_t step, std::size_t k) {
  const std::uint64_t u = splitmix64(splitmix64(stream_seed) ^ splitmix64(step));
  return static_cast<std::size_t>((static_cast<unsigned __int128>(u) * k) >> 64);
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Sequential:
      return "sequential";
    case Strategy::Mixed:
      return "mixed";
    case Strategy::Random:
      return "random";
    case Strategy::SingleTask:
      return "single";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "sequential") return Strategy::Sequential;
  if (s == "mixed") return Strategy::Mixed;
  if (s == "random") return Strategy::Random;
  if (s == "single") return Strategy::SingleTask;
  throw std::invalid_argument("unknown curriculum strategy '" + s + "'");
}

void CurriculumSchedule::validate() const {
  if (tasks.empty()) throw std::invalid_argument("CurriculumSchedule: empty task list");
  if (total_steps < tasks.size()) throw std::invalid_argument("CurriculumSchedule: T must be >= K");
  std::vector<std::size_t> sorted = tasks;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("CurriculumSchedule: a task appears twice in the order");
  if (strategy == Strategy::SingleTask && single_index >= tasks.size())
    throw std::invalid_argument("CurriculumSchedule: single-task index out of range");
}

CurriculumSchedule CurriculumSchedule::single(std::size_t task_id, std::uint64_t total_steps) {
  return CurriculumSchedule{Strategy::SingleTask, total_steps, {task_id}, 0};
}

std::vector<StepInterval> partition_bounds(std::uint64_t total_steps, std::size_t task_count) {
  if (task_count == 0) throw std::invalid_argument("partition_bounds: K must be >= 1");
  if (total_steps < task_count) throw std::invalid_argument("partition_bounds: T must be >= K");
  const std::uint64_t k_total = task_count;
  std::vector<std::uint64_t> starts(task_count);
  starts[0] = 1;
  for (std::uint64_t k = 1; k < k_total; ++k) {
    const std::uint64_t ceil_bound = (k * total_steps + k_total - 1) / k_total;
    starts[k] = std::max(ceil_bound, k + 1);
  }
  std::vector<StepInterval> out(task_count);
  for (std::size_t k = 0; k < task_count; ++k) {
    out[k].begin = starts[k];
    if (k + 1 < task_count) {
      out[k].end = starts[k + 1];
    } else {
      out[k].end = total_steps;
      out[k].closed = true;
    }
  }
  return out;
}

std::size_t partition_index(std::uint64_t total_steps, std::size_t task_count, std::uint64_t step) {
  if (step < 1 || step > total_steps) throw std::out_of_range("partition_index: step outside [1, T]");
  const auto bounds = partition_bounds(total_steps, task_count);
  for (std::size_t k = 0; k < bounds.size(); ++k)
    if (bounds[k].contains(step)) return k;
  throw std::logic_error("partition_index: step not covered");
}

std::size_t task_at_step(const CurriculumSchedule& schedule, std::uint64_t step, std::uint64_t stream_seed) {
  schedule.validate();
  if (step < 1 || step > schedule.total_steps) throw std::out_of_range("task_at_step: step outside [1, T]");
  const std::size_t k = schedule.task_count();
  switch (schedule.strategy) {
    case Strategy::Sequential:
      return schedule.tasks[partition_index(schedule.total_steps, k, step)];
    case Strategy::Mixed: {
      const std::size_t part = partition_index(schedule.total_steps, k, step);
      return schedule.tasks[part == 0 ? 0 : uniform_index(stream_seed, step, part + 1)];
    }
    case Strategy::Random:
      return schedule.tasks[uniform_index(stream_seed, step, k)];
    case Strategy::SingleTask:
      return schedule.tasks[schedule.single_index];
  }
  throw std::logic_error("task_at_step: unknown strategy");
}

void write_schedule_csv(std::ostream& out, const CurriculumSchedule& schedule, std::uint64_t stream_seed) {
  write_csv_version(out);
  out << "step,task_id\n";
  for (std::uint64_t t = 1; t <= schedule.total_steps; ++t) out << t << ',' << task_at_step(schedule, t, stream_seed) << '\n';
}

}  // namespace icl
