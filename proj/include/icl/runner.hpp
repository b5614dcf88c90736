#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icl/config.hpp"
#include "icl/training.hpp"

namespace icl {

inline constexpr int kManifestFormatVersion = 1;
inline constexpr const char* kLabVersion = "icl-lab 1.0.0";

// Process exit codes of the CLI.
namespace exit_codes {
inline constexpr int kSuccess = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kNumericFailure = 3;
inline constexpr int kIncompletePlan = 4;
}  // namespace exit_codes

class IncompletePlan : public std::runtime_error {
 public:
  IncompletePlan(const std::string& what, std::vector<std::string> cells)
      : std::runtime_error(what), cells(std::move(cells)) {}
  std::vector<std::string> cells;
};

enum class ExperimentKind {
  Single,
  CurriculumCompare,
  ConvergenceSeeds,
  DataEfficiency,
  HeadMasking,
  InstructionPrompting,
  DistributionLearning,
};

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& s);

// Settings shared by every cell of a plan.
struct EvalSettings {
  std::uint64_t test_seed = 9001;
  std::size_t test_size = 64;
  std::size_t probe_size = 64;
  std::size_t window = 10;
  std::size_t mask_k = 0;  // 0: ceil(total heads / 10)
};

struct EfficiencySettings {
  std::size_t target_task = 2;
  std::vector<std::size_t> pretrain_tasks{0, 1};
  Strategy pretrain_strategy = Strategy::Mixed;
  std::uint64_t pretrain_steps = 2500;
  std::size_t pretrain_batch = 16;
  std::uint64_t fresh_steps = 20000;
  std::size_t fresh_batch = 18;
  std::uint64_t budget_ratio = 9;  // fresh examples = ratio * pretraining examples
};

// One (model variant, seed) training run.
struct Cell {
  std::string experiment;  // variant label, e.g. "mixed", "single-linear", "pi", "finetune"
  std::uint64_t seed = 0;
  TrainConfig train;
  bool probe = false;
  bool ablation = false;
  std::string warm_from;         // experiment label of the same-seed cell whose final checkpoint seeds this one
  std::string early_stop_from;   // same-seed cell whose final target validation MSE is the stop threshold
  std::string early_stop_task;   // task id, as text, for early_stop_from

  std::string key() const { return experiment + "/" + std::to_string(seed); }
};

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::Single;
  std::string name = "plan";
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
  TrainConfig base;
  std::vector<Strategy> strategies{Strategy::Sequential, Strategy::Mixed, Strategy::Random};
  bool include_single = false;
  EvalSettings eval;
  EfficiencySettings efficiency;
  Config source;  // resolved config, recorded in the manifest

  std::filesystem::path plan_dir() const { return output_dir / name; }
  // Cells in execution order; dependencies come first.
  std::vector<Cell> cells() const;
};

// Builds a plan from a resolved config; throws ConfigError on bad values.
ExperimentPlan plan_from_config(const Config& config);

// Cell description whose hash names its directory. The seed is not part of it.
Config describe_cell(const ExperimentPlan& plan, const Cell& cell);
std::string cell_hash(const ExperimentPlan& plan, const Cell& cell);
std::filesystem::path cell_dir(const ExperimentPlan& plan, const Cell& cell);

// Frozen evaluation prompts of a plan for one task.
PromptBatch test_set(const ExperimentPlan& plan, std::size_t task_id);
PromptBatch probe_set(const ExperimentPlan& plan, std::size_t task_id);

struct RunOptions {
  bool resume = false;      // re-run cells found half-written instead of failing
  std::ostream* log = nullptr;
};

struct RunSummary {
  std::size_t executed = 0;
  std::size_t skipped = 0;
};

// Runs every cell not already complete in the manifest, then leaves the manifest complete.
RunSummary run_plan(const ExperimentPlan& plan, const RunOptions& options = {});

// Trains one cell into `dir` and writes its artifacts. Dependencies are looked up in `plan`.
void run_cell(const ExperimentPlan& plan, const Cell& cell, const std::filesystem::path& dir,
              std::ostream* log = nullptr);

struct ReportSummary {
  std::vector<std::string> missing;  // cells listed in the manifest but not complete
  std::vector<std::filesystem::path> files;
};

// Aggregates a plan directory into <plan_dir>/report. Pure function of the artifacts.
ReportSummary emit_report(const std::filesystem::path& plan_dir);

struct ScheduleAudit {
  std::uint64_t steps = 0;
  std::uint64_t mismatches = 0;
  std::uint64_t examples = 0;  // steps * batch
  bool ok() const { return mismatches == 0; }
};

// Replays task_at_step from the cell description and compares it with the logged schedule.
ScheduleAudit audit_schedule(const std::filesystem::path& cell_dir);

// Writes text to path through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace icl
