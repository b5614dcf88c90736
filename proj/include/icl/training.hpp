#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icl/adam.hpp"
#include "icl/checkpoint.hpp"
#include "icl/curriculum.hpp"
#include "icl/evaluation.hpp"
#include "icl/model.hpp"
#include "icl/tasks.hpp"

namespace icl {

// Mean over prefix positions of (prediction - target)^2 for one sequence.
double prefix_loss(std::span<const double> predictions, std::span<const double> targets);

// Batch mean of the per-sequence prefix loss; predictions are batch x pairs.
double prefix_loss(const Tensor& predictions, const PromptBatch& prompts);

// Prefix loss of one batch; its gradient is added into grads.
double loss_and_gradient(const ModelState& state, const PromptBatch& prompts, Parameters& grads,
                         ForwardTape& tape);

struct EarlyStop {
  std::size_t task_id = 0;
  double threshold = 0.0;  // stop once mean validation normalized MSE <= threshold
};

struct TrainConfig {
  CurriculumSchedule schedule;
  std::vector<TaskSpec> tasks;  // indexed by task id
  ModelConfig model;
  std::size_t batch_size = 32;
  std::size_t pairs = 40;
  AdamHyper adam;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::size_t validation_interval = 500;
  std::size_t validation_size = 256;
  std::uint64_t validation_seed = 7001;
  std::vector<std::size_t> validation_tasks;  // empty: every task id
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::filesystem::path checkpoint_dir;  // empty: no checkpoint files
  std::optional<std::filesystem::path> warm_start;
  std::optional<std::uint64_t> step_limit;
  std::optional<EarlyStop> early_stop;

  void validate() const;
  std::vector<std::size_t> validated_tasks() const;
};

struct ValidationRecord {
  std::uint64_t step = 0;
  std::size_t task_id = 0;
  double mean_norm_mse = 0.0;   // averaged over shot positions
  std::vector<double> curve;    // per shot
};

struct TrainHistory {
  std::vector<double> loss;           // loss[t - 1] for step t
  std::vector<std::size_t> task_log;  // task id of step t
  std::vector<ValidationRecord> validations;
  double wall_seconds = 0.0;
  bool stopped_early = false;

  std::uint64_t steps() const { return loss.size(); }
  // First validation step at which the task's mean normalized MSE is <= threshold.
  std::optional<std::uint64_t> first_step_reaching(std::size_t task_id, double threshold) const;
  const ValidationRecord* last_validation(std::size_t task_id) const;
};

struct TrainResult {
  ModelState model;
  AdamState optimizer;
  TrainHistory history;
  std::vector<std::filesystem::path> checkpoints;
  std::string rng_state;
};

class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(std::uint64_t step, std::size_t task_id, double loss);
  std::uint64_t step;
  std::size_t task_id;
  double loss;
};

// Same seed and config give bit-identical results.
TrainResult train(const TrainConfig& config);

// Continuation config: weights come from the checkpoint, optimizer state is fresh,
// steps restart at 1 under the new schedule.
TrainConfig warm_start(const std::filesystem::path& checkpoint, TrainConfig base, CurriculumSchedule schedule);

// Fixed validation prompts for one task, shared across steps and runs.
PromptBatch validation_set(const TrainConfig& config, std::size_t task_id);

// Normalized MSE curve of the model on a prompt set (evaluated in chunks).
EvalCurve evaluate_model(const ModelState& state, const PromptBatch& prompts, const HeadMask& mask = {});

// Columns: step,task_id,train_loss
void write_loss_csv(std::ostream& out, const TrainHistory& history);
// Columns: step,task_id,val_norm_mse,shots  (shots = -1 holds the mean over shots)
void write_validation_csv(std::ostream& out, const TrainHistory& history);

std::uint64_t curriculum_stream(std::uint64_t seed);

}  // namespace icl
