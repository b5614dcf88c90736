#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "icl/evaluation.hpp"
#include "icl/model.hpp"

namespace icl {

// Mean attention from each f(x_i) token back to its own x_i token, per (layer, head).
struct RetrospectiveScores {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<double> values;  // layer-major

  double at(std::size_t layer, std::size_t head) const { return values.at(layer * n_heads + head); }
  std::size_t total_heads() const { return n_layers * n_heads; }
};

RetrospectiveScores retrospective_scores(const AttentionCapture& capture, const TokenLayout& layout);

// Mean over sequences.
RetrospectiveScores retrospective_scores(const std::vector<AttentionCapture>& captures, const TokenLayout& layout);

// Runs the model with capture on the probe set and aggregates.
RetrospectiveScores probe_model(const ModelState& state, const PromptBatch& probe_set);

enum class SelectMode { Top, Bottom };

// Ties broken by (layer, head) order.
HeadMask select_heads(const RetrospectiveScores& scores, std::size_t k, SelectMode mode);

// ceil(total heads / 10)
std::size_t default_mask_count(const ModelConfig& config);

struct AblationResult {
  HeadMask top_mask;
  HeadMask bottom_mask;
  EvalCurve top_masked;
  EvalCurve bottom_masked;
  std::vector<double> difference;  // top - bottom, per shot
};

// Scores are taken on `probe_set`; both masked curves are evaluated on `dataset`.
AblationResult masked_ablation(const ModelState& state, const PromptBatch& dataset, const PromptBatch& probe_set,
                               std::size_t k);
AblationResult masked_ablation(const ModelState& state, const PromptBatch& dataset, std::size_t k);

// Columns: layer,head,score,task,model
void write_scores_csv(std::ostream& out, const RetrospectiveScores& scores, const std::string& task,
                      const std::string& model, bool header = true);

// [[layer, head], ...]
std::string mask_to_json(const HeadMask& mask);
HeadMask mask_from_json(const std::string& text);

}  // namespace icl
