#include "icl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "icl/csv.hpp"

namespace icl {

RetrospectiveScores retrospective_scores(const AttentionCapture& capture, const TokenLayout& layout) {
  if (capture.tokens != layout.tokens())
    throw std::invalid_argument("retrospective_scores: capture has " + std::to_string(capture.tokens) +
                                " tokens, layout expects " + std::to_string(layout.tokens()));
  if (capture.matrices.size() != capture.n_layers * capture.n_heads)
    throw std::invalid_argument("retrospective_scores: capture is missing matrices");
  if (layout.pairs == 0) throw std::invalid_argument("retrospective_scores: layout has no pairs");
  RetrospectiveScores s;
  s.n_layers = capture.n_layers;
  s.n_heads = capture.n_heads;
  s.values.assign(s.total_heads(), 0.0);
  for (std::size_t l = 0; l < s.n_layers; ++l) {
    for (std::size_t h = 0; h < s.n_heads; ++h) {
      const Tensor& att = capture.at(l, h);
      if (att.rank() != 2 || att.extent(0) != layout.tokens() || att.extent(1) != layout.tokens())
        throw std::invalid_argument("retrospective_scores: attention matrix size mismatch");
      double acc = 0.0;
      for (std::size_t i = 0; i < layout.pairs; ++i) acc += att.at(layout.y_position(i), layout.x_position(i));
      s.values[l * s.n_heads + h] = acc / static_cast<double>(layout.pairs);
    }
  }
  return s;
}

RetrospectiveScores retrospective_scores(const std::vector<AttentionCapture>& captures, const TokenLayout& layout) {
  if (captures.empty()) throw std::invalid_argument("retrospective_scores: no captures");
  RetrospectiveScores total = retrospective_scores(captures.front(), layout);
  for (std::size_t c = 1; c < captures.size(); ++c) {
    const auto s = retrospective_scores(captures[c], layout);
    if (s.n_layers != total.n_layers || s.n_heads != total.n_heads)
      throw std::invalid_argument("retrospective_scores: captures disagree on head layout");
    for (std::size_t i = 0; i < s.values.size(); ++i) total.values[i] += s.values[i];
  }
  for (double& v : total.values) v /= static_cast<double>(captures.size());
  return total;
}

RetrospectiveScores probe_model(const ModelState& state, const PromptBatch& probe_set) {
  const TokenBatch tokens = embed_sequence(probe_set, state);
  const ForwardResult r = forward(state, tokens, HeadMask{}, true);
  return retrospective_scores(r.captures, tokens.layout);
}

HeadMask select_heads(const RetrospectiveScores& scores, std::size_t k, SelectMode mode) {
  const std::size_t total = scores.total_heads();
  if (k > total) throw std::out_of_range("select_heads: k exceeds the number of heads");
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mode == SelectMode::Top ? scores.values[a] > scores.values[b] : scores.values[a] < scores.values[b];
  });
  HeadMask mask;
  for (std::size_t i = 0; i < k; ++i) mask.heads.insert({order[i] / scores.n_heads, order[i] % scores.n_heads});
  return mask;
}

std::size_t default_mask_count(const ModelConfig& config) {
  const std::size_t total = config.n_layers * config.n_heads;
  return (total + 9) / 10;
}

AblationResult masked_ablation(const ModelState& state, const PromptBatch& dataset, const PromptBatch& probe_set,
                               std::size_t k) {
  const RetrospectiveScores scores = probe_model(state, probe_set);
  AblationResult r;
  r.top_mask = select_heads(scores, k, SelectMode::Top);
  r.bottom_mask = select_heads(scores, k, SelectMode::Bottom);
  const Normalizer norm = Normalizer::from_targets(dataset);
  r.top_masked = normalized_mse(predict_in_context(state, dataset, r.top_mask), dataset, norm);
  r.bottom_masked = normalized_mse(predict_in_context(state, dataset, r.bottom_mask), dataset, norm);
  r.difference.resize(r.top_masked.size());
  for (std::size_t i = 0; i < r.difference.size(); ++i)
    r.difference[i] = r.top_masked.values[i] - r.bottom_masked.values[i];
  return r;
}

AblationResult masked_ablation(const ModelState& state, const PromptBatch& dataset, std::size_t k) {
  return masked_ablation(state, dataset, dataset, k);
}

void write_scores_csv(std::ostream& out, const RetrospectiveScores& scores, const std::string& task,
                      const std::string& model, bool header) {
  if (header) {
    write_csv_version(out);
    out << "layer,head,score,task,model\n";
  }
  out << std::setprecision(17);
  for (std::size_t l = 0; l < scores.n_layers; ++l)
    for (std::size_t h = 0; h < scores.n_heads; ++h)
      out << l << ',' << h << ',' << scores.at(l, h) << ',' << task << ',' << model << '\n';
}

std::string mask_to_json(const HeadMask& mask) {
  auto arr = nlohmann::json::array();
  for (const auto& [l, h] : mask.heads) arr.push_back({l, h});
  return arr.dump();
}

HeadMask mask_from_json(const std::string& text) {
  HeadMask mask;
  for (const auto& item : nlohmann::json::parse(text)) {
    if (!item.is_array() || item.size() != 2) throw std::invalid_argument("mask_from_json: expected [layer, head] pairs");
    mask.heads.insert({item[0].get<std::size_t>(), item[1].get<std::size_t>()});
  }
  return mask;
}

}  // namespace icl
