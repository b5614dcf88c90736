#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "icl/tasks.hpp"
#include "icl/tensor.hpp"

namespace icl {

enum class InstructionMode { None, OneHot, Preset };

std::string to_string(InstructionMode mode);
InstructionMode parse_instruction_mode(const std::string& s);

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t embed_dim = 64;
  std::size_t input_dim = 5;
  std::size_t max_pairs = 40;
  InstructionMode instruction_mode = InstructionMode::None;
  std::size_t n_tasks = 3;

  void validate() const;
  std::size_t head_dim() const { return embed_dim / n_heads; }
  std::size_t mlp_dim() const { return 4 * embed_dim; }
  // Positional table admits one instruction token ahead of 2 * max_pairs.
  std::size_t positions() const { return 2 * max_pairs + 1; }
  // Width of the vectors fed to the read-in map.
  std::size_t read_in_width() const {
    return input_dim + (instruction_mode == InstructionMode::OneHot ? n_tasks : 0);
  }
  std::size_t instruction_offset() const { return instruction_mode == InstructionMode::None ? 0 : 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BlockParameters {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;    // E x 3E, 3E
  Tensor proj_weight, proj_bias;  // E x E, E
  Tensor ln2_gain, ln2_bias;
  Tensor fc_weight, fc_bias;      // E x 4E, 4E
  Tensor out_weight, out_bias;    // 4E x E, E
};

// Trainable parameters. Weights are stored input-major so that y = x W + b.
struct Parameters {
  Tensor read_in_weight, read_in_bias;  // read_in_width x E, E
  Tensor positional;                    // positions x E
  std::vector<BlockParameters> blocks;
  Tensor final_gain, final_bias;
  Tensor read_out_weight, read_out_bias;  // E x 1, 1

  static Parameters zeros(const ModelConfig& config);

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t count() const;
  std::size_t count_tensors() const;
  void set_zero();
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("read_in.weight", self.read_in_weight);
    f("read_in.bias", self.read_in_bias);
    f("positional", self.positional);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      auto& b = self.blocks[l];
      const std::string p = "block" + std::to_string(l) + ".";
      f(p + "ln1.gain", b.ln1_gain);
      f(p + "ln1.bias", b.ln1_bias);
      f(p + "attn.qkv.weight", b.qkv_weight);
      f(p + "attn.qkv.bias", b.qkv_bias);
      f(p + "attn.proj.weight", b.proj_weight);
      f(p + "attn.proj.bias", b.proj_bias);
      f(p + "ln2.gain", b.ln2_gain);
      f(p + "ln2.bias", b.ln2_bias);
      f(p + "mlp.fc.weight", b.fc_weight);
      f(p + "mlp.fc.bias", b.fc_bias);
      f(p + "mlp.out.weight", b.out_weight);
      f(p + "mlp.out.bias", b.out_bias);
    }
    f("final_ln.gain", self.final_gain);
    f("final_ln.bias", self.final_bias);
    f("read_out.weight", self.read_out_weight);
    f("read_out.bias", self.read_out_bias);
  }
};

struct ModelState {
  ModelConfig config;
  Parameters params;
  // n_tasks x E, drawn once from N(0, I) in Preset mode; never trained.
  Tensor instruction_vectors;

  static ModelState initialize(const ModelConfig& config, std::uint64_t seed);
};

struct HeadMask {
  std::set<std::pair<std::size_t, std::size_t>> heads;  // (layer, head)

  bool empty() const { return heads.empty(); }
  bool contains(std::size_t layer, std::size_t head) const { return heads.count({layer, head}) > 0; }
  void validate(const ModelConfig& config) const;

  static HeadMask all(const ModelConfig& config);
  friend bool operator==(const HeadMask&, const HeadMask&) = default;
};

// Token positions of a prompt: optional instruction token, then x_1, y_1, x_2, y_2, ...
struct TokenLayout {
  std::size_t pairs = 0;
  std::size_t offset = 0;

  std::size_t tokens() const { return offset + 2 * pairs; }
  std::size_t x_position(std::size_t i) const { return offset + 2 * i; }
  std::size_t y_position(std::size_t i) const { return offset + 2 * i + 1; }
};

// Attention matrices of one sequence for every (layer, head).
struct AttentionCapture {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t tokens = 0;
  std::vector<Tensor> matrices;  // layer-major, tokens x tokens each

  const Tensor& at(std::size_t layer, std::size_t head) const { return matrices.at(layer * n_heads + head); }
  Tensor& at(std::size_t layer, std::size_t head) { return matrices.at(layer * n_heads + head); }
};

struct TokenBatch {
  std::size_t batch = 0;
  TokenLayout layout;
  std::size_t task_id = 0;
  Tensor carriers;    // (batch * tokens) x read_in_width, the pre-read-in token vectors
  Tensor embeddings;  // (batch * tokens) x E, positional embeddings included

  std::size_t tokens() const { return layout.tokens(); }
};

TokenLayout layout_for(const ModelConfig& config, std::size_t pairs);

TokenBatch embed_sequence(const PromptBatch& prompts, const ModelState& state);

// Activations kept for the backward pass.
struct ForwardTape {
  struct Layer {
    RowMatrix input;
    RowMatrix ln1_hat, ln1_out;
    Eigen::VectorXd ln1_rstd;
    RowMatrix qkv;
    std::vector<RowMatrix> probs;  // batch * heads, tokens x tokens
    RowMatrix heads_out;
    RowMatrix mid;
    RowMatrix ln2_hat, ln2_out;
    Eigen::VectorXd ln2_rstd;
    RowMatrix fc_pre, fc_act;
  };
  std::vector<Layer> layers;
  RowMatrix final_hat, final_out;
  Eigen::VectorXd final_rstd;
};

struct ForwardResult {
  Tensor outputs;  // batch x tokens, read-out at every position
  std::vector<AttentionCapture> captures;  // one per sequence when requested
};

ForwardResult forward(const ModelState& state, const TokenBatch& tokens, const HeadMask& mask, bool capture);

// Same computation, keeping what backward() needs.
Tensor forward_with_tape(const ModelState& state, const TokenBatch& tokens, const HeadMask& mask,
                         ForwardTape& tape);

// Accumulates d(loss)/d(params) into grads given d(loss)/d(outputs) (batch x tokens).
void backward(const ModelState& state, const TokenBatch& tokens, const HeadMask& mask, const ForwardTape& tape,
              const Tensor& output_grad, Parameters& grads);

// batch x pairs predictions; entry (b, i) is read out at x_i given the i preceding pairs.
Tensor predict_in_context(const ModelState& state, const PromptBatch& prompts, const HeadMask& mask = {});

}  // namespace icl
