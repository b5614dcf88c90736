#include <cmath>
#include <vector>

#include <doctest.h>

#include "icl/gradcheck.hpp"
#include "icl/model.hpp"
#include "icl/training.hpp"
#include "support/reference_model.hpp"

using namespace icl;

namespace {

ModelConfig small_config(InstructionMode mode = InstructionMode::None) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 16;
  c.input_dim = 3;
  c.max_pairs = 6;
  c.instruction_mode = mode;
  c.n_tasks = 3;
  return c;
}

PromptBatch sample_prompts(std::size_t batch, std::size_t pairs, std::uint64_t seed, std::size_t task_id = 0,
                           FunctionClass cls = FunctionClass::Linear) {
  Rng rng = make_rng(seed, 77);
  return generate_batch(TaskSpec{cls, {}, 3}, batch, pairs, rng, task_id).prompts;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("token layout lengths") {
  ModelConfig c = small_config();
  CHECK(layout_for(c, 3).tokens() == 6);
  c.instruction_mode = InstructionMode::OneHot;
  CHECK(layout_for(c, 3).tokens() == 7);
  CHECK(layout_for(c, 3).x_position(0) == 1);
  CHECK(layout_for(c, 3).y_position(2) == 6);
  c.instruction_mode = InstructionMode::Preset;
  CHECK(layout_for(c, 3).tokens() == 7);
}

TEST_CASE("carriers place x, y and the one-hot instruction") {
  ModelState s = ModelState::initialize(small_config(), 1);
  PromptBatch p = sample_prompts(1, 3, 5);
  p.y[1] = 4.2;
  TokenBatch t = embed_sequence(p, s);
  CHECK(t.carriers.at(3, 0) == 4.2);
  CHECK(t.carriers.at(3, 1) == 0.0);
  CHECK(t.carriers.at(3, 2) == 0.0);
  for (std::size_t k = 0; k < 3; ++k) CHECK(t.carriers.at(2, k) == p.input(0, 1)[k]);

  ModelState o = ModelState::initialize(small_config(InstructionMode::OneHot), 1);
  p.task_id = 2;
  TokenBatch u = embed_sequence(p, o);
  CHECK(u.tokens() == 7);
  CHECK(u.carriers.cols() == 6);
  const std::vector<double> first(u.carriers.values().begin(), u.carriers.values().begin() + 6);
  CHECK(first == std::vector<double>{0, 0, 0, 0, 0, 1});
  CHECK(u.carriers.at(4, 0) == 4.2);
}

TEST_CASE("forward agrees with the long double reference") {
  for (auto mode : {InstructionMode::None, InstructionMode::OneHot, InstructionMode::Preset}) {
    CAPTURE(to_string(mode));
    ModelState s = ModelState::initialize(small_config(mode), 3);
    PromptBatch p = sample_prompts(3, 5, 8, 1, FunctionClass::Cubic);
    HeadMask mask;
    mask.heads.insert({1, 0});
    for (const HeadMask& m : {HeadMask{}, mask}) {
      const ForwardResult r = forward(s, embed_sequence(p, s), m, true);
      const std::size_t len = layout_for(s.config, 5).tokens();
      for (std::size_t b = 0; b < p.batch; ++b) {
        const auto ref = reference::forward_sequence<long double>(s, p, b, m);
        for (std::size_t j = 0; j < len; ++j)
          CHECK(std::abs(r.outputs.at(b, j) - static_cast<double>(ref.read_out[j])) < 1e-12);
        for (std::size_t l = 0; l < 2; ++l)
          for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < len * len; ++i)
              CHECK(std::abs(r.captures[b].at(l, h)[i] - static_cast<double>(ref.attention[l * 2 + h].v[i])) < 1e-12);
      }
    }
  }
}

TEST_CASE("outputs are causal") {
  ModelState s = ModelState::initialize(small_config(), 4);
  PromptBatch a = sample_prompts(1, 5, 1);
  PromptBatch b = a;
  b.x[3 * 3 + 1] += 2.0;  // x_4
  b.y[4] = -9.0;          // y_5
  const Tensor oa = forward(s, embed_sequence(a, s), {}, false).outputs;
  const Tensor ob = forward(s, embed_sequence(b, s), {}, false).outputs;
  for (std::size_t j = 0; j < 6; ++j) CHECK(oa.at(0, j) == ob.at(0, j));
  CHECK(oa.at(0, 6) != ob.at(0, 6));
}

TEST_CASE("empty mask is bit-identical to no mask") {
  ModelState s = ModelState::initialize(small_config(), 5);
  PromptBatch p = sample_prompts(4, 6, 2);
  const TokenBatch t = embed_sequence(p, s);
  HeadMask empty;
  const Tensor a = forward(s, t, empty, false).outputs;
  const Tensor b = forward(s, t, HeadMask{}, true).outputs;
  CHECK(a == b);
  ForwardTape tape;
  CHECK(forward_with_tape(s, t, empty, tape) == a);
}

TEST_CASE("captured attention is row-stochastic and causal") {
  ModelState s = ModelState::initialize(small_config(), 6);
  PromptBatch p = sample_prompts(2, 4, 3);
  const ForwardResult r = forward(s, embed_sequence(p, s), {}, true);
  REQUIRE(r.captures.size() == 2);
  for (const auto& cap : r.captures) {
    CHECK(cap.matrices.size() == 4);
    for (const auto& m : cap.matrices) {
      for (std::size_t i = 0; i < 8; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
          if (j > i) CHECK(m.at(i, j) == 0.0);
          CHECK(m.at(i, j) >= 0.0);
          sum += m.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("masking every head removes all dependence on earlier tokens") {
  ModelState s = ModelState::initialize(small_config(), 7);
  PromptBatch a = sample_prompts(1, 4, 4);
  PromptBatch b = sample_prompts(1, 4, 9);
  // Same final query, different history.
  for (std::size_t k = 0; k < 3; ++k) b.x[3 * 3 + k] = a.x[3 * 3 + k];
  const HeadMask all = HeadMask::all(s.config);
  const Tensor oa = forward(s, embed_sequence(a, s), all, false).outputs;
  const Tensor ob = forward(s, embed_sequence(b, s), all, false).outputs;
  CHECK(oa.at(0, 6) == ob.at(0, 6));
  const Tensor ua = forward(s, embed_sequence(a, s), {}, false).outputs;
  const Tensor ub = forward(s, embed_sequence(b, s), {}, false).outputs;
  CHECK(ua.at(0, 6) != ub.at(0, 6));
}

TEST_CASE("head mask validation") {
  HeadMask m;
  m.heads.insert({2, 0});
  CHECK_THROWS(m.validate(small_config()));
  CHECK(HeadMask::all(small_config()).heads.size() == 4);
}

TEST_CASE("preset instruction vector replaces the first embedding") {
  ModelState s = ModelState::initialize(small_config(InstructionMode::Preset), 2);
  PromptBatch p = sample_prompts(1, 2, 1, 1);
  const TokenBatch t = embed_sequence(p, s);
  for (std::size_t e = 0; e < 16; ++e)
    CHECK(t.embeddings.at(0, e) == s.instruction_vectors.at(1, e) + s.params.positional.at(0, e));
  ModelState again = ModelState::initialize(small_config(InstructionMode::Preset), 99);
  CHECK(again.instruction_vectors == s.instruction_vectors);
}

TEST_CASE("predict_in_context reads out at x positions") {
  ModelState s = ModelState::initialize(small_config(InstructionMode::OneHot), 8);
  PromptBatch p = sample_prompts(2, 3, 6, 1);
  const Tensor full = forward(s, embed_sequence(p, s), {}, false).outputs;
  const Tensor pred = predict_in_context(s, p);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) CHECK(pred.at(b, i) == full.at(b, 1 + 2 * i));
}

TEST_CASE("gradient matches long double central differences on a small model") {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.embed_dim = 8;
  c.input_dim = 2;
  c.max_pairs = 3;
  ModelState s = ModelState::initialize(c, 11);
  Rng rng = make_rng(12, 1);
  const PromptBatch p = generate_batch(TaskSpec{FunctionClass::Linear, {}, 2}, 2, 3, rng).prompts;
  DifferentiableFunction f;
  f.value = [&](std::span<const double> w) {
    ModelState m = s;
    m.params.assign(w);
    return reference::prefix_loss<long double>(m, p);
  };
  f.gradient = [&](std::span<const double> w) {
    ModelState m = s;
    m.params.assign(w);
    Parameters g = Parameters::zeros(c);
    ForwardTape tape;
    loss_and_gradient(m, p, g, tape);
    return g.flatten();
  };
  const auto r = gradient_check(f, s.params.flatten(), 2e-6);
  CAPTURE(r.worst_index);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("masked heads get zero gradient through their own parameters only") {
  ModelConfig c = small_config();
  ModelState s = ModelState::initialize(c, 13);
  PromptBatch p = sample_prompts(2, 4, 7);
  HeadMask m;
  m.heads.insert({0, 1});
  ForwardTape tape;
  const TokenBatch t = embed_sequence(p, s);
  const Tensor out = forward_with_tape(s, t, m, tape);
  Tensor g({out.rows(), out.cols()}, 1.0);
  Parameters grads = Parameters::zeros(c);
  backward(s, t, m, tape, g, grads);
  // Query/key/value columns of head 1 in layer 0 carry no gradient.
  const std::size_t e = c.embed_dim, hd = c.head_dim();
  for (std::size_t part = 0; part < 3; ++part)
    for (std::size_t r = 0; r < e; ++r)
      for (std::size_t k = 0; k < hd; ++k) CHECK(grads.blocks[0].qkv_weight.at(r, part * e + hd + k) == 0.0);
  CHECK(max_abs_diff(grads.blocks[0].qkv_weight, Tensor({e, 3 * e})) > 0.0);
}
