#include "icl/model.hpp"

#include <cmath>
#include <stdexcept>

#include "icl/ops.hpp"
#include "icl/rng.hpp"

namespace icl {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
// Preset instruction vectors are shared by every model, whatever its seed.
constexpr std::uint64_t kInstructionSeed = 0x1c0ffee;

using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ConstMatrixView weight(const Tensor& t) { return t.as_matrix(); }

Eigen::Map<const RowVector> row_of(const Tensor& t) {
  return Eigen::Map<const RowVector>(t.data(), static_cast<Eigen::Index>(t.size()));
}

Eigen::Map<RowVector> row_of(Tensor& t) { return Eigen::Map<RowVector>(t.data(), static_cast<Eigen::Index>(t.size())); }

// b += column sums of m, as a GEMV; a row-major colwise().sum() is far slower.
void add_column_sums(const RowMatrix& m, Tensor& b) {
  row_of(b).noalias() += RowVector::Ones(m.rows()) * m;
}

void affine(const RowMatrix& in, const Tensor& w, const Tensor& b, RowMatrix& out) {
  out.noalias() = in * weight(w);
  out.rowwise() += row_of(b);
}

void layer_norm_rows(const RowMatrix& x, const Tensor& gain, const Tensor& bias, RowMatrix& hat,
                     Eigen::VectorXd& rstd, RowMatrix& out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index e = x.cols();
  hat.resize(n, e);
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    hat.row(r) = (x.row(r).array() - mean).matrix();
    const double var = hat.row(r).squaredNorm() / static_cast<double>(e);
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    hat.row(r) *= rstd(r);
  }
  out = ((hat.array().rowwise() * row_of(gain).array()).rowwise() + row_of(bias).array()).matrix();
}

void layer_norm_rows_backward(const RowMatrix& dout, const RowMatrix& hat, const Eigen::VectorXd& rstd,
                              const Tensor& gain, Tensor& dgain, Tensor& dbias, RowMatrix& dx) {
  const RowMatrix scaled = (dout.array() * hat.array()).matrix();
  add_column_sums(scaled, dgain);
  add_column_sums(dout, dbias);
  const RowArray dhat = dout.array().rowwise() * row_of(gain).array();
  const double inv_e = 1.0 / static_cast<double>(hat.cols());
  const Eigen::ArrayXd m1 = dhat.rowwise().sum() * inv_e;
  const Eigen::ArrayXd m2 = (dhat * hat.array()).rowwise().sum() * inv_e;
  dx = (((dhat.colwise() - m1) - hat.array().colwise() * m2).colwise() * rstd.array()).matrix();
}

Tensor normal_tensor(std::vector<std::size_t> shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, std);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

void check_grads_shape(const Parameters& params, const Parameters& grads) {
  if (params.blocks.size() != grads.blocks.size()) throw std::invalid_argument("backward: gradient layout mismatch");
  std::vector<std::vector<std::size_t>> shapes;
  params.for_each([&](const std::string&, const Tensor& t) { shapes.push_back(t.shape()); });
  std::size_t i = 0;
  grads.for_each([&](const std::string& name, const Tensor& t) {
    if (t.shape() != shapes[i++]) throw std::invalid_argument("backward: gradient shape mismatch for " + name);
  });
}

}  // namespace

std::string to_string(InstructionMode mode) {
  switch (mode) {
    case InstructionMode::None:
      return "none";
    case InstructionMode::OneHot:
      return "ohei";
    case InstructionMode::Preset:
      return "pi";
  }
  return "?";
}

InstructionMode parse_instruction_mode(const std::string& s) {
  if (s == "none") return InstructionMode::None;
  if (s == "ohei" || s == "OHEI") return InstructionMode::OneHot;
  if (s == "pi" || s == "PI") return InstructionMode::Preset;
  throw std::invalid_argument("unknown instruction mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
  if (n_heads < 1) throw std::invalid_argument("ModelConfig: n_heads must be >= 1");
  if (embed_dim < 1 || embed_dim % n_heads != 0)
    throw std::invalid_argument("ModelConfig: embed_dim must be a positive multiple of n_heads");
  if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be >= 1");
  if (max_pairs < 1) throw std::invalid_argument("ModelConfig: max_pairs must be >= 1");
  if (n_tasks < 1) throw std::invalid_argument("ModelConfig: n_tasks must be >= 1");
}

Parameters Parameters::zeros(const ModelConfig& c) {
  c.validate();
  const std::size_t e = c.embed_dim;
  Parameters p;
  p.read_in_weight = Tensor({c.read_in_width(), e});
  p.read_in_bias = Tensor({e});
  p.positional = Tensor({c.positions(), e});
  p.blocks.resize(c.n_layers);
  for (auto& b : p.blocks) {
    b.ln1_gain = Tensor({e});
    b.ln1_bias = Tensor({e});
    b.qkv_weight = Tensor({e, 3 * e});
    b.qkv_bias = Tensor({3 * e});
    b.proj_weight = Tensor({e, e});
    b.proj_bias = Tensor({e});
    b.ln2_gain = Tensor({e});
    b.ln2_bias = Tensor({e});
    b.fc_weight = Tensor({e, c.mlp_dim()});
    b.fc_bias = Tensor({c.mlp_dim()});
    b.out_weight = Tensor({c.mlp_dim(), e});
    b.out_bias = Tensor({e});
  }
  p.final_gain = Tensor({e});
  p.final_bias = Tensor({e});
  p.read_out_weight = Tensor({e, 1});
  p.read_out_bias = Tensor({1});
  return p;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t Parameters::count_tensors() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor&) { ++n; });
  return n;
}

void Parameters::set_zero() {
  for_each([](const std::string&, Tensor& t) { t.fill(0.0); });
}

std::vector<double> Parameters::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for_each([&](const std::string&, const Tensor& t) { out.insert(out.end(), t.values().begin(), t.values().end()); });
  return out;
}

void Parameters::assign(std::span<const double> flat) {
  if (flat.size() != count()) throw std::invalid_argument("Parameters::assign: size mismatch");
  std::size_t off = 0;
  for_each([&](const std::string&, Tensor& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.values().begin());
    off += t.size();
  });
}

ModelState ModelState::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelState s;
  s.config = config;
  s.params = Parameters::zeros(config);
  Rng rng = make_rng(seed, streams::kInit);
  auto init_normal = [&](Tensor& t) { t = normal_tensor(t.shape(), kInitStd, rng); };
  init_normal(s.params.read_in_weight);
  init_normal(s.params.positional);
  for (auto& b : s.params.blocks) {
    b.ln1_gain.fill(1.0);
    b.ln2_gain.fill(1.0);
    init_normal(b.qkv_weight);
    init_normal(b.proj_weight);
    init_normal(b.fc_weight);
    init_normal(b.out_weight);
  }
  s.params.final_gain.fill(1.0);
  init_normal(s.params.read_out_weight);
  if (config.instruction_mode == InstructionMode::Preset) {
    Rng prng = make_rng(kInstructionSeed, streams::kInstruction);
    s.instruction_vectors = normal_tensor({config.n_tasks, config.embed_dim}, 1.0, prng);
  }
  return s;
}

void HeadMask::validate(const ModelConfig& config) const {
  for (const auto& [layer, head] : heads) {
    if (layer >= config.n_layers || head >= config.n_heads) {
      throw std::out_of_range("HeadMask: (" + std::to_string(layer) + ", " + std::to_string(head) +
                              ") outside model bounds");
    }
  }
}

HeadMask HeadMask::all(const ModelConfig& config) {
  HeadMask m;
  for (std::size_t l = 0; l < config.n_layers; ++l)
    for (std::size_t h = 0; h < config.n_heads; ++h) m.heads.insert({l, h});
  return m;
}

TokenLayout layout_for(const ModelConfig& config, std::size_t pairs) {
  return TokenLayout{pairs, config.instruction_offset()};
}

TokenBatch embed_sequence(const PromptBatch& prompts, const ModelState& state) {
  const ModelConfig& c = state.config;
  if (prompts.dim != c.input_dim) {
    throw std::invalid_argument("embed_sequence: prompt dim " + std::to_string(prompts.dim) +
                                " != model input_dim " + std::to_string(c.input_dim));
  }
  if (prompts.pairs < 1 || prompts.pairs > c.max_pairs)
    throw std::invalid_argument("embed_sequence: pair count outside [1, max_pairs]");
  if (prompts.batch < 1) throw std::invalid_argument("embed_sequence: empty batch");
  if (c.instruction_mode != InstructionMode::None && prompts.task_id >= c.n_tasks)
    throw std::invalid_argument("embed_sequence: task id outside [0, n_tasks)");

  TokenBatch out;
  out.batch = prompts.batch;
  out.layout = layout_for(c, prompts.pairs);
  out.task_id = prompts.task_id;
  const std::size_t len = out.tokens();
  const std::size_t width = c.read_in_width();
  const std::size_t d = c.input_dim;
  out.carriers = Tensor({prompts.batch * len, width});
  for (std::size_t b = 0; b < prompts.batch; ++b) {
    const std::size_t base = b * len;
    if (c.instruction_mode == InstructionMode::OneHot) out.carriers.at(base, d + prompts.task_id) = 1.0;
    for (std::size_t i = 0; i < prompts.pairs; ++i) {
      const auto x = prompts.input(b, i);
      for (std::size_t k = 0; k < d; ++k) out.carriers.at(base + out.layout.x_position(i), k) = x[k];
      out.carriers.at(base + out.layout.y_position(i), 0) = prompts.target(b, i);
    }
  }
  RowMatrix h;
  affine(out.carriers.as_matrix(), state.params.read_in_weight, state.params.read_in_bias, h);
  const auto pos = state.params.positional.as_matrix();
  for (std::size_t b = 0; b < prompts.batch; ++b) {
    const auto base = static_cast<Eigen::Index>(b * len);
    if (c.instruction_mode == InstructionMode::Preset) {
      h.row(base) = row_of(state.instruction_vectors).segment(
          static_cast<Eigen::Index>(prompts.task_id * c.embed_dim), static_cast<Eigen::Index>(c.embed_dim));
    }
    h.middleRows(base, static_cast<Eigen::Index>(len)) += pos.topRows(static_cast<Eigen::Index>(len));
  }
  out.embeddings = Tensor({prompts.batch * len, c.embed_dim}, std::vector<double>(h.data(), h.data() + h.size()));
  return out;
}

Tensor forward_with_tape(const ModelState& state, const TokenBatch& tokens, const HeadMask& mask,
                         ForwardTape& tape) {
  const ModelConfig& c = state.config;
  mask.validate(c);
  if (tokens.tokens() > c.positions()) throw std::invalid_argument("forward: token count exceeds positional table");
  if (tokens.embeddings.cols() != c.embed_dim) throw std::invalid_argument("forward: embedding width mismatch");
  const auto batch = static_cast<Eigen::Index>(tokens.batch);
  const auto len = static_cast<Eigen::Index>(tokens.tokens());
  const auto e = static_cast<Eigen::Index>(c.embed_dim);
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const auto heads = static_cast<Eigen::Index>(c.n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  RowMatrix x = tokens.embeddings.as_matrix();
  tape.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto& t = tape.layers[l];
    const auto& p = state.params.blocks[l];
    t.input = x;
    layer_norm_rows(t.input, p.ln1_gain, p.ln1_bias, t.ln1_hat, t.ln1_rstd, t.ln1_out);
    affine(t.ln1_out, p.qkv_weight, p.qkv_bias, t.qkv);
    t.probs.resize(static_cast<std::size_t>(batch * heads));
    t.heads_out.setZero(batch * len, e);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index h = 0; h < heads; ++h) {
        const auto q = t.qkv.block(b * len, h * hd, len, hd);
        const auto k = t.qkv.block(b * len, e + h * hd, len, hd);
        const auto v = t.qkv.block(b * len, 2 * e + h * hd, len, hd);
        RowMatrix& probs = t.probs[static_cast<std::size_t>(b * heads + h)];
        probs.noalias() = q * k.transpose();
        probs *= scale;
        causal_softmax_inplace(probs);
        if (!mask.contains(l, static_cast<std::size_t>(h))) {
          t.heads_out.block(b * len, h * hd, len, hd).noalias() = probs * v;
        }
      }
    }
    affine(t.heads_out, p.proj_weight, p.proj_bias, t.mid);
    t.mid += t.input;
    layer_norm_rows(t.mid, p.ln2_gain, p.ln2_bias, t.ln2_hat, t.ln2_rstd, t.ln2_out);
    affine(t.ln2_out, p.fc_weight, p.fc_bias, t.fc_pre);
    t.fc_act.resize(t.fc_pre.rows(), t.fc_pre.cols());
    gelu_forward({t.fc_pre.data(), static_cast<std::size_t>(t.fc_pre.size())},
                 {t.fc_act.data(), static_cast<std::size_t>(t.fc_act.size())});
    affine(t.fc_act, p.out_weight, p.out_bias, x);
    x += t.mid;
  }
  layer_norm_rows(x, state.params.final_gain, state.params.final_bias, tape.final_hat, tape.final_rstd,
                  tape.final_out);
  RowMatrix out;
  affine(tape.final_out, state.params.read_out_weight, state.params.read_out_bias, out);
  return Tensor({tokens.batch, tokens.tokens()}, std::vector<double>(out.data(), out.data() + out.size()));
}

ForwardResult forward(const ModelState& state, const TokenBatch& tokens, const HeadMask& mask, bool capture) {
  ForwardTape tape;
  ForwardResult result;
  result.outputs = forward_with_tape(state, tokens, mask, tape);
  if (capture) {
    const std::size_t len = tokens.tokens();
    const std::size_t heads = state.config.n_heads;
    result.captures.resize(tokens.batch);
    for (std::size_t b = 0; b < tokens.batch; ++b) {
      auto& cap = result.captures[b];
      cap.n_layers = state.config.n_layers;
      cap.n_heads = heads;
      cap.tokens = len;
      cap.matrices.reserve(cap.n_layers * heads);
      for (std::size_t l = 0; l < cap.n_layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
          const RowMatrix& p = tape.layers[l].probs[b * heads + h];
          cap.matrices.emplace_back(std::vector<std::size_t>{len, len},
                                    std::vector<double>(p.data(), p.data() + p.size()));
        }
      }
    }
  }
  return result;
}

void backward(const ModelState& state, const TokenBatch& tokens, const HeadMask& mask, const ForwardTape& tape,
              const Tensor& output_grad, Parameters& grads) {
  const ModelConfig& c = state.config;
  check_grads_shape(state.params, grads);
  if (output_grad.size() != tokens.batch * tokens.tokens())
    throw std::invalid_argument("backward: output gradient has wrong size");
  const auto batch = static_cast<Eigen::Index>(tokens.batch);
  const auto len = static_cast<Eigen::Index>(tokens.tokens());
  const auto n = batch * len;
  const auto e = static_cast<Eigen::Index>(c.embed_dim);
  const auto hd = static_cast<Eigen::Index>(c.head_dim());
  const auto heads = static_cast<Eigen::Index>(c.n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const ConstMatrixView dy(output_grad.data(), n, 1);
  grads.read_out_weight.as_matrix().noalias() += tape.final_out.transpose() * dy;
  grads.read_out_bias[0] += dy.sum();
  const RowMatrix d_final = dy * weight(state.params.read_out_weight).transpose();
  RowMatrix dx;
  layer_norm_rows_backward(d_final, tape.final_hat, tape.final_rstd, state.params.final_gain, grads.final_gain,
                           grads.final_bias, dx);

  RowMatrix d_act, d_pre, d_ln, d_norm, d_mid, d_heads, d_qkv, d_probs, d_scores;
  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& t = tape.layers[li];
    const auto& p = state.params.blocks[li];
    auto& g = grads.blocks[li];

    grads.blocks[li].out_weight.as_matrix().noalias() += t.fc_act.transpose() * dx;
    add_column_sums(dx, g.out_bias);
    d_act.noalias() = dx * weight(p.out_weight).transpose();
    d_pre.resize(d_act.rows(), d_act.cols());
    gelu_backward({t.fc_pre.data(), static_cast<std::size_t>(t.fc_pre.size())},
                  {d_act.data(), static_cast<std::size_t>(d_act.size())},
                  {d_pre.data(), static_cast<std::size_t>(d_pre.size())});
    g.fc_weight.as_matrix().noalias() += t.ln2_out.transpose() * d_pre;
    add_column_sums(d_pre, g.fc_bias);
    d_ln.noalias() = d_pre * weight(p.fc_weight).transpose();
    layer_norm_rows_backward(d_ln, t.ln2_hat, t.ln2_rstd, p.ln2_gain, g.ln2_gain, g.ln2_bias, d_norm);
    d_mid = dx + d_norm;

    g.proj_weight.as_matrix().noalias() += t.heads_out.transpose() * d_mid;
    add_column_sums(d_mid, g.proj_bias);
    d_heads.noalias() = d_mid * weight(p.proj_weight).transpose();
    d_qkv.setZero(n, 3 * e);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index h = 0; h < heads; ++h) {
        if (mask.contains(li, static_cast<std::size_t>(h))) continue;
        const RowMatrix& probs = t.probs[static_cast<std::size_t>(b * heads + h)];
        const auto q = t.qkv.block(b * len, h * hd, len, hd);
        const auto k = t.qkv.block(b * len, e + h * hd, len, hd);
        const auto v = t.qkv.block(b * len, 2 * e + h * hd, len, hd);
        const auto d_out = d_heads.block(b * len, h * hd, len, hd);
        d_probs.noalias() = d_out * v.transpose();
        d_qkv.block(b * len, 2 * e + h * hd, len, hd).noalias() = probs.transpose() * d_out;
        const Eigen::ArrayXd row_dot = (probs.array() * d_probs.array()).rowwise().sum();
        d_scores = ((probs.array() * (d_probs.array().colwise() - row_dot)) * scale).matrix();
        d_qkv.block(b * len, h * hd, len, hd).noalias() = d_scores * k;
        d_qkv.block(b * len, e + h * hd, len, hd).noalias() = d_scores.transpose() * q;
      }
    }
    g.qkv_weight.as_matrix().noalias() += t.ln1_out.transpose() * d_qkv;
    add_column_sums(d_qkv, g.qkv_bias);
    d_ln.noalias() = d_qkv * weight(p.qkv_weight).transpose();
    layer_norm_rows_backward(d_ln, t.ln1_hat, t.ln1_rstd, p.ln1_gain, g.ln1_gain, g.ln1_bias, d_norm);
    dx = d_mid + d_norm;
  }

  auto dpos = grads.positional.as_matrix();
  for (Eigen::Index b = 0; b < batch; ++b) {
    dpos.topRows(len) += dx.middleRows(b * len, len);
    if (c.instruction_mode == InstructionMode::Preset) dx.row(b * len).setZero();
  }
  grads.read_in_weight.as_matrix().noalias() += tokens.carriers.as_matrix().transpose() * dx;
  add_column_sums(dx, grads.read_in_bias);
}

Tensor predict_in_context(const ModelState& state, const PromptBatch& prompts, const HeadMask& mask) {
  const TokenBatch tokens = embed_sequence(prompts, state);
  const ForwardResult result = forward(state, tokens, mask, false);
  Tensor out({prompts.batch, prompts.pairs});
  for (std::size_t b = 0; b < prompts.batch; ++b)
    for (std::size_t i = 0; i < prompts.pairs; ++i)
      out.at(b, i) = result.outputs.at(b, tokens.layout.x_position(i));
  return out;
}

}  // namespace icl
