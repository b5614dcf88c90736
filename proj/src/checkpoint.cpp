#include "icl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace icl {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic = {'I', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kInt = 0;
constexpr std::uint8_t kString = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <class T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    pod(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) pod(static_cast<std::uint64_t>(e));
    out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  void parameters(const Parameters& p) {
    pod(static_cast<std::uint32_t>(p.count_tensors()));
    p.for_each([&](const std::string& name, const Tensor& t) { tensor(name, t); });
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  template <class T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw std::runtime_error("checkpoint: truncated file");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw std::runtime_error("checkpoint: truncated string");
    return s;
  }
  Tensor tensor(const std::string& expected_name, const std::vector<std::size_t>& expected_shape) {
    const std::string name = str();
    if (name != expected_name) throw std::runtime_error("checkpoint: expected tensor '" + expected_name + "', found '" + name + "'");
    const auto rank = pod<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(pod<std::uint64_t>());
    if (shape != expected_shape)
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                               shape_string(expected_shape));
    Tensor t(shape);
    in_.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in_) throw std::runtime_error("checkpoint: truncated tensor data");
    return t;
  }
  void parameters(Parameters& p) {
    const auto n = pod<std::uint32_t>();
    if (n != p.count_tensors()) throw std::runtime_error("checkpoint: parameter tensor count mismatch");
    p.for_each([&](const std::string& name, Tensor& t) { t = tensor(name, t.shape()); });
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  Writer w(out);
  out.write(kMagic.data(), kMagic.size());
  w.pod(kCheckpointFormatVersion);
  const ModelConfig& c = ckpt.model.config;
  const std::vector<std::pair<std::string, std::uint64_t>> ints = {
      {"n_layers", c.n_layers}, {"n_heads", c.n_heads},     {"embed_dim", c.embed_dim},
      {"input_dim", c.input_dim}, {"max_pairs", c.max_pairs}, {"n_tasks", c.n_tasks}};
  w.pod(static_cast<std::uint32_t>(ints.size() + 1));
  for (const auto& [k, v] : ints) {
    w.str(k);
    w.pod(kInt);
    w.pod(static_cast<std::int64_t>(v));
  }
  w.str("instruction_mode");
  w.pod(kString);
  w.str(to_string(c.instruction_mode));

  w.pod(ckpt.step);
  w.str(ckpt.rng_state);
  w.parameters(ckpt.model.params);
  const bool has_instr = !ckpt.model.instruction_vectors.empty();
  w.pod(static_cast<std::uint8_t>(has_instr ? 1 : 0));
  if (has_instr) w.tensor("instruction_vectors", ckpt.model.instruction_vectors);
  w.pod(ckpt.optimizer.step);
  w.parameters(ckpt.optimizer.first_moment);
  w.parameters(ckpt.optimizer.second_moment);
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));

  ModelConfig c;
  const auto fields = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < fields; ++i) {
    const std::string key = r.str();
    const auto type = r.pod<std::uint8_t>();
    if (type == kInt) {
      const auto v = static_cast<std::size_t>(r.pod<std::int64_t>());
      if (key == "n_layers") c.n_layers = v;
      else if (key == "n_heads") c.n_heads = v;
      else if (key == "embed_dim") c.embed_dim = v;
      else if (key == "input_dim") c.input_dim = v;
      else if (key == "max_pairs") c.max_pairs = v;
      else if (key == "n_tasks") c.n_tasks = v;
      else throw std::runtime_error("checkpoint: unknown config field '" + key + "'");
    } else if (type == kString) {
      const std::string v = r.str();
      if (key == "instruction_mode") c.instruction_mode = parse_instruction_mode(v);
      else throw std::runtime_error("checkpoint: unknown config field '" + key + "'");
    } else {
      throw std::runtime_error("checkpoint: unknown field type");
    }
  }
  c.validate();

  Checkpoint ckpt;
  ckpt.model.config = c;
  ckpt.step = r.pod<std::uint64_t>();
  ckpt.rng_state = r.str();
  ckpt.model.params = Parameters::zeros(c);
  r.parameters(ckpt.model.params);
  if (r.pod<std::uint8_t>() != 0)
    ckpt.model.instruction_vectors = r.tensor("instruction_vectors", {c.n_tasks, c.embed_dim});
  if ((c.instruction_mode == InstructionMode::Preset) != !ckpt.model.instruction_vectors.empty())
    throw std::runtime_error("checkpoint: instruction vectors inconsistent with instruction mode");
  ckpt.optimizer = AdamState::zeros(c);
  ckpt.optimizer.step = r.pod<std::uint64_t>();
  r.parameters(ckpt.optimizer.first_moment);
  r.parameters(ckpt.optimizer.second_moment);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
    write_checkpoint(out, ckpt);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace icl
