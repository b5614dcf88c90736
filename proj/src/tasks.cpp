#include "icl/tasks.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace icl {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt3 = 0.57735026918962576451;
constexpr double kInvSqrt6 = 0.40824829046386301637;

}  // namespace

double hermite_normalized(int degree, double t) {
  switch (degree) {
    case 1:
      return t;
    case 2:
      return (t * t - 1.0) * kInvSqrt2;
    case 3:
      return (t * t * t - 3.0 * t) * kInvSqrt6;
    default:
      throw std::invalid_argument("hermite_normalized: unsupported degree " + std::to_string(degree));
  }
}

double eval_phi(FunctionClass cls, double t) {
  switch (cls) {
    case FunctionClass::Linear:
      return t;
    case FunctionClass::Quadratic:
      return kInvSqrt2 * (t + kInvSqrt2 * (t * t - 1.0));
    case FunctionClass::Cubic:
      return kInvSqrt3 * (t + kInvSqrt2 * (t * t - 1.0) + kInvSqrt6 * (t * t * t - 3.0 * t));
  }
  throw std::invalid_argument("eval_phi: unknown function class");
}

std::vector<double> skew_eigenvalues(const InputDistribution& dist, std::size_t dim) {
  std::vector<double> lambda(dim);
  for (std::size_t k = 0; k < dim; ++k) lambda[k] = std::pow(static_cast<double>(k + 1), -dist.skew_exponent);
  return lambda;
}

std::vector<double> skew_basis(const InputDistribution& dist, std::size_t dim) {
  Rng rng(dist.basis_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) g(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix column signs so the basis is Haar-distributed and unique per seed.
  for (std::size_t c = 0; c < dim; ++c)
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  std::vector<double> out(dim * dim);
  for (std::size_t r2 = 0; r2 < dim; ++r2)
    for (std::size_t c = 0; c < dim; ++c) out[r2 * dim + c] = q(r2, c);
  return out;
}

std::vector<double> sample_inputs(const InputDistribution& dist, std::size_t count, std::size_t dim, Rng& rng) {
  if (dim == 0) throw std::invalid_argument("sample_inputs: dim must be >= 1");
  std::vector<double> out(count * dim);
  switch (dist.kind) {
    case DistributionKind::IsotropicGaussian: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : out) v = normal(rng);
      break;
    }
    case DistributionKind::SkewedGaussian: {
      const auto basis = skew_basis(dist, dim);
      const auto lambda = skew_eigenvalues(dist, dim);
      std::vector<double> scale(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        if (!(lambda[k] > 0.0)) throw std::invalid_argument("sample_inputs: skew eigenvalues must be positive");
        scale[k] = std::sqrt(lambda[k]);
      }
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> z(dim);
      for (std::size_t s = 0; s < count; ++s) {
        for (std::size_t k = 0; k < dim; ++k) z[k] = normal(rng) * scale[k];
        for (std::size_t r = 0; r < dim; ++r) {
          double acc = 0.0;
          for (std::size_t k = 0; k < dim; ++k) acc += basis[r * dim + k] * z[k];
          out[s * dim + r] = acc;
        }
      }
      break;
    }
    case DistributionKind::StudentT: {
      std::student_t_distribution<double> student(kStudentTDegreesOfFreedom);
      const double rescale =
          dist.unit_variance ? 1.0 / std::sqrt(kStudentTDegreesOfFreedom / (kStudentTDegreesOfFreedom - 2.0)) : 1.0;
      for (double& v : out) v = student(rng) * rescale;
      break;
    }
  }
  return out;
}

SequenceBatch generate_batch(const TaskSpec& spec, std::size_t batch, std::size_t pairs, Rng& rng,
                             std::size_t task_id) {
  if (batch == 0 || pairs == 0) throw std::invalid_argument("generate_batch: batch and pairs must be >= 1");
  if (spec.dim == 0) throw std::invalid_argument("generate_batch: dim must be >= 1");
  const std::size_t d = spec.dim;
  SequenceBatch out;
  out.prompts.batch = batch;
  out.prompts.pairs = pairs;
  out.prompts.dim = d;
  out.prompts.task_id = task_id;
  out.prompts.x.resize(batch * pairs * d);
  out.prompts.y.resize(batch * pairs);
  out.weights.resize(batch * d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t b = 0; b < batch; ++b) {
    double* w = out.weights.data() + b * d;
    for (std::size_t k = 0; k < d; ++k) w[k] = normal(rng);
    const auto xs = sample_inputs(spec.inputs, pairs, d, rng);
    std::copy(xs.begin(), xs.end(), out.prompts.x.begin() + static_cast<std::ptrdiff_t>(b * pairs * d));
    for (std::size_t i = 0; i < pairs; ++i) {
      double t = 0.0;
      for (std::size_t k = 0; k < d; ++k) t += xs[i * d + k] * w[k];
      out.prompts.y[b * pairs + i] = eval_phi(spec.function_class, t);
    }
  }
  return out;
}

void write_dataset(std::ostream& out, const SequenceBatch& batch) {
  const auto& p = batch.prompts;
  for (std::size_t b = 0; b < p.batch; ++b) {
    nlohmann::json rec;
    rec["task"] = p.task_id;
    rec["d"] = p.dim;
    rec["n"] = p.pairs;
    const auto w = batch.weight(b);
    rec["w"] = std::vector<double>(w.begin(), w.end());
    auto xs = nlohmann::json::array();
    std::vector<double> ys;
    for (std::size_t i = 0; i < p.pairs; ++i) {
      const auto x = p.input(b, i);
      xs.push_back(std::vector<double>(x.begin(), x.end()));
      ys.push_back(p.target(b, i));
    }
    rec["x"] = std::move(xs);
    rec["y"] = std::move(ys);
    out << rec.dump() << '\n';
  }
}

std::vector<SequenceBatch> read_dataset(std::istream& in) {
  std::vector<SequenceBatch> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    SequenceBatch sb;
    auto& p = sb.prompts;
    p.batch = 1;
    p.task_id = rec.at("task").get<std::size_t>();
    p.dim = rec.at("d").get<std::size_t>();
    p.pairs = rec.at("n").get<std::size_t>();
    sb.weights = rec.at("w").get<std::vector<double>>();
    for (const auto& row : rec.at("x")) {
      const auto v = row.get<std::vector<double>>();
      if (v.size() != p.dim) throw std::runtime_error("read_dataset: input width does not match d");
      p.x.insert(p.x.end(), v.begin(), v.end());
    }
    p.y = rec.at("y").get<std::vector<double>>();
    if (p.y.size() != p.pairs || p.x.size() != p.pairs * p.dim || sb.weights.size() != p.dim) {
      throw std::runtime_error("read_dataset: record sizes inconsistent with header");
    }
    out.push_back(std::move(sb));
  }
  return out;
}

std::string to_string(FunctionClass cls) {
  switch (cls) {
    case FunctionClass::Linear:
      return "linear";
    case FunctionClass::Quadratic:
      return "quadratic";
    case FunctionClass::Cubic:
      return "cubic";
  }
  return "?";
}

std::string to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::IsotropicGaussian:
      return "gaussian";
    case DistributionKind::SkewedGaussian:
      return "skewed";
    case DistributionKind::StudentT:
      return "student_t";
  }
  return "?";
}

FunctionClass parse_function_class(const std::string& s) {
  if (s == "linear") return FunctionClass::Linear;
  if (s == "quadratic") return FunctionClass::Quadratic;
  if (s == "cubic") return FunctionClass::Cubic;
  throw std::invalid_argument("unknown function class '" + s + "'");
}

DistributionKind parse_distribution(const std::string& s) {
  if (s == "gaussian") return DistributionKind::IsotropicGaussian;
  if (s == "skewed") return DistributionKind::SkewedGaussian;
  if (s == "student_t") return DistributionKind::StudentT;
  throw std::invalid_argument("unknown input distribution '" + s + "'");
}

std::string TaskSpec::name() const {
  if (inputs.kind == DistributionKind::IsotropicGaussian) return to_string(function_class);
  return to_string(function_class) + "@" + to_string(inputs.kind);
}

}  // namespace icl
