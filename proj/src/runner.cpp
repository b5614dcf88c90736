#include "icl/runner.hpp"

#include <algorithm>
#include <charconv>
#include <deque>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "icl/csv.hpp"
#include "icl/curriculum.hpp"
#include "icl/probe.hpp"
#include "icl/rng.hpp"

namespace icl {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <class T>
std::string join_numbers(const std::vector<T>& items) {
  std::vector<std::string> s;
  for (const auto& v : items) s.push_back(std::to_string(v));
  return join(s);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& path) { return json::parse(read_text(path)); }

double to_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc()) throw std::runtime_error("bad number '" + s + "'");
  return v;
}

// Keys a config may carry; anything else is reported as a likely typo.
const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "plan.kind", "plan.name", "plan.out", "plan.seeds", "plan.label",
      "model.layers", "model.heads", "model.embed", "model.pairs", "model.instruction",
      "data.dim", "data.tasks", "data.distributions", "data.skew_exponent", "data.basis_seed",
      "data.student_unit_variance",
      "train.steps", "train.batch", "train.lr", "train.beta1", "train.beta2", "train.eps", "train.max_grad_norm",
      "train.validation_interval", "train.validation_size", "train.validation_seed", "train.checkpoint_every",
      "curriculum.strategy", "curriculum.order", "curriculum.strategies", "curriculum.include_single",
      "curriculum.single_task",
      "eval.test_seed", "eval.test_size", "eval.probe_size", "eval.window", "eval.mask_k", "eval.probe",
      "efficiency.target", "efficiency.pretrain_tasks", "efficiency.pretrain_strategy", "efficiency.pretrain_steps",
      "efficiency.pretrain_batch", "efficiency.fresh_steps", "efficiency.fresh_batch", "efficiency.budget_ratio",
  };
  return keys;
}

std::size_t task_index(const std::vector<TaskSpec>& tasks, const std::string& name) {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].name() == name) return i;
  throw ConfigError("unknown task '" + name + "'");
}

CurriculumSchedule schedule_for(Strategy s, std::uint64_t steps, std::vector<std::size_t> order) {
  CurriculumSchedule c;
  c.strategy = s;
  c.total_steps = steps;
  c.tasks = std::move(order);
  return c;
}

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

const Cell& find_cell(const std::vector<Cell>& cells, const std::string& experiment, std::uint64_t seed) {
  for (const auto& c : cells)
    if (c.experiment == experiment && c.seed == seed) return c;
  throw std::logic_error("plan has no cell " + experiment + "/" + std::to_string(seed));
}

std::string single_label(const TaskSpec& t) {
  std::string n = t.name();
  std::replace(n.begin(), n.end(), '@', '-');
  return "single-" + n;
}

json manifest_skeleton(const ExperimentPlan& plan) {
  json m;
  m["format_version"] = kManifestFormatVersion;
  m["lab_version"] = kLabVersion;
  m["checkpoint_format_version"] = kCheckpointFormatVersion;
  m["csv_format_version"] = kCsvFormatVersion;
  json p;
  p["name"] = plan.name;
  p["kind"] = to_string(plan.kind);
  p["seeds"] = plan.seeds;
  p["test_seed"] = plan.eval.test_seed;
  p["test_size"] = plan.eval.test_size;
  p["probe_size"] = plan.eval.probe_size;
  p["window"] = plan.eval.window;
  p["mask_k"] = plan.eval.mask_k;
  p["budget_ratio"] = plan.efficiency.budget_ratio;
  p["target_task"] = plan.efficiency.target_task;
  m["plan"] = p;
  json tasks = json::array();
  for (const auto& t : plan.base.tasks) tasks.push_back(t.name());
  m["tasks"] = tasks;
  m["config"] = plan.source.canonical();
  m["cells"] = json::array();
  return m;
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Single:
      return "single";
    case ExperimentKind::CurriculumCompare:
      return "curriculum-compare";
    case ExperimentKind::ConvergenceSeeds:
      return "convergence-seeds";
    case ExperimentKind::DataEfficiency:
      return "data-efficiency";
    case ExperimentKind::HeadMasking:
      return "head-masking";
    case ExperimentKind::InstructionPrompting:
      return "instruction-prompting";
    case ExperimentKind::DistributionLearning:
      return "distribution-learning";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::Single, ExperimentKind::CurriculumCompare, ExperimentKind::ConvergenceSeeds,
                 ExperimentKind::DataEfficiency, ExperimentKind::HeadMasking, ExperimentKind::InstructionPrompting,
                 ExperimentKind::DistributionLearning})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

ExperimentPlan plan_from_config(const Config& config) {
  for (const auto& [section, body] : config.tree())
    for (const auto& [key, value] : body)
      if (!known_keys().count(section + "." + key)) throw ConfigError("unknown config key '" + section + "." + key + "'");

  ExperimentPlan plan;
  plan.source = config;
  try {
    plan.kind = parse_experiment_kind(config.get_string("plan.kind", "single"));
    plan.name = config.get_string("plan.name", to_string(plan.kind));
    if (plan.name.empty() || plan.name.find('/') != std::string::npos)
      throw ConfigError("plan.name must be a non-empty single path component");
    plan.output_dir = config.get_string("plan.out", "runs");
    plan.seeds = config.get_uint_list("plan.seeds", {0});
    if (plan.seeds.empty()) throw ConfigError("plan.seeds must list at least one seed");
    if (std::set<std::uint64_t>(plan.seeds.begin(), plan.seeds.end()).size() != plan.seeds.size())
      throw ConfigError("plan.seeds contains duplicates");

    const bool dist_plan = plan.kind == ExperimentKind::DistributionLearning;
    const auto classes = config.get_list("data.tasks", dist_plan ? std::vector<std::string>{"linear"}
                                                                 : std::vector<std::string>{"linear", "quadratic", "cubic"});
    const auto dists = config.get_list("data.distributions",
                                       dist_plan ? std::vector<std::string>{"gaussian", "skewed", "student_t"}
                                                 : std::vector<std::string>{"gaussian"});
    if (classes.empty() || dists.empty()) throw ConfigError("data.tasks and data.distributions must be non-empty");
    const std::size_t dim = config.get_uint("data.dim", 5);
    InputDistribution proto;
    proto.skew_exponent = config.get_double("data.skew_exponent", proto.skew_exponent);
    proto.basis_seed = config.get_uint("data.basis_seed", proto.basis_seed);
    proto.unit_variance = config.get_bool("data.student_unit_variance", proto.unit_variance);
    std::vector<TaskSpec> universe;
    for (const auto& c : classes) {
      for (const auto& d : dists) {
        TaskSpec t;
        t.function_class = parse_function_class(c);
        t.inputs = proto;
        t.inputs.kind = parse_distribution(d);
        t.dim = dim;
        universe.push_back(t);
      }
    }
    std::set<std::string> names;
    for (const auto& t : universe)
      if (!names.insert(t.name()).second) throw ConfigError("task '" + t.name() + "' listed twice");

    TrainConfig& b = plan.base;
    b.tasks = universe;
    b.model.n_layers = config.get_uint("model.layers", 2);
    b.model.n_heads = config.get_uint("model.heads", 4);
    b.model.embed_dim = config.get_uint("model.embed", 64);
    b.model.input_dim = dim;
    b.model.max_pairs = config.get_uint("model.pairs", 40);
    b.model.instruction_mode = parse_instruction_mode(config.get_string("model.instruction", "none"));
    b.model.n_tasks = universe.size();
    b.pairs = b.model.max_pairs;
    b.batch_size = config.get_uint("train.batch", 32);
    b.adam.learning_rate = config.get_double("train.lr", b.adam.learning_rate);
    b.adam.beta1 = config.get_double("train.beta1", b.adam.beta1);
    b.adam.beta2 = config.get_double("train.beta2", b.adam.beta2);
    b.adam.epsilon = config.get_double("train.eps", b.adam.epsilon);
    b.max_grad_norm = config.get_double("train.max_grad_norm", 0.0);
    b.validation_interval = config.get_uint("train.validation_interval", 500);
    b.validation_size = config.get_uint("train.validation_size", 256);
    b.validation_seed = config.get_uint("train.validation_seed", 7001);
    b.checkpoint_every = config.get_uint("train.checkpoint_every", 0);

    std::vector<std::size_t> order;
    for (const auto& n : config.get_list("curriculum.order", {})) order.push_back(task_index(universe, n));
    if (order.empty()) order = all_ids(universe.size());
    const std::uint64_t steps = config.get_uint("train.steps", 20000);
    const Strategy strategy = parse_strategy(config.get_string("curriculum.strategy", "mixed"));
    if (strategy == Strategy::SingleTask) {
      const std::size_t id = task_index(universe, config.get_string("curriculum.single_task", universe[0].name()));
      b.schedule = CurriculumSchedule::single(id, steps);
    } else {
      b.schedule = schedule_for(strategy, steps, order);
    }
    plan.strategies.clear();
    for (const auto& s : config.get_list("curriculum.strategies", {"sequential", "mixed", "random"}))
      plan.strategies.push_back(parse_strategy(s));
    plan.include_single = config.get_bool("curriculum.include_single", false);

    plan.eval.test_seed = config.get_uint("eval.test_seed", plan.eval.test_seed);
    plan.eval.test_size = config.get_uint("eval.test_size", plan.eval.test_size);
    plan.eval.probe_size = config.get_uint("eval.probe_size", plan.eval.probe_size);
    plan.eval.window = config.get_uint("eval.window", plan.eval.window);
    plan.eval.mask_k = config.get_uint("eval.mask_k", 0);
    if (plan.eval.test_size < 1 || plan.eval.probe_size < 1 || plan.eval.window < 1)
      throw ConfigError("eval sizes and window must be positive");
    const std::size_t heads = b.model.n_layers * b.model.n_heads;
    if (plan.eval.mask_k > heads) throw ConfigError("eval.mask_k exceeds the number of heads");

    EfficiencySettings& e = plan.efficiency;
    e.target_task = task_index(universe, config.get_string("efficiency.target", universe.back().name()));
    e.pretrain_tasks.clear();
    for (const auto& n : config.get_list("efficiency.pretrain_tasks", {})) e.pretrain_tasks.push_back(task_index(universe, n));
    if (e.pretrain_tasks.empty())
      for (std::size_t i = 0; i < universe.size(); ++i)
        if (i != e.target_task) e.pretrain_tasks.push_back(i);
    e.pretrain_strategy = parse_strategy(config.get_string("efficiency.pretrain_strategy", "mixed"));
    e.pretrain_steps = config.get_uint("efficiency.pretrain_steps", e.pretrain_steps);
    e.pretrain_batch = config.get_uint("efficiency.pretrain_batch", e.pretrain_batch);
    e.fresh_steps = config.get_uint("efficiency.fresh_steps", steps);
    e.fresh_batch = config.get_uint("efficiency.fresh_batch", b.batch_size);
    e.budget_ratio = config.get_uint("efficiency.budget_ratio", e.budget_ratio);
    if (plan.kind == ExperimentKind::DataEfficiency) {
      if (e.pretrain_tasks.empty()) throw ConfigError("data-efficiency needs at least one pretraining task");
      if (e.budget_ratio < 1) throw ConfigError("efficiency.budget_ratio must be >= 1");
      if (e.fresh_steps * e.fresh_batch != e.budget_ratio * e.pretrain_steps * e.pretrain_batch)
        throw ConfigError("efficiency budget: fresh_steps * fresh_batch must equal budget_ratio * pretrain_steps * "
                          "pretrain_batch");
    }

    for (const auto& cell : plan.cells()) cell.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  return plan;
}

std::vector<Cell> ExperimentPlan::cells() const {
  const auto& universe = base.tasks;
  const std::uint64_t steps = base.schedule.total_steps;
  std::deque<Cell> variants;  // stable addresses for the pointers variant() hands out
  auto variant = [&](std::string label, CurriculumSchedule schedule) {
    Cell c;
    c.experiment = std::move(label);
    c.train = base;
    c.train.schedule = std::move(schedule);
    variants.push_back(c);
    return &variants.back();
  };
  const std::vector<std::size_t> order =
      base.schedule.strategy == Strategy::SingleTask ? all_ids(universe.size()) : base.schedule.tasks;
  auto strategy_variants = [&] {
    for (Strategy s : strategies)
      if (s != Strategy::SingleTask) variant(to_string(s), schedule_for(s, steps, order));
  };
  auto single_variants = [&] {
    for (std::size_t i = 0; i < universe.size(); ++i)
      variant(single_label(universe[i]), CurriculumSchedule::single(i, steps));
  };
  const std::string base_label = source.get_string(
      "plan.label", base.schedule.strategy == Strategy::SingleTask ? single_label(universe[base.schedule.tasks.at(0)])
                                                                  : to_string(base.schedule.strategy));

  switch (kind) {
    case ExperimentKind::Single:
      variant(base_label, base.schedule)->probe = source.get_bool("eval.probe", false);
      break;
    case ExperimentKind::CurriculumCompare:
      strategy_variants();
      if (include_single) single_variants();
      break;
    case ExperimentKind::ConvergenceSeeds:
      single_variants();
      variant("mixed", schedule_for(Strategy::Mixed, steps, order));
      break;
    case ExperimentKind::DistributionLearning:
      single_variants();
      strategy_variants();
      for (auto& v : variants) v.probe = true;
      break;
    case ExperimentKind::InstructionPrompting:
      for (auto mode : {InstructionMode::None, InstructionMode::OneHot, InstructionMode::Preset}) {
        Cell* c = variant(to_string(mode), base.schedule);
        c->train.model.instruction_mode = mode;
      }
      break;
    case ExperimentKind::HeadMasking: {
      Cell* c = variant(base_label, base.schedule);
      c->probe = true;
      c->ablation = true;
      break;
    }
    case ExperimentKind::DataEfficiency: {
      const auto& e = efficiency;
      Cell* fresh = variant("fresh", CurriculumSchedule::single(e.target_task, e.fresh_steps));
      fresh->train.batch_size = e.fresh_batch;
      fresh->train.validation_tasks = {e.target_task};
      Cell* pre = variant("pretrain", schedule_for(e.pretrain_strategy, e.pretrain_steps, e.pretrain_tasks));
      if (e.pretrain_strategy == Strategy::SingleTask) pre->train.schedule = CurriculumSchedule::single(e.pretrain_tasks[0], e.pretrain_steps);
      pre->train.batch_size = e.pretrain_batch;
      pre->train.validation_tasks = e.pretrain_tasks;
      Cell* warm = variant("finetune", CurriculumSchedule::single(e.target_task, e.fresh_steps));
      warm->train.batch_size = e.fresh_batch;
      warm->train.validation_tasks = {e.target_task};
      warm->warm_from = "pretrain";
      warm->early_stop_from = "fresh";
      warm->early_stop_task = std::to_string(e.target_task);
      break;
    }
  }

  std::vector<Cell> out;
  for (auto seed : seeds) {
    for (const auto& v : variants) {
      Cell c = v;
      c.seed = seed;
      c.train.seed = seed;
      out.push_back(std::move(c));
    }
  }
  return out;
}

Config describe_cell(const ExperimentPlan& plan, const Cell& cell) {
  Config d;
  const TrainConfig& t = cell.train;
  d.set("cell.experiment", cell.experiment);
  d.set("cell.plan_kind", to_string(plan.kind));
  d.set("cell.probe", cell.probe ? "true" : "false");
  d.set("cell.ablation", cell.ablation ? "true" : "false");
  const auto cells = plan.cells();
  if (!cell.warm_from.empty()) d.set("cell.warm_from", cell_hash(plan, find_cell(cells, cell.warm_from, cell.seed)));
  if (!cell.early_stop_from.empty()) {
    d.set("cell.early_stop_from", cell_hash(plan, find_cell(cells, cell.early_stop_from, cell.seed)));
    d.set("cell.early_stop_task", cell.early_stop_task);
  }
  d.set("model.layers", std::to_string(t.model.n_layers));
  d.set("model.heads", std::to_string(t.model.n_heads));
  d.set("model.embed", std::to_string(t.model.embed_dim));
  d.set("model.input_dim", std::to_string(t.model.input_dim));
  d.set("model.max_pairs", std::to_string(t.model.max_pairs));
  d.set("model.instruction", to_string(t.model.instruction_mode));
  d.set("model.n_tasks", std::to_string(t.model.n_tasks));
  d.set("tasks.count", std::to_string(t.tasks.size()));
  for (std::size_t i = 0; i < t.tasks.size(); ++i) {
    const auto& s = t.tasks[i];
    const std::string p = "tasks.t" + std::to_string(i) + "_";
    d.set(p + "class", to_string(s.function_class));
    d.set(p + "inputs", to_string(s.inputs.kind));
    d.set(p + "dim", std::to_string(s.dim));
    d.set(p + "skew_exponent", num(s.inputs.skew_exponent));
    d.set(p + "basis_seed", std::to_string(s.inputs.basis_seed));
    d.set(p + "unit_variance", s.inputs.unit_variance ? "true" : "false");
  }
  d.set("schedule.strategy", to_string(t.schedule.strategy));
  d.set("schedule.steps", std::to_string(t.schedule.total_steps));
  d.set("schedule.tasks", join_numbers(t.schedule.tasks));
  d.set("schedule.single_index", std::to_string(t.schedule.single_index));
  d.set("train.batch", std::to_string(t.batch_size));
  d.set("train.pairs", std::to_string(t.pairs));
  d.set("train.lr", num(t.adam.learning_rate));
  d.set("train.beta1", num(t.adam.beta1));
  d.set("train.beta2", num(t.adam.beta2));
  d.set("train.eps", num(t.adam.epsilon));
  d.set("train.max_grad_norm", num(t.max_grad_norm));
  d.set("train.validation_interval", std::to_string(t.validation_interval));
  d.set("train.validation_size", std::to_string(t.validation_size));
  d.set("train.validation_seed", std::to_string(t.validation_seed));
  d.set("train.validation_tasks", join_numbers(t.validated_tasks()));
  d.set("train.checkpoint_every", std::to_string(t.checkpoint_every));
  d.set("eval.test_seed", std::to_string(plan.eval.test_seed));
  d.set("eval.test_size", std::to_string(plan.eval.test_size));
  d.set("eval.probe_size", std::to_string(plan.eval.probe_size));
  d.set("eval.mask_k", std::to_string(plan.eval.mask_k));
  return d;
}

std::string cell_hash(const ExperimentPlan& plan, const Cell& cell) {
  return fnv1a_hex(describe_cell(plan, cell).canonical());
}

fs::path cell_dir(const ExperimentPlan& plan, const Cell& cell) {
  return plan.plan_dir() / cell.experiment / cell_hash(plan, cell) / std::to_string(cell.seed);
}

PromptBatch test_set(const ExperimentPlan& plan, std::size_t task_id) {
  Rng rng = make_rng(plan.eval.test_seed, streams::kTest * 1000 + task_id);
  return generate_batch(plan.base.tasks.at(task_id), plan.eval.test_size, plan.base.pairs, rng, task_id).prompts;
}

PromptBatch probe_set(const ExperimentPlan& plan, std::size_t task_id) {
  Rng rng = make_rng(plan.eval.test_seed, streams::kProbe * 1000 + task_id);
  return generate_batch(plan.base.tasks.at(task_id), plan.eval.probe_size, plan.base.pairs, rng, task_id).prompts;
}

void run_cell(const ExperimentPlan& plan, const Cell& cell, const fs::path& dir, std::ostream* log) {
  fs::create_directories(dir / "checkpoints");
  Config described = describe_cell(plan, cell);
  const std::string hash = fnv1a_hex(described.canonical());
  described.set("run.seed", std::to_string(cell.seed));
  write_file_atomic(dir / "cell.ini", described.canonical());

  TrainConfig tc = cell.train;
  tc.checkpoint_dir = dir / "checkpoints";
  const auto cells = plan.cells();
  if (!cell.warm_from.empty()) {
    const fs::path dep = cell_dir(plan, find_cell(cells, cell.warm_from, cell.seed));
    const json r = read_json(dep / "result.json");
    tc = warm_start(dep / r.at("final_checkpoint").get<std::string>(), tc, tc.schedule);
  }
  if (!cell.early_stop_from.empty()) {
    const fs::path dep = cell_dir(plan, find_cell(cells, cell.early_stop_from, cell.seed));
    const json r = read_json(dep / "result.json");
    const double threshold = r.at("final_validation").at(cell.early_stop_task).get<double>();
    tc.early_stop = EarlyStop{std::stoul(cell.early_stop_task), threshold};
  }

  log_line(log, "train " + cell.key() + " (" + std::to_string(tc.schedule.total_steps) + " steps) -> " + dir.string());
  TrainResult result;
  try {
    result = train(tc);
  } catch (const NumericFailure& f) {
    const json failure{{"format_version", kManifestFormatVersion}, {"step", f.step}, {"task_id", f.task_id},
                       {"loss", std::to_string(f.loss)}, {"message", f.what()}};
    write_file_atomic(dir / "failure.json", failure.dump(2) + "\n");
    throw;
  }

  {
    std::ostringstream loss, val, sched;
    write_loss_csv(loss, result.history);
    write_validation_csv(val, result.history);
    write_csv_version(sched);
    sched << "step,task_id\n";
    for (std::size_t i = 0; i < result.history.task_log.size(); ++i)
      sched << (i + 1) << ',' << result.history.task_log[i] << '\n';
    write_file_atomic(dir / "loss.csv", loss.str());
    write_file_atomic(dir / "validation.csv", val.str());
    write_file_atomic(dir / "schedule.csv", sched.str());
  }

  std::vector<EvalCurve> curves;
  std::ostringstream scores_csv, ablation_csv;
  json masks = json::object();
  bool scores_header = true;
  if (cell.ablation) {
    write_csv_version(ablation_csv);
    ablation_csv << "task,shots,top_masked,bottom_masked,difference\n";
  }
  const std::size_t k = plan.eval.mask_k ? plan.eval.mask_k : default_mask_count(tc.model);
  for (std::size_t id = 0; id < tc.tasks.size(); ++id) {
    const std::string task = tc.tasks[id].name();
    const PromptBatch test = test_set(plan, id);
    EvalCurve c = evaluate_model(result.model, test);
    c.task = task;
    c.model = cell.experiment;
    c.seed = cell.seed;
    curves.push_back(c);
    if (tc.tasks[id].function_class == FunctionClass::Linear) {
      EvalCurve ols = normalized_mse(ols_predictions(test), test, Normalizer::from_targets(test));
      ols.task = task;
      ols.model = "ols";
      ols.seed = cell.seed;
      curves.push_back(ols);
    }
    if (cell.probe || cell.ablation) {
      const PromptBatch probe = probe_set(plan, id);
      write_scores_csv(scores_csv, probe_model(result.model, probe), task, cell.experiment, scores_header);
      scores_header = false;
      if (cell.ablation) {
        const AblationResult a = masked_ablation(result.model, test, probe, k);
        for (std::size_t s = 0; s < a.difference.size(); ++s)
          ablation_csv << task << ',' << s << ',' << num(a.top_masked.values[s]) << ','
                       << num(a.bottom_masked.values[s]) << ',' << num(a.difference[s]) << '\n';
        masks[task] = {{"k", k},
                       {"top", json::parse(mask_to_json(a.top_mask))},
                       {"bottom", json::parse(mask_to_json(a.bottom_mask))}};
      }
    }
  }
  {
    std::ostringstream os;
    write_curves_csv(os, curves);
    write_file_atomic(dir / "curves.csv", os.str());
  }
  if (cell.probe || cell.ablation) write_file_atomic(dir / "scores.csv", scores_csv.str());
  if (cell.ablation) {
    write_file_atomic(dir / "ablation.csv", ablation_csv.str());
    json m{{"format_version", kManifestFormatVersion}, {"masks", masks}};
    write_file_atomic(dir / "masks.json", m.dump(2) + "\n");
  }

  json r;
  r["format_version"] = kManifestFormatVersion;
  r["experiment"] = cell.experiment;
  r["seed"] = cell.seed;
  r["config_hash"] = hash;
  r["steps"] = result.history.steps();
  r["batch"] = tc.batch_size;
  r["examples"] = result.history.steps() * tc.batch_size;
  r["stopped_early"] = result.history.stopped_early;
  if (tc.early_stop) r["early_stop_threshold"] = tc.early_stop->threshold;
  if (tc.warm_start) r["warm_start"] = fs::relative(*tc.warm_start, plan.plan_dir()).generic_string();
  r["final_checkpoint"] = fs::relative(result.checkpoints.back(), dir).generic_string();
  json fv = json::object();
  for (auto id : tc.validated_tasks())
    if (const auto* v = result.history.last_validation(id)) fv[std::to_string(id)] = v->mean_norm_mse;
  r["final_validation"] = fv;
  json timing{{"wall_seconds", result.history.wall_seconds}};
  write_file_atomic(dir / "timing.json", timing.dump(2) + "\n");
  // Written last: its presence marks the cell complete.
  write_file_atomic(dir / "result.json", r.dump(2) + "\n");
}

namespace {

// result.json is the last file a cell writes, so its presence with the matching hash marks completion.
bool cell_complete(const ExperimentPlan& plan, const Cell& cell, const fs::path& dir) {
  const fs::path result = dir / "result.json";
  if (!fs::exists(result)) return false;
  try {
    return read_json(result).at("config_hash").get<std::string>() == cell_hash(plan, cell);
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

RunSummary run_plan(const ExperimentPlan& plan, const RunOptions& options) {
  const fs::path root = plan.plan_dir();
  fs::create_directories(root);
  const fs::path manifest_path = root / "manifest.json";

  const auto cells = plan.cells();
  std::vector<bool> done(cells.size());
  std::vector<std::string> partial;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const fs::path dir = cell_dir(plan, cells[i]);
    done[i] = cell_complete(plan, cells[i], dir);
    if (!done[i] && fs::exists(dir)) partial.push_back(fs::relative(dir, root).generic_string());
  }
  if (!partial.empty() && !options.resume)
    throw IncompletePlan("plan has partially written cells; rerun with --resume to redo them", partial);

  json manifest = manifest_skeleton(plan);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    manifest["cells"].push_back({{"experiment", c.experiment},
                                 {"seed", c.seed},
                                 {"config_hash", cell_hash(plan, c)},
                                 {"dir", fs::relative(cell_dir(plan, c), root).generic_string()},
                                 {"status", done[i] ? "complete" : "pending"}});
  }
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");

  RunSummary summary;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const fs::path dir = cell_dir(plan, cells[i]);
    if (done[i]) {
      ++summary.skipped;
      log_line(options.log, "skip " + cells[i].key() + " (complete)");
      continue;
    }
    if (fs::exists(dir)) fs::remove_all(dir);
    run_cell(plan, cells[i], dir, options.log);
    manifest["cells"][i]["status"] = "complete";
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    ++summary.executed;
  }
  return summary;
}

ScheduleAudit audit_schedule(const fs::path& dir) {
  const Config d = Config::load(dir / "cell.ini");
  CurriculumSchedule s;
  s.strategy = parse_strategy(d.get_string("schedule.strategy", ""));
  s.total_steps = d.get_uint("schedule.steps", 0);
  for (auto id : d.get_uint_list("schedule.tasks", {})) s.tasks.push_back(id);
  s.single_index = d.get_uint("schedule.single_index", 0);
  const std::uint64_t seed = d.get_uint("run.seed", 0);
  const std::uint64_t batch = d.get_uint("train.batch", 0);
  const std::uint64_t stream = curriculum_stream(seed);
  const CsvTable log = read_csv(dir / "schedule.csv");
  const auto step_col = log.column("step");
  const auto task_col = log.column("task_id");
  ScheduleAudit a;
  for (const auto& row : log.rows) {
    ++a.steps;
    const std::uint64_t t = std::stoull(row[step_col]);
    const std::size_t logged = std::stoul(row[task_col]);
    if (t != a.steps || t > s.total_steps || task_at_step(s, t, stream) != logged) ++a.mismatches;
  }
  a.examples = a.steps * batch;
  return a;
}

namespace {

struct CellArtifacts {
  std::string experiment;
  std::uint64_t seed = 0;
  fs::path dir;
  json result;
  CsvTable curves;
};

std::vector<double> column_values(const CsvTable& t, const std::vector<std::size_t>& rows, const std::string& col) {
  std::vector<double> out;
  const auto c = t.column(col);
  for (auto r : rows) out.push_back(to_double(t.rows[r][c]));
  return out;
}

}  // namespace

ReportSummary emit_report(const fs::path& plan_dir) {
  const fs::path manifest_path = plan_dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw IncompletePlan("no manifest at " + manifest_path.string(), {manifest_path.string()});
  const json manifest = read_json(manifest_path);
  const json& plan = manifest.at("plan");
  const std::string kind = plan.at("kind");
  const std::size_t window = plan.at("window");
  const fs::path out_dir = plan_dir / "report";
  fs::create_directories(out_dir);

  ReportSummary summary;
  std::vector<CellArtifacts> cells;
  for (const auto& c : manifest.at("cells")) {
    const fs::path dir = plan_dir / c.at("dir").get<std::string>();
    const std::string key = c.at("experiment").get<std::string>() + "/" + std::to_string(c.at("seed").get<std::uint64_t>());
    if (c.at("status") != "complete" || !fs::exists(dir / "result.json")) {
      summary.missing.push_back(key + " (" + c.at("dir").get<std::string>() + ")");
      continue;
    }
    CellArtifacts a;
    a.experiment = c.at("experiment");
    a.seed = c.at("seed");
    a.dir = dir;
    a.result = read_json(dir / "result.json");
    a.curves = read_csv(dir / "curves.csv");
    cells.push_back(std::move(a));
  }

  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(out_dir / name, text);
    summary.files.push_back(out_dir / name);
  };

  // Per-cell curves with their moving average, and the per-(cell, task) summary.
  std::ostringstream curves_csv, summary_csv;
  write_csv_version(curves_csv);
  write_csv_version(summary_csv);
  curves_csv << "experiment,seed,task,model,shots,value,moving_average\n";
  summary_csv << "experiment,seed,task,model,mean,final_moving_average,converged\n";
  json series = json::array();
  // (experiment, task) -> per-seed curves, for the cross-seed comparison table.
  std::map<std::pair<std::string, std::string>, std::vector<std::vector<double>>> by_variant;
  for (const auto& a : cells) {
    const CsvTable& t = a.curves;
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;  // (task, model) -> rows
    std::vector<std::pair<std::string, std::string>> order;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto g = std::make_pair(t.rows[r][t.column("task")], t.rows[r][t.column("model")]);
      if (!groups.count(g)) order.push_back(g);
      groups[g].push_back(r);
    }
    for (const auto& g : order) {
      const auto& rows = groups[g];
      const std::vector<double> v = column_values(t, rows, "value");
      const std::vector<double> ma = moving_average(v, window);
      double mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      EvalCurve curve;
      curve.values = v;
      const bool converged = v.size() >= window && convergence_check(curve, window);
      std::vector<std::size_t> shots;
      for (std::size_t s = 0; s < v.size(); ++s) {
        curves_csv << a.experiment << ',' << a.seed << ',' << g.first << ',' << g.second << ',' << s << ',' << num(v[s])
                   << ',' << num(ma[s]) << '\n';
        shots.push_back(s);
      }
      summary_csv << a.experiment << ',' << a.seed << ',' << g.first << ',' << g.second << ',' << num(mean) << ','
                  << num(ma.back()) << ',' << (converged ? "true" : "false") << '\n';
      series.push_back({{"label", a.experiment + "/" + std::to_string(a.seed) + "/" + g.first + "/" + g.second},
                        {"experiment", a.experiment},
                        {"seed", a.seed},
                        {"task", g.first},
                        {"model", g.second},
                        {"x", shots},
                        {"y", v},
                        {"moving_average", ma}});
      if (g.second == a.experiment) by_variant[{a.experiment, g.first}].push_back(v);
    }
  }
  emit("curves.csv", curves_csv.str());
  emit("summary.csv", summary_csv.str());

  // Cross-seed mean curve per (experiment, task).
  std::ostringstream cmp;
  write_csv_version(cmp);
  cmp << "experiment,task,shots,mean_value,moving_average,seeds\n";
  for (const auto& [key, runs] : by_variant) {
    std::vector<double> mean(runs.front().size(), 0.0);
    for (const auto& r : runs)
      for (std::size_t s = 0; s < mean.size() && s < r.size(); ++s) mean[s] += r[s] / static_cast<double>(runs.size());
    const auto ma = moving_average(mean, window);
    for (std::size_t s = 0; s < mean.size(); ++s)
      cmp << key.first << ',' << key.second << ',' << s << ',' << num(mean[s]) << ',' << num(ma[s]) << ','
          << runs.size() << '\n';
  }
  const std::map<std::string, std::string> comparison_name{
      {"single", "comparison.csv"},
      {"curriculum-compare", "curriculum_comparison.csv"},
      {"convergence-seeds", "convergence_curves.csv"},
      {"data-efficiency", "efficiency_curves_by_task.csv"},
      {"head-masking", "comparison.csv"},
      {"instruction-prompting", "instruction_comparison.csv"},
      {"distribution-learning", "distribution_comparison.csv"},
  };
  emit(comparison_name.at(kind), cmp.str());

  if (kind == "convergence-seeds" || kind == "curriculum-compare" || kind == "distribution-learning") {
    std::ostringstream conv;
    write_csv_version(conv);
    conv << "model,seed,task,converged\n";
    for (const auto& a : cells) {
      const CsvTable& t = a.curves;
      std::map<std::string, std::vector<std::size_t>> rows;
      std::vector<std::string> order;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r][t.column("model")] != a.experiment) continue;
        const std::string task = t.rows[r][t.column("task")];
        if (!rows.count(task)) order.push_back(task);
        rows[task].push_back(r);
      }
      for (const auto& task : order) {
        EvalCurve c;
        c.values = column_values(t, rows[task], "value");
        const bool ok = c.values.size() >= window && convergence_check(c, window);
        conv << a.experiment << ',' << a.seed << ',' << task << ',' << (ok ? "true" : "false") << '\n';
      }
    }
    emit("convergence.csv", conv.str());
  }

  if (kind == "data-efficiency") {
    const std::size_t target = plan.at("target_task");
    const std::uint64_t ratio = plan.at("budget_ratio");
    std::ostringstream eff, effsum;
    write_csv_version(eff);
    write_csv_version(effsum);
    eff << "init,seed,step,task_id,val_norm_mse\n";
    effsum << "seed,fresh_steps,fresh_final_val,warm_first_step_reaching,warm_faster,pretrain_examples,fresh_examples,"
              "budget_exact,schedule_audit_ok\n";
    std::map<std::uint64_t, std::map<std::string, const CellArtifacts*>> by_seed;
    for (const auto& a : cells) by_seed[a.seed][a.experiment] = &a;
    for (const auto& [seed, group] : by_seed) {
      for (const auto& [label, init] : {std::pair<std::string, std::string>{"fresh", "fresh"}, {"finetune", "warm"}}) {
        if (!group.count(label)) continue;
        const CsvTable v = read_csv(group.at(label)->dir / "validation.csv");
        for (const auto& row : v.rows)
          if (row[v.column("shots")] == "-1")
            eff << init << ',' << seed << ',' << row[v.column("step")] << ',' << row[v.column("task_id")] << ','
                << row[v.column("val_norm_mse")] << '\n';
      }
      if (!group.count("fresh") || !group.count("pretrain") || !group.count("finetune")) continue;
      const CellArtifacts& fresh = *group.at("fresh");
      const CellArtifacts& pre = *group.at("pretrain");
      const CellArtifacts& warm = *group.at("finetune");
      const double threshold = fresh.result.at("final_validation").at(std::to_string(target)).get<double>();
      std::int64_t reach = -1;
      const CsvTable v = read_csv(warm.dir / "validation.csv");
      for (const auto& row : v.rows) {
        if (row[v.column("shots")] != "-1" || std::stoul(row[v.column("task_id")]) != target) continue;
        if (to_double(row[v.column("val_norm_mse")]) <= threshold) {
          reach = std::stoll(row[v.column("step")]);
          break;
        }
      }
      const std::uint64_t fresh_steps = fresh.result.at("steps");
      const ScheduleAudit fa = audit_schedule(fresh.dir);
      const ScheduleAudit pa = audit_schedule(pre.dir);
      const ScheduleAudit wa = audit_schedule(warm.dir);
      const bool faster = reach >= 0 && static_cast<std::uint64_t>(reach) < fresh_steps;
      effsum << seed << ',' << fresh_steps << ',' << num(threshold) << ',' << reach << ',' << (faster ? "true" : "false")
             << ',' << pa.examples << ',' << fa.examples << ',' << (fa.examples == ratio * pa.examples ? "true" : "false")
             << ',' << (fa.ok() && pa.ok() && wa.ok() ? "true" : "false") << '\n';
    }
    emit("efficiency.csv", eff.str());
    emit("efficiency_summary.csv", effsum.str());
  }

  if (kind == "head-masking") {
    std::ostringstream mk, mks;
    write_csv_version(mk);
    write_csv_version(mks);
    mk << "experiment,seed,task,shots,top_masked,bottom_masked,difference\n";
    mks << "experiment,seed,task,top_mean,bottom_mean,top_exceeds_bottom\n";
    for (const auto& a : cells) {
      if (!fs::exists(a.dir / "ablation.csv")) continue;
      const CsvTable t = read_csv(a.dir / "ablation.csv");
      std::map<std::string, std::pair<double, double>> sums;
      std::map<std::string, std::size_t> counts;
      std::vector<std::string> order;
      for (const auto& row : t.rows) {
        const std::string task = row[t.column("task")];
        if (!counts.count(task)) order.push_back(task);
        mk << a.experiment << ',' << a.seed << ',' << task << ',' << row[t.column("shots")] << ','
           << row[t.column("top_masked")] << ',' << row[t.column("bottom_masked")] << ',' << row[t.column("difference")]
           << '\n';
        sums[task].first += to_double(row[t.column("top_masked")]);
        sums[task].second += to_double(row[t.column("bottom_masked")]);
        ++counts[task];
      }
      for (const auto& task : order) {
        const double n = static_cast<double>(counts[task]);
        const double top = sums[task].first / n;
        const double bottom = sums[task].second / n;
        mks << a.experiment << ',' << a.seed << ',' << task << ',' << num(top) << ',' << num(bottom) << ','
            << (top > bottom ? "true" : "false") << '\n';
      }
    }
    emit("masking.csv", mk.str());
    emit("masking_summary.csv", mks.str());
  }

  json plot{{"format_version", kManifestFormatVersion}, {"kind", kind}, {"x_label", "in-context examples"},
            {"y_label", "normalized MSE"}, {"series", series}};
  emit("plot_data.json", plot.dump(1) + "\n");

  std::ostringstream missing;
  for (const auto& m : summary.missing) missing << m << '\n';
  if (!summary.missing.empty()) {
    emit("missing.txt", missing.str());
  } else if (fs::exists(out_dir / "missing.txt")) {
    fs::remove(out_dir / "missing.txt");
  }
  return summary;
}

}  // namespace icl
