// icl: command-line front end of the lab.
//
//   icl train  --config run.ini [--set section.key=value ...] [--seed N] --out DIR [--resume]
//   icl eval   --config run.ini --checkpoint FILE --out DIR
//   icl probe  --config run.ini --checkpoint FILE --out DIR [--mask-k K]
//   icl plan   --config plan.ini [--seed 1,2,3] [--out DIR] [--resume]
//   icl report PLAN_DIR

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icl/checkpoint.hpp"
#include "icl/config.hpp"
#include "icl/csv.hpp"
#include "icl/probe.hpp"
#include "icl/runner.hpp"

namespace fs = std::filesystem;
using namespace icl;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "INI config file");
  cmd->add_option("--set", args.overrides, "Override a config value, section.key=value (repeatable)");
}

Config resolve(const CommonArgs& args) {
  Config c = args.config_path.empty() ? Config{} : Config::load(args.config_path);
  for (const auto& o : args.overrides) c.apply_override(o);
  return c;
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

int command_train(const CommonArgs& args, std::optional<std::uint64_t> seed, const std::string& out, bool resume) {
  Config c = resolve(args);
  c.set("plan.kind", "single");
  if (seed) c.set("plan.seeds", std::to_string(*seed));
  const ExperimentPlan plan = plan_from_config(c);
  const Cell cell = plan.cells().front();
  const fs::path dir = out;
  if (fs::exists(dir / "result.json")) {
    std::cerr << "already complete: " << dir << "\n";
    return exit_codes::kSuccess;
  }
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!resume) throw IncompletePlan("output directory holds a partial run; pass --resume to redo it", {dir.string()});
    fs::remove_all(dir);
  }
  run_cell(plan, cell, dir, &std::cerr);
  return exit_codes::kSuccess;
}

int command_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& out) {
  const ExperimentPlan plan = plan_from_config(resolve(args));
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  std::vector<EvalCurve> curves;
  for (std::size_t id = 0; id < plan.base.tasks.size(); ++id) {
    const PromptBatch test = test_set(plan, id);
    EvalCurve curve = evaluate_model(ckpt.model, test);
    curve.task = plan.base.tasks[id].name();
    curve.model = fs::path(checkpoint).stem().string();
    curves.push_back(curve);
    std::cout << curve.task << " mean normalized MSE " << curve.mean() << "\n";
  }
  std::ostringstream os;
  write_curves_csv(os, curves);
  write_text(fs::path(out) / "curves.csv", os.str());
  return exit_codes::kSuccess;
}

int command_probe(const CommonArgs& args, const std::string& checkpoint, const std::string& out,
                  std::optional<std::size_t> mask_k) {
  const ExperimentPlan plan = plan_from_config(resolve(args));
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const std::string model = fs::path(checkpoint).stem().string();
  std::ostringstream scores, ablation;
  if (mask_k) {
    write_csv_version(ablation);
    ablation << "task,shots,top_masked,bottom_masked,difference\n" << std::setprecision(17);
  }
  for (std::size_t id = 0; id < plan.base.tasks.size(); ++id) {
    const std::string task = plan.base.tasks[id].name();
    const PromptBatch probe = probe_set(plan, id);
    write_scores_csv(scores, probe_model(ckpt.model, probe), task, model, id == 0);
    if (mask_k) {
      const AblationResult a = masked_ablation(ckpt.model, test_set(plan, id), probe, *mask_k);
      for (std::size_t s = 0; s < a.difference.size(); ++s)
        ablation << task << ',' << s << ',' << a.top_masked.values[s] << ',' << a.bottom_masked.values[s] << ','
                 << a.difference[s] << '\n';
      std::cout << task << " top-" << *mask_k << " masked " << a.top_masked.mean() << ", bottom-" << *mask_k
                << " masked " << a.bottom_masked.mean() << "\n";
    }
  }
  write_text(fs::path(out) / "scores.csv", scores.str());
  if (mask_k) write_text(fs::path(out) / "ablation.csv", ablation.str());
  return exit_codes::kSuccess;
}

int report_and_status(const fs::path& plan_dir) {
  const ReportSummary r = emit_report(plan_dir);
  for (const auto& f : r.files) std::cout << f.string() << "\n";
  if (!r.missing.empty()) {
    std::cerr << "missing runs:\n";
    for (const auto& m : r.missing) std::cerr << "  " << m << "\n";
    return exit_codes::kIncompletePlan;
  }
  return exit_codes::kSuccess;
}

int command_plan(const CommonArgs& args, const std::string& seeds, const std::string& out, bool resume) {
  Config c = resolve(args);
  if (!seeds.empty()) c.set("plan.seeds", seeds);
  if (!out.empty()) c.set("plan.out", out);
  const ExperimentPlan plan = plan_from_config(c);
  RunOptions options;
  options.resume = resume;
  options.log = &std::cerr;
  const RunSummary s = run_plan(plan, options);
  std::cerr << "cells run: " << s.executed << ", already complete: " << s.skipped << "\n";
  return report_and_status(plan.plan_dir());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context learning curriculum lab"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, probe_args, plan_args;
  std::optional<std::uint64_t> train_seed;
  std::string train_out, eval_out, probe_out, plan_out, plan_seeds, report_dir, eval_ckpt, probe_ckpt;
  std::optional<std::size_t> mask_k;
  bool train_resume = false, plan_resume = false;

  auto* train = app.add_subcommand("train", "Train one model and evaluate it on the frozen test sets");
  add_common(train, train_args);
  train->add_option("--seed", train_seed, "Run seed");
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_flag("--resume", train_resume, "Redo a partially written run directory");

  auto* eval = app.add_subcommand("eval", "Normalized MSE curves of a checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();

  auto* probe = app.add_subcommand("probe", "Retrospective scores and optional masking ablation");
  add_common(probe, probe_args);
  probe->add_option("--checkpoint", probe_ckpt, "Checkpoint file")->required();
  probe->add_option("--out", probe_out, "Output directory")->required();
  probe->add_option("--mask-k", mask_k, "Mask the top-k and bottom-k heads");

  auto* plan = app.add_subcommand("plan", "Run an experiment plan and emit its report");
  add_common(plan, plan_args);
  plan->add_option("--seed", plan_seeds, "Comma-separated seed list, overrides plan.seeds");
  plan->add_option("--out", plan_out, "Output root, overrides plan.out");
  plan->add_flag("--resume", plan_resume, "Redo cells left half-written by an interrupted run");

  auto* report = app.add_subcommand("report", "Aggregate a plan directory into report files");
  report->add_option("plan_dir", report_dir, "Plan directory holding manifest.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_codes::kSuccess : exit_codes::kConfigError;
  }

  try {
    if (*train) return command_train(train_args, train_seed, train_out, train_resume);
    if (*eval) return command_eval(eval_args, eval_ckpt, eval_out);
    if (*probe) return command_probe(probe_args, probe_ckpt, probe_out, mask_k);
    if (*plan) return command_plan(plan_args, plan_seeds, plan_out, plan_resume);
    if (*report) return report_and_status(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_codes::kConfigError;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return exit_codes::kNumericFailure;
  } catch (const IncompletePlan& e) {
    std::cerr << "incomplete: " << e.what() << "\n";
    for (const auto& c : e.cells) std::cerr << "  " << c << "\n";
    return exit_codes::kIncompletePlan;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_codes::kFailure;
  }
  return exit_codes::kFailure;
}
