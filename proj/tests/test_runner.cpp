#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "icl/csv.hpp"
#include "icl/runner.hpp"

using namespace icl;
namespace fs = std::filesystem;

namespace {

const char* kSmallPlan = R"(
[plan]
kind = curriculum-compare
name = compare
seeds = 1, 2
[model]
layers = 1
heads = 2
embed = 8
pairs = 6
[data]
dim = 2
[train]
steps = 9
batch = 4
validation_interval = 3
validation_size = 8
[curriculum]
strategies = sequential, mixed
[eval]
test_size = 8
probe_size = 4
)";

Config parse(const std::string& text) {
  std::istringstream in(text);
  return Config::parse(in);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("icl_test_runner_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentPlan small_plan(const fs::path& out, const std::vector<std::string>& overrides = {}) {
  Config c = parse(kSmallPlan);
  for (const auto& o : overrides) c.apply_override(o);
  c.set("plan.out", out.string());
  return plan_from_config(c);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Every file under root except wall-clock timing, by relative path.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "timing.json")
      out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ICL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and overrides") {
  Config c = parse("[train]\nsteps = 12\nlr = 3e-4\n[plan]\nseeds = 1, 2 ,3\n");
  CHECK(c.get_uint("train.steps", 0) == 12);
  CHECK(c.get_double("train.lr", 0) == 3e-4);
  CHECK(c.get_uint_list("plan.seeds", {}) == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(c.get_int("train.missing", -5) == -5);
  c.apply_override("train.steps=40");
  CHECK(c.get_uint("train.steps", 0) == 40);
  c.apply_override("model.heads=2");
  CHECK(c.get_uint("model.heads", 0) == 2);
  CHECK_THROWS_AS(c.apply_override("steps=40"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.steps"), ConfigError);
  c.set("train.lr", "fast");
  CHECK_THROWS_AS(c.get_double("train.lr", 0), ConfigError);
  CHECK_THROWS_AS(parse("stray = 1\n[a]\nb = 2\n"), ConfigError);
  CHECK(parse("[b]\ny = 2\nx = 1\n[a]\nz = 0\n").canonical() == "[a]\nz = 0\n[b]\nx = 1\ny = 2\n");
}

TEST_CASE("plan validation rejects bad values") {
  const fs::path out = scratch("validation");
  CHECK_THROWS_AS(small_plan(out, {"model.bogus=1"}), ConfigError);
  Config c = parse(kSmallPlan);
  c.set("model.heads", "3");
  CHECK_THROWS_AS(plan_from_config(c), ConfigError);
  c = parse(kSmallPlan);
  c.set("plan.kind", "bake-off");
  CHECK_THROWS_AS(plan_from_config(c), ConfigError);
  c = parse(kSmallPlan);
  c.set("train.steps", "2");
  CHECK_THROWS_AS(plan_from_config(c), ConfigError);
  fs::remove_all(out);
}

TEST_CASE("shipped configs parse into valid plans") {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(ICL_CONFIG_DIR)) {
    if (e.path().extension() != ".ini") continue;
    CAPTURE(e.path().string());
    const ExperimentPlan plan = plan_from_config(Config::load(e.path()));
    CHECK_FALSE(plan.cells().empty());
    ++n;
  }
  CHECK(n >= 10);
}

TEST_CASE("cell hashes ignore the seed and track the config") {
  const fs::path out = scratch("hash");
  const ExperimentPlan p = small_plan(out);
  const auto cells = p.cells();
  REQUIRE(cells.size() == 4);
  std::map<std::string, std::string> by_experiment;
  for (const auto& c : cells) {
    const std::string h = cell_hash(p, c);
    CHECK(h.size() == 16);
    if (by_experiment.count(c.experiment)) CHECK(by_experiment[c.experiment] == h);
    by_experiment[c.experiment] = h;
  }
  CHECK(by_experiment["sequential"] != by_experiment["mixed"]);
  const ExperimentPlan q = small_plan(out, {"train.lr=5e-4"});
  CHECK(cell_hash(q, q.cells()[0]) != cell_hash(p, cells[0]));
  CHECK(cell_dir(p, cells[0]) == out / "compare" / "sequential" / cell_hash(p, cells[0]) / "1");
  fs::remove_all(out);
}

TEST_CASE("plan bookkeeping, idempotence and audit") {
  const fs::path out = scratch("plan");
  const ExperimentPlan p = small_plan(out);
  const RunSummary first = run_plan(p);
  CHECK(first.executed == 4);
  std::size_t dirs = 0;
  for (const auto& c : p.cells()) {
    const fs::path d = cell_dir(p, c);
    CHECK(fs::exists(d / "result.json"));
    for (const char* f : {"loss.csv", "validation.csv", "schedule.csv", "curves.csv", "cell.ini"})
      CHECK(fs::exists(d / f));
    ++dirs;
    const ScheduleAudit a = audit_schedule(d);
    CHECK(a.ok());
    CHECK(a.steps == 9);
    CHECK(a.examples == 36);
  }
  CHECK(dirs == 4);
  CHECK(fs::exists(p.plan_dir() / "manifest.json"));
  const auto manifest = nlohmann::json::parse(slurp(p.plan_dir() / "manifest.json"));
  CHECK(manifest.at("format_version") == kManifestFormatVersion);
  CHECK(manifest.at("cells").size() == 4);

  const ReportSummary r = emit_report(p.plan_dir());
  CHECK(r.missing.empty());
  const auto before = tree_bytes(p.plan_dir());
  const RunSummary second = run_plan(p);
  CHECK(second.executed == 0);
  CHECK(second.skipped == 4);
  emit_report(p.plan_dir());
  CHECK(tree_bytes(p.plan_dir()) == before);

  const CsvTable cmp = read_csv(p.plan_dir() / "report" / "curriculum_comparison.csv");
  CHECK(cmp.format_version == kCsvFormatVersion);
  CHECK_FALSE(cmp.rows.empty());

  // A tampered schedule log fails the audit.
  const fs::path d0 = cell_dir(p, p.cells()[0]);
  std::string sched = slurp(d0 / "schedule.csv");
  const auto pos = sched.rfind(",0\n");
  REQUIRE(pos != std::string::npos);
  sched.replace(pos, 3, ",2\n");
  std::ofstream(d0 / "schedule.csv", std::ios::binary) << sched;
  CHECK_FALSE(audit_schedule(d0).ok());
  fs::remove_all(out);
}

TEST_CASE("partial cells stop the plan unless resumed") {
  const fs::path out = scratch("partial");
  const ExperimentPlan p = small_plan(out);
  run_plan(p);
  const auto cells = p.cells();
  const fs::path victim = cell_dir(p, cells[1]);
  const std::string good = slurp(victim / "result.json");
  fs::remove(victim / "result.json");
  CHECK_THROWS_AS(run_plan(p), IncompletePlan);
  const ReportSummary r = emit_report(p.plan_dir());
  REQUIRE(r.missing.size() == 1);
  CHECK(r.missing[0].find(cells[1].experiment) != std::string::npos);

  RunOptions resume;
  resume.resume = true;
  const RunSummary s = run_plan(p, resume);
  CHECK(s.executed == 1);
  CHECK(slurp(victim / "result.json") == good);
  CHECK(emit_report(p.plan_dir()).missing.empty());
  fs::remove_all(out);
}

TEST_CASE("report on an empty directory names the manifest") {
  const fs::path out = scratch("empty");
  try {
    emit_report(out);
    FAIL("expected IncompletePlan");
  } catch (const IncompletePlan& e) {
    CHECK(std::string(e.what()).find("manifest.json") != std::string::npos);
  }
  fs::remove_all(out);
}

TEST_CASE("data-efficiency plan spends exactly one ninth on pretraining") {
  const fs::path out = scratch("efficiency");
  Config c = parse(R"(
[plan]
kind = data-efficiency
name = eff
seeds = 1
[model]
layers = 1
heads = 2
embed = 8
pairs = 6
[data]
dim = 2
[train]
validation_interval = 6
validation_size = 8
[efficiency]
fresh_steps = 18
fresh_batch = 4
pretrain_steps = 2
pretrain_batch = 4
[eval]
test_size = 8
)");
  c.set("plan.out", out.string());
  const ExperimentPlan p = plan_from_config(c);
  run_plan(p);
  std::map<std::string, ScheduleAudit> audits;
  for (const auto& cell : p.cells()) audits[cell.experiment] = audit_schedule(cell_dir(p, cell));
  CHECK(audits["pretrain"].ok());
  CHECK(audits["fresh"].ok());
  CHECK(audits["pretrain"].examples * 9 == audits["fresh"].examples);
  emit_report(p.plan_dir());
  const CsvTable t = read_csv(p.plan_dir() / "report" / "efficiency_summary.csv");
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0][t.column("budget_exact")] == "true");
  CHECK(t.rows[0][t.column("schedule_audit_ok")] == "true");

  Config bad = c;
  bad.set("efficiency.pretrain_steps", "3");
  CHECK_THROWS_AS(plan_from_config(bad), ConfigError);
  fs::remove_all(out);
}

TEST_CASE("masking plan pairs its curves on one shot axis") {
  const fs::path out = scratch("masking");
  Config c = parse(std::string(kSmallPlan));
  c.set("plan.kind", "head-masking");
  c.set("plan.name", "mask");
  c.set("plan.seeds", "1");
  c.set("eval.mask_k", "1");
  c.set("plan.out", out.string());
  const ExperimentPlan p = plan_from_config(c);
  run_plan(p);
  emit_report(p.plan_dir());
  const CsvTable t = read_csv(p.plan_dir() / "report" / "masking.csv");
  std::map<std::string, std::vector<std::string>> shots;
  for (const auto& row : t.rows) {
    shots[row[t.column("task")]].push_back(row[t.column("shots")]);
    CHECK(std::stod(row[t.column("difference")]) ==
          doctest::Approx(std::stod(row[t.column("top_masked")]) - std::stod(row[t.column("bottom_masked")])));
  }
  CHECK(shots.size() == 3);
  for (const auto& [task, v] : shots) CHECK(v == std::vector<std::string>{"0", "1", "2", "3", "4", "5"});
  fs::remove_all(out);
}

TEST_CASE("cli exit codes") {
  const fs::path out = scratch("cli");
  const fs::path ini = out / "plan.ini";
  std::ofstream(ini) << kSmallPlan;
  const std::string cfg = "--config " + ini.string();
  CHECK(run_cli("") == exit_codes::kConfigError);
  CHECK(run_cli("plan " + cfg + " --set model.bogus=1") == exit_codes::kConfigError);
  CHECK(run_cli("plan " + cfg + " --set train.lr=abc") == exit_codes::kConfigError);
  CHECK(run_cli("report " + (out / "nothing").string()) == exit_codes::kIncompletePlan);
  CHECK(run_cli("plan " + cfg + " --seed 3 --out " + (out / "runs").string()) == exit_codes::kSuccess);
  CHECK(fs::exists(out / "runs" / "compare" / "report" / "summary.csv"));
  CHECK(run_cli("report " + (out / "runs" / "compare").string()) == exit_codes::kSuccess);
  CHECK(run_cli("train " + cfg + " --set train.lr=1e300 --out " + (out / "boom").string()) ==
        exit_codes::kNumericFailure);
  CHECK(fs::exists(out / "boom" / "failure.json"));
  const fs::path ckpt = out / "single";
  CHECK(run_cli("train " + cfg + " --seed 5 --out " + ckpt.string()) == exit_codes::kSuccess);
  CHECK(run_cli("eval " + cfg + " --checkpoint " + (ckpt / "checkpoints" / "step_00000009.ckpt").string() +
                " --out " + (out / "eval").string()) == exit_codes::kSuccess);
  CHECK(fs::exists(out / "eval" / "curves.csv"));
  CHECK(run_cli("probe " + cfg + " --mask-k 1 --checkpoint " + (ckpt / "checkpoints" / "step_00000009.ckpt").string() +
                " --out " + (out / "probe").string()) == exit_codes::kSuccess);
  CHECK(fs::exists(out / "probe" / "ablation.csv"));
  fs::remove_all(out);
}
