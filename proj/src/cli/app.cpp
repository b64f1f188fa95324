#include "copush/cli/app.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "copush/bench/evalbench.hpp"
#include "copush/cli/config.hpp"
#include "copush/common/error.hpp"
#include "copush/common/version.hpp"
#include "json.hpp"

namespace copush::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
  std::string out;
};

struct Context {
  RunConfig cfg;
  std::string hash;
  std::string out;
  int jobs = 1;
  std::ostream* log = nullptr;

  std::string header_line() const { return std::string("copush ") + kVersion + " config_hash=" + hash; }
  json header_record() const {
    return json{{"type", "header"}, {"version", kVersion}, {"config_hash", hash}};
  }
  std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }
  void progress(const std::string& s) const { *log << s << std::endl; }
};

Context prepare(const Common& c, std::ostream& log) {
  Context ctx;
  ctx.cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (c.seed_set) ctx.cfg.seed = c.seed;
  ctx.cfg.resolve();
  ctx.cfg.validate();
  if (c.jobs < 1) throw ConfigError("--jobs must be >= 1");
  ctx.jobs = c.jobs;
  ctx.hash = config_hash(ctx.cfg);
  if (c.out.empty()) throw ConfigError("--out is required");
  ctx.out = c.out;
  ctx.log = &log;
  fs::create_directories(ctx.out);
  bench::write_text(ctx.path("config.json"), to_json_text(ctx.cfg) + "\n");
  return ctx;
}

bench::EvalSetup eval_setup(const Context& ctx) {
  bench::EvalSetup s;
  s.sim = ctx.cfg.sim;
  s.task = ctx.cfg.scene;
  s.seed = ctx.cfg.seed;
  s.jobs = ctx.jobs;
  s.config_hash = ctx.hash;
  s.goal_split = ctx.cfg.eval.goal_split;
  return s;
}

std::vector<double> flat_plan(const sim::ActionPlan& p) {
  std::vector<double> out;
  for (const auto& a : p.flat()) {
    out.push_back(a.x());
    out.push_back(a.y());
  }
  return out;
}

int cmd_plan(const Context& ctx, const std::string& method, int goal_id) {
  const auto& cfg = ctx.cfg;
  if (goal_id < 0 || goal_id >= cfg.eval.n_goals)
    throw ConfigError("--goal " + std::to_string(goal_id) + " does not name a goal (eval.n_goals = " +
                      std::to_string(cfg.eval.n_goals) + ")");
  const sim::Simulator simulator(cfg.sim);
  const auto s0 = train::initial_state(cfg.sim, cfg.scene, cfg.scene.n_robots);
  const auto goal = train::sample_goal(cfg.scene, s0, cfg.seed, cfg.eval.goal_split, goal_id);
  json rec{{"type", "plan"},
           {"method", method},
           {"goal_id", goal_id},
           {"goal_coeffs", goal.curve.coeffs},
           {"horizon", cfg.scene.horizon},
           {"n_robots", cfg.scene.n_robots}};
  sim::ActionPlan plan;
  if (method == "gmp") {
    ctx.progress("gmp: planning goal " + std::to_string(goal_id));
    auto res = plan::plan(simulator, s0, goal, cfg.scene.horizon, cfg.gmp);
    plan = res.plan;
    rec["loss_history"] = res.loss_history;
    rec["best_iteration"] = res.best_iteration;
  } else {
    plan::MppiConfig mc = cfg.mppi;
    mc.jobs = ctx.jobs;
    ctx.progress("mppi: planning goal " + std::to_string(goal_id));
    auto res = plan::mppi_plan(simulator, s0, goal, mc);
    plan = res.plan;
    rec["loss_history"] = res.cost_history;
    rec["best_sample_cost"] = res.best_sample_cost;
    rec["temperature"] = res.temperature;
  }
  rec["plan"] = flat_plan(plan);
  rec["reward"] = train::final_reward(cfg.scene, s0, simulator.rollout(s0, plan).back(), goal);
  std::ostringstream os;
  os << ctx.header_record().dump() << "\n" << rec.dump() << "\n";
  bench::write_text(ctx.path("plan.jsonl"), os.str());
  ctx.progress("reward " + std::to_string(rec["reward"].get<double>()));
  return kOk;
}

int cmd_collect(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  auto ds = train::collect(cfg.sim, cfg.scene, cfg.gmp, cfg.train.collect, cfg.seed, ctx.hash, ctx.jobs,
                           [&](const std::string& s) { ctx.progress(s); });
  train::save_dataset(ctx.out, ds);
  ctx.progress("collected " + std::to_string(ds.manifest.demo_count) + " demos, skipped " +
               std::to_string(ds.manifest.skipped));
  return kOk;
}

int cmd_train(const Context& ctx, const std::string& arch, const std::string& data_dir) {
  const auto& cfg = ctx.cfg;
  const double scale = cfg.sim.effective_limit(cfg.scene.n_robots);
  std::ostringstream curve;
  curve << ctx.header_record().dump() << "\n";
  policy::Policy result;
  json summary{{"type", "summary"}, {"arch", arch}};
  if (arch == "ppo") {
    auto res = train::ppo_fit(cfg.sim, cfg.scene, cfg.policy, cfg.train.ppo,
                              [&](const std::string& s) { ctx.progress(s); });
    for (std::size_t k = 0; k < res.episode_reward.size(); ++k)
      curve << json{{"type", "episode"}, {"episode", k}, {"reward", res.episode_reward[k]},
                    {"return", res.episode_return[k]}}.dump()
            << "\n";
    summary["env_steps"] = res.env_steps;
    summary["log_std"] = res.log_std;
    summary["diverged"] = res.diverged;
    result = std::move(res.policy);
  } else {
    if (data_dir.empty()) throw ConfigError("--data is required for behaviour cloning");
    const auto ds = train::load_dataset(data_dir);
    if (ds.demos.empty()) throw ConfigError("empty dataset '" + data_dir + "'");
    ctx.progress("replaying " + std::to_string(ds.demos.size()) + " demos");
    const auto samples = train::materialize_all(ds, cfg.sim, cfg.scene, cfg.policy.obs_particles, scale, ctx.jobs);
    auto res = train::bc_fit(samples, policy::arch_from_string(arch), cfg.policy, scale, cfg.train.bc);
    for (std::size_t k = 0; k < res.train_loss.size(); ++k)
      curve << json{{"type", "epoch"}, {"epoch", k}, {"train_loss", res.train_loss[k]},
                    {"val_loss", res.val_loss[k]}}.dump()
            << "\n";
    summary["best_epoch"] = res.best_epoch;
    summary["best_train"] = res.best_train;
    summary["best_val"] = res.best_val;
    summary["diverged"] = res.diverged;
    summary["samples"] = samples.size();
    summary["dataset_hash"] = ds.manifest.demos_hash;
    ctx.progress("best epoch " + std::to_string(res.best_epoch) + " val " + std::to_string(res.best_val));
    result = std::move(res.policy);
  }
  curve << summary.dump() << "\n";
  bench::write_text(ctx.path("train_" + arch + ".jsonl"), curve.str());
  result.save(ctx.path("policy_" + arch + ".bin"), ctx.header_line());
  if (summary.value("diverged", false)) {
    *ctx.log << "training diverged; saved the last finite parameters" << std::endl;
    return kRuntimeError;
  }
  return kOk;
}

std::shared_ptr<const policy::Policy> load_policy(const std::string& dir, const std::string& arch) {
  const std::string p = (fs::path(dir) / ("policy_" + arch + ".bin")).string();
  return std::make_shared<const policy::Policy>(policy::Policy::load(p));
}

bench::Method make_method(const Context& ctx, const std::string& name, const std::string& policy_dir) {
  if (name == "gmp") return bench::Method::planner_gmp(name, ctx.cfg.gmp);
  if (name == "mppi") {
    plan::MppiConfig mc = ctx.cfg.mppi;
    mc.jobs = 1;  // episodes already run in parallel
    return bench::Method::planner_mppi(name, mc);
  }
  if (name == "random") return bench::Method::random(name);
  if (policy_dir.empty()) throw ConfigError("--policies is required for method '" + name + "'");
  const std::string arch = name == "bc_attention" ? "attention" : name == "bc_mlp" ? "mlp" : "ppo";
  return bench::Method::learned(name, load_policy(policy_dir, arch));
}

int cmd_eval(const Context& ctx, const std::string& policy_dir) {
  const auto& ev = ctx.cfg.eval;
  const auto setup = eval_setup(ctx);
  const auto goals = bench::eval_goals(setup, ev.n_goals);
  auto has = [&](const std::string& s) { return std::find(ev.suites.begin(), ev.suites.end(), s) != ev.suites.end(); };
  bench::Report report;
  report.config_hash = ctx.hash;
  const int nr = ctx.cfg.scene.n_robots;
  if (has("compare")) {
    std::vector<bench::Method> methods;
    for (const auto& m : ev.methods) methods.push_back(make_method(ctx, m, policy_dir));
    ctx.progress("compare: " + std::to_string(methods.size()) + " methods x " + std::to_string(goals.size()) + " goals");
    report.append(bench::compare_methods(methods, goals, setup, nr));
  }
  if (has("sweep")) {
    std::vector<bench::Method> methods;
    for (const auto& m : ev.sweep_methods) methods.push_back(make_method(ctx, m, policy_dir));
    std::vector<bench::SweepRange> ranges;
    for (const auto& [k, r] : ev.sweep_ranges) ranges.push_back({k, r[0], r[1]});
    ctx.progress("sweep: " + std::to_string(ranges.size()) + " parameters");
    report.append(bench::generalization_sweep(methods, ranges, goals, setup, nr));
  }
  if (has("robots")) {
    ctx.progress("robots: attention policy at varied team sizes");
    report.append(bench::robot_count_eval(make_method(ctx, "bc_attention", policy_dir), ev.robot_counts, goals, setup));
  }
  bench::write_text(ctx.path("report.csv"), report.csv());
  bench::write_text(ctx.path("timing.csv"), report.timing_csv());
  bench::write_text(ctx.path("summary.csv"), report.summary_csv());
  {
    std::ostringstream os;
    os << ctx.header_record().dump() << "\n";
    for (const auto& r : report.rows)
      os << json{{"type", "episode"}, {"experiment", r.experiment}, {"method", r.method}, {"param", r.param},
                 {"episode", r.episode}, {"reward", r.reward}, {"failed", r.failed}, {"note", r.note}}.dump()
         << "\n";
    bench::write_text(ctx.path("episodes.jsonl"), os.str());
  }
  if (has("kidnap")) {
    ctx.progress("kidnap: " + std::to_string(ev.kidnap_episodes) + " episodes");
    const std::vector<scene::Cubic> kg(goals.begin(), goals.begin() + std::min<std::size_t>(goals.size(), ev.kidnap_episodes));
    const auto k = bench::kidnap_study(make_method(ctx, "bc_attention", policy_dir), kg, setup, nr,
                                       ev.kidnap_step, ev.kidnap_victim, ev.kidnap_window);
    bench::write_text(ctx.path("kidnap_blocks.csv"), k.blocks_csv(ctx.hash));
    bench::write_text(ctx.path("kidnap_traces.jsonl"), k.traces_jsonl(ctx.hash));
    ctx.progress("kidnap: neighbour attention rose in " + std::to_string(k.increased()) + " of " +
                 std::to_string(k.episodes.size()) + " episodes");
  }
  if (has("timing")) {
    const auto p = load_policy(policy_dir, "attention");
    const auto rows = bench::timing_scaling(*p, ev.timing_counts, ev.timing_repeats, ctx.cfg.seed);
    std::ostringstream os;
    os << bench::csv_header(ctx.hash) << "n_robots,median_s,mean_s\n";
    for (const auto& r : rows) os << r.n_robots << "," << r.median_s << "," << r.mean_s << "\n";
    bench::write_text(ctx.path("latency.csv"), os.str());
  }
  ctx.progress("wrote reports to " + ctx.out);
  return kOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON run configuration (defaults when omitted)");
  sub->add_option_function<std::uint64_t>("--seed", [&c](const std::uint64_t& s) {
    c.seed = s;
    c.seed_set = true;
  }, "Root seed (overrides the config)");
  sub->add_option("--jobs", c.jobs, "Parallel workers")->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output directory")->required();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& log, std::ostream& err) {
  CLI::App app{"Cooperative soft-body pushing: planning, data collection, training, evaluation", "copush"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Common common;
  std::string method = "gmp", arch = "attention", data_dir, policy_dir;
  int goal_id = 0;

  auto* plan_cmd = app.add_subcommand("plan", "Plan one goal with GMP or MPPI");
  add_common(plan_cmd, common);
  plan_cmd->add_option("--method", method, "gmp or mppi")->check(CLI::IsMember({"gmp", "mppi"}));
  plan_cmd->add_option("--goal", goal_id, "Goal id of the evaluation split");

  auto* collect_cmd = app.add_subcommand("collect", "Collect GMP demonstrations");
  add_common(collect_cmd, common);

  auto* train_cmd = app.add_subcommand("train", "Behaviour-clone or PPO-train a policy");
  add_common(train_cmd, common);
  train_cmd->add_option("--arch", arch, "attention, mlp or ppo")->check(CLI::IsMember({"attention", "mlp", "ppo"}));
  train_cmd->add_option("--data", data_dir, "Dataset directory written by collect");

  auto* eval_cmd = app.add_subcommand("eval", "Run the evaluation suites");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--policies", policy_dir, "Directory with policy_<arch>.bin checkpoints");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    log << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kConfigError;
  }

  CLI::App* active = app.get_subcommands().front();
  const std::string name = active->get_name();
  try {
    const Context ctx = prepare(common, log);
    if (name == "plan") return cmd_plan(ctx, method, goal_id);
    if (name == "collect") return cmd_collect(ctx);
    if (name == "train") return cmd_train(ctx, arch, data_dir);
    return cmd_eval(ctx, policy_dir);
  } catch (const ConfigError& e) {
    err << "config error [" << name << "]: " << e.what() << "\n";
    return kConfigError;
  } catch (const SimulationFault& e) {
    err << "runtime error [" << name << "/diffsim]: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const DivergenceError& e) {
    err << "runtime error [" << name << "/optimizer]: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "runtime error [" << name << "]: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace copush::cli
