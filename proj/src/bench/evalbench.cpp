#include "copush/bench/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "copush/common/error.hpp"
#include "copush/common/parallel.hpp"
#include "copush/common/version.hpp"
#include "copush/policy/observation.hpp"

namespace copush::bench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const sim::Vec2 kKidnapCorner(0.04, 0.04);

}  // namespace

Method Method::planner_gmp(std::string name, const plan::GmpConfig& cfg) {
  Method m;
  m.name = std::move(name);
  m.kind = MethodKind::kGmp;
  m.gmp = cfg;
  return m;
}

Method Method::planner_mppi(std::string name, const plan::MppiConfig& cfg) {
  Method m;
  m.name = std::move(name);
  m.kind = MethodKind::kMppi;
  m.mppi = cfg;
  return m;
}

Method Method::random(std::string name) {
  Method m;
  m.name = std::move(name);
  m.kind = MethodKind::kRandom;
  return m;
}

Method Method::learned(std::string name, std::shared_ptr<const policy::Policy> p) {
  COPUSH_REQUIRE(p != nullptr, "learned method needs a policy");
  Method m;
  m.name = std::move(name);
  m.kind = MethodKind::kPolicy;
  m.policy = std::move(p);
  return m;
}

std::uint64_t episode_seed(std::uint64_t root, int episode) {
  return substream_seed(root, "eval.episode", static_cast<std::uint64_t>(episode));
}

EpisodeResult run_episode(const Method& method, const EpisodeSpec& spec) {
  const sim::Simulator simulator(spec.sim);
  const sim::SimState s0 = train::initial_state(spec.sim, spec.task, spec.n_robots);
  const auto goal = train::goal_from_curve(spec.task, s0, spec.goal);
  const int horizon = spec.task.horizon;
  const int nr = spec.n_robots;
  const double limit = spec.sim.effective_limit(nr);
  const bool kidnap = spec.kidnap_step >= 0 && spec.kidnap_step < horizon;
  COPUSH_REQUIRE(!kidnap || (spec.kidnap_victim >= 0 && spec.kidnap_victim < nr),
                 "kidnap victim out of range");

  EpisodeResult out;
  sim::ActionPlan open_loop;
  double plan_seconds = 0.0;
  try {
    if (method.kind == MethodKind::kGmp) {
      plan::GmpConfig cfg = method.gmp;
      cfg.seed = substream_seed(spec.seed, "eval.gmp");
      const auto t0 = Clock::now();
      open_loop = plan::plan(simulator, s0, goal, horizon, cfg).plan;
      plan_seconds = seconds_since(t0);
    } else if (method.kind == MethodKind::kMppi) {
      plan::MppiConfig cfg = method.mppi;
      cfg.horizon = horizon;
      cfg.seed = substream_seed(spec.seed, "eval.mppi");
      const auto t0 = Clock::now();
      open_loop = plan::mppi_plan(simulator, s0, goal, cfg).plan;
      plan_seconds = seconds_since(t0);
    } else if (method.kind == MethodKind::kRandom) {
      open_loop = sim::ActionPlan(horizon, nr);
      auto rng = make_rng(spec.seed, "eval.random");
      for (auto& a : open_loop.flat()) a = sim::Vec2(uniform(rng, -limit, limit), uniform(rng, -limit, limit));
    } else {
      COPUSH_REQUIRE(method.policy != nullptr, "policy method without a policy");
    }

    std::vector<int> idx;
    if (method.kind == MethodKind::kPolicy)
      idx = policy::downsample_particles(static_cast<int>(s0.particles.size()),
                                         method.policy->config().obs_particles, spec.seed);
    policy::ActionSmoother smoother(method.smoothing && method.kind == MethodKind::kPolicy
                                        ? method.policy->config().smoothing_window
                                        : 1);
    sim::SimState s = s0;
    double act_seconds = 0.0;
    for (int t = 0; t < horizon; ++t) {
      if (kidnap && t == spec.kidnap_step)
        s.robots.positions[static_cast<std::size_t>(spec.kidnap_victim)] = kKidnapCorner;
      sim::Vec2List cmd;
      if (method.kind == MethodKind::kPolicy) {
        const auto t0 = Clock::now();
        const nn::Mat obs = policy::build_observation(s, goal, idx);
        const nn::Mask mask = policy::visibility_mask(s.robots.positions);
        policy::AttentionTrace trace;
        const bool want_trace = spec.record_attention && method.policy->arch() == policy::Arch::kAttention;
        cmd = smoother.push(method.policy->act(obs, mask, limit, want_trace ? &trace : nullptr));
        act_seconds += seconds_since(t0);
        if (spec.record_attention) {
          out.attention.push_back(std::move(trace));
          out.masks.push_back(mask);
        }
      } else {
        cmd = open_loop.step(t);
      }
      if (kidnap && t >= spec.kidnap_step) cmd[static_cast<std::size_t>(spec.kidnap_victim)].setZero();
      s = simulator.step(s, cmd);
    }
    out.reward = train::final_reward(spec.task, s0, s, goal);
    out.time_per_step = (method.kind == MethodKind::kPolicy ? act_seconds : plan_seconds) / horizon;
  } catch (const std::runtime_error& e) {
    out.failed = true;
    out.note = e.what();
    out.reward = 0.0;
  }
  return out;
}

Stats summarize(const std::vector<double>& values, int failed) {
  Stats s;
  s.count = static_cast<int>(values.size());
  s.failed = failed;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

Stats Report::stats(const std::string& experiment, const std::string& method,
                    const std::string& param) const {
  std::vector<double> values;
  int failed = 0;
  for (const auto& r : rows) {
    if (r.experiment != experiment || r.method != method || r.param != param) continue;
    if (r.failed) ++failed;
    else values.push_back(r.reward);
  }
  return summarize(values, failed);
}

std::string csv_header(const std::string& config_hash) {
  return std::string("# copush ") + kVersion + " config_hash=" + config_hash + "\n";
}

std::string Report::csv() const {
  std::ostringstream os;
  os << csv_header(config_hash) << "experiment,method,param,episode,reward,status\n";
  for (const auto& r : rows)
    os << r.experiment << "," << r.method << "," << r.param << "," << r.episode << ","
       << fmt(r.reward) << "," << (r.failed ? "failed" : "ok") << "\n";
  return os.str();
}

std::string Report::timing_csv() const {
  std::ostringstream os;
  os << csv_header(config_hash) << "experiment,method,param,episode,time_per_step\n";
  for (const auto& r : rows)
    os << r.experiment << "," << r.method << "," << r.param << "," << r.episode << ","
       << fmt(r.time_per_step) << "\n";
  return os.str();
}

std::string Report::summary_csv() const {
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& r : rows) {
    auto k = std::make_tuple(r.experiment, r.method, r.param);
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  std::ostringstream os;
  os << csv_header(config_hash) << "experiment,method,param,mean_reward,std_reward,episodes,failed\n";
  for (const auto& [e, m, p] : keys) {
    const Stats s = stats(e, m, p);
    os << e << "," << m << "," << p << "," << fmt(s.mean) << "," << fmt(s.std) << "," << s.count
       << "," << s.failed << "\n";
  }
  return os.str();
}

void Report::append(const Report& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
}

std::vector<scene::Cubic> eval_goals(const EvalSetup& setup, int count) {
  const sim::SimState s0 = train::initial_state(setup.sim, setup.task, 1);
  std::vector<scene::Cubic> out;
  for (int k = 0; k < count; ++k)
    out.push_back(train::sample_goal(setup.task, s0, setup.seed, setup.goal_split, k).curve);
  return out;
}

namespace {

// Runs every (method, episode) job and returns rows in job order.
Report run_jobs(const std::vector<Method>& methods, const std::vector<EpisodeSpec>& specs,
                const std::string& experiment, const std::vector<std::string>& params,
                const EvalSetup& setup) {
  Report rep;
  rep.config_hash = setup.config_hash;
  const std::size_t n = methods.size() * specs.size();
  std::vector<EpisodeResult> results(n);
  parallel_for(n, setup.jobs, [&](std::size_t k) {
    results[k] = run_episode(methods[k / specs.size()], specs[k % specs.size()]);
  });
  for (std::size_t k = 0; k < n; ++k) {
    const auto& spec = specs[k % specs.size()];
    ReportRow row;
    row.experiment = experiment;
    row.method = methods[k / specs.size()].name;
    row.param = params[k % specs.size()];
    row.episode = spec.goal_id;
    row.reward = results[k].reward;
    row.time_per_step = results[k].time_per_step;
    row.failed = results[k].failed;
    row.note = results[k].note;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

EpisodeSpec base_spec(const EvalSetup& setup, const scene::Cubic& goal, int episode, int n_robots) {
  EpisodeSpec s;
  s.sim = setup.sim;
  s.task = setup.task;
  s.n_robots = n_robots;
  s.goal_id = episode;
  s.goal = goal;
  s.seed = episode_seed(setup.seed, episode);
  return s;
}

}  // namespace

Report compare_methods(const std::vector<Method>& methods, const std::vector<scene::Cubic>& goals,
                       const EvalSetup& setup, int n_robots) {
  std::vector<EpisodeSpec> specs;
  for (std::size_t g = 0; g < goals.size(); ++g)
    specs.push_back(base_spec(setup, goals[g], static_cast<int>(g), n_robots));
  return run_jobs(methods, specs, "compare", std::vector<std::string>(specs.size(), ""), setup);
}

std::vector<SweepRange> default_sweep_ranges() {
  return {{"friction", 1.0, 2.5},
          {"yield_stress", 15.0, 45.0},
          {"velocity_limit", 0.005, 0.02},
          {"robot_radius", 0.02, 0.035}};
}

void set_physics_param(sim::SimConfig& cfg, const std::string& param, double value) {
  if (param == "friction") cfg.friction = value;
  else if (param == "yield_stress") cfg.yield_stress = value;
  else if (param == "velocity_limit") cfg.velocity_limit = value;
  else if (param == "robot_radius") cfg.robot_radius = value;
  else throw ConfigError("unknown sweep parameter '" + param + "'");
}

Report generalization_sweep(const std::vector<Method>& methods, const std::vector<SweepRange>& ranges,
                            const std::vector<scene::Cubic>& goals, const EvalSetup& setup,
                            int n_robots) {
  Report rep;
  rep.config_hash = setup.config_hash;
  for (const auto& range : ranges) {
    if (!(range.lo <= range.hi)) throw ConfigError("sweep range for " + range.param + " is empty");
    std::vector<EpisodeSpec> specs;
    std::vector<std::string> params;
    for (std::size_t g = 0; g < goals.size(); ++g) {
      EpisodeSpec s = base_spec(setup, goals[g], static_cast<int>(g), n_robots);
      auto rng = make_rng(setup.seed, "eval.sweep." + range.param, g);
      const double v = range.lo == range.hi ? range.lo : uniform(rng, range.lo, range.hi);
      set_physics_param(s.sim, range.param, v);
      s.sim.validate();
      specs.push_back(s);
      params.push_back(range.param + "=" + fmt(v));
    }
    Report part = run_jobs(methods, specs, "sweep." + range.param, params, setup);
    // stats are grouped per sweep, so the per-episode value moves to the note
    for (auto& r : part.rows) {
      r.note = r.param + (r.note.empty() ? "" : "; " + r.note);
      r.param = range.param;
    }
    rep.append(part);
  }
  return rep;
}

Report robot_count_eval(const Method& method, const std::vector<int>& counts,
                        const std::vector<scene::Cubic>& goals, const EvalSetup& setup) {
  Report rep;
  rep.config_hash = setup.config_hash;
  for (int n : counts) {
    if (method.kind == MethodKind::kPolicy && method.policy->arch() == policy::Arch::kMlp)
      throw ConfigError("robot_count_eval needs an attention policy");
    std::vector<EpisodeSpec> specs;
    for (std::size_t g = 0; g < goals.size(); ++g)
      specs.push_back(base_spec(setup, goals[g], static_cast<int>(g), n));
    rep.append(run_jobs({method}, specs, "robots", std::vector<std::string>(specs.size(), "n_r=" + std::to_string(n)),
                        setup));
  }
  return rep;
}

int KidnapReport::increased() const {
  int n = 0;
  for (const auto& e : episodes) n += e.after > e.before;
  return n;
}

std::string KidnapReport::blocks_csv(const std::string& config_hash) const {
  std::ostringstream os;
  os << csv_header(config_hash) << "episode,step,self,neighbor,kidnapped\n";
  for (const auto& e : episodes)
    for (std::size_t t = 0; t < e.self_attention.size(); ++t)
      os << e.episode << "," << t << "," << fmt(e.self_attention[t]) << ","
         << fmt(e.neighbor_attention[t]) << "," << (static_cast<int>(t) >= t_kidnap ? 1 : 0) << "\n";
  return os.str();
}

std::string KidnapReport::traces_jsonl(const std::string& config_hash) const {
  std::ostringstream os;
  os << "{\"type\":\"header\",\"version\":\"" << kVersion << "\",\"config_hash\":\"" << config_hash
     << "\",\"t_kidnap\":" << t_kidnap << ",\"victim\":" << victim << "}\n";
  for (const auto& e : episodes)
    for (std::size_t t = 0; t < e.traces.size(); ++t)
      for (std::size_t l = 0; l < e.traces[t].size(); ++l)
        for (std::size_t h = 0; h < e.traces[t][l].size(); ++h) {
          const nn::Mat& a = e.traces[t][l][h];
          os << "{\"type\":\"attention\",\"episode\":" << e.episode << ",\"step\":" << t
             << ",\"layer\":" << l << ",\"head\":" << h << ",\"n\":" << a.rows() << ",\"matrix\":[";
          for (Eigen::Index k = 0; k < a.size(); ++k) os << (k ? "," : "") << fmt(a.data()[k]);
          os << "]}\n";
        }
  return os.str();
}

KidnapReport kidnap_study(const Method& method, const std::vector<scene::Cubic>& goals,
                          const EvalSetup& setup, int n_robots, int t_kidnap, int victim,
                          int window) {
  COPUSH_REQUIRE(method.kind == MethodKind::kPolicy && method.policy->arch() == policy::Arch::kAttention,
                 "kidnap_study needs an attention policy");
  COPUSH_REQUIRE(t_kidnap > 0 && t_kidnap < setup.task.horizon, "kidnap step must lie inside the episode");
  KidnapReport rep;
  rep.t_kidnap = t_kidnap;
  rep.window = window;
  rep.victim = victim;
  std::vector<EpisodeResult> results(goals.size());
  parallel_for(goals.size(), setup.jobs, [&](std::size_t g) {
    EpisodeSpec s = base_spec(setup, goals[g], static_cast<int>(g), n_robots);
    s.kidnap_step = t_kidnap;
    s.kidnap_victim = victim;
    s.record_attention = true;
    results[g] = run_episode(method, s);
  });
  for (std::size_t g = 0; g < goals.size(); ++g) {
    KidnapEpisode e;
    e.episode = static_cast<int>(g);
    e.goal_id = static_cast<int>(g);
    e.reward = results[g].reward;
    e.traces = std::move(results[g].attention);
    e.masks = std::move(results[g].masks);
    for (std::size_t t = 0; t < e.traces.size(); ++t) {
      double self = 0.0, nb = 0.0;
      int count = 0;
      const nn::Mask& mask = e.masks[t];
      for (int i = 0; i < n_robots; ++i) {
        if (i == victim) continue;
        int j_nb = -1;
        for (int j = 0; j < n_robots; ++j)
          if (j != i && mask(i, j)) j_nb = j;
        for (const auto& layer : e.traces[t])
          for (const auto& head : layer) {
            self += head(i, i);
            nb += j_nb >= 0 ? head(i, j_nb) : 0.0;
            ++count;
          }
      }
      e.self_attention.push_back(count ? self / count : 0.0);
      e.neighbor_attention.push_back(count ? nb / count : 0.0);
    }
    auto window_mean = [&](int lo, int hi) {
      lo = std::max(lo, 0);
      hi = std::min(hi, static_cast<int>(e.neighbor_attention.size()));
      double s = 0.0;
      for (int t = lo; t < hi; ++t) s += e.neighbor_attention[static_cast<std::size_t>(t)];
      return hi > lo ? s / (hi - lo) : 0.0;
    };
    e.before = window_mean(t_kidnap - window, t_kidnap);
    e.after = window_mean(t_kidnap, t_kidnap + window);
    rep.episodes.push_back(std::move(e));
  }
  return rep;
}

std::vector<TimingRow> timing_scaling(const policy::Policy& policy, const std::vector<int>& counts,
                                      int repeats, std::uint64_t seed) {
  COPUSH_REQUIRE(repeats >= 1, "timing_scaling: repeats must be >= 1");
  std::vector<TimingRow> out;
  for (int n : counts) {
    auto rng = make_rng(seed, "eval.timing", static_cast<std::uint64_t>(n));
    nn::Mat obs(n, policy.d_in());
    for (Eigen::Index k = 0; k < obs.size(); ++k) obs.data()[k] = uniform(rng, -0.5, 0.5);
    sim::Vec2List robots;
    for (int i = 0; i < n; ++i) robots.emplace_back(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0));
    std::vector<double> times;
    for (int r = 0; r < repeats + 1; ++r) {
      const auto t0 = Clock::now();
      const nn::Mask mask = policy::visibility_mask(robots);
      const auto a = policy.act(obs, mask, 1.0);
      const double dt = seconds_since(t0);
      if (r > 0) times.push_back(dt);  // first call warms caches
      if (a.empty()) throw std::logic_error("timing: empty action");
    }
    TimingRow row;
    row.n_robots = n;
    row.mean_s = summarize(times).mean;
    std::sort(times.begin(), times.end());
    row.median_s = times[times.size() / 2];
    out.push_back(row);
  }
  return out;
}

}  // namespace copush::bench
