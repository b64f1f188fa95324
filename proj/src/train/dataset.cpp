#include "copush/train/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>
#include "json.hpp"
#include <sstream>

#include "copush/common/error.hpp"
#include "copush/common/hash.hpp"
#include "copush/common/parallel.hpp"
#include "copush/common/version.hpp"
#include "copush/policy/observation.hpp"

namespace copush::train {

using nlohmann::json;

void CollectConfig::validate() const {
  if (n_goals < 1) throw ConfigError("train.n_goals must be >= 1");
  if (demos_per_goal < 1) throw ConfigError("train.demos_per_goal must be >= 1");
  if (horizons.empty()) throw ConfigError("train.horizons must not be empty");
  for (int h : horizons)
    if (h < 1) throw ConfigError("train.horizons entries must be >= 1");
  if (split.empty()) throw ConfigError("train.split must not be empty");
}

Dataset collect(const sim::SimConfig& sim, const TaskConfig& task, const plan::GmpConfig& gmp,
                const CollectConfig& cfg, std::uint64_t seed, const std::string& config_hash,
                int jobs, const ProgressFn& progress) {
  cfg.validate();
  task.validate();
  const sim::Simulator simulator(sim);
  const sim::SimState s0 = initial_state(sim, task, task.n_robots);

  struct Job {
    int goal_id, horizon, variant;
  };
  std::vector<Job> work;
  for (int g = 0; g < cfg.n_goals; ++g)
    for (int h : cfg.horizons)
      for (int v = 0; v < cfg.demos_per_goal; ++v) work.push_back({g, h, v});

  std::vector<Demo> demos(work.size());
  std::vector<std::string> errors(work.size());
  std::mutex log_mutex;
  parallel_for(work.size(), jobs, [&](std::size_t k) {
    const Job& j = work[k];
    Demo d;
    d.goal_id = j.goal_id;
    d.variant = j.variant;
    d.horizon = j.horizon;
    d.n_robots = task.n_robots;
    const auto goal = sample_goal(task, s0, seed, cfg.split, j.goal_id);
    d.goal = goal.curve;
    d.gmp_seed = substream_seed(seed, "train.gmp", k);
    d.obs_seed = substream_seed(seed, "train.obs", k);
    try {
      plan::GmpConfig gc = gmp;
      gc.seed = d.gmp_seed;
      auto res = plan::plan(simulator, s0, goal, j.horizon, gc);
      d.plan = std::move(res.plan);
      d.loss_history = std::move(res.loss_history);
      d.reward = final_reward(task, s0, simulator.rollout(s0, d.plan).back(), goal);
    } catch (const std::runtime_error& e) {
      errors[k] = "goal " + std::to_string(j.goal_id) + " horizon " + std::to_string(j.horizon) +
                  " variant " + std::to_string(j.variant) + ": " + e.what();
    }
    if (progress) {
      std::lock_guard<std::mutex> lock(log_mutex);
      std::ostringstream os;
      os << "demo " << k + 1 << "/" << work.size() << " goal " << j.goal_id << " T " << j.horizon;
      if (errors[k].empty()) os << " reward " << d.reward;
      else os << " skipped: " << errors[k];
      progress(os.str());
    }
    demos[k] = std::move(d);
  });

  Dataset ds;
  for (std::size_t k = 0; k < work.size(); ++k) {
    if (!errors[k].empty()) {
      ds.manifest.skip_notes.push_back(errors[k]);
      continue;
    }
    ds.demos.push_back(std::move(demos[k]));
  }
  auto& m = ds.manifest;
  m.demo_count = static_cast<int>(ds.demos.size());
  m.goal_count = cfg.n_goals;
  m.horizons = cfg.horizons;
  m.n_robots = task.n_robots;
  m.seed = seed;
  m.config_hash = config_hash;
  m.skipped = static_cast<int>(m.skip_notes.size());
  return ds;
}

std::vector<Sample> materialize(const Demo& demo, const sim::SimConfig& sim, const TaskConfig& task,
                                int obs_particles, double action_scale, double* replay_reward) {
  COPUSH_REQUIRE(action_scale > 0.0, "materialize: action_scale must be positive");
  COPUSH_REQUIRE(demo.plan.horizon() == demo.horizon && demo.plan.n_robots() == demo.n_robots,
                 "materialize: demo plan shape does not match its header");
  const sim::Simulator simulator(sim);
  const sim::SimState s0 = initial_state(sim, task, demo.n_robots);
  const auto goal = goal_from_curve(task, s0, demo.goal);
  const auto idx = policy::downsample_particles(static_cast<int>(s0.particles.size()),
                                                obs_particles, demo.obs_seed);
  std::vector<Sample> out;
  sim::SimState s = s0;
  const double limit = sim.effective_limit(demo.n_robots);
  for (int t = 0; t < demo.horizon; ++t) {
    Sample smp;
    smp.goal_id = demo.goal_id;
    smp.obs = policy::build_observation(s, goal, idx);
    smp.mask = policy::visibility_mask(s.robots.positions);
    smp.target.resize(demo.n_robots, 2);
    for (int i = 0; i < demo.n_robots; ++i) {
      const sim::Vec2 a = demo.plan.at(t, i).cwiseMax(-limit).cwiseMin(limit) / action_scale;
      smp.target(i, 0) = a.x();
      smp.target(i, 1) = a.y();
    }
    out.push_back(std::move(smp));
    s = simulator.step(s, demo.plan.step(t));
  }
  if (replay_reward) *replay_reward = final_reward(task, s0, s, goal);
  return out;
}

std::vector<Sample> materialize_all(const Dataset& ds, const sim::SimConfig& sim,
                                    const TaskConfig& task, int obs_particles, double action_scale,
                                    int jobs) {
  std::vector<std::vector<Sample>> parts(ds.demos.size());
  parallel_for(ds.demos.size(), jobs, [&](std::size_t k) {
    parts[k] = materialize(ds.demos[k], sim, task, obs_particles, action_scale);
  });
  std::vector<Sample> out;
  for (auto& p : parts)
    for (auto& s : p) out.push_back(std::move(s));
  return out;
}

namespace {

json demo_to_json(const Demo& d) {
  std::vector<double> flat;
  flat.reserve(d.plan.flat().size() * 2);
  for (const auto& a : d.plan.flat()) {
    flat.push_back(a.x());
    flat.push_back(a.y());
  }
  return json{{"type", "demo"},
              {"goal_id", d.goal_id},
              {"variant", d.variant},
              {"horizon", d.horizon},
              {"n_robots", d.n_robots},
              {"goal_coeffs", d.goal.coeffs},
              {"goal_x_range", {d.goal.x_begin, d.goal.x_end}},
              {"gmp_seed", d.gmp_seed},
              {"obs_seed", d.obs_seed},
              {"plan", flat},
              {"loss_history", d.loss_history},
              {"reward", d.reward}};
}

Demo demo_from_json(const json& j) {
  Demo d;
  d.goal_id = j.at("goal_id").get<int>();
  d.variant = j.at("variant").get<int>();
  d.horizon = j.at("horizon").get<int>();
  d.n_robots = j.at("n_robots").get<int>();
  d.goal.coeffs = j.at("goal_coeffs").get<std::array<double, 4>>();
  const auto xr = j.at("goal_x_range").get<std::array<double, 2>>();
  d.goal.x_begin = xr[0];
  d.goal.x_end = xr[1];
  d.gmp_seed = j.at("gmp_seed").get<std::uint64_t>();
  d.obs_seed = j.at("obs_seed").get<std::uint64_t>();
  const auto flat = j.at("plan").get<std::vector<double>>();
  if (d.horizon < 1 || d.n_robots < 1 ||
      flat.size() != static_cast<std::size_t>(d.horizon) * d.n_robots * 2)
    throw ConfigError("demo plan size does not match horizon and robot count");
  d.plan = sim::ActionPlan(d.horizon, d.n_robots);
  for (std::size_t k = 0; k < d.plan.flat().size(); ++k)
    d.plan.flat()[k] = sim::Vec2(flat[2 * k], flat[2 * k + 1]);
  d.loss_history = j.at("loss_history").get<std::vector<double>>();
  d.reward = j.at("reward").get<double>();
  return d;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

void save_dataset(const std::string& dir, Dataset& ds) {
  std::filesystem::create_directories(dir);
  std::ostringstream demos;
  demos << json{{"type", "header"}, {"version", kVersion}, {"config_hash", ds.manifest.config_hash}}.dump()
        << "\n";
  for (const auto& d : ds.demos) demos << demo_to_json(d).dump() << "\n";
  const std::string body = demos.str();
  ds.manifest.demos_hash = content_hash(body);
  {
    std::ofstream out(dir + "/demos.jsonl", std::ios::binary);
    out << body;
    if (!out) throw std::runtime_error("cannot write '" + dir + "/demos.jsonl'");
  }
  const auto& m = ds.manifest;
  const json manifest{{"version", kVersion},        {"config_hash", m.config_hash},
                      {"demo_count", m.demo_count}, {"goal_count", m.goal_count},
                      {"horizons", m.horizons},     {"n_robots", m.n_robots},
                      {"seed", m.seed},             {"skipped", m.skipped},
                      {"skip_notes", m.skip_notes}, {"demos_file", "demos.jsonl"},
                      {"demos_hash", m.demos_hash}};
  std::ofstream out(dir + "/manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write '" + dir + "/manifest.json'");
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  try {
    const json m = json::parse(read_file(dir + "/manifest.json"));
    auto& man = ds.manifest;
    man.config_hash = m.at("config_hash").get<std::string>();
    man.demo_count = m.at("demo_count").get<int>();
    man.goal_count = m.at("goal_count").get<int>();
    man.horizons = m.at("horizons").get<std::vector<int>>();
    man.n_robots = m.at("n_robots").get<int>();
    man.seed = m.at("seed").get<std::uint64_t>();
    man.skipped = m.at("skipped").get<int>();
    man.skip_notes = m.at("skip_notes").get<std::vector<std::string>>();
    man.demos_hash = m.at("demos_hash").get<std::string>();
    const std::string body = read_file(dir + "/" + m.at("demos_file").get<std::string>());
    if (content_hash(body) != man.demos_hash)
      throw ConfigError("dataset '" + dir + "': demo stream does not match the manifest hash");
    std::istringstream lines(body);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (j.at("type") == "demo") ds.demos.push_back(demo_from_json(j));
    }
  } catch (const json::exception& e) {
    throw ConfigError("dataset '" + dir + "': " + e.what());
  }
  if (static_cast<int>(ds.demos.size()) != ds.manifest.demo_count)
    throw ConfigError("dataset '" + dir + "': manifest lists " +
                      std::to_string(ds.manifest.demo_count) + " demos, stream has " +
                      std::to_string(ds.demos.size()));
  return ds;
}

}  // namespace copush::train
