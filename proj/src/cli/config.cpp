#include "copush/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "copush/common/error.hpp"
#include "copush/common/hash.hpp"
#include "json.hpp"

namespace copush::cli {

using nlohmann::json;

namespace {

std::string to_string(scene::DistMode m) {
  return m == scene::DistMode::kDensityDotSdf ? "density_dot_sdf" : "sdf_dot_sdf";
}
scene::DistMode dist_mode_from_string(const std::string& s) {
  if (s == "density_dot_sdf") return scene::DistMode::kDensityDotSdf;
  if (s == "sdf_dot_sdf") return scene::DistMode::kSdfDotSdf;
  throw ConfigError("unknown dist_mode '" + s + "'");
}

// Serializes a section.
struct Writer {
  json& j;
  template <class T>
  void operator()(const char* key, T& v) { j[key] = v; }
  template <class E, class To, class From>
  void enumeration(const char* key, E& v, To to, From) { j[key] = to(v); }
  template <class F>
  void section(const char* key, F&& f) {
    json sub = json::object();
    Writer w{sub};
    f(w);
    j[key] = sub;
  }
};

// Reads a section, rejecting keys no field claimed.
struct Reader {
  const json& j;
  std::string path;
  std::set<std::string> seen;

  std::string where(const char* key) const { return path.empty() ? key : path + "." + key; }

  template <class T>
  void operator()(const char* key, T& v) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      v = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + where(key) + "' has the wrong type");
    }
  }
  template <class E, class To, class From>
  void enumeration(const char* key, E& v, To, From from) {
    std::string s;
    (*this)(key, s);
    if (j.contains(key)) {
      try {
        v = from(s);
      } catch (const ConfigError& e) {
        throw ConfigError("config key '" + where(key) + "': " + e.what());
      }
    }
  }
  template <class F>
  void section(const char* key, F&& f) {
    seen.insert(key);
    if (!j.contains(key)) return;
    if (!j.at(key).is_object()) throw ConfigError("config key '" + where(key) + "' must be an object");
    Reader r{j.at(key), where(key), {}};
    f(r);
    r.finish();
  }
  void finish() const {
    for (const auto& [k, _] : j.items())
      if (!seen.count(k)) throw ConfigError("unknown config key '" + where(k.c_str()) + "'");
  }
};

template <class IO>
void visit_loss(IO& io, scene::LossOptions& l) {
  io("c1", l.coeffs.mass);
  io("c2", l.coeffs.dist);
  io("c3", l.coeffs.grasp);
  io("lattice_res", l.lattice_res);
  io("grasp_temperature", l.grasp_temperature);
  io("mass_smoothing", l.mass_smoothing);
  io.enumeration("dist_mode", l.dist_mode, [](scene::DistMode m) { return to_string(m); },
                 dist_mode_from_string);
}

template <class IO>
void visit(IO& io, RunConfig& c) {
  io("seed", c.seed);
  io.section("sim", [&](auto& s) {
    auto& v = c.sim;
    s("friction", v.friction);
    s("yield_stress", v.yield_stress);
    s("velocity_limit", v.velocity_limit);
    s("robot_radius", v.robot_radius);
    s("dt", v.dt);
    s("grid_res", v.grid_res);
    s("youngs_modulus", v.youngs_modulus);
    s("poisson_ratio", v.poisson_ratio);
    s("substeps_per_control", v.substeps_per_control);
    s("density", v.density);
    s("floor_accel", v.floor_accel);
    s("damping", v.damping);
    s("command_gain", v.command_gain);
    s("contact_softness", v.contact_softness);
    s("smoothing_speed", v.smoothing_speed);
    s("boundary_cells", v.boundary_cells);
    s("plane_z", v.plane_z);
    s.enumeration("limit_mode", v.limit_mode, [](sim::VelocityLimitMode m) { return sim::to_string(m); },
                  sim::velocity_limit_mode_from_string);
  });
  io.section("scene", [&](auto& s) {
    auto& v = c.scene;
    s("n_particles", v.n_particles);
    s("rope_half_width", v.rope_half_width);
    s("n_robots", v.n_robots);
    s("horizon", v.horizon);
    s("robot_offset", v.robot_offset);
    s("iou_res", v.iou_res);
    s("goal_margin", v.goal_margin);
  });
  io.section("gmp", [&](auto& s) {
    auto& v = c.gmp;
    s("learning_rate", v.learning_rate);
    s("iterations", v.iterations);
    s("init_scale", v.init_scale);
    s("beta1", v.beta1);
    s("beta2", v.beta2);
    s("adam_eps", v.adam_eps);
    s.section("loss", [&](auto& l) { visit_loss(l, v.loss); });
  });
  io.section("mppi", [&](auto& s) {
    auto& v = c.mppi;
    s("n_samples", v.n_samples);
    s("n_stages", v.n_stages);
    s("noise_mean", v.noise_mean);
    s("noise_std", v.noise_std);
    s("temperature", v.temperature);
    s("include_mean", v.include_mean);
  });
  io.section("policy", [&](auto& s) {
    auto& v = c.policy;
    s("obs_particles", v.obs_particles);
    s("d_feat", v.d_feat);
    s("heads", v.heads);
    s("d_k", v.d_k);
    s("d_v", v.d_v);
    s("attention_layers", v.attention_layers);
    s("scale_by_dk", v.scale_by_dk);
    s.enumeration("embed_activation", v.embed_activation, [](nn::Activation a) { return nn::to_string(a); },
                  nn::activation_from_string);
    s("mlp_hidden", v.mlp_hidden);
    s.enumeration("mlp_activation", v.mlp_activation, [](nn::Activation a) { return nn::to_string(a); },
                  nn::activation_from_string);
    s("smoothing_window", v.smoothing_window);
  });
  io.section("train", [&](auto& s) {
    auto& v = c.train;
    s.section("collect", [&](auto& t) {
      t("n_goals", v.collect.n_goals);
      t("demos_per_goal", v.collect.demos_per_goal);
      t("horizons", v.collect.horizons);
      t("split", v.collect.split);
    });
    s.section("bc", [&](auto& t) {
      t("learning_rate", v.bc.learning_rate);
      t("batch_size", v.bc.batch_size);
      t("max_epochs", v.bc.max_epochs);
      t("patience", v.bc.patience);
      t("val_fraction", v.bc.val_fraction);
    });
    s.section("ppo", [&](auto& t) {
      auto& p = v.ppo;
      t("learning_rate", p.learning_rate);
      t("gamma", p.gamma);
      t("gae_lambda", p.gae_lambda);
      t("clip", p.clip);
      t("entropy_coef", p.entropy_coef);
      t("value_coef", p.value_coef);
      t("buffer_size", p.buffer_size);
      t("batch_size", p.batch_size);
      t("epochs", p.epochs);
      t("total_steps", p.total_steps);
      t("init_log_std", p.init_log_std);
      t("reward_scale", p.reward_scale);
      t("max_grad_norm", p.max_grad_norm);
      t("n_goals", p.n_goals);
    });
  });
  io.section("eval", [&](auto& s) {
    auto& v = c.eval;
    s("n_goals", v.n_goals);
    s("goal_split", v.goal_split);
    s("suites", v.suites);
    s("methods", v.methods);
    s("sweep_methods", v.sweep_methods);
    s("sweep_ranges", v.sweep_ranges);
    s("robot_counts", v.robot_counts);
    s("kidnap_episodes", v.kidnap_episodes);
    s("kidnap_step", v.kidnap_step);
    s("kidnap_victim", v.kidnap_victim);
    s("kidnap_window", v.kidnap_window);
    s("timing_counts", v.timing_counts);
    s("timing_repeats", v.timing_repeats);
  });
}

const std::set<std::string> kSuites = {"compare", "sweep", "robots", "kidnap", "timing"};
const std::set<std::string> kMethods = {"gmp", "mppi", "random", "bc_attention", "bc_mlp", "ppo"};

}  // namespace

void RunConfig::resolve() {
  mppi.loss = gmp.loss;
  mppi.horizon = scene.horizon;
  train.ppo.loss = gmp.loss;
  train.ppo.seed = seed;
  train.bc.seed = seed;
  gmp.seed = seed;
  mppi.seed = seed;
}

void RunConfig::validate() const {
  sim.validate();
  scene.validate();
  gmp.validate();
  mppi.validate();
  policy.validate();
  train.collect.validate();
  train.bc.validate();
  train.ppo.validate();
  if (policy.obs_particles > scene.n_particles)
    throw ConfigError("policy.obs_particles exceeds scene.n_particles");
  if (eval.n_goals < 1) throw ConfigError("eval.n_goals must be >= 1");
  for (const auto& s : eval.suites)
    if (!kSuites.count(s)) throw ConfigError("eval.suites: unknown suite '" + s + "'");
  for (const auto* list : {&eval.methods, &eval.sweep_methods})
    for (const auto& m : *list)
      if (!kMethods.count(m)) throw ConfigError("eval.methods: unknown method '" + m + "'");
  for (const auto& [k, r] : eval.sweep_ranges) {
    if (k != "friction" && k != "yield_stress" && k != "velocity_limit" && k != "robot_radius")
      throw ConfigError("eval.sweep_ranges: unknown parameter '" + k + "'");
    if (r.size() != 2 || !(r[0] <= r[1])) throw ConfigError("eval.sweep_ranges." + k + " must be [lo, hi]");
  }
  for (int n : eval.robot_counts)
    if (n < 1) throw ConfigError("eval.robot_counts entries must be >= 1");
  if (eval.kidnap_episodes < 1) throw ConfigError("eval.kidnap_episodes must be >= 1");
  if (eval.kidnap_step <= 0 || eval.kidnap_step >= scene.horizon)
    throw ConfigError("eval.kidnap_step must lie strictly inside the episode");
  if (eval.kidnap_victim < 0 || eval.kidnap_victim >= scene.n_robots)
    throw ConfigError("eval.kidnap_victim must index a robot");
  if (eval.kidnap_window < 1) throw ConfigError("eval.kidnap_window must be >= 1");
  for (int n : eval.timing_counts)
    if (n < 1) throw ConfigError("eval.timing_counts entries must be >= 1");
  if (eval.timing_repeats < 1) throw ConfigError("eval.timing_repeats must be >= 1");
}

std::string to_json_text(const RunConfig& cfg, int indent) {
  json j = json::object();
  Writer w{j};
  RunConfig copy = cfg;
  visit(w, copy);
  return j.dump(indent);
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  Reader r{j, "", {}};
  visit(r, cfg);
  r.finish();
  cfg.resolve();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return config_from_json_text(os.str());
}

std::string config_hash(const RunConfig& cfg) { return content_hash(to_json_text(cfg, -1)); }

}  // namespace copush::cli
