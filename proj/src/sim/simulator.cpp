#include "copush/sim/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "copush/common/error.hpp"
#include "copush/sim/kernels.hpp"

namespace copush::sim {

namespace k = kernels;

namespace {

using Vec4 = Eigen::Matrix<double, 4, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

k::M2<double> to_m2(const Mat2& m) {
  return {m(0, 0), m(0, 1), m(1, 0), m(1, 1)};
}
Mat2 from_m2(const k::M2<double>& m) {
  Mat2 r;
  r << m.a, m.b, m.c, m.d;
  return r;
}
Vec4 flat(const Mat2& m) { return Vec4(m(0, 0), m(0, 1), m(1, 0), m(1, 1)); }
Mat2 unflat(const Vec4& v) {
  Mat2 r;
  r << v[0], v[1], v[2], v[3];
  return r;
}

bool finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }
bool finite(const Mat2& m) { return m.allFinite(); }

}  // namespace

double SimConfig::effective_limit(int n_robots) const {
  if (limit_mode == VelocityLimitMode::kShared && n_robots > 2)
    return velocity_limit * 2.0 / n_robots;
  return velocity_limit;
}

void SimConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw ConfigError(std::string("sim.") + name + " must be positive");
  };
  positive(friction, "friction");
  positive(yield_stress, "yield_stress");
  positive(velocity_limit, "velocity_limit");
  positive(robot_radius, "robot_radius");
  positive(dt, "dt");
  positive(youngs_modulus, "youngs_modulus");
  positive(poisson_ratio, "poisson_ratio");
  positive(density, "density");
  positive(command_gain, "command_gain");
  positive(contact_softness, "contact_softness");
  positive(smoothing_speed, "smoothing_speed");
  if (poisson_ratio >= 0.5) throw ConfigError("sim.poisson_ratio must be < 0.5");
  if (grid_res < 8) throw ConfigError("sim.grid_res must be >= 8");
  if (substeps_per_control < 1)
    throw ConfigError("sim.substeps_per_control must be >= 1");
  if (floor_accel < 0.0 || damping < 0.0)
    throw ConfigError("sim.floor_accel and sim.damping must be >= 0");
  if (boundary_cells < 0 || 2 * boundary_cells >= grid_res)
    throw ConfigError("sim.boundary_cells out of range");
}

std::string to_string(VelocityLimitMode mode) {
  return mode == VelocityLimitMode::kShared ? "shared" : "per_robot";
}

VelocityLimitMode velocity_limit_mode_from_string(const std::string& s) {
  if (s == "per_robot") return VelocityLimitMode::kPerRobot;
  if (s == "shared") return VelocityLimitMode::kShared;
  throw ConfigError("unknown velocity limit mode '" + s + "'");
}

ParticleField ParticleField::at_rest(Vec2List positions, double mass,
                                     double volume) {
  ParticleField f;
  const std::size_t n = positions.size();
  f.positions = std::move(positions);
  f.velocities.assign(n, Vec2::Zero());
  f.affine.assign(n, Mat2::Zero());
  f.deformation.assign(n, Mat2::Identity());
  f.mass = mass;
  f.volume = volume;
  return f;
}

RobotSet RobotSet::at(Vec2List positions, double radius) {
  RobotSet r;
  r.velocities.assign(positions.size(), Vec2::Zero());
  r.positions = std::move(positions);
  r.radius = radius;
  return r;
}

double ActionPlan::max_abs() const {
  double m = 0.0;
  for (const auto& c : commands_) m = std::max(m, c.cwiseAbs().maxCoeff());
  return m;
}

void ActionPlan::clamp(double limit) {
  for (auto& c : commands_) c = c.cwiseMax(-limit).cwiseMin(limit);
}

// Scratch buffers for one substep, reused across substeps.
struct Simulator::Workspace {
  std::vector<double> m;
  Vec2List mv, v0, vg;
  std::vector<k::Stencil> st;
  Mat2List A;
  Vec2List vp, x_adv, r_new;
  Mat2List Cp, Ftmp;
  std::vector<unsigned char> yielded, clamp_x, clamp_y, robot_free;

  void resize(std::size_t n_nodes, std::size_t n_particles, int n_robots) {
    m.assign(n_nodes, 0.0);
    mv.assign(n_nodes, Vec2::Zero());
    v0.assign(n_nodes, Vec2::Zero());
    vg.assign(n_nodes, Vec2::Zero());
    st.resize(n_particles);
    A.resize(n_particles);
    vp.resize(n_particles);
    x_adv.resize(n_particles);
    Cp.resize(n_particles);
    Ftmp.resize(n_particles);
    yielded.assign(n_particles, 0);
    clamp_x.assign(n_particles, 0);
    clamp_y.assign(n_particles, 0);
    r_new.resize(static_cast<std::size_t>(n_robots));
    robot_free.assign(2 * static_cast<std::size_t>(n_robots), 1);
  }
};

Simulator::Simulator(SimConfig config) : config_(config) {
  config_.validate();
  nodes_ = config_.grid_res + 4;
}

Vec2 Simulator::clamp_command(const Vec2& a, int n_robots) const {
  const double lim = config_.effective_limit(n_robots);
  return a.cwiseMax(-lim).cwiseMin(lim);
}

namespace {

struct SubstepConsts {
  double dx, inv_dx, dt, mass, stress_scale, apic_scale;
  double mu, lambda, yield_stress;
  double drag_dv, decay, eps;
  int n, bound, nodes;
  k::DiscContact contact;
};

SubstepConsts consts(const SimConfig& c, double mass, double volume) {
  SubstepConsts k;
  k.dx = c.dx();
  k.inv_dx = 1.0 / k.dx;
  k.dt = c.dt;
  k.mass = mass;
  k.stress_scale = -c.dt * volume * 3.0 * k.inv_dx * k.inv_dx;
  k.apic_scale = 3.0 * k.inv_dx * k.inv_dx;
  k.mu = c.mu();
  k.lambda = c.lambda();
  k.yield_stress = c.yield_stress;
  k.drag_dv = c.friction * c.floor_accel * c.dt;
  k.decay = std::exp(-c.damping * c.dt);
  k.eps = c.smoothing_speed;
  k.n = c.grid_res;
  k.bound = c.boundary_cells;
  k.nodes = c.grid_res + 4;
  k.contact = {c.robot_radius, c.friction, c.contact_softness, c.smoothing_speed};
  return k;
}

inline int node_index(int i, int j, int nodes) { return (i + 1) * nodes + (j + 1); }

// Contact is negligible beyond this many falloff lengths.
constexpr double kContactCutoff = 40.0;

}  // namespace

void Simulator::substep(Trajectory::Substep& s, const Vec2List& u,
                        Workspace& ws) const {
  const SubstepConsts c = consts(config_, s.mass, s.volume);
  const std::size_t np = s.x.size();
  const int nr = static_cast<int>(s.robots.size());
  ws.resize(static_cast<std::size_t>(c.nodes) * c.nodes, np, nr);

  // particle to grid
  for (std::size_t p = 0; p < np; ++p) {
    const k::Stencil st = k::stencil(s.x[p].x(), s.x[p].y(), c.inv_dx);
    ws.st[p] = st;
    const Mat2 tau = from_m2(k::kirchhoff_stress(to_m2(s.F[p]), c.mu, c.lambda));
    const Mat2 A = c.stress_scale * tau + c.mass * s.C[p];
    ws.A[p] = A;
    const Vec2 mom = c.mass * s.v[p];
    for (int i = 0; i < k::kStencilWidth; ++i) {
      for (int j = 0; j < k::kStencilWidth; ++j) {
        const double w = st.wx[i] * st.wy[j];
        const Vec2 dpos((i - st.fx) * c.dx, (j - st.fy) * c.dx);
        const int g = node_index(st.base_x + i, st.base_y + j, c.nodes);
        ws.mv[g] += w * (mom + A * dpos);
        ws.m[g] += w * c.mass;
      }
    }
  }

  // grid update
  for (int gi = -1; gi <= c.n + 2; ++gi) {
    for (int gj = -1; gj <= c.n + 2; ++gj) {
      const int g = node_index(gi, gj, c.nodes);
      if (ws.m[g] <= 0.0) continue;
      const Vec2 v0 = ws.mv[g] / ws.m[g];
      ws.v0[g] = v0;
      k::V2<double> v = k::floor_drag(k::V2<double>{v0.x(), v0.y()}, c.drag_dv, c.decay, c.eps);
      const k::V2<double> node{gi * c.dx, gj * c.dx};
      for (int r = 0; r < nr; ++r) {
        const double dist = (Vec2(node.x, node.y) - s.robots[r]).norm();
        if ((dist - c.contact.radius) * c.contact.softness - k::kContactBias > kContactCutoff) continue;
        v = k::disc_contact(v, node, k::V2<double>{s.robots[r].x(), s.robots[r].y()},
                            k::V2<double>{u[r].x(), u[r].y()}, c.contact);
      }
      if (gi < c.bound && v.x < 0.0) v.x = 0.0;
      if (gi > c.n - c.bound && v.x > 0.0) v.x = 0.0;
      if (gj < c.bound && v.y < 0.0) v.y = 0.0;
      if (gj > c.n - c.bound && v.y > 0.0) v.y = 0.0;
      ws.vg[g] = Vec2(v.x, v.y);
    }
  }

  // robots move kinematically
  for (int r = 0; r < nr; ++r) {
    Vec2 next = s.robots[r] + c.dt * u[r];
    for (int d = 0; d < 2; ++d) {
      if (next[d] < 0.0 || next[d] > 1.0) {
        next[d] = std::clamp(next[d], 0.0, 1.0);
        ws.robot_free[2 * r + d] = 0;
      }
    }
    ws.r_new[r] = next;
  }

  // grid to particle
  for (std::size_t p = 0; p < np; ++p) {
    const k::Stencil& st = ws.st[p];
    Vec2 vp = Vec2::Zero();
    Mat2 Cp = Mat2::Zero();
    for (int i = 0; i < k::kStencilWidth; ++i) {
      for (int j = 0; j < k::kStencilWidth; ++j) {
        const double w = st.wx[i] * st.wy[j];
        const Vec2 dpos((i - st.fx) * c.dx, (j - st.fy) * c.dx);
        const Vec2& gv = ws.vg[node_index(st.base_x + i, st.base_y + j, c.nodes)];
        vp += w * gv;
        Cp += (c.apic_scale * w) * gv * dpos.transpose();
      }
    }
    ws.vp[p] = vp;
    ws.Cp[p] = Cp;
    Vec2 x = s.x[p] + c.dt * vp;
    ws.x_adv[p] = x;
    const Mat2 Ftmp = (Mat2::Identity() + c.dt * Cp) * s.F[p];
    ws.Ftmp[p] = Ftmp;
    const k::M2<double> f = to_m2(Ftmp);
    if (k::yields(f, c.mu, c.yield_stress)) {
      ws.yielded[p] = 1;
      s.F[p] = from_m2(k::plastic_projection(f, c.mu, c.yield_stress));
    } else {
      s.F[p] = Ftmp;
    }
    for (int r = 0; r < nr; ++r) {
      if ((x - ws.r_new[r]).norm() < c.contact.radius) {
        const auto o = k::push_out(k::V2<double>{x.x(), x.y()},
                                   k::V2<double>{ws.r_new[r].x(), ws.r_new[r].y()},
                                   c.contact.radius);
        x = Vec2(o.x, o.y);
      }
    }
    if (x.x() < 0.0 || x.x() > 1.0) {
      ws.clamp_x[p] = 1;
      x.x() = std::clamp(x.x(), 0.0, 1.0);
    }
    if (x.y() < 0.0 || x.y() > 1.0) {
      ws.clamp_y[p] = 1;
      x.y() = std::clamp(x.y(), 0.0, 1.0);
    }
    s.x[p] = x;
    s.v[p] = vp;
    s.C[p] = Cp;
  }
  s.robots = ws.r_new;
}

void Simulator::substep_backward(const Trajectory::Substep& in,
                                 const Vec2List& u, Workspace& ws, Vec2List& gx,
                                 Vec2List& gv, Mat2List& gC, Mat2List& gF,
                                 Vec2List& gr, Vec2List& gu) const {
  Trajectory::Substep out = in;
  substep(out, u, ws);
  const SubstepConsts c = consts(config_, in.mass, in.volume);
  const std::size_t np = in.x.size();
  const int nr = static_cast<int>(in.robots.size());
  const std::size_t n_nodes = static_cast<std::size_t>(c.nodes) * c.nodes;

  Vec2List gx_in(np, Vec2::Zero()), gv_in(np, Vec2::Zero());
  Mat2List gC_in(np, Mat2::Zero()), gF_in(np, Mat2::Zero());
  Vec2List g_rnew = gr;  // adjoint of robot positions after this substep
  Vec2List gr_in(static_cast<std::size_t>(nr), Vec2::Zero());
  Vec2List g_vg(n_nodes, Vec2::Zero());

  // grid to particle, reversed
  std::vector<std::pair<int, Vec2>> chain;
  for (std::size_t p = 0; p < np; ++p) {
    Vec2 g = gx[p];
    if (ws.clamp_x[p]) g.x() = 0.0;
    if (ws.clamp_y[p]) g.y() = 0.0;

    chain.clear();
    Vec2 x = ws.x_adv[p];
    for (int r = 0; r < nr; ++r) {
      if ((x - ws.r_new[r]).norm() < c.contact.radius) {
        chain.emplace_back(r, x);
        const auto o = k::push_out(k::V2<double>{x.x(), x.y()},
                                   k::V2<double>{ws.r_new[r].x(), ws.r_new[r].y()},
                                   c.contact.radius);
        x = Vec2(o.x, o.y);
      }
    }
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const int r = it->first;
      Vec4 arg(it->second.x(), it->second.y(), ws.r_new[r].x(), ws.r_new[r].y());
      const double radius = c.contact.radius;
      const Eigen::Matrix<double, 2, 4> J = k::jacobian<4, 2>(
          [radius](const auto& z) {
            using T = std::decay_t<decltype(z[0])>;
            const auto o = k::push_out(k::V2<T>{z[0], z[1]}, k::V2<T>{z[2], z[3]}, radius);
            return std::array<T, 2>{o.x, o.y};
          },
          arg);
      const Vec4 gz = J.transpose() * g;
      g_rnew[r] += gz.tail<2>();
      g = gz.head<2>();
    }

    gx_in[p] += g;
    const Vec2 g_vp = gv[p] + c.dt * g;

    Vec4 gFt = flat(gF[p]);
    if (ws.yielded[p]) {
      const double mu = c.mu, ys = c.yield_stress;
      const Eigen::Matrix<double, 4, 4> J = k::jacobian<4, 4>(
          [mu, ys](const auto& z) {
            using T = std::decay_t<decltype(z[0])>;
            const auto f = k::plastic_projection(k::M2<T>{z[0], z[1], z[2], z[3]}, mu, ys);
            return std::array<T, 4>{f.a, f.b, f.c, f.d};
          },
          flat(ws.Ftmp[p]));
      gFt = J.transpose() * gFt;
    }
    const Mat2 g_Ftmp = unflat(gFt);
    const Mat2 g_Cp = gC[p] + c.dt * g_Ftmp * in.F[p].transpose();
    gF_in[p] += (Mat2::Identity() + c.dt * ws.Cp[p]).transpose() * g_Ftmp;

    const k::Stencil& st = ws.st[p];
    Vec2 gxp = Vec2::Zero();
    for (int i = 0; i < k::kStencilWidth; ++i) {
      for (int j = 0; j < k::kStencilWidth; ++j) {
        const double w = st.wx[i] * st.wy[j];
        const Vec2 dw(st.dwx[i] * st.wy[j] * c.inv_dx, st.wx[i] * st.dwy[j] * c.inv_dx);
        const Vec2 dpos((i - st.fx) * c.dx, (j - st.fy) * c.dx);
        const int gi = node_index(st.base_x + i, st.base_y + j, c.nodes);
        const Vec2& v = ws.vg[gi];
        const Vec2 gCd = g_Cp * dpos;
        g_vg[gi] += w * (g_vp + c.apic_scale * gCd);
        const double gw = g_vp.dot(v) + c.apic_scale * v.dot(gCd);
        const Vec2 g_dpos = (c.apic_scale * w) * (g_Cp.transpose() * v);
        gxp += gw * dw - g_dpos;
      }
    }
    gx_in[p] += gxp;
  }

  // robot motion, reversed
  for (int r = 0; r < nr; ++r) {
    for (int d = 0; d < 2; ++d) {
      if (!ws.robot_free[2 * r + d]) g_rnew[r][d] = 0.0;
    }
    gr_in[r] += g_rnew[r];
    gu[r] += c.dt * g_rnew[r];
  }

  // grid update, reversed
  std::vector<k::V2<double>> vchain;
  std::vector<int> contacts;
  Vec2List g_mv(n_nodes, Vec2::Zero());
  std::vector<double> g_m(n_nodes, 0.0);
  for (int gi = -1; gi <= c.n + 2; ++gi) {
    for (int gj = -1; gj <= c.n + 2; ++gj) {
      const int g = node_index(gi, gj, c.nodes);
      if (ws.m[g] <= 0.0) continue;
      const Vec2 v0 = ws.v0[g];
      const k::V2<double> node{gi * c.dx, gj * c.dx};
      vchain.clear();
      contacts.clear();
      k::V2<double> v = k::floor_drag(k::V2<double>{v0.x(), v0.y()}, c.drag_dv, c.decay, c.eps);
      for (int r = 0; r < nr; ++r) {
        const double dist = (Vec2(node.x, node.y) - in.robots[r]).norm();
        if ((dist - c.contact.radius) * c.contact.softness - k::kContactBias > kContactCutoff) continue;
        vchain.push_back(v);
        contacts.push_back(r);
        v = k::disc_contact(v, node, k::V2<double>{in.robots[r].x(), in.robots[r].y()},
                            k::V2<double>{u[r].x(), u[r].y()}, c.contact);
      }
      Vec2 gvel = g_vg[g];
      if (gi < c.bound && v.x < 0.0) gvel.x() = 0.0;
      if (gi > c.n - c.bound && v.x > 0.0) gvel.x() = 0.0;
      if (gj < c.bound && v.y < 0.0) gvel.y() = 0.0;
      if (gj > c.n - c.bound && v.y > 0.0) gvel.y() = 0.0;
      if (gvel.isZero(0.0)) continue;

      for (int q = static_cast<int>(contacts.size()) - 1; q >= 0; --q) {
        const int r = contacts[q];
        Vec6 arg;
        arg << vchain[q].x, vchain[q].y, in.robots[r].x(), in.robots[r].y(), u[r].x(),
            u[r].y();
        const k::DiscContact cp = c.contact;
        const Eigen::Matrix<double, 2, 6> J = k::jacobian<6, 2>(
            [node, cp](const auto& z) {
              using T = std::decay_t<decltype(z[0])>;
              const auto o = k::disc_contact(k::V2<T>{z[0], z[1]}, node,
                                             k::V2<T>{z[2], z[3]}, k::V2<T>{z[4], z[5]}, cp);
              return std::array<T, 2>{o.x, o.y};
            },
            arg);
        const Vec6 gz = J.transpose() * gvel;
        gr_in[r] += gz.segment<2>(2);
        gu[r] += gz.segment<2>(4);
        gvel = gz.head<2>();
      }

      const double drag_dv = c.drag_dv, decay = c.decay, eps = c.eps;
      const Eigen::Matrix2d Jd = k::jacobian<2, 2>(
          [drag_dv, decay, eps](const auto& z) {
            using T = std::decay_t<decltype(z[0])>;
            const auto o = k::floor_drag(k::V2<T>{z[0], z[1]}, drag_dv, decay, eps);
            return std::array<T, 2>{o.x, o.y};
          },
          Eigen::Vector2d(v0));
      const Vec2 g0 = Jd.transpose() * gvel;
      g_mv[g] = g0 / ws.m[g];
      g_m[g] = -g0.dot(v0) / ws.m[g];
    }
  }

  // particle to grid, reversed
  for (std::size_t p = 0; p < np; ++p) {
    const k::Stencil& st = ws.st[p];
    const Mat2& A = ws.A[p];
    const Vec2 mom = c.mass * in.v[p];
    Mat2 gA = Mat2::Zero();
    Vec2 gxp = Vec2::Zero();
    Vec2 gvp = Vec2::Zero();
    for (int i = 0; i < k::kStencilWidth; ++i) {
      for (int j = 0; j < k::kStencilWidth; ++j) {
        const int gi = node_index(st.base_x + i, st.base_y + j, c.nodes);
        const Vec2& gmv = g_mv[gi];
        const double gm = g_m[gi];
        if (gm == 0.0 && gmv.isZero(0.0)) continue;
        const double w = st.wx[i] * st.wy[j];
        const Vec2 dw(st.dwx[i] * st.wy[j] * c.inv_dx, st.wx[i] * st.dwy[j] * c.inv_dx);
        const Vec2 dpos((i - st.fx) * c.dx, (j - st.fy) * c.dx);
        const Vec2 contrib = mom + A * dpos;
        const double gw = gmv.dot(contrib) + gm * c.mass;
        const Vec2 gc = w * gmv;
        gxp += gw * dw - A.transpose() * gc;
        gvp += c.mass * gc;
        gA += gc * dpos.transpose();
      }
    }
    gx_in[p] += gxp;
    gv_in[p] += gvp;
    gC_in[p] += c.mass * gA;
    if (!gA.isZero(0.0)) {
      const double mu = c.mu, lambda = c.lambda;
      const Eigen::Matrix<double, 4, 4> J = k::jacobian<4, 4>(
          [mu, lambda](const auto& z) {
            using T = std::decay_t<decltype(z[0])>;
            const auto s = k::kirchhoff_stress(k::M2<T>{z[0], z[1], z[2], z[3]}, mu, lambda);
            return std::array<T, 4>{s.a, s.b, s.c, s.d};
          },
          flat(in.F[p]));
      gF_in[p] += unflat(J.transpose() * (c.stress_scale * flat(gA)));
    }
  }

  gx.swap(gx_in);
  gv.swap(gv_in);
  gC.swap(gC_in);
  gF.swap(gF_in);
  gr.swap(gr_in);
}

void Simulator::check_finite(const Trajectory::Substep& s, int step) const {
  for (std::size_t p = 0; p < s.x.size(); ++p) {
    if (!finite(s.x[p]) || !finite(s.v[p]) || !finite(s.C[p]) || !finite(s.F[p]))
      throw SimulationFault("non-finite particle state at particle " + std::to_string(p),
                            step);
  }
}

SimState Simulator::step(const SimState& state, const Vec2List& actions) const {
  const int nr = state.robots.size();
  COPUSH_REQUIRE(static_cast<int>(actions.size()) == nr,
                 "step: action count does not match robot count");
  for (const auto& a : actions) {
    if (!finite(a)) throw SimulationFault("non-finite action", state.step_index);
  }
  Vec2List u(static_cast<std::size_t>(nr));
  for (int r = 0; r < nr; ++r) u[r] = config_.command_gain * clamp_command(actions[r], nr);

  Trajectory::Substep s{state.particles.positions, state.particles.velocities,
                        state.particles.affine, state.particles.deformation,
                        state.robots.positions, state.particles.mass,
                        state.particles.volume};
  check_finite(s, state.step_index);
  Workspace ws;
  for (int k = 0; k < config_.substeps_per_control; ++k) {
    substep(s, u, ws);
    check_finite(s, state.step_index);  // before non-finite positions index the grid
  }

  SimState next;
  next.particles.positions = std::move(s.x);
  next.particles.velocities = std::move(s.v);
  next.particles.affine = std::move(s.C);
  next.particles.deformation = std::move(s.F);
  next.particles.mass = state.particles.mass;
  next.particles.volume = state.particles.volume;
  next.robots.positions = std::move(s.robots);
  next.robots.velocities = u;
  next.robots.radius = state.robots.radius;
  next.step_index = state.step_index + 1;
  return next;
}

std::vector<SimState> Simulator::rollout(const SimState& state0,
                                         const ActionPlan& plan) const {
  COPUSH_REQUIRE(plan.horizon() == 0 || plan.n_robots() == state0.robots.size(),
                 "rollout: plan robot count does not match state");
  std::vector<SimState> traj;
  traj.reserve(static_cast<std::size_t>(plan.horizon()) + 1);
  traj.push_back(state0);
  for (int t = 0; t < plan.horizon(); ++t) traj.push_back(step(traj.back(), plan.step(t)));
  return traj;
}

Trajectory Simulator::record(const SimState& state0, const ActionPlan& plan) const {
  COPUSH_REQUIRE(plan.horizon() == 0 || plan.n_robots() == state0.robots.size(),
                 "record: plan robot count does not match state");
  Trajectory traj;
  traj.plan = plan;
  traj.recorded = true;
  traj.states.reserve(static_cast<std::size_t>(plan.horizon()) + 1);
  traj.states.push_back(state0);
  traj.tape.reserve(static_cast<std::size_t>(plan.horizon()) *
                    config_.substeps_per_control);
  const int nr = state0.robots.size();
  Workspace ws;
  for (int t = 0; t < plan.horizon(); ++t) {
    const SimState& cur = traj.states.back();
    Vec2List u(static_cast<std::size_t>(nr));
    const Vec2List a = plan.step(t);
    for (int r = 0; r < nr; ++r) {
      if (!finite(a[r])) throw SimulationFault("non-finite action", cur.step_index);
      u[r] = config_.command_gain * clamp_command(a[r], nr);
    }
    Trajectory::Substep s{cur.particles.positions, cur.particles.velocities,
                          cur.particles.affine, cur.particles.deformation,
                          cur.robots.positions, cur.particles.mass,
                          cur.particles.volume};
    check_finite(s, cur.step_index);
    for (int k = 0; k < config_.substeps_per_control; ++k) {
      traj.tape.push_back(s);
      substep(s, u, ws);
      check_finite(s, cur.step_index);
    }
    SimState next;
    next.particles.positions = std::move(s.x);
    next.particles.velocities = std::move(s.v);
    next.particles.affine = std::move(s.C);
    next.particles.deformation = std::move(s.F);
    next.particles.mass = cur.particles.mass;
    next.particles.volume = cur.particles.volume;
    next.robots.positions = std::move(s.robots);
    next.robots.velocities = u;
    next.robots.radius = cur.robots.radius;
    next.step_index = cur.step_index + 1;
    traj.states.push_back(std::move(next));
  }
  return traj;
}

PlanGradient Simulator::backward(const Trajectory& traj, const StepLossFn& loss) const {
  COPUSH_REQUIRE(traj.recorded, "backward: trajectory was recorded without tape");
  const int T = traj.horizon();
  const int nr = traj.states.front().robots.size();
  const std::size_t np = traj.states.front().particles.size();
  const int K = config_.substeps_per_control;
  COPUSH_REQUIRE(static_cast<int>(traj.tape.size()) == T * K,
                 "backward: tape length does not match horizon");

  PlanGradient out;
  out.grad = ActionPlan(T, nr);
  Vec2List gx(np, Vec2::Zero()), gv(np, Vec2::Zero()), gr(static_cast<std::size_t>(nr), Vec2::Zero());
  Mat2List gC(np, Mat2::Zero()), gF(np, Mat2::Zero());
  Workspace ws;

  for (int t = T; t >= 1; --t) {
    StateGradient g(np, nr);
    out.loss += loss(t, traj.states[t], &g);
    for (std::size_t p = 0; p < np; ++p) gx[p] += g.particles[p];
    for (int r = 0; r < nr; ++r) gr[r] += g.robots[r];

    const Vec2List a = traj.plan.step(t - 1);
    Vec2List u(static_cast<std::size_t>(nr));
    for (int r = 0; r < nr; ++r) u[r] = config_.command_gain * clamp_command(a[r], nr);
    Vec2List gu(static_cast<std::size_t>(nr), Vec2::Zero());
    for (int k = K - 1; k >= 0; --k) {
      substep_backward(traj.tape[static_cast<std::size_t>((t - 1) * K + k)], u, ws, gx, gv,
                       gC, gF, gr, gu);
    }
    const double lim = config_.effective_limit(nr);
    for (int r = 0; r < nr; ++r) {
      Vec2 ga = config_.command_gain * gu[r];
      for (int d = 0; d < 2; ++d) {
        if (std::abs(a[r][d]) > lim) ga[d] = 0.0;
      }
      out.grad.at(t - 1, r) = ga;
    }
  }
  return out;
}

std::vector<double> Simulator::grid_mass(const ParticleField& particles) const {
  const SubstepConsts c = consts(config_, particles.mass, particles.volume);
  std::vector<double> m(static_cast<std::size_t>(c.nodes) * c.nodes, 0.0);
  for (const auto& x : particles.positions) {
    const k::Stencil st = k::stencil(x.x(), x.y(), c.inv_dx);
    for (int i = 0; i < k::kStencilWidth; ++i)
      for (int j = 0; j < k::kStencilWidth; ++j)
        m[node_index(st.base_x + i, st.base_y + j, c.nodes)] +=
            st.wx[i] * st.wy[j] * c.mass;
  }
  return m;
}

Vec2 Simulator::momentum_after_free_substep(const ParticleField& particles) const {
  Trajectory::Substep s{particles.positions, particles.velocities, particles.affine,
                        particles.deformation, {}, particles.mass,
                        particles.volume};
  Workspace ws;
  substep(s, {}, ws);
  Vec2 p = Vec2::Zero();
  for (const auto& v : s.v) p += particles.mass * v;
  return p;
}

}  // namespace copush::sim
