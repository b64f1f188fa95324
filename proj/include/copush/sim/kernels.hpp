#pragma once

// Per-particle and per-node local maps of one MPM substep. Each is written
// once over a generic scalar so the backward pass can take exact local
// Jacobians with forward-mode dual numbers.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <unsupported/Eigen/AutoDiff>

namespace copush::sim::kernels {

template <class T>
struct V2 {
  T x, y;
};

// Row-major [[a, b], [c, d]].
template <class T>
struct M2 {
  T a, b, c, d;
};

template <class T>
T value_of(const T& v) {
  return v;
}
template <class D>
double value_of(const Eigen::AutoDiffScalar<D>& v) {
  return v.value();
}

// Rotation factor of the polar decomposition F = R S, returned as
// (cos, sin). Well defined whenever det F > 0.
template <class T>
V2<T> polar_rotation(const M2<T>& F) {
  using std::sqrt;
  T p = F.a + F.d;
  T q = F.c - F.b;
  T n = sqrt(p * p + q * q);
  return {p / n, q / n};
}

// Kirchhoff stress P F^T of the fixed-corotated model.
template <class T>
M2<T> kirchhoff_stress(const M2<T>& F, double mu, double lambda) {
  V2<T> r = polar_rotation(F);
  T J = F.a * F.d - F.b * F.c;
  // R = [[c, -s], [s, c]]
  T da = F.a - r.x, db = F.b + r.y, dc = F.c - r.y, dd = F.d - r.x;
  // (F - R) F^T
  T ta = da * F.a + db * F.b;
  T tb = da * F.c + db * F.d;
  T tc = dc * F.a + dd * F.b;
  T td = dc * F.c + dd * F.d;
  T vol = lambda * (J - 1.0) * J;
  return {2.0 * mu * ta + vol, 2.0 * mu * tb, 2.0 * mu * tc,
          2.0 * mu * td + vol};
}

// Sharpness of the smooth von Mises cap (p-norm soft minimum).
constexpr double kYieldSharpness = 16.0;
// Below this fraction of the yield radius the cap is the identity to
// within 1e-10 and is skipped.
constexpr double kPlasticOnset = 0.25;

// Deviatoric log-strain radius at which the material yields.
inline double yield_strain(double mu, double yield_stress) {
  return yield_stress / (2.0 * mu) / std::sqrt(2.0);
}

// Half log ratio of the singular values of F.
inline double log_strain(const M2<double>& F) {
  double t = F.a * F.a + F.b * F.b + F.c * F.c + F.d * F.d;
  double J = F.a * F.d - F.b * F.c;
  double disc = std::sqrt(std::max(t * t - 4.0 * J * J, 0.0));
  double s1 = std::sqrt(0.5 * (t + disc));
  double s2 = J / s1;
  return 0.5 * std::log(s1 / s2);
}

// True when the plastic cap has to be applied to F.
inline bool yields(const M2<double>& F, double mu, double yield_stress) {
  return log_strain(F) > kPlasticOnset * yield_strain(mu, yield_stress);
}

// Von Mises return mapping in logarithmic strain. The deviatoric radius
// delta is capped at the yield radius by a smooth soft minimum, volume is
// kept. With singular values s1 > s2 and targets t1, t2 the projected
// gradient is alpha R + beta F. Call only when yields() holds.
template <class T>
M2<T> plastic_projection(const M2<T>& F, double mu, double yield_stress) {
  using std::exp;
  using std::log;
  using std::pow;
  using std::sqrt;
  T t = F.a * F.a + F.b * F.b + F.c * F.c + F.d * F.d;
  T J = F.a * F.d - F.b * F.c;
  T disc = sqrt(t * t - 4.0 * J * J);
  T s1 = sqrt(0.5 * (t + disc));
  T s2 = J / s1;
  T mean = 0.5 * log(J);
  T delta = 0.5 * log(s1 / s2);
  T ratio = delta / yield_strain(mu, yield_stress);
  T capped = delta * pow(1.0 + pow(ratio, kYieldSharpness), -1.0 / kYieldSharpness);
  T t1 = exp(mean + capped);
  T t2 = exp(mean - capped);
  T beta = (t1 - t2) / (s1 - s2);
  T alpha = t1 - beta * s1;
  V2<T> r = polar_rotation(F);
  return {alpha * r.x + beta * F.a, -alpha * r.y + beta * F.b,
          alpha * r.y + beta * F.c, alpha * r.x + beta * F.d};
}

// Smooth max(z, 0): exceeds it by at most eps / 2.
template <class T>
T soft_relu(const T& z, double eps) {
  using std::sqrt;
  return 0.5 * (z + sqrt(z * z + eps * eps));
}

// z * sigmoid(z / eps): zero at zero, max(z, 0) away from it.
template <class T>
T gated_relu(const T& z, double eps) {
  using std::exp;
  return z / (1.0 + exp(-z / eps));
}

// Smoothing of the keep factors of both friction laws near zero.
constexpr double kKeepSmoothing = 0.05;

// Coulomb floor friction then viscous decay. The speed drops by
// `decel_dt`; the factor is a smooth function of the squared speed and
// fades to full stick below the velocity scale eps.
template <class T>
V2<T> floor_drag(const V2<T>& v, double decel_dt, double decay, double eps) {
  using std::sqrt;
  if (decel_dt <= 0.0) return {v.x * decay, v.y * decay};
  T speed = sqrt(v.x * v.x + v.y * v.y + eps * eps);
  T scale = soft_relu<T>(1.0 - decel_dt / speed, kKeepSmoothing) /
            soft_relu(1.0, kKeepSmoothing) * decay;
  return {v.x * scale, v.y * scale};
}

struct DiscContact {
  double radius;
  double friction;
  double softness;
  double eps;  // velocity scale of the smoothed Coulomb projection
};

// Offset of the contact band edge, in falloff lengths.
constexpr double kContactBias = 2.0;

// Squared length floor for contact normals, so a point at a disc centre
// (e.g. a robot clamped onto a grid corner) gets a zero normal, not 0/0.
constexpr double kNormalFloor2 = 1e-12;

// Grid velocity near a moving rigid disc. Relative to the disc, the
// approaching normal component is removed and the tangential part loses
// friction times the removed amount, both through smooth ramps. The
// influence is a logistic in the signed distance to the disc surface.
template <class T>
V2<T> disc_contact(const V2<T>& v, const V2<double>& node, const V2<T>& center,
                   const V2<T>& disc_v, const DiscContact& p) {
  using std::exp;
  using std::sqrt;
  T ox = node.x - center.x;
  T oy = node.y - center.y;
  T dist = sqrt(ox * ox + oy * oy + kNormalFloor2);
  T phi = dist - p.radius;
  T influence = 1.0 / (1.0 + exp(phi * p.softness - kContactBias));
  T nx = ox / dist, ny = oy / dist;
  T rx = v.x - disc_v.x, ry = v.y - disc_v.y;
  T vn = rx * nx + ry * ny;
  T tx = rx - vn * nx, ty = ry - vn * ny;
  T removed = gated_relu<T>(-vn, p.eps);
  T load = soft_relu<T>(removed, p.eps);
  T tn = sqrt(tx * tx + ty * ty + p.eps * p.eps);
  T keep = soft_relu<T>(1.0 - p.friction * load / tn, kKeepSmoothing) /
           soft_relu(1.0, kKeepSmoothing);
  T vn_new = vn + removed;
  T cx = tx * keep + nx * vn_new;
  T cy = ty * keep + ny * vn_new;
  T out_x = disc_v.x + rx * (1.0 - influence) + cx * influence;
  T out_y = disc_v.y + ry * (1.0 - influence) + cy * influence;
  return {out_x, out_y};
}

// Radial projection of a point out of a disc.
template <class T>
V2<T> push_out(const V2<T>& x, const V2<T>& center, double radius) {
  using std::sqrt;
  T ox = x.x - center.x, oy = x.y - center.y;
  T d = sqrt(ox * ox + oy * oy + kNormalFloor2);
  return {center.x + radius * ox / d, center.y + radius * oy / d};
}

// Nodes per axis covered by the cubic B-spline kernel.
constexpr int kStencilWidth = 4;

// Cubic B-spline weights and their derivatives. Nodes sit at base + i for
// i = 0..3 and f = p / dx - base lies in [1, 2).
struct Stencil {
  int base_x, base_y;
  std::array<double, kStencilWidth> wx, wy, dwx, dwy;
  double fx, fy;
};

inline Stencil stencil(double px, double py, double inv_dx) {
  Stencil s;
  s.base_x = static_cast<int>(std::floor(px * inv_dx)) - 1;
  s.base_y = static_cast<int>(std::floor(py * inv_dx)) - 1;
  s.fx = px * inv_dx - s.base_x;
  s.fy = py * inv_dx - s.base_y;
  auto fill = [](double f, std::array<double, kStencilWidth>& w,
                 std::array<double, kStencilWidth>& dw) {
    for (int i = 0; i < kStencilWidth; ++i) {
      const double d = f - i;
      const double a = std::abs(d);
      if (a < 1.0) {
        w[i] = 0.5 * a * a * a - d * d + 2.0 / 3.0;
        dw[i] = 1.5 * d * a - 2.0 * d;
      } else {
        const double r = 2.0 - a;
        w[i] = r * r * r / 6.0;
        dw[i] = (d > 0.0 ? -0.5 : 0.5) * r * r;
      }
    }
  };
  fill(s.fx, s.wx, s.dwx);
  fill(s.fy, s.wy, s.dwy);
  return s;
}

// Jacobian of f: R^N -> R^M at x, with f written over a generic scalar.
template <int N, int M, class F>
Eigen::Matrix<double, M, N> jacobian(F&& f, const Eigen::Matrix<double, N, 1>& x,
                                     Eigen::Matrix<double, M, 1>* value = nullptr) {
  using Ad = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;
  std::array<Ad, N> in;
  for (int i = 0; i < N; ++i) in[i] = Ad(x[i], N, i);
  std::array<Ad, M> out = f(in);
  Eigen::Matrix<double, M, N> J;
  for (int m = 0; m < M; ++m) {
    J.row(m) = out[m].derivatives().transpose();
    if (value) (*value)[m] = out[m].value();
  }
  return J;
}

}  // namespace copush::sim::kernels
