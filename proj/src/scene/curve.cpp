#include "copush/scene/curve.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "copush/common/error.hpp"

namespace copush::scene {

namespace {
constexpr int kArcSamples = 4096;

// Cumulative arc length at kArcSamples + 1 equally spaced x values.
std::vector<double> arc_table(const Cubic& c) {
  std::vector<double> s(kArcSamples + 1, 0.0);
  const double h = (c.x_end - c.x_begin) / kArcSamples;
  for (int i = 1; i <= kArcSamples; ++i) {
    // Simpson on the speed sqrt(1 + y'^2)
    const double x0 = c.x_begin + (i - 1) * h;
    auto speed = [&](double x) { return std::sqrt(1.0 + c.slope(x) * c.slope(x)); };
    s[i] = s[i - 1] + h / 6.0 * (speed(x0) + 4.0 * speed(x0 + 0.5 * h) + speed(x0 + h));
  }
  return s;
}
}  // namespace

double Cubic::y(double x) const {
  return ((coeffs[0] * x + coeffs[1]) * x + coeffs[2]) * x + coeffs[3];
}

double Cubic::slope(double x) const {
  return (3.0 * coeffs[0] * x + 2.0 * coeffs[1]) * x + coeffs[2];
}

Vec2 Cubic::normal(double x) const {
  const double d = slope(x);
  return Vec2(-d, 1.0) / std::sqrt(1.0 + d * d);
}

double Cubic::arc_length() const { return arc_table(*this).back(); }

double Cubic::x_at_arc_length(double s) const {
  const std::vector<double> table = arc_table(*this);
  const double h = (x_end - x_begin) / kArcSamples;
  if (s <= 0.0) return x_begin;
  if (s >= table.back()) return x_end;
  const auto it = std::upper_bound(table.begin(), table.end(), s);
  const int i = static_cast<int>(it - table.begin()) - 1;
  double x = x_begin + (i + (s - table[i]) / (table[i + 1] - table[i])) * h;
  // two Newton refinements on the local arc integral
  for (int k = 0; k < 2; ++k) {
    const double xi = x_begin + i * h;
    const double mid = 0.5 * (xi + x);
    auto speed = [&](double q) { return std::sqrt(1.0 + slope(q) * slope(q)); };
    const double local = (x - xi) / 6.0 * (speed(xi) + 4.0 * speed(mid) + speed(x));
    x -= (table[i] + local - s) / speed(x);
  }
  return x;
}

Vec2List centerline(const Cubic& curve, int n) {
  COPUSH_REQUIRE(n >= 2, "centerline: need at least two points");
  const std::vector<double> table = arc_table(curve);
  const double total = table.back();
  Vec2List out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(curve.point(curve.x_at_arc_length(total * i / (n - 1))));
  }
  return out;
}

void check_inside(const Cubic& curve, double margin) {
  if (!(curve.x_end > curve.x_begin))
    throw ConfigError("curve: x_end must exceed x_begin");
  auto fail = [](double x, const char* why) {
    std::ostringstream os;
    os << "curve leaves the workspace at x=" << x << " (" << why << ")";
    throw ConfigError(os.str());
  };
  if (curve.x_begin < margin) fail(curve.x_begin, "left edge");
  if (curve.x_end > 1.0 - margin) fail(curve.x_end, "right edge");
  constexpr int kChecks = 512;
  for (int i = 0; i <= kChecks; ++i) {
    const double x = curve.x_begin + (curve.x_end - curve.x_begin) * i / kChecks;
    const double y = curve.y(x);
    if (!(y >= margin && y <= 1.0 - margin)) fail(x, "y out of range");
  }
}

Cubic sample_goal_curve(Rng& rng, double margin) {
  constexpr int kMaxDraws = 10000;
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Cubic c;
    c.coeffs = {uniform(rng, -1.0, 1.0), uniform(rng, -0.8, 0.8), uniform(rng, -0.5, 0.5), 0.0};
    // mean of the cubic part over the interval, in closed form
    auto antideriv = [&](double x) {
      return c.coeffs[0] * std::pow(x, 4) / 4.0 + c.coeffs[1] * x * x * x / 3.0 +
             c.coeffs[2] * x * x / 2.0;
    };
    const double mean = (antideriv(c.x_end) - antideriv(c.x_begin)) / (c.x_end - c.x_begin);
    c.coeffs[3] = 0.5 - mean;
    try {
      check_inside(c, margin);
      return c;
    } catch (const ConfigError&) {
    }
  }
  throw ConfigError("goal sampler: no admissible curve for this margin");
}

}  // namespace copush::scene
