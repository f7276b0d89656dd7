// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "cofield/error.hpp"
#include "cofield/rng.hpp"

namespace cofield {

void RigidTransform::Validate() const {
  if (std::abs(rotation.coeffs().norm() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "rigid transform rotation is not a unit quaternion");
  }
}

Vec3 QuadraticPatch::LocalNormal(double u, double v) const {
  return Vec3(-(a * u + b * v), -(b * u + c * v), 1.0).normalized();
}

double SharpEdgePatch::Height(double u, double v) const {
  if (u <= 0.0) return 0.5 * (a1 * u * u + c1 * v * v + 2.0 * b1 * u * v) + e1 * u;
  return 0.5 * (a2 * u * u + c1 * v * v + 2.0 * b2 * u * v) + e2 * u;
}

double PatchSdfApprox(const QuadraticPatch& patch, const Vec3& p) {
  const Vec3 q = patch.pose.ApplyInverse(p);
  return q.z() - patch.Height(q.x(), q.y());
}

double SharpEdgeSdfApprox(const SharpEdgePatch& patch, const Vec3& p) {
  const double x = p.x(), y = p.y();
  if (x <= 0.0) {
    return p.z() - 0.5 * (patch.a1 * x * x + patch.c1 * y * y + 2.0 * patch.b1 * x * y) - patch.e1 * x;
  }
  return p.z() - 0.5 * (patch.a2 * x * x + patch.c1 * y * y + 2.0 * patch.b2 * x * y) - patch.e2 * x;
}

namespace {

// One quadratic height-field branch h = 1/2 (a u^2 + c v^2 + 2 b u v) + e u.
struct Branch {
  double a, b, c, e;
  double H(double u, double v) const { return 0.5 * (a * u * u + c * v * v + 2.0 * b * u * v) + e * u; }
  double Hu(double u, double v) const { return a * u + b * v + e; }
  double Hv(double u, double v) const { return b * u + c * v; }
};

// Disc of `radius`, optionally restricted to u <= 0 (side < 0) or u >= 0 (side > 0).
struct Region {
  double radius;
  int side;
  bool Contains(double u, double v, double slack = 1e-12) const {
    if (u * u + v * v > radius * radius * (1.0 + slack) + slack) return false;
    if (side < 0 && u > slack) return false;
    if (side > 0 && u < -slack) return false;
    return true;
  }
};

struct Candidate {
  double dist2 = std::numeric_limits<double>::infinity();
  double u = 0.0, v = 0.0;
};

double Dist2(const Branch& br, const Vec3& p, double u, double v) {
  const double dx = p.x() - u, dy = p.y() - v, dz = p.z() - br.H(u, v);
  return dx * dx + dy * dy + dz * dz;
}

// Golden-section refinement of a 1-D function around the best of a dense scan.
template <typename F>
Candidate MinimizeCurve(F&& point_at, const Branch& br, const Vec3& p, double s0, double s1) {
  constexpr int kScan = 512;
  const double ds = (s1 - s0) / kScan;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kScan; ++i) {
    auto [u, v] = point_at(s0 + i * ds);
    const double d = Dist2(br, p, u, v);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  double lo = s0 + std::max(0, best - 1) * ds;
  double hi = s0 + std::min(kScan, best + 1) * ds;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto eval = [&](double s) {
    auto [u, v] = point_at(s);
    return Dist2(br, p, u, v);
  };
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = eval(x1), f2 = eval(x2);
  for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + std::abs(s1 - s0)); ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = eval(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = eval(x2);
    }
  }
  Candidate out;
  const double s = 0.5 * (lo + hi);
  auto [u, v] = point_at(s);
  out.dist2 = Dist2(br, p, u, v);
  out.u = u;
  out.v = v;
  if (best_d < out.dist2) {
    auto [bu, bv] = point_at(s0 + best * ds);
    out = {best_d, bu, bv};
  }
  return out;
}

struct RegionMinimum {
  Candidate best;
  bool converged = true;
};

// Closest point on one branch over one region: Newton on the two stationarity
// conditions from the 5 best cells of a 64x64 seed grid, plus constrained
// minimization along the region boundary.
RegionMinimum MinimizeOnRegion(const Branch& br, const Region& region, const Vec3& p, double tol) {
  constexpr int kGrid = 64;
  constexpr int kRestarts = 5;
  constexpr int kMaxIter = 30;
  const double r = region.radius;

  std::vector<Candidate> seeds;
  seeds.reserve(kGrid * kGrid);
  const double step = 2.0 * r / kGrid;
  for (int i = 0; i < kGrid; ++i) {
    for (int j = 0; j < kGrid; ++j) {
      const double u = -r + (i + 0.5) * step, v = -r + (j + 0.5) * step;
      if (!region.Contains(u, v, 0.0)) continue;
      seeds.push_back({Dist2(br, p, u, v), u, v});
    }
  }
  const std::size_t keep = std::min<std::size_t>(kRestarts, seeds.size());
  std::partial_sort(seeds.begin(), seeds.begin() + keep, seeds.end(),
                    [](const Candidate& x, const Candidate& y) { return x.dist2 < y.dist2; });
  const Candidate grid_best = seeds.empty() ? Candidate{} : seeds.front();

  Candidate best;
  bool newton_ok = false;
  for (std::size_t s = 0; s < keep; ++s) {
    double u = seeds[s].u, v = seeds[s].v;
    bool converged = false;
    for (int it = 0; it < kMaxIter; ++it) {
      const double hu = br.Hu(u, v), hv = br.Hv(u, v), dz = p.z() - br.H(u, v);
      // F = ((p - f).f_u, (p - f).f_v)
      const double fu = (p.x() - u) + dz * hu;
      const double fv = (p.y() - v) + dz * hv;
      const double juu = -(1.0 + hu * hu) + dz * br.a;
      const double juv = -hu * hv + dz * br.b;
      const double jvv = -(1.0 + hv * hv) + dz * br.c;
      const double det = juu * jvv - juv * juv;
      if (!std::isfinite(det) || std::abs(det) < 1e-300) break;
      const double du = -(jvv * fu - juv * fv) / det;
      const double dv = -(-juv * fu + juu * fv) / det;
      u += du;
      v += dv;
      if (!std::isfinite(u) || !std::isfinite(v) || std::abs(u) > 4.0 * r || std::abs(v) > 4.0 * r) break;
      if (std::hypot(du, dv) <= tol * std::max(1.0, r)) {
        converged = true;
        break;
      }
    }
    if (!converged || !region.Contains(u, v)) continue;
    // Reject saddles and maxima: the Hessian of |p - f|^2 is -2 J.
    const double hu = br.Hu(u, v), hv = br.Hv(u, v), dz = p.z() - br.H(u, v);
    const double huu = (1.0 + hu * hu) - dz * br.a;
    const double huv = hu * hv - dz * br.b;
    const double hvv = (1.0 + hv * hv) - dz * br.c;
    if (huu < -1e-12 || huu * hvv - huv * huv < -1e-12) continue;
    newton_ok = true;
    const double d = Dist2(br, p, u, v);
    if (d < best.dist2) best = {d, u, v};
  }

  // Boundary: the arc, and the u = 0 segment for half discs.
  double phi0 = 0.0, phi1 = 2.0 * std::numbers::pi;
  if (region.side < 0) {
    phi0 = 0.5 * std::numbers::pi;
    phi1 = 1.5 * std::numbers::pi;
  } else if (region.side > 0) {
    phi0 = -0.5 * std::numbers::pi;
    phi1 = 0.5 * std::numbers::pi;
  }
  const Candidate arc = MinimizeCurve(
      [r](double phi) { return std::pair{r * std::cos(phi), r * std::sin(phi)}; }, br, p, phi0, phi1);
  Candidate boundary = arc;
  if (region.side != 0) {
    const Candidate seg =
        MinimizeCurve([](double v) { return std::pair{0.0, v}; }, br, p, -r, r);
    if (seg.dist2 < boundary.dist2) boundary = seg;
  }
  if (boundary.dist2 < best.dist2) best = boundary;

  RegionMinimum out;
  if (!newton_ok && boundary.dist2 > grid_best.dist2) {
    out.best = grid_best;
    out.converged = false;
  } else {
    out.best = best;
  }
  return out;
}

}  // namespace

ExactSdf PatchSdfExact(const QuadraticPatch& patch, const Vec3& p, double tol) {
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tolerance must be positive");
  const Vec3 q = patch.pose.ApplyInverse(p);
  const Branch br{patch.a, patch.b, patch.c, 0.0};
  const RegionMinimum m = MinimizeOnRegion(br, {patch.radius, 0}, q, tol);
  ExactSdf out;
  out.u = m.best.u;
  out.v = m.best.v;
  out.converged = m.converged;
  const Vec3 f(m.best.u, m.best.v, br.H(m.best.u, m.best.v));
  const double dist = std::sqrt(m.best.dist2);
  const double side = (q - f).dot(patch.LocalNormal(m.best.u, m.best.v));
  out.sdf = side < 0.0 ? -dist : dist;
  return out;
}

ExactSdf SharpEdgeSdfExact(const SharpEdgePatch& patch, const Vec3& p, double tol) {
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tolerance must be positive");
  const Branch left{patch.a1, patch.b1, patch.c1, patch.e1};
  const Branch right{patch.a2, patch.b2, patch.c1, patch.e2};
  const RegionMinimum ml = MinimizeOnRegion(left, {patch.radius, -1}, p, tol);
  const RegionMinimum mr = MinimizeOnRegion(right, {patch.radius, +1}, p, tol);
  const RegionMinimum& m = ml.best.dist2 <= mr.best.dist2 ? ml : mr;
  const Branch& br = ml.best.dist2 <= mr.best.dist2 ? left : right;
  ExactSdf out;
  out.u = m.best.u;
  out.v = m.best.v;
  out.converged = m.converged;
  const double dist = std::sqrt(m.best.dist2);
  double side;
  if (p.x() * p.x() + p.y() * p.y() <= patch.radius * patch.radius) {
    side = p.z() - patch.Height(p.x(), p.y());
  } else {
    const Vec3 f(m.best.u, m.best.v, br.H(m.best.u, m.best.v));
    const Vec3 n(-br.Hu(m.best.u, m.best.v), -br.Hv(m.best.u, m.best.v), 1.0);
    side = (p - f).dot(n);
  }
  out.sdf = side < 0.0 ? -dist : dist;
  return out;
}

namespace {

std::pair<double, double> DiscPoint(Rng& rng, double radius) {
  const double rho = radius * std::sqrt(rng.Uniform());
  const double phi = 2.0 * std::numbers::pi * rng.Uniform();
  return {rho * std::cos(phi), rho * std::sin(phi)};
}

}  // namespace

std::vector<Vec3> SampleSurface(const QuadraticPatch& patch, std::size_t n, uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [u, v] = DiscPoint(rng, patch.radius);
    out.push_back(patch.Point(u, v));
  }
  return out;
}

std::vector<Vec3> SampleSurface(const SharpEdgePatch& patch, std::size_t n, uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [u, v] = DiscPoint(rng, patch.radius);
    out.push_back(patch.Point(u, v));
  }
  return out;
}

}  // namespace cofield
