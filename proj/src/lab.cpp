// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "cofield/error.hpp"
#include "cofield/field.hpp"
#include "cofield/mlp.hpp"
#include "cofield/rng.hpp"

namespace cofield {

// Approximation accuracy --------------------------------------------------------

const char* PatchFamilyName(PatchFamily family) {
  switch (family) {
    case PatchFamily::kQuadratic: return "quadratic";
    case PatchFamily::kPlane: return "plane";
    case PatchFamily::kSharpEdge: return "sharp-edge";
    case PatchFamily::kCrease: return "crease";
  }
  return "unknown";
}

PatchFamily ParsePatchFamily(const std::string& name) {
  for (PatchFamily f : {PatchFamily::kQuadratic, PatchFamily::kPlane, PatchFamily::kSharpEdge, PatchFamily::kCrease}) {
    if (name == PatchFamilyName(f)) return f;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown patch family '" + name + "'");
}

SweepReport ApproxErrorSweep(PatchFamily family, const std::vector<double>& radii, std::size_t trials,
                             uint64_t seed) {
  if (radii.size() < 3) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least 3 radii");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0) || (i > 0 && !(radii[i] < radii[i - 1]))) {
      throw Error(ErrorCode::kInvalidArgument, "radii must be positive and decreasing");
    }
  }
  if (trials == 0) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one trial");

  Rng rng(seed, static_cast<uint64_t>(family) + 11);
  std::vector<QuadraticPatch> quads(trials);
  std::vector<SharpEdgePatch> edges(trials);
  std::vector<Vec3> dirs(trials);
  const bool sharp = family == PatchFamily::kSharpEdge || family == PatchFamily::kCrease;
  for (std::size_t t = 0; t < trials; ++t) {
    if (family == PatchFamily::kQuadratic) {
      quads[t].a = rng.Uniform(-2, 2);
      quads[t].b = rng.Uniform(-2, 2);
      quads[t].c = rng.Uniform(-2, 2);
    } else if (sharp) {
      SharpEdgePatch& e = edges[t];
      e.a1 = rng.Uniform(-2, 2);
      e.b1 = rng.Uniform(-2, 2);
      e.a2 = rng.Uniform(-2, 2);
      e.b2 = rng.Uniform(-2, 2);
      e.c1 = rng.Uniform(-2, 2);
      if (family == PatchFamily::kSharpEdge) {
        e.e1 = rng.Uniform(-2, 2);
        e.e2 = rng.Uniform(-2, 2);
      }
    }
    Vec3 d(rng.Normal(), rng.Normal(), rng.Normal());
    dirs[t] = d.normalized();
  }

  SweepReport report;
  report.family = family;
  report.radii = radii;
  for (double rho : radii) {
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Vec3 p = rho * dirs[t];
      double approx;
      ExactSdf exact;
      if (sharp) {
        approx = SharpEdgeSdfApprox(edges[t], p);
        exact = SharpEdgeSdfExact(edges[t], p);
      } else {
        approx = PatchSdfApprox(quads[t], p);
        exact = PatchSdfExact(quads[t], p);
      }
      if (!exact.converged) ++report.non_converged;
      worst = std::max(worst, std::abs(approx - exact.sdf));
    }
    report.max_errors.push_back(worst);
  }

  report.exact = std::all_of(report.max_errors.begin(), report.max_errors.end(), [](double e) { return e < 1e-12; });
  if (report.exact) {
    report.slope = std::numeric_limits<double>::quiet_NaN();
  } else {
    const auto n = static_cast<double>(radii.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < radii.size(); ++i) {
      const double x = std::log(radii[i]);
      const double y = std::log(std::max(report.max_errors[i], 1e-300));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    report.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  }
  return report;
}

// Patch fitting ---------------------------------------------------------------

PatchCoefficients FitAligned(const std::vector<PatchSample>& samples) {
  Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  for (const PatchSample& s : samples) {
    const double x = s.position.x(), y = s.position.y();
    const Eigen::Vector3d row(0.5 * x * x, x * y, 0.5 * y * y);
    normal += row * row.transpose();
    rhs += row * (s.position.z() - s.sdf);
  }
  if (samples.size() < 3) throw Error(ErrorCode::kRankDeficient, "aligned fit needs at least 3 samples");
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal);
  const double largest = eig.eigenvalues()[2];
  if (!(largest > 0.0) || eig.eigenvalues()[0] <= 1e-13 * largest) {
    throw Error(ErrorCode::kRankDeficient, "aligned fit design (x^2, xy, y^2) is rank deficient");
  }
  const Eigen::Vector3d sol = normal.ldlt().solve(rhs);
  return {sol[0], sol[1], sol[2]};
}

namespace {

Eigen::Vector4d QuatVector(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }

}  // namespace

double UnalignedObjective(const std::vector<PatchSample>& samples, const UnalignedState& state) {
  if (samples.empty()) throw Error(ErrorCode::kEmptySet, "no samples");
  const Mat3 r = QuaternionToRotation(QuatVector(state.pose.rotation));
  const auto& k = state.coefficients;
  double sum = 0.0;
  for (const PatchSample& s : samples) {
    const Vec3 p = r * s.position + state.pose.translation;
    const double rho = p.z() - 0.5 * (k.a * p.x() * p.x() + k.c * p.y() * p.y() + 2 * k.b * p.x() * p.y()) - s.sdf;
    sum += rho * rho;
  }
  return sum / static_cast<double>(samples.size());
}

UnalignedGradient UnalignedObjectiveGradient(const std::vector<PatchSample>& samples, const UnalignedState& state) {
  if (samples.empty()) throw Error(ErrorCode::kEmptySet, "no samples");
  const Eigen::Vector4d q = QuatVector(state.pose.rotation);
  const Mat3 r = QuaternionToRotation(q);
  const auto& k = state.coefficients;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  UnalignedGradient g;
  g.coefficients.setZero();
  g.translation.setZero();
  Mat3 outer = Mat3::Zero();
  for (const PatchSample& s : samples) {
    const Vec3 p = r * s.position + state.pose.translation;
    const double x = p.x(), y = p.y();
    const double rho = p.z() - 0.5 * (k.a * x * x + k.c * y * y + 2 * k.b * x * y) - s.sdf;
    g.value += rho * rho * inv_n;
    const double w = 2.0 * rho * inv_n;
    g.coefficients += w * Eigen::Vector3d(-0.5 * x * x, -x * y, -0.5 * y * y);
    const Vec3 dp = w * Vec3(-(k.a * x + k.b * y), -(k.c * y + k.b * x), 1.0);
    g.translation += dp;
    outer += dp * s.position.transpose();  // dL/dR_jk = dp_j p_k
  }
  // BackpropFrame expects outer_jk = dL/dR_jk.
  g.rotation = BackpropFrame(CoordinateFrame{q, Vec3::Zero()}, outer, Vec3::Zero()).rotation;
  return g;
}

UnalignedResult FitUnaligned(const std::vector<PatchSample>& samples, const UnalignedState& init, std::size_t steps,
                             double lr, bool freeze_pose) {
  UnalignedState s = init;
  s.pose.rotation.normalize();
  for (std::size_t i = 0; i < steps; ++i) {
    const UnalignedGradient g = UnalignedObjectiveGradient(samples, s);
    s.coefficients.a -= lr * g.coefficients[0];
    s.coefficients.b -= lr * g.coefficients[1];
    s.coefficients.c -= lr * g.coefficients[2];
    if (!freeze_pose) {
      Eigen::Vector4d q = QuatVector(s.pose.rotation) - lr * g.rotation;
      q.normalize();
      s.pose.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
      s.pose.translation -= lr * g.translation;
    }
  }
  return {s, UnalignedObjective(samples, s)};
}

namespace {

Eigen::Quaterniond RandomRotation(Rng& rng) {
  Eigen::Vector4d q(rng.Normal(), rng.Normal(), rng.Normal(), rng.Normal());
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
}

}  // namespace

FittingProblem MakeFittingProblem(uint64_t seed, std::size_t n) {
  Rng rng(seed, 0xf17);
  FittingProblem problem;
  problem.truth = {rng.Uniform(-1.5, 1.5), rng.Uniform(-1.5, 1.5), rng.Uniform(-1.5, 1.5)};
  problem.pose.rotation = RandomRotation(rng);
  problem.pose.translation = Vec3(rng.Uniform(-0.2, 0.2), rng.Uniform(-0.2, 0.2), rng.Uniform(-0.2, 0.2));
  const auto& k = problem.truth;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.Uniform(-1, 1), v = rng.Uniform(-1, 1), y = rng.Uniform(0.0, 0.02);
    const Vec3 local(u, v, 0.5 * (k.a * u * u + k.c * v * v + 2 * k.b * u * v) + y);
    problem.samples.push_back({problem.pose.ApplyInverse(local), y});
  }
  return problem;
}

MultistartReport Multistart(const FittingProblem& problem, std::size_t starts, std::size_t steps, double lr,
                            uint64_t seed, double gap) {
  Rng rng(seed, 0x3517);
  MultistartReport report;
  for (std::size_t i = 0; i < starts; ++i) {
    UnalignedState init;
    init.pose.rotation = RandomRotation(rng);
    report.residuals.push_back(FitUnaligned(problem.samples, init, steps, lr).residual);
  }
  std::sort(report.residuals.begin(), report.residuals.end());
  report.clusters = report.residuals.empty() ? 0 : 1;
  for (std::size_t i = 1; i < report.residuals.size(); ++i) {
    const double ratio = report.residuals[i] / std::max(report.residuals[i - 1], 1e-300);
    report.largest_ratio = std::max(report.largest_ratio, ratio);
    if (ratio >= gap) ++report.clusters;
  }
  return report;
}

// Landscape -------------------------------------------------------------------

void GaussLegendre(int order, double lo, double hi, std::vector<double>& nodes, std::vector<double>& weights) {
  if (order < 1) throw Error(ErrorCode::kInvalidArgument, "quadrature order must be >= 1");
  nodes.assign(order, 0.0);
  weights.assign(order, 0.0);
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= order; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
      }
      dp = order * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node.
    double p0 = 1.0, p1 = 0.0;
    for (int j = 1; j <= order; ++j) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
    }
    dp = order * (x * p0 - p1) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[i] = mid - half * x;
    nodes[order - 1 - i] = mid + half * x;
    weights[i] = weights[order - 1 - i] = half * w;
  }
}

namespace {

void UniformY(double y0, double y1, int order, std::vector<double>& y, std::vector<double>& w) {
  if (y1 < y0) throw Error(ErrorCode::kInvalidArgument, "y interval must satisfy y0 <= y1");
  if (y1 == y0) {
    y = {y0};
    w = {1.0};
    return;
  }
  GaussLegendre(order, y0, y1, y, w);
  for (double& v : w) v /= (y1 - y0);
}

}  // namespace

SampleLaw SampleLaw::Uniform(double k0, double x_lo, double x_hi, double y0, double y1, int order) {
  if (!(x_hi > x_lo)) throw Error(ErrorCode::kInvalidArgument, "x interval must satisfy lo < hi");
  SampleLaw law;
  law.k0_ = k0;
  law.y0_ = y0;
  law.y1_ = y1;
  std::ostringstream kind;
  kind << "uniform[" << x_lo << ", " << x_hi << "]";
  law.x_kind_ = kind.str();
  GaussLegendre(order, x_lo, x_hi, law.x_, law.wx_);
  for (double& v : law.wx_) v /= (x_hi - x_lo);
  UniformY(y0, y1, order, law.y_, law.wy_);
  return law;
}

SampleLaw SampleLaw::TwoPoint(double k0, double y0, double y1, int order) {
  SampleLaw law = Grid(k0, {-1.0, 1.0}, {0.5, 0.5}, y0, y1, order);
  law.x_kind_ = "two-point +-1";
  return law;
}

SampleLaw SampleLaw::Grid(double k0, std::vector<double> x, std::vector<double> weights, double y0, double y1,
                          int order) {
  if (x.empty() || x.size() != weights.size()) {
    throw Error(ErrorCode::kInvalidArgument, "grid law needs matching, non-empty nodes and weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "grid weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kInvalidArgument, "grid weights sum to zero");
  SampleLaw law;
  law.k0_ = k0;
  law.y0_ = y0;
  law.y1_ = y1;
  law.x_kind_ = "grid(" + std::to_string(x.size()) + " atoms)";
  law.x_ = std::move(x);
  law.wx_ = std::move(weights);
  for (double& w : law.wx_) w /= total;
  UniformY(y0, y1, order, law.y_, law.wy_);
  return law;
}

double SampleLaw::MomentX(int i) const {
  double m = 0.0;
  for (std::size_t j = 0; j < x_.size(); ++j) m += wx_[j] * std::pow(x_[j], i);
  return m;
}

double SampleLaw::MomentY(int i) const {
  double m = 0.0;
  for (std::size_t j = 0; j < y_.size(); ++j) m += wy_[j] * std::pow(y_[j], i);
  return m;
}

std::string SampleLaw::Describe() const {
  std::ostringstream out;
  out << "x ~ " << x_kind_ << ", y ~ uniform[" << y0_ << ", " << y1_ << "], k0 = " << k0_;
  return out.str();
}

double LandscapeR(const LandscapePoint& pt, const SampleLaw& law) {
  const double s = std::sin(pt.theta), c = std::cos(pt.theta), k0 = law.k0();
  double r = 0.0;
  for (std::size_t i = 0; i < law.x_nodes().size(); ++i) {
    const double x = law.x_nodes()[i];
    for (std::size_t j = 0; j < law.y_nodes().size(); ++j) {
      const double y = law.y_nodes()[j];
      const double w = k0 * x * x + y;
      const double u = c * x - s * w + pt.tx;
      const double l = s * x + c * w + pt.ty - pt.k * u * u - y;
      r += law.x_weights()[i] * law.y_weights()[j] * l * l;
    }
  }
  return r;
}

LandscapeDerivatives LandscapeGradHess(const LandscapePoint& pt, const SampleLaw& law) {
  const double s = std::sin(pt.theta), c = std::cos(pt.theta), k0 = law.k0(), k = pt.k;
  LandscapeDerivatives out;
  out.gradient.setZero();
  out.hessian.setZero();
  for (std::size_t i = 0; i < law.x_nodes().size(); ++i) {
    const double x = law.x_nodes()[i];
    for (std::size_t j = 0; j < law.y_nodes().size(); ++j) {
      const double y = law.y_nodes()[j];
      const double weight = law.x_weights()[i] * law.y_weights()[j];
      const double w = k0 * x * x + y;
      const double u = c * x - s * w + pt.tx;  // du/dtheta = -v
      const double v = s * x + c * w;          // dv/dtheta = c x - s w
      const double dv = c * x - s * w;
      const double l = v + pt.ty - k * u * u - y;

      // Partials of l in the order (k, tx, ty, theta).
      const Eigen::Vector4d dl(-u * u, -2.0 * k * u, 1.0, dv + 2.0 * k * u * v);
      Eigen::Matrix4d ddl = Eigen::Matrix4d::Zero();
      ddl(0, 1) = ddl(1, 0) = -2.0 * u;
      ddl(0, 3) = ddl(3, 0) = 2.0 * u * v;
      ddl(1, 1) = -2.0 * k;
      ddl(1, 3) = ddl(3, 1) = 2.0 * k * v;
      ddl(3, 3) = -v + 2.0 * k * (-v * v + u * dv);

      out.value += weight * l * l;
      out.gradient += weight * 2.0 * l * dl;
      out.hessian += weight * 2.0 * (l * ddl + dl * dl.transpose());
    }
  }
  return out;
}

LandscapePoint CriticalCandidate(const SampleLaw& law) { return {-law.k0(), 0.0, 2.0 * law.c(), std::numbers::pi}; }

CriticalReport VerifyCriticalPoint(const SampleLaw& law, double gradient_tol, double degenerate_tol) {
  CriticalReport report;
  report.point = CriticalCandidate(law);
  const LandscapeDerivatives d = LandscapeGradHess(report.point, law);
  report.value = d.value;
  report.gradient = d.gradient;
  report.gradient_norm = d.gradient.norm();
  report.is_critical = report.gradient_norm <= gradient_tol;
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(d.hessian);
  report.eigenvalues = eig.eigenvalues();
  report.min_eigenvalue = report.eigenvalues[0];
  const double scale = report.eigenvalues.cwiseAbs().maxCoeff();
  const Eigen::Matrix4d& h = d.hessian;
  report.margin_theta_tx = h(3, 3) * h(1, 1) - h(1, 3) * h(1, 3);
  report.margin_k_ty = h(0, 0) * h(2, 2) - h(0, 2) * h(0, 2);
  report.cauchy_margin = law.MomentX(2) * law.MomentX(6) - law.MomentX(4) * law.MomentX(4);
  report.degenerate = std::abs(report.cauchy_margin) <= degenerate_tol;
  report.is_local_min = report.is_critical && !report.degenerate && report.min_eigenvalue > 1e-12 * scale;
  report.y_spread = law.y_spread();
  return report;
}

std::string CriticalReport::ToText() const {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "point = (%.9g, %.9g, %.9g, %.9g)\nvalue = %.9g\ngradient_norm = %.3e\nis_critical = %s\n"
                "eigenvalues = %.9g %.9g %.9g %.9g\nmin_eigenvalue = %.9g\nis_local_min = %s\n"
                "margin_theta_tx = %.9g\nmargin_k_ty = %.9g\ncauchy_margin = %.3e\ndegenerate = %s\ny_spread = %.9g\n",
                point.k, point.tx, point.ty, point.theta, value, gradient_norm, is_critical ? "true" : "false",
                eigenvalues[0], eigenvalues[1], eigenvalues[2], eigenvalues[3], min_eigenvalue,
                is_local_min ? "true" : "false", margin_theta_tx, margin_k_ty, cauchy_margin,
                degenerate ? "true" : "false", y_spread);
  return buf;
}

std::string CriticalReport::ToJson() const {
  nlohmann::json j{{"point", {point.k, point.tx, point.ty, point.theta}},
                   {"value", value},
                   {"gradient", {gradient[0], gradient[1], gradient[2], gradient[3]}},
                   {"gradient_norm", gradient_norm},
                   {"is_critical", is_critical},
                   {"eigenvalues", {eigenvalues[0], eigenvalues[1], eigenvalues[2], eigenvalues[3]}},
                   {"min_eigenvalue", min_eigenvalue},
                   {"is_local_min", is_local_min},
                   {"margin_theta_tx", margin_theta_tx},
                   {"margin_k_ty", margin_k_ty},
                   {"cauchy_margin", cauchy_margin},
                   {"degenerate", degenerate},
                   {"y_spread", y_spread}};
  return j.dump();
}

// Quadratic layer expressiveness ---------------------------------------------

ExpressivenessReport QuadraticLayerFit(std::size_t n, uint64_t seed) {
  Rng rng(seed, 0xe4);
  std::vector<Eigen::Vector3d> points(n);
  Eigen::VectorXd target(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    points[i] = Eigen::Vector3d(rng.Uniform(-1, 1), rng.Uniform(-1, 1), rng.Uniform(-1, 1));
    const auto& p = points[i];
    target[static_cast<Eigen::Index>(i)] = p.z() - 0.5 * (p.x() * p.x() + 0.5 * p.y() * p.y());
  }

  // Quadratic layer: monomials z_p z_q (p <= q), then z, then 1.
  Eigen::MatrixXd quad(static_cast<Eigen::Index>(n), 10), lin(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = points[i];
    const auto r = static_cast<Eigen::Index>(i);
    int col = 0;
    for (int a = 0; a < 3; ++a) {
      for (int b = a; b < 3; ++b) quad(r, col++) = p[a] * p[b];
    }
    for (int a = 0; a < 3; ++a) quad(r, col++) = p[a];
    quad(r, col) = 1.0;
    lin.row(r) << p.x(), p.y(), p.z(), 1.0;
  }
  const Eigen::VectorXd qs = quad.colPivHouseholderQr().solve(target);
  const Eigen::VectorXd ls = lin.colPivHouseholderQr().solve(target);

  std::vector<Eigen::MatrixXd> t(1, Eigen::MatrixXd::Zero(3, 3));
  int col = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b, ++col) {
      if (a == b) {
        t[0](a, a) = qs[col];
      } else {
        t[0](a, b) = t[0](b, a) = 0.5 * qs[col];
      }
    }
  }
  const Eigen::MatrixXd qa = qs.segment(6, 3).transpose();
  const Eigen::VectorXd qb = qs.tail(1);
  const Eigen::MatrixXd la = ls.head(3).transpose();
  const Eigen::VectorXd lb = ls.tail(1);

  ExpressivenessReport report;
  report.samples = n;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd z = points[i];
    const double want = target[static_cast<Eigen::Index>(i)];
    report.quadratic_residual = std::max(report.quadratic_residual, std::abs(QuadraticForward(t, qa, qb, z)[0] - want));
    report.affine_residual = std::max(report.affine_residual, std::abs(LinearForward(la, lb, z)[0] - want));
  }
  return report;
}

}  // namespace cofield
