// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Numerical experiments on quadratic patches: accuracy of the second-order
// SDF approximations, aligned and unaligned patch fitting, and the 2-d
// fitting landscape
//   r(k, tx, ty, theta) = E_x E_y l^2,
//   l = sin(theta) x + cos(theta) w + ty - k (cos(theta) x - sin(theta) w + tx)^2 - y,
//   w = k0 x^2 + y,
// whose spurious critical point sits at (-k0, 0, 2c, pi), c = E[y].

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cofield/geometry.hpp"

namespace cofield {

// Approximation accuracy --------------------------------------------------------

enum class PatchFamily {
  kQuadratic,  // |a|, |b|, |c| <= 2
  kPlane,      // a = b = c = 0
  kSharpEdge,  // |a_i|, |b_i|, |c1|, |e_i| <= 2
  kCrease,     // sharp-edge family with e1 = e2 = 0
};
const char* PatchFamilyName(PatchFamily family);
PatchFamily ParsePatchFamily(const std::string& name);

struct SweepReport {
  PatchFamily family;
  std::vector<double> radii;
  std::vector<double> max_errors;
  double slope = 0.0;  // least-squares log-log slope; NaN when exact
  bool exact = false;  // every error below 1e-12
  std::size_t non_converged = 0;
};

/// For each radius rho: max |approx - exact| over `trials` random patches and
/// points at distance rho from the patch origin. Radii must be decreasing and
/// at least 3.
SweepReport ApproxErrorSweep(PatchFamily family, const std::vector<double>& radii, std::size_t trials = 1000,
                             uint64_t seed = 0);

// Patch fitting ---------------------------------------------------------------

struct PatchSample {
  Vec3 position;
  double sdf;
};

struct PatchCoefficients {
  double a = 0.0, b = 0.0, c = 0.0;
};

/// Least squares over (a, b, c) of z - 1/2 (a x^2 + c y^2 + 2 b x y) - d via
/// the normal equations. Throws RankDeficient.
PatchCoefficients FitAligned(const std::vector<PatchSample>& samples);

struct UnalignedState {
  PatchCoefficients coefficients;
  RigidTransform pose;  // (x', y', z') = R p + t
};

/// Mean of squared residuals z' - 1/2 (a x'^2 + c y'^2 + 2 b x' y') - d.
double UnalignedObjective(const std::vector<PatchSample>& samples, const UnalignedState& state);

struct UnalignedGradient {
  double value = 0.0;
  Eigen::Vector3d coefficients;  // d/da, d/db, d/dc
  Eigen::Vector4d rotation;      // d/d(w, x, y, z), through normalization
  Eigen::Vector3d translation;
};
UnalignedGradient UnalignedObjectiveGradient(const std::vector<PatchSample>& samples, const UnalignedState& state);

struct UnalignedResult {
  UnalignedState state;
  double residual = 0.0;  // final objective
};

/// Plain gradient descent; the quaternion is renormalized after every step.
/// With `freeze_pose` only the coefficients move.
UnalignedResult FitUnaligned(const std::vector<PatchSample>& samples, const UnalignedState& init, std::size_t steps,
                             double lr, bool freeze_pose = false);

struct FittingProblem {
  PatchCoefficients truth;
  RigidTransform pose;  // maps sample positions to patch-local coordinates
  std::vector<PatchSample> samples;
};

/// Samples (u, v, h(u, v) + y) with d = y, (u, v) uniform on [-1, 1]^2 and
/// y uniform on [0, 0.02], expressed in a random world pose.
FittingProblem MakeFittingProblem(uint64_t seed, std::size_t n = 200);

struct MultistartReport {
  std::vector<double> residuals;  // sorted ascending
  std::size_t clusters = 0;       // 1 + number of consecutive ratios >= gap
  double largest_ratio = 0.0;
};

/// Runs FitUnaligned from `starts` uniformly random rotations (zero
/// translation and coefficients).
MultistartReport Multistart(const FittingProblem& problem, std::size_t starts = 20, std::size_t steps = 20000,
                            double lr = 0.1, uint64_t seed = 0, double gap = 10.0);

// Landscape -------------------------------------------------------------------

struct LandscapePoint {
  double k = 0.0, tx = 0.0, ty = 0.0, theta = 0.0;
  Eigen::Vector4d Vector() const { return {k, tx, ty, theta}; }
  static LandscapePoint From(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }
};

/// Discrete-or-quadrature law over x, uniform law over y.
class SampleLaw {
 public:
  /// x uniform on [lo, hi] (Gauss-Legendre nodes), y uniform on [y0, y1].
  static SampleLaw Uniform(double k0, double x_lo = -1.0, double x_hi = 1.0, double y0 = 0.0, double y1 = 0.02,
                           int order = 16);
  static SampleLaw TwoPoint(double k0, double y0 = 0.0, double y1 = 0.02, int order = 16);
  /// User atoms; weights are normalized to sum 1.
  static SampleLaw Grid(double k0, std::vector<double> x, std::vector<double> weights, double y0 = 0.0,
                        double y1 = 0.02, int order = 16);

  double k0() const { return k0_; }
  double c() const { return MomentY(1); }
  double MomentX(int i) const;
  double MomentY(int i) const;
  const std::vector<double>& x_nodes() const { return x_; }
  const std::vector<double>& x_weights() const { return wx_; }
  const std::vector<double>& y_nodes() const { return y_; }
  const std::vector<double>& y_weights() const { return wy_; }
  double y_spread() const { return y1_ - y0_; }
  std::string Describe() const;

 private:
  double k0_ = 1.0, y0_ = 0.0, y1_ = 0.02;
  std::string x_kind_;
  std::vector<double> x_, wx_, y_, wy_;
};

/// Gauss-Legendre nodes and weights on [lo, hi]; weights sum to hi - lo.
void GaussLegendre(int order, double lo, double hi, std::vector<double>& nodes, std::vector<double>& weights);

double LandscapeR(const LandscapePoint& pt, const SampleLaw& law);

struct LandscapeDerivatives {
  double value = 0.0;
  Eigen::Vector4d gradient;  // order (k, tx, ty, theta)
  Eigen::Matrix4d hessian;
};
LandscapeDerivatives LandscapeGradHess(const LandscapePoint& pt, const SampleLaw& law);

LandscapePoint CriticalCandidate(const SampleLaw& law);

struct CriticalReport {
  LandscapePoint point;
  double value = 0.0;
  Eigen::Vector4d gradient;
  double gradient_norm = 0.0;
  bool is_critical = false;
  Eigen::Vector4d eigenvalues;
  double min_eigenvalue = 0.0;
  bool is_local_min = false;
  double margin_theta_tx = 0.0;  // H_tt H_xx - H_tx^2
  double margin_k_ty = 0.0;      // H_kk H_yy - H_ky^2
  double cauchy_margin = 0.0;    // V_x^2 V_x^6 - (V_x^4)^2
  bool degenerate = false;
  double y_spread = 0.0;

  std::string ToText() const;
  std::string ToJson() const;
};

CriticalReport VerifyCriticalPoint(const SampleLaw& law, double gradient_tol = 1e-8, double degenerate_tol = 1e-12);

// Quadratic layer expressiveness ---------------------------------------------

struct ExpressivenessReport {
  double quadratic_residual = 0.0;  // max |error|
  double affine_residual = 0.0;
  std::size_t samples = 0;
};

/// Fits z - 1/2 (x^2 + 0.5 y^2) on `n` random points in [-1, 1]^3 by least
/// squares with a single quadratic layer and with a single affine layer,
/// evaluates both through the decoder layer code and reports max residuals.
ExpressivenessReport QuadraticLayerFit(std::size_t n = 200, uint64_t seed = 0);

}  // namespace cofield
