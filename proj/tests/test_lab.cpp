// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "cofield/error.hpp"
#include "cofield/lab.hpp"
#include "cofield/rng.hpp"

namespace cofield {
namespace {

constexpr double kPi = std::numbers::pi;

std::vector<PatchSample> AlignedSamples(const PatchCoefficients& c, std::size_t n, double noise, uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.Uniform(-1, 1), y = rng.Uniform(-1, 1), d = rng.Uniform(-0.1, 0.1);
    const double z = 0.5 * (c.a * x * x + c.c * y * y + 2 * c.b * x * y) + d + rng.Normal(noise);
    out.push_back({Vec3(x, y, z), d});
  }
  return out;
}

TEST(FitAligned, ExactRecovery) {
  const auto coeffs = FitAligned(AlignedSamples({2, -1, 0.5}, 50, 0.0, 1));
  EXPECT_NEAR(coeffs.a, 2, 1e-10);
  EXPECT_NEAR(coeffs.b, -1, 1e-10);
  EXPECT_NEAR(coeffs.c, 0.5, 1e-10);
}

TEST(FitAligned, TooFewSamplesRaise) {
  try {
    FitAligned(AlignedSamples({1, 0, 1}, 2, 0.0, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRankDeficient);
  }
  // Collinear (x, y) make the design rank deficient as well.
  std::vector<PatchSample> line;
  for (int i = 0; i < 10; ++i) line.push_back({Vec3(0.1 * i, 0.0, 0.0), 0.0});
  EXPECT_THROW(FitAligned(line), Error);
}

TEST(FitAligned, NoisyMatchesSvdPseudoInverse) {
  const auto samples = AlignedSamples({0.7, 0.3, -1.2}, 80, 0.01, 2);
  Eigen::MatrixXd m(samples.size(), 3);
  Eigen::VectorXd rhs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vec3& p = samples[i].position;
    m.row(i) << 0.5 * p.x() * p.x(), p.x() * p.y(), 0.5 * p.y() * p.y();
    rhs[i] = p.z() - samples[i].sdf;
  }
  const Eigen::Vector3d ref = m.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
  const auto c = FitAligned(samples);
  EXPECT_NEAR(c.a, ref[0], 1e-8);
  EXPECT_NEAR(c.b, ref[1], 1e-8);
  EXPECT_NEAR(c.c, ref[2], 1e-8);
}

TEST(FitUnaligned, GradientMatchesFiniteDifferences) {
  const FittingProblem problem = MakeFittingProblem(3, 50);
  Rng rng(4);
  UnalignedState s;
  s.coefficients = {rng.Uniform(-1, 1), rng.Uniform(-1, 1), rng.Uniform(-1, 1)};
  s.pose.rotation = Eigen::Quaterniond(0.8, 0.3, -0.4, 0.2);  // deliberately not unit
  s.pose.translation = Vec3(0.1, -0.2, 0.05);
  const UnalignedGradient g = UnalignedObjectiveGradient(problem.samples, s);
  EXPECT_NEAR(g.value, UnalignedObjective(problem.samples, s), 1e-14);
  const double h = 1e-6;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  for (int i = 0; i < 3; ++i) {
    UnalignedState p = s, m = s;
    double* cp[] = {&p.coefficients.a, &p.coefficients.b, &p.coefficients.c};
    double* cm[] = {&m.coefficients.a, &m.coefficients.b, &m.coefficients.c};
    *cp[i] += h;
    *cm[i] -= h;
    const double fd = (UnalignedObjective(problem.samples, p) - UnalignedObjective(problem.samples, m)) / (2 * h);
    EXPECT_LT(rel(fd, g.coefficients[i]), 1e-5);
  }
  for (int i = 0; i < 4; ++i) {
    UnalignedState p = s, m = s;
    p.pose.rotation.coeffs()[(i + 3) % 4] += h;  // coeffs() is (x, y, z, w)
    m.pose.rotation.coeffs()[(i + 3) % 4] -= h;
    const double fd = (UnalignedObjective(problem.samples, p) - UnalignedObjective(problem.samples, m)) / (2 * h);
    EXPECT_LT(rel(fd, g.rotation[i]), 1e-5) << "quaternion component " << i;
  }
  for (int i = 0; i < 3; ++i) {
    UnalignedState p = s, m = s;
    p.pose.translation[i] += h;
    m.pose.translation[i] -= h;
    const double fd = (UnalignedObjective(problem.samples, p) - UnalignedObjective(problem.samples, m)) / (2 * h);
    EXPECT_LT(rel(fd, g.translation[i]), 1e-5);
  }
}

TEST(FitUnaligned, GroundTruthIsStationary) {
  const FittingProblem problem = MakeFittingProblem(5);
  const UnalignedState truth{problem.truth, problem.pose};
  EXPECT_LT(UnalignedObjective(problem.samples, truth), 1e-20);
  const UnalignedResult r = FitUnaligned(problem.samples, truth, 500, 0.1);
  EXPECT_LT(r.residual, 1e-10);
  EXPECT_LT(std::abs(r.state.coefficients.a - truth.coefficients.a), 1e-6);
  EXPECT_LT(std::abs(r.state.coefficients.b - truth.coefficients.b), 1e-6);
  EXPECT_LT(std::abs(r.state.coefficients.c - truth.coefficients.c), 1e-6);
  EXPECT_LT(r.state.pose.rotation.angularDistance(truth.pose.rotation), 1e-6);
  EXPECT_LT((r.state.pose.translation - truth.pose.translation).norm(), 1e-6);
}

TEST(FitUnaligned, FrozenIdentityReducesToAlignedFit) {
  const auto samples = AlignedSamples({1.1, -0.4, 0.6}, 100, 0.02, 6);
  const PatchCoefficients aligned = FitAligned(samples);
  const UnalignedResult r = FitUnaligned(samples, UnalignedState{}, 20000, 0.5, true);
  EXPECT_NEAR(r.state.coefficients.a, aligned.a, 1e-6);
  EXPECT_NEAR(r.state.coefficients.b, aligned.b, 1e-6);
  EXPECT_NEAR(r.state.coefficients.c, aligned.c, 1e-6);
  EXPECT_NEAR(r.residual, UnalignedObjective(samples, UnalignedState{aligned, {}}), 1e-8);
  EXPECT_EQ(r.state.pose.rotation.coeffs(), Eigen::Quaterniond::Identity().coeffs());
}

// Landscape -----------------------------------------------------------------------

TEST(GaussLegendre, ExactForPolynomials) {
  std::vector<double> x, w;
  GaussLegendre(16, -1, 3, x, w);
  double sum = 0, p31 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum += w[i];
    p31 += w[i] * std::pow(x[i], 31);
  }
  EXPECT_NEAR(sum, 4.0, 1e-13);
  EXPECT_NEAR(p31 / (std::pow(3, 32) / 32 - 1.0 / 32), 1.0, 1e-12);
}

TEST(Landscape, GlobalMinimumIsZero) {
  for (double k0 : {0.5, 1.0, 2.0}) {
    for (const SampleLaw& law : {SampleLaw::Uniform(k0), SampleLaw::TwoPoint(k0),
                                 SampleLaw::Grid(k0, {-0.5, 0.2, 0.9}, {1, 2, 1})}) {
      EXPECT_NEAR(LandscapeR({k0, 0, 0, 0}, law), 0.0, 1e-15);
      EXPECT_LT(LandscapeGradHess({k0, 0, 0, 0}, law).gradient.norm(), 1e-14);
    }
  }
}

TEST(Landscape, CriticalValueIsFourVarianceOfY) {
  const SampleLaw law = SampleLaw::Uniform(1.0);
  const LandscapePoint c = CriticalCandidate(law);
  EXPECT_NEAR(c.k, -1.0, 0);
  EXPECT_NEAR(c.ty, 0.02, 1e-15);
  EXPECT_NEAR(c.theta, kPi, 0);
  EXPECT_NEAR(LandscapeR(c, law), 4.0 * 0.02 * 0.02 / 12.0, 1e-15);
  EXPECT_LT(LandscapeGradHess(c, law).gradient.norm(), 1e-10);
  for (double dt : {1e-3, -1e-3}) {
    LandscapePoint p = c;
    p.theta += dt;
    EXPECT_GT(LandscapeR(p, law), LandscapeR(c, law));
  }
}

TEST(Landscape, DerivativesMatchFiniteDifferences) {
  const SampleLaw law = SampleLaw::Uniform(1.3, -1, 1, 0.0, 0.05);
  Rng rng(7);
  for (int n = 0; n < 20; ++n) {
    const LandscapePoint pt{rng.Uniform(-2, 2), rng.Uniform(-0.5, 0.5), rng.Uniform(-0.5, 0.5), rng.Uniform(0, 2 * kPi)};
    const LandscapeDerivatives d = LandscapeGradHess(pt, law);
    EXPECT_NEAR(d.value, LandscapeR(pt, law), 1e-14);
    const double h = 1e-5;
    for (int i = 0; i < 4; ++i) {
      Eigen::Vector4d e = Eigen::Vector4d::Zero();
      e[i] = h;
      const Eigen::Vector4d v = pt.Vector();
      const double fd = (LandscapeR(LandscapePoint::From(v + e), law) - LandscapeR(LandscapePoint::From(v - e), law)) / (2 * h);
      EXPECT_LT(std::abs(fd - d.gradient[i]) / std::max({std::abs(fd), std::abs(d.gradient[i]), 1e-3}), 1e-6);
      const Eigen::Vector4d gp = LandscapeGradHess(LandscapePoint::From(v + e), law).gradient;
      const Eigen::Vector4d gm = LandscapeGradHess(LandscapePoint::From(v - e), law).gradient;
      const Eigen::Vector4d hcol = (gp - gm) / (2 * h);
      for (int j = 0; j < 4; ++j) EXPECT_NEAR(d.hessian(j, i), hcol[j], 1e-5);
    }
    EXPECT_LT((d.hessian - d.hessian.transpose()).norm(), 1e-12);
  }
}

TEST(Landscape, UniformLawCertificate) {
  for (double k0 : {0.5, 1.0, 2.0}) {
    const CriticalReport r = VerifyCriticalPoint(SampleLaw::Uniform(k0));
    EXPECT_TRUE(r.is_critical);
    EXPECT_LE(r.gradient_norm, 1e-8);
    EXPECT_GT(r.min_eigenvalue, 0.0);
    EXPECT_TRUE(r.is_local_min);
    EXPECT_FALSE(r.degenerate);
    EXPECT_GT(r.margin_theta_tx, 0.0);
  }
}

TEST(Landscape, TwoPointLawIsDegenerate) {
  const SampleLaw law = SampleLaw::TwoPoint(1.0);
  // V_x^2 V_x^6 - (V_x^4)^2 = 1 * 1 - 1 for x = +-1.
  EXPECT_EQ(law.MomentX(2), 1.0);
  EXPECT_EQ(law.MomentX(4), 1.0);
  const CriticalReport r = VerifyCriticalPoint(law);
  EXPECT_TRUE(r.degenerate);
  EXPECT_LE(std::abs(r.cauchy_margin), 1e-12);
}

TEST(Landscape, NonZeroMeanBreaksCriticality) {
  // Atoms {-0.4, 1.0} with weights {1, 1} have mean 0.3.
  const SampleLaw law = SampleLaw::Grid(1.0, {-0.4, 1.0}, {1, 1});
  EXPECT_NEAR(law.MomentX(1), 0.3, 1e-15);
  const CriticalReport r = VerifyCriticalPoint(law);
  EXPECT_FALSE(r.is_critical);
  EXPECT_GT(r.gradient_norm, 1e-6);
  // Closed form: only d/dtheta survives. With l = 2c - 2y and
  // dl/dtheta = -x - 2 k0^2 x^3 - 2 k0 x y, dr/dtheta = 8 k0 E[x] Var(y).
  EXPECT_NEAR(r.gradient_norm, 8.0 * 1.0 * 0.3 * (0.02 * 0.02 / 12.0), 1e-12);
}

// At the candidate the residual is 2c - 2y, independent of x, so the gradient
// involves x only through E[x]. Odd moments beyond the first leave it at zero.
TEST(Landscape, HigherOddMomentsKeepCriticality) {
  // Zero-mean skewed law: atoms {-1, 0.5} with weights {1, 2}.
  const SampleLaw law = SampleLaw::Grid(1.0, {-1.0, 0.5}, {1, 2});
  EXPECT_NEAR(law.MomentX(1), 0.0, 1e-15);
  EXPECT_GT(std::abs(law.MomentX(3)), 0.1);
  const CriticalReport r = VerifyCriticalPoint(law);
  EXPECT_TRUE(r.is_critical);
  EXPECT_LT(r.gradient_norm, 1e-12);
}

// Sweeps and expressiveness ---------------------------------------------------------

TEST(Sweep, QuadraticFamilyIsThirdOrder) {
  const SweepReport r = ApproxErrorSweep(PatchFamily::kQuadratic, {0.2, 0.1, 0.05, 0.025}, 200, 1);
  EXPECT_FALSE(r.exact);
  EXPECT_GE(r.slope, 2.5);
  EXPECT_LE(r.slope, 3.5);
  EXPECT_EQ(r.non_converged, 0u);
}

TEST(Sweep, PlaneFamilyIsExact) {
  const SweepReport r = ApproxErrorSweep(PatchFamily::kPlane, {0.2, 0.1, 0.05, 0.025}, 200, 1);
  EXPECT_TRUE(r.exact);
  EXPECT_TRUE(std::isnan(r.slope));
  for (double e : r.max_errors) EXPECT_LT(e, 1e-12);
}

// A kinked ridge (e != 0) makes z - h(x, y) differ from the distance by a
// factor of order sqrt(1 + e^2) even arbitrarily close to the ridge, so the
// error only shrinks linearly with the radius.
TEST(Sweep, KinkedRidgeErrorIsFirstOrder) {
  const SweepReport r = ApproxErrorSweep(PatchFamily::kSharpEdge, {0.2, 0.1, 0.05, 0.025}, 200, 1);
  EXPECT_GT(r.slope, 0.8);
  EXPECT_LT(r.slope, 1.5);
  const SweepReport crease = ApproxErrorSweep(PatchFamily::kCrease, {0.2, 0.1, 0.05, 0.025}, 200, 1);
  EXPECT_GE(crease.slope, 2.5);
}

TEST(Sweep, RejectsBadRadii) {
  EXPECT_THROW(ApproxErrorSweep(PatchFamily::kQuadratic, {0.1, 0.2, 0.05}, 10), Error);
  EXPECT_THROW(ApproxErrorSweep(PatchFamily::kQuadratic, {0.2, 0.1}, 10), Error);
  EXPECT_EQ(ParsePatchFamily(PatchFamilyName(PatchFamily::kCrease)), PatchFamily::kCrease);
}

TEST(Expressiveness, QuadraticLayerFitsPatchExactly) {
  const ExpressivenessReport r = QuadraticLayerFit(200, 0);
  EXPECT_LT(r.quadratic_residual, 1e-10);
  EXPECT_GT(r.affine_residual, 1e-4);
  EXPECT_EQ(r.samples, 200u);
}

}  // namespace
}  // namespace cofield
