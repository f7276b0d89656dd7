// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Shared decoder: linear layers followed by k quadratic layers,
//   linear:    y = A z + b
//   quadratic: y_i = z^T T[:, i, :] z + (A z + b)_i
// with ReLU between layers and no activation after the last one.
//
// Parameters live in one flat vector, layer by layer; inside a layer the
// order is T (m_in x m_out x m_in, row-major), then A (m_out x m_in,
// row-major), then b. This is also the checkpoint order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cofield/field.hpp"

namespace cofield {

struct LayerLayout {
  int in = 0;
  int out = 0;
  bool quadratic = false;
  std::size_t t_offset = 0;  // valid when quadratic
  std::size_t a_offset = 0;
  std::size_t b_offset = 0;
  std::size_t end = 0;
};

struct MlpConfig {
  std::vector<int> widths;  // m_0 .. m_L
  int quadratic_layers = 1;  // k: the last k layers are quadratic

  /// m_0 = 3 + latent_dim, `depth` layers, hidden width `hidden`, output 1.
  static MlpConfig Make(int latent_dim, int hidden = 128, int depth = 5, int quadratic_layers = 1);

  int depth() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int latent_dim() const { return widths.front() - 3; }
  bool IsQuadratic(int layer) const { return layer >= depth() - quadratic_layers; }  // layer is 0-based
  LayerLayout Layer(int layer) const;
  std::size_t ParamCount() const;
  /// Throws InvalidArgument unless depth >= 1, widths >= 1, m_0 >= 3, m_L = 1, 0 <= k <= depth.
  void Validate() const;
  bool operator==(const MlpConfig&) const = default;
};

template <typename Real>
struct MlpParamsT {
  MlpConfig config;
  std::vector<Real> values;

  template <typename Other>
  MlpParamsT<Other> Cast() const {
    return {config, std::vector<Other>(values.begin(), values.end())};
  }
};
using MlpParams = MlpParamsT<float>;

/// Kaiming-uniform fan-in weights, zero biases, zero quadratic tensors.
MlpParams InitMlp(const MlpConfig& config, uint64_t seed);

/// Every parameter (T included) uniform in +-sqrt(3 / fan_in); used by tests
/// and the gradient audit so that every path carries signal.
template <typename Real>
MlpParamsT<Real> RandomMlp(const MlpConfig& config, uint64_t seed);

using VectorXd = Eigen::VectorXd;
using MatrixXd = Eigen::MatrixXd;

VectorXd LinearForward(const MatrixXd& a, const VectorXd& b, const VectorXd& z);
/// `t[i]` is the slice T[:, i, :].
VectorXd QuadraticForward(const std::vector<MatrixXd>& t, const MatrixXd& a, const VectorXd& b, const VectorXd& z);

/// Batched evaluation with the intermediate state kept for Backward.
template <typename Real>
class MlpEvaluator {
 public:
  using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

  /// x is m_0 x N (one column per point); returns the 1 x N outputs.
  const Matrix& Forward(const MlpParamsT<Real>& params, const Matrix& x);
  /// d_out is 1 x N, the loss gradient with respect to the outputs of the
  /// last Forward. Adds the parameter gradient into `grad` (64-bit; skipped
  /// when empty) and returns the m_0 x N input gradient.
  const Matrix& Backward(const MlpParamsT<Real>& params, const Matrix& d_out, std::span<double> grad);

  /// Pre-activation of 0-based layer l from the last Forward.
  const Matrix& PreActivation(int layer) const { return pre_[layer]; }

 private:
  std::vector<Matrix> inputs_;  // input of each layer
  std::vector<Matrix> pre_;
  Matrix delta_, d_input_, work_;
};

extern template class MlpEvaluator<float>;
extern template class MlpEvaluator<double>;

/// Decoder value at (x_local; latent).
template <typename Real>
Real MlpForward(const MlpParamsT<Real>& params, const Vec3& x_local, std::span<const Real> latent);

/// |g(world_to_local(frame, p), latent) - d|
template <typename Real>
double SampleLoss(const MlpParamsT<Real>& params, const CoordinateFrame& frame, std::span<const Real> latent,
                  const Vec3& position, double target);

struct SampleGradients {
  double loss = 0.0;
  std::vector<double> params;
  std::vector<double> latent;
  FrameGradient frame;
};

/// Reverse-mode derivatives of the L1 sample loss (subgradient 0 at a zero
/// residual) through the decoder, the latent and the frame.
template <typename Real>
SampleGradients Backward(const MlpParamsT<Real>& params, const CoordinateFrame& frame, std::span<const Real> latent,
                         const Vec3& position, double target);

/// Bias-corrected Adam over one parameter group.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::size_t size) : m_(size, 0.0), v_(size, 0.0) {}

  /// Throws ShapeMismatch when the sizes disagree.
  template <typename Real>
  void Step(std::span<Real> params, std::span<const double> grads, double lr);

  std::size_t size() const { return m_.size(); }
  uint64_t step() const { return step_; }

  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

 private:
  std::vector<double> m_, v_;
  uint64_t step_ = 0;
};

// Gradient audit -------------------------------------------------------------

enum class ParamGroup { kLinear, kQuadratic, kBias, kLatent, kQuaternion, kOrigin };
const char* ParamGroupName(ParamGroup group);

struct GradCheckOptions {
  std::size_t max_per_group = 48;  // entries audited per group
  double tolerance = 1e-4;
  double step = 1e-5;  // relative to max(1, |parameter|)
  /// Replaces the analytic backward; used for negative controls.
  std::function<SampleGradients(const MlpParamsT<double>&, const CoordinateFrame&, std::span<const double>,
                                const Vec3&, double)>
      backward;
};

struct GradCheckReport {
  bool pass = true;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // description of the worst entry
  std::vector<std::pair<ParamGroup, double>> group_errors;
};

/// Random parameters, frame, latent and sample from `seed`; compares every
/// audited analytic derivative against central differences in 64-bit.
GradCheckReport GradCheck(const MlpConfig& config, uint64_t seed, const GradCheckOptions& options = {});

// Checkpoint -----------------------------------------------------------------

struct TrainingMetadata {
  static constexpr uint32_t kWorldAxisFrames = 1;
  static constexpr uint32_t kFrozenFrames = 2;

  uint64_t iteration = 0;
  uint32_t frame_flags = 0;
  uint32_t grid_resolution = 0;  // of the training samples; 0 when unknown
  std::vector<float> loss_history;
};

struct Checkpoint {
  MlpParams params;
  TrainingMetadata metadata;
};

void SaveCheckpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

}  // namespace cofield
