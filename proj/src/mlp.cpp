// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "cofield/binary_io.hpp"
#include "cofield/error.hpp"
#include "cofield/rng.hpp"

namespace cofield {
namespace {

template <typename Real>
using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Slice T[:, i, :] as an m_in x m_in view.
template <typename Real>
auto TSlice(Real* t, const LayerLayout& layer, int i) {
  using Map = Eigen::Map<RowMajor<std::remove_const_t<Real>>, 0, Eigen::OuterStride<>>;
  using ConstMap = Eigen::Map<const RowMajor<std::remove_const_t<Real>>, 0, Eigen::OuterStride<>>;
  using Result = std::conditional_t<std::is_const_v<Real>, ConstMap, Map>;
  return Result(t + static_cast<std::size_t>(i) * layer.in, layer.in, layer.in,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(layer.out) * layer.in));
}

template <typename Real>
auto AMatrix(Real* values, const LayerLayout& layer) {
  using Plain = RowMajor<std::remove_const_t<Real>>;
  using Result = std::conditional_t<std::is_const_v<Real>, Eigen::Map<const Plain>, Eigen::Map<Plain>>;
  return Result(values + layer.a_offset, layer.out, layer.in);
}

void CheckSize(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + ": size " + std::to_string(got) + ", expected " + std::to_string(want));
  }
}

}  // namespace

MlpConfig MlpConfig::Make(int latent_dim, int hidden, int depth, int quadratic_layers) {
  MlpConfig config;
  config.widths.push_back(3 + latent_dim);
  for (int l = 1; l < depth; ++l) config.widths.push_back(hidden);
  config.widths.push_back(1);
  config.quadratic_layers = quadratic_layers;
  config.Validate();
  return config;
}

LayerLayout MlpConfig::Layer(int layer) const {
  std::size_t offset = 0;
  LayerLayout out;
  for (int l = 0; l <= layer; ++l) {
    out.in = widths[l];
    out.out = widths[l + 1];
    out.quadratic = IsQuadratic(l);
    out.t_offset = offset;
    if (out.quadratic) offset += static_cast<std::size_t>(out.in) * out.out * out.in;
    out.a_offset = offset;
    offset += static_cast<std::size_t>(out.out) * out.in;
    out.b_offset = offset;
    offset += out.out;
    out.end = offset;
  }
  return out;
}

std::size_t MlpConfig::ParamCount() const { return Layer(depth() - 1).end; }

void MlpConfig::Validate() const {
  if (widths.size() < 2) throw Error(ErrorCode::kInvalidArgument, "decoder needs at least one layer");
  for (int w : widths) {
    if (w < 1) throw Error(ErrorCode::kInvalidArgument, "layer widths must be >= 1");
  }
  if (widths.front() < 3) throw Error(ErrorCode::kInvalidArgument, "input width must be >= 3");
  if (widths.back() != 1) throw Error(ErrorCode::kInvalidArgument, "output width must be 1");
  if (quadratic_layers < 0 || quadratic_layers > depth()) {
    throw Error(ErrorCode::kInvalidArgument, "quadratic layer count must lie in [0, depth]");
  }
}

MlpParams InitMlp(const MlpConfig& config, uint64_t seed) {
  config.Validate();
  MlpParams params{config, std::vector<float>(config.ParamCount(), 0.0f)};
  Rng rng(seed, 0x3b1);
  for (int l = 0; l < config.depth(); ++l) {
    const LayerLayout layer = config.Layer(l);
    const double bound = std::sqrt(6.0 / layer.in);
    for (std::size_t i = layer.a_offset; i < layer.b_offset; ++i) {
      params.values[i] = static_cast<float>(rng.Uniform(-bound, bound));
    }
  }
  return params;
}

template <typename Real>
MlpParamsT<Real> RandomMlp(const MlpConfig& config, uint64_t seed) {
  config.Validate();
  MlpParamsT<Real> params{config, std::vector<Real>(config.ParamCount())};
  Rng rng(seed, 0x3b2);
  for (int l = 0; l < config.depth(); ++l) {
    const LayerLayout layer = config.Layer(l);
    const double bound = std::sqrt(3.0 / layer.in);
    for (std::size_t i = layer.t_offset; i < layer.end; ++i) {
      params.values[i] = static_cast<Real>(rng.Uniform(-bound, bound));
    }
  }
  return params;
}
template MlpParamsT<float> RandomMlp<float>(const MlpConfig&, uint64_t);
template MlpParamsT<double> RandomMlp<double>(const MlpConfig&, uint64_t);

VectorXd LinearForward(const MatrixXd& a, const VectorXd& b, const VectorXd& z) {
  if (a.cols() != z.size() || a.rows() != b.size()) {
    throw Error(ErrorCode::kShapeMismatch, "linear layer: A is " + std::to_string(a.rows()) + "x" +
                                               std::to_string(a.cols()) + ", b has " + std::to_string(b.size()) +
                                               ", z has " + std::to_string(z.size()));
  }
  return a * z + b;
}

VectorXd QuadraticForward(const std::vector<MatrixXd>& t, const MatrixXd& a, const VectorXd& b, const VectorXd& z) {
  VectorXd y = LinearForward(a, b, z);
  if (static_cast<Eigen::Index>(t.size()) != y.size()) {
    throw Error(ErrorCode::kShapeMismatch, "quadratic layer: tensor has " + std::to_string(t.size()) +
                                               " slices for " + std::to_string(y.size()) + " outputs");
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].rows() != z.size() || t[i].cols() != z.size()) {
      throw Error(ErrorCode::kShapeMismatch, "quadratic layer: tensor slice is not m_in x m_in");
    }
    y[static_cast<Eigen::Index>(i)] += z.dot(t[i] * z);
  }
  return y;
}

template <typename Real>
const typename MlpEvaluator<Real>::Matrix& MlpEvaluator<Real>::Forward(const MlpParamsT<Real>& params,
                                                                        const Matrix& x) {
  const MlpConfig& config = params.config;
  CheckSize(params.values.size(), config.ParamCount(), "decoder parameters");
  CheckSize(static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(config.input_dim()), "decoder input");
  const int depth = config.depth();
  inputs_.resize(depth + 1);
  pre_.resize(depth);
  inputs_[0] = x;
  const Real* values = params.values.data();
  for (int l = 0; l < depth; ++l) {
    const LayerLayout layer = config.Layer(l);
    const Matrix& z = inputs_[l];
    Matrix& y = pre_[l];
    y.noalias() = AMatrix(values, layer) * z;
    y.colwise() += Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(values + layer.b_offset, layer.out);
    if (layer.quadratic) {
      for (int i = 0; i < layer.out; ++i) {
        work_.noalias() = TSlice(values + layer.t_offset, layer, i) * z;
        y.row(i) += (z.array() * work_.array()).colwise().sum().matrix();
      }
    }
    if (l + 1 < depth) {
      inputs_[l + 1] = y.cwiseMax(Real(0));
    } else {
      inputs_[l + 1] = y;
    }
  }
  return inputs_[depth];
}

template <typename Real>
const typename MlpEvaluator<Real>::Matrix& MlpEvaluator<Real>::Backward(const MlpParamsT<Real>& params,
                                                                         const Matrix& d_out,
                                                                         std::span<double> grad) {
  const MlpConfig& config = params.config;
  const bool want_params = !grad.empty();
  if (want_params) CheckSize(grad.size(), config.ParamCount(), "decoder gradient");
  const int depth = config.depth();
  if (static_cast<int>(pre_.size()) != depth || d_out.cols() != inputs_[0].cols() || d_out.rows() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "decoder backward does not match the last forward pass");
  }
  const Real* values = params.values.data();
  delta_ = d_out;
  for (int l = depth - 1; l >= 0; --l) {
    const LayerLayout layer = config.Layer(l);
    const Matrix& z = inputs_[l];
    const auto a = AMatrix(values, layer);

    if (want_params) {
      Eigen::Map<RowMajor<double>> grad_a(grad.data() + layer.a_offset, layer.out, layer.in);
      grad_a += (delta_ * z.transpose()).template cast<double>();
      Eigen::Map<Eigen::VectorXd> grad_b(grad.data() + layer.b_offset, layer.out);
      grad_b += delta_.rowwise().sum().template cast<double>();
    }

    d_input_.noalias() = a.transpose() * delta_;
    if (layer.quadratic) {
      for (int i = 0; i < layer.out; ++i) {
        const auto t = TSlice(values + layer.t_offset, layer, i);
        const Matrix weighted = (z.array().rowwise() * delta_.row(i).array()).matrix();
        if (want_params) {
          auto grad_t = TSlice(grad.data() + layer.t_offset, layer, i);
          grad_t += (weighted * z.transpose()).template cast<double>();
        }
        d_input_.noalias() += t * weighted;
        d_input_.noalias() += t.transpose() * weighted;
      }
    }
    if (l > 0) {
      delta_ = (pre_[l - 1].array() > Real(0)).select(d_input_, Matrix::Zero(d_input_.rows(), d_input_.cols()));
    }
  }
  return d_input_;
}

template class MlpEvaluator<float>;
template class MlpEvaluator<double>;

namespace {

template <typename Real>
typename MlpEvaluator<Real>::Matrix InputColumn(const MlpConfig& config, const Vec3& x_local,
                                                std::span<const Real> latent) {
  CheckSize(latent.size(), static_cast<std::size_t>(config.latent_dim()), "latent code");
  typename MlpEvaluator<Real>::Matrix x(config.input_dim(), 1);
  for (int i = 0; i < 3; ++i) x(i, 0) = static_cast<Real>(x_local[i]);
  for (std::size_t i = 0; i < latent.size(); ++i) x(3 + static_cast<Eigen::Index>(i), 0) = latent[i];
  return x;
}

}  // namespace

template <typename Real>
Real MlpForward(const MlpParamsT<Real>& params, const Vec3& x_local, std::span<const Real> latent) {
  MlpEvaluator<Real> eval;
  return eval.Forward(params, InputColumn(params.config, x_local, latent))(0, 0);
}
template float MlpForward<float>(const MlpParamsT<float>&, const Vec3&, std::span<const float>);
template double MlpForward<double>(const MlpParamsT<double>&, const Vec3&, std::span<const double>);

template <typename Real>
double SampleLoss(const MlpParamsT<Real>& params, const CoordinateFrame& frame, std::span<const Real> latent,
                  const Vec3& position, double target) {
  return std::abs(static_cast<double>(MlpForward(params, WorldToLocal(frame, position), latent)) - target);
}
template double SampleLoss<float>(const MlpParamsT<float>&, const CoordinateFrame&, std::span<const float>,
                                  const Vec3&, double);
template double SampleLoss<double>(const MlpParamsT<double>&, const CoordinateFrame&, std::span<const double>,
                                   const Vec3&, double);

template <typename Real>
SampleGradients Backward(const MlpParamsT<Real>& params, const CoordinateFrame& frame, std::span<const Real> latent,
                         const Vec3& position, double target) {
  using Matrix = typename MlpEvaluator<Real>::Matrix;
  const Vec3 local = WorldToLocal(frame, position);
  MlpEvaluator<Real> eval;
  const double out = eval.Forward(params, InputColumn(params.config, local, latent))(0, 0);
  const double residual = out - target;

  SampleGradients g;
  g.loss = std::abs(residual);
  g.params.assign(params.values.size(), 0.0);
  g.latent.assign(latent.size(), 0.0);
  const double sign = residual > 0.0 ? 1.0 : (residual < 0.0 ? -1.0 : 0.0);
  const Matrix d_out = Matrix::Constant(1, 1, static_cast<Real>(sign));
  const Matrix& d_x = eval.Backward(params, d_out, g.params);
  for (std::size_t i = 0; i < latent.size(); ++i) g.latent[i] = d_x(3 + static_cast<Eigen::Index>(i), 0);
  const Vec3 g_local(d_x(0, 0), d_x(1, 0), d_x(2, 0));
  g.frame = BackpropFrame(frame, (position - frame.origin) * g_local.transpose(), g_local);
  return g;
}
template SampleGradients Backward<float>(const MlpParamsT<float>&, const CoordinateFrame&, std::span<const float>,
                                         const Vec3&, double);
template SampleGradients Backward<double>(const MlpParamsT<double>&, const CoordinateFrame&,
                                          std::span<const double>, const Vec3&, double);

template <typename Real>
void AdamState::Step(std::span<Real> params, std::span<const double> grads, double lr) {
  CheckSize(params.size(), m_.size(), "adam parameters");
  CheckSize(grads.size(), m_.size(), "adam gradients");
  ++step_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double update = lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + epsilon);
    params[i] = static_cast<Real>(params[i] - update);
  }
}
template void AdamState::Step<float>(std::span<float>, std::span<const double>, double);
template void AdamState::Step<double>(std::span<double>, std::span<const double>, double);

// Gradient audit -------------------------------------------------------------

const char* ParamGroupName(ParamGroup group) {
  switch (group) {
    case ParamGroup::kLinear: return "linear";
    case ParamGroup::kQuadratic: return "quadratic";
    case ParamGroup::kBias: return "bias";
    case ParamGroup::kLatent: return "latent";
    case ParamGroup::kQuaternion: return "quaternion";
    case ParamGroup::kOrigin: return "origin";
  }
  return "unknown";
}

namespace {

struct AuditState {
  MlpParamsT<double> params;
  CoordinateFrame frame;
  std::vector<double> latent;
  Vec3 position;
  double target = 0.0;

  double Loss() const { return SampleLoss(params, frame, std::span<const double>(latent), position, target); }
};

// Smallest |pre-activation| over the hidden layers at the audited point.
double ActivationMargin(const AuditState& s) {
  MlpEvaluator<double> eval;
  const MlpConfig& config = s.params.config;
  typename MlpEvaluator<double>::Matrix x(config.input_dim(), 1);
  x.col(0).head(3) = WorldToLocal(s.frame, s.position);
  for (std::size_t i = 0; i < s.latent.size(); ++i) x(3 + static_cast<Eigen::Index>(i), 0) = s.latent[i];
  eval.Forward(s.params, x);
  double margin = 1e300;
  for (int l = 0; l + 1 < config.depth(); ++l) margin = std::min(margin, eval.PreActivation(l).cwiseAbs().minCoeff());
  return margin;
}

struct Entry {
  ParamGroup group;
  double* value;
  double analytic;
  std::string label;
};

}  // namespace

GradCheckReport GradCheck(const MlpConfig& config, uint64_t seed, const GradCheckOptions& options) {
  config.Validate();
  Rng rng(seed, 0x9c);
  AuditState s;
  // Resample until the point sits at least 1e-3 away from every ReLU kink
  // and the residual is far from the L1 kink.
  for (int attempt = 0;; ++attempt) {
    s.params = RandomMlp<double>(config, MixSeed(seed, static_cast<uint64_t>(attempt)));
    Eigen::Vector4d q(rng.Normal(), rng.Normal(), rng.Normal(), rng.Normal());
    s.frame.rotation = q * rng.Uniform(0.7, 1.3) / q.norm();
    s.frame.origin = Vec3(rng.Uniform(-0.5, 0.5), rng.Uniform(-0.5, 0.5), rng.Uniform(-0.5, 0.5));
    s.latent.resize(config.latent_dim());
    for (double& z : s.latent) z = rng.Normal(0.5);
    s.position = s.frame.origin + Vec3(rng.Uniform(-1, 1), rng.Uniform(-1, 1), rng.Uniform(-1, 1));
    const double out = MlpForward(s.params, WorldToLocal(s.frame, s.position), std::span<const double>(s.latent));
    s.target = out + (rng.Uniform() < 0.5 ? -1.0 : 1.0) * rng.Uniform(0.1, 1.0);
    if (ActivationMargin(s) >= 1e-3) break;
    if (attempt > 1000) throw Error(ErrorCode::kInvalidArgument, "could not find a kink-free audit point");
  }

  const SampleGradients g =
      options.backward ? options.backward(s.params, s.frame, s.latent, s.position, s.target)
                       : Backward(s.params, s.frame, std::span<const double>(s.latent), s.position, s.target);

  std::vector<Entry> entries;
  auto pick = [&](ParamGroup group, std::vector<std::pair<double*, double>> candidates, const std::string& name) {
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng.engine());
    order.resize(std::min(order.size(), options.max_per_group));
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) {
      entries.push_back({group, candidates[i].first, candidates[i].second, name + "[" + std::to_string(i) + "]"});
    }
  };

  for (int l = 0; l < config.depth(); ++l) {
    const LayerLayout layer = config.Layer(l);
    const std::string prefix = "layer" + std::to_string(l) + ".";
    std::vector<std::pair<double*, double>> t, a, b;
    if (layer.quadratic) {
      for (std::size_t i = layer.t_offset; i < layer.a_offset; ++i) t.emplace_back(&s.params.values[i], g.params[i]);
      pick(ParamGroup::kQuadratic, t, prefix + "T");
    }
    for (std::size_t i = layer.a_offset; i < layer.b_offset; ++i) a.emplace_back(&s.params.values[i], g.params[i]);
    for (std::size_t i = layer.b_offset; i < layer.end; ++i) b.emplace_back(&s.params.values[i], g.params[i]);
    pick(ParamGroup::kLinear, a, prefix + "A");
    pick(ParamGroup::kBias, b, prefix + "b");
  }
  {
    std::vector<std::pair<double*, double>> z, q, o;
    for (std::size_t i = 0; i < s.latent.size(); ++i) z.emplace_back(&s.latent[i], g.latent[i]);
    for (int i = 0; i < 4; ++i) q.emplace_back(&s.frame.rotation[i], g.frame.rotation[i]);
    for (int i = 0; i < 3; ++i) o.emplace_back(&s.frame.origin[i], g.frame.origin[i]);
    pick(ParamGroup::kLatent, z, "latent");
    pick(ParamGroup::kQuaternion, q, "quaternion");
    pick(ParamGroup::kOrigin, o, "origin");
  }

  GradCheckReport report;
  for (const Entry& e : entries) {
    const double saved = *e.value;
    const double h = options.step * std::max(1.0, std::abs(saved));
    *e.value = saved + h;
    const double plus = s.Loss();
    *e.value = saved - h;
    const double minus = s.Loss();
    *e.value = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = std::abs(e.analytic - numeric) / std::max({std::abs(e.analytic), std::abs(numeric), 1e-5});
    ++report.checked;
    auto it = std::find_if(report.group_errors.begin(), report.group_errors.end(),
                           [&](const auto& p) { return p.first == e.group; });
    if (it == report.group_errors.end()) {
      report.group_errors.emplace_back(e.group, err);
    } else {
      it->second = std::max(it->second, err);
    }
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      report.worst = e.label + ": analytic " + std::to_string(e.analytic) + ", numeric " + std::to_string(numeric);
    }
  }
  report.pass = report.max_relative_error < options.tolerance;
  return report;
}

// Checkpoint -----------------------------------------------------------------

void SaveCheckpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const MlpConfig& config = checkpoint.params.config;
  config.Validate();
  CheckSize(checkpoint.params.values.size(), config.ParamCount(), "checkpoint parameters");
  io::Writer out;
  out.PutMagic("CFCK");
  out.Put<uint32_t>(1);
  out.Put<uint32_t>(static_cast<uint32_t>(config.depth()));
  out.Put<uint32_t>(static_cast<uint32_t>(config.quadratic_layers));
  for (int w : config.widths) out.Put<uint32_t>(static_cast<uint32_t>(w));
  for (float v : checkpoint.params.values) out.Put<float>(v);
  out.PutMagic("META");
  out.Put<uint64_t>(checkpoint.metadata.iteration);
  out.Put<uint32_t>(checkpoint.metadata.frame_flags);
  out.Put<uint32_t>(checkpoint.metadata.grid_resolution);
  out.Put<uint64_t>(checkpoint.metadata.loss_history.size());
  for (float v : checkpoint.metadata.loss_history) out.Put<float>(v);
  out.Commit(path);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  io::Reader in(path);
  in.ExpectMagic("CFCK");
  in.ExpectVersion(1);
  Checkpoint ck;
  const auto depth = in.Get<uint32_t>();
  const auto k = in.Get<uint32_t>();
  if (depth == 0 || depth > 1024) throw Error(ErrorCode::kParseError, path.string() + ": bad depth");
  ck.params.config.quadratic_layers = static_cast<int>(k);
  for (uint32_t i = 0; i <= depth; ++i) {
    const auto w = in.Get<uint32_t>();
    if (w == 0 || w > (1u << 20)) throw Error(ErrorCode::kParseError, path.string() + ": bad layer width");
    ck.params.config.widths.push_back(static_cast<int>(w));
  }
  try {
    ck.params.config.Validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  const std::size_t count = ck.params.config.ParamCount();
  if (in.remaining() / sizeof(float) < count) throw Error(ErrorCode::kIoError, path.string() + ": truncated checkpoint");
  ck.params.values.resize(count);
  for (float& v : ck.params.values) {
    v = in.Get<float>();
    if (!std::isfinite(v)) throw Error(ErrorCode::kParseError, path.string() + ": non-finite parameter");
  }
  if (in.remaining() > 0) {
    in.ExpectMagic("META");
    ck.metadata.iteration = in.Get<uint64_t>();
    ck.metadata.frame_flags = in.Get<uint32_t>();
    ck.metadata.grid_resolution = in.Get<uint32_t>();
    const auto n = in.Get<uint64_t>();
    if (n > in.remaining() / sizeof(float)) throw Error(ErrorCode::kIoError, path.string() + ": truncated metadata");
    ck.metadata.loss_history.resize(n);
    for (float& v : ck.metadata.loss_history) v = in.Get<float>();
  }
  return ck;
}

}  // namespace cofield
