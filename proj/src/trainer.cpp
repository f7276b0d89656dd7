// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cofield/error.hpp"
#include "cofield/rng.hpp"

namespace cofield {
namespace {

constexpr Eigen::Index kChunk = 4096;

struct Pick {
  uint32_t slot;
  uint32_t sample;
};

struct ShapeGradients {
  std::vector<double> latent;
  std::vector<Mat3> outer;
  std::vector<Vec3> sum;
  std::vector<double> frames;

  void Reset(const CoordinateField& field) {
    latent.assign(field.latents().size(), 0.0);
    outer.assign(field.size(), Mat3::Zero());
    sum.assign(field.size(), Vec3::Zero());
    frames.assign(field.size() * CoordinateField::kFrameStride, 0.0);
  }

  void FinishFrames(const CoordinateField& field) {
    for (std::size_t s = 0; s < field.size(); ++s) {
      if (sum[s].isZero(0.0) && outer[s].isZero(0.0)) continue;
      const FrameGradient g = BackpropFrame(field.Frame(s), outer[s], sum[s]);
      double* f = frames.data() + s * CoordinateField::kFrameStride;
      for (int i = 0; i < 4; ++i) f[i] = g.rotation[i];
      for (int i = 0; i < 3; ++i) f[4 + i] = g.origin[i];
    }
  }
};

// Loss sum over `picks`; with `grads` set, also accumulates the decoder
// gradient (unless `mlp_grad` is empty) and the latent/frame gradients.
double Accumulate(MlpEvaluator<float>& eval, const MlpParams& params, const CoordinateField& field,
                  const SampleSet& set, const std::vector<Pick>& picks, std::span<double> mlp_grad,
                  ShapeGradients* grads) {
  using Matrix = MlpEvaluator<float>::Matrix;
  const int latent_dim = field.latent_dim();
  const auto& samples = set.samples();
  std::vector<Mat3> rotations(field.size());
  std::vector<char> have_rotation(field.size(), 0);
  double loss = 0.0;
  Matrix x, d_out;
  for (std::size_t begin = 0; begin < picks.size(); begin += kChunk) {
    const auto n = static_cast<Eigen::Index>(std::min<std::size_t>(kChunk, picks.size() - begin));
    x.resize(params.config.input_dim(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Pick& pick = picks[begin + c];
      if (!have_rotation[pick.slot]) {
        rotations[pick.slot] = QuaternionToRotation(field.Frame(pick.slot).rotation);
        have_rotation[pick.slot] = 1;
      }
      const Vec3 d = samples[pick.sample].position.cast<double>() - field.Frame(pick.slot).origin;
      x.col(c).head<3>() = (rotations[pick.slot].transpose() * d).cast<float>();
      const auto z = field.Latent(pick.slot);
      for (int i = 0; i < latent_dim; ++i) x(3 + i, c) = z[i];
    }
    const Matrix& out = eval.Forward(params, x);
    d_out.resize(1, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const double r = static_cast<double>(out(0, c)) - samples[picks[begin + c].sample].sdf;
      loss += std::abs(r);
      d_out(0, c) = r > 0.0 ? 1.0f : (r < 0.0 ? -1.0f : 0.0f);
    }
    if (!grads) continue;
    const Matrix& d_x = eval.Backward(params, d_out, mlp_grad);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Pick& pick = picks[begin + c];
      double* gz = grads->latent.data() + static_cast<std::size_t>(pick.slot) * latent_dim;
      for (int i = 0; i < latent_dim; ++i) gz[i] += d_x(3 + i, c);
      const Vec3 g(d_x(0, c), d_x(1, c), d_x(2, c));
      const Vec3 d = samples[pick.sample].position.cast<double>() - field.Frame(pick.slot).origin;
      grads->outer[pick.slot] += d * g.transpose();
      grads->sum[pick.slot] += g;
    }
  }
  return loss;
}

// Sample-group range of every field slot; ConfigMismatch unless the field's
// valid cells are exactly the sampled voxels.
std::vector<std::pair<uint32_t, uint32_t>> SlotRanges(const CoordinateField& field, const SampleSet& set) {
  if (set.resolution() != field.grid().resolution) {
    throw Error(ErrorCode::kConfigMismatch, "sample set and field use different grid resolutions");
  }
  if (set.groups().size() != field.size()) {
    throw Error(ErrorCode::kConfigMismatch, "field cells do not match the sampled voxels");
  }
  std::vector<std::pair<uint32_t, uint32_t>> ranges(field.size());
  for (std::size_t g = 0; g < set.groups().size(); ++g) {
    const auto& group = set.groups()[g];
    if (field.Cell(g) != group.voxel) {
      throw Error(ErrorCode::kConfigMismatch, "field cells do not match the sampled voxels");
    }
    ranges[g] = {static_cast<uint32_t>(group.begin), static_cast<uint32_t>(group.end)};
  }
  return ranges;
}

void CheckFinite(double loss, uint64_t iteration, const std::string& where) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::kNonFiniteLoss,
                "loss became " + std::to_string(loss) + " at iteration " + std::to_string(iteration) + " (" + where + ")");
  }
}

bool ParseBool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::kParseError, "expected a boolean, got '" + v + "'");
}

template <typename T>
T ParseNumber(const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof() || v.empty() || (std::is_unsigned_v<T> && v[0] == '-')) {
    throw Error(ErrorCode::kParseError, "malformed number '" + v + "'");
  }
  return out;
}

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void TrainConfig::Validate() const {
  model.Mlp();
  if (model.latent_dim < 0) throw Error(ErrorCode::kInvalidArgument, "latent_dim must be >= 0");
  if (grid < 2 || samples_per_voxel == 0 || shapes_per_batch == 0 || voxels_per_shape == 0 ||
      points_per_voxel == 0 || halving_period == 0 || log_every == 0) {
    throw Error(ErrorCode::kInvalidArgument, "training counts must be >= 1 (grid >= 2)");
  }
  if (!(lr_mlp > 0.0) || !(lr_frames > 0.0) || !(lr_latents > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rates must be > 0");
  }
}

const char* FrameInitName(FrameInit init) { return init == FrameInit::kPca ? "pca" : "identity"; }

void SetTrainConfigValue(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "latent_dim") c.model.latent_dim = ParseNumber<int>(value);
  else if (key == "hidden") c.model.hidden = ParseNumber<int>(value);
  else if (key == "depth") c.model.depth = ParseNumber<int>(value);
  else if (key == "quadratic_layers") c.model.quadratic_layers = ParseNumber<int>(value);
  else if (key == "frames") {
    if (value == "pca") c.model.frames = FrameInit::kPca;
    else if (value == "identity") c.model.frames = FrameInit::kIdentity;
    else throw Error(ErrorCode::kParseError, "frames must be pca or identity, got '" + value + "'");
  } else if (key == "optimize_frames") c.model.optimize_frames = ParseBool(value);
  else if (key == "grid") c.grid = ParseNumber<int>(value);
  else if (key == "samples_per_voxel") c.samples_per_voxel = ParseNumber<std::size_t>(value);
  else if (key == "shapes_per_batch") c.shapes_per_batch = ParseNumber<std::size_t>(value);
  else if (key == "voxels_per_shape") c.voxels_per_shape = ParseNumber<std::size_t>(value);
  else if (key == "points_per_voxel") c.points_per_voxel = ParseNumber<std::size_t>(value);
  else if (key == "lr_mlp") c.lr_mlp = ParseNumber<double>(value);
  else if (key == "lr_frames") c.lr_frames = ParseNumber<double>(value);
  else if (key == "lr_latents") c.lr_latents = ParseNumber<double>(value);
  else if (key == "iterations") c.iterations = ParseNumber<uint64_t>(value);
  else if (key == "halving_period") c.halving_period = ParseNumber<uint64_t>(value);
  else if (key == "seed") c.seed = ParseNumber<uint64_t>(value);
  else if (key == "log_every") c.log_every = ParseNumber<uint64_t>(value);
  else throw Error(ErrorCode::kParseError, "unknown key '" + key + "'");
}

TrainConfig ParseTrainConfig(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    line = Trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": expected key = value");
    }
    try {
      SetTrainConfigValue(base, Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": " +
                                              std::string(e.what()).substr(std::string("ParseError: ").size()));
    }
  }
  return base;
}

TrainConfig LoadTrainConfig(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return ParseTrainConfig(buffer.str(), std::move(base));
  } catch (const Error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + (e.what() + std::string("ParseError: ").size()));
  }
}

std::string FormatTrainConfig(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "latent_dim = " << c.model.latent_dim << "\n"
      << "hidden = " << c.model.hidden << "\n"
      << "depth = " << c.model.depth << "\n"
      << "quadratic_layers = " << c.model.quadratic_layers << "\n"
      << "frames = " << FrameInitName(c.model.frames) << "\n"
      << "optimize_frames = " << (c.model.optimize_frames ? "true" : "false") << "\n"
      << "grid = " << c.grid << "\n"
      << "samples_per_voxel = " << c.samples_per_voxel << "\n"
      << "shapes_per_batch = " << c.shapes_per_batch << "\n"
      << "voxels_per_shape = " << c.voxels_per_shape << "\n"
      << "points_per_voxel = " << c.points_per_voxel << "\n"
      << "lr_mlp = " << c.lr_mlp << "\n"
      << "lr_frames = " << c.lr_frames << "\n"
      << "lr_latents = " << c.lr_latents << "\n"
      << "iterations = " << c.iterations << "\n"
      << "halving_period = " << c.halving_period << "\n"
      << "seed = " << c.seed << "\n"
      << "log_every = " << c.log_every << "\n";
  return out.str();
}

CoordinateField MakeField(const SampleSet& samples, const ScalarField& oracle, const ModelConfig& model,
                          uint64_t seed, std::vector<uint32_t>* degenerate) {
  CoordinateField field(samples.Grid(), model.latent_dim);
  if (model.frames == FrameInit::kPca) {
    auto flagged = InitFrames(field, samples, oracle, seed);
    if (degenerate) *degenerate = std::move(flagged);
  } else {
    InitIdentityFrames(field, seed);
    if (degenerate) degenerate->clear();
  }
  return field;
}

Checkpoint Train(const std::vector<TrainShape>& shapes, const MlpParams& init, const TrainConfig& config,
                 const ProgressFn& progress) {
  config.Validate();
  if (shapes.empty()) throw Error(ErrorCode::kEmptySet, "no training shapes");
  if (!(init.config == config.model.Mlp())) {
    throw Error(ErrorCode::kConfigMismatch, "initial decoder does not match the model configuration");
  }
  std::vector<std::vector<std::pair<uint32_t, uint32_t>>> ranges;
  for (const TrainShape& shape : shapes) {
    if (shape.field->latent_dim() != config.model.latent_dim) {
      throw Error(ErrorCode::kConfigMismatch, "field latent length differs from the model");
    }
    if (shape.samples->resolution() != shapes.front().samples->resolution()) {
      throw Error(ErrorCode::kConfigMismatch, "sample sets use different grid resolutions");
    }
    if (shape.field->size() == 0) throw Error(ErrorCode::kEmptySet, "shape without valid cells");
    ranges.push_back(SlotRanges(*shape.field, *shape.samples));
  }

  Checkpoint result;
  result.params = init;
  result.metadata.frame_flags = (config.model.frames == FrameInit::kIdentity ? TrainingMetadata::kWorldAxisFrames : 0) |
                                (config.model.optimize_frames ? 0 : TrainingMetadata::kFrozenFrames);
  result.metadata.grid_resolution = static_cast<uint32_t>(shapes.front().samples->resolution());
  MlpParams& params = result.params;
  AdamState mlp_adam(params.values.size());
  std::vector<AdamState> latent_adam, frame_adam;
  std::vector<ShapeGradients> grads(shapes.size());
  for (const TrainShape& shape : shapes) {
    latent_adam.emplace_back(shape.field->latents().size());
    frame_adam.emplace_back(shape.field->frame_params().size());
  }

  Rng rng(config.seed, 0x7a1);
  MlpEvaluator<float> eval;
  std::vector<double> mlp_grad(params.values.size());
  std::vector<std::size_t> order(shapes.size());
  std::vector<uint32_t> pool;
  std::vector<Pick> picks;
  const std::size_t batch_shapes = std::min(config.shapes_per_batch, shapes.size());

  for (uint64_t it = 0; it < config.iterations; ++it) {
    const double scale = std::ldexp(1.0, -static_cast<int>(std::min<uint64_t>(it / config.halving_period, 1000)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch_shapes; ++i) {
      std::swap(order[i], order[i + rng.Below(order.size() - i)]);
    }
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(batch_shapes));
    std::sort(chosen.begin(), chosen.end());

    std::fill(mlp_grad.begin(), mlp_grad.end(), 0.0);
    double loss = 0.0;
    std::size_t count = 0;
    for (std::size_t s : chosen) {
      const CoordinateField& field = *shapes[s].field;
      picks.clear();
      for (std::size_t v = 0; v < config.voxels_per_shape; ++v) {
        const auto slot = static_cast<uint32_t>(rng.Below(field.size()));
        const auto [begin, end] = ranges[s][slot];
        pool.resize(end - begin);
        std::iota(pool.begin(), pool.end(), begin);
        const std::size_t take = std::min<std::size_t>(config.points_per_voxel, pool.size());
        for (std::size_t i = 0; i < take; ++i) {
          std::swap(pool[i], pool[i + rng.Below(pool.size() - i)]);
          picks.push_back({slot, pool[i]});
        }
      }
      grads[s].Reset(field);
      loss += Accumulate(eval, params, field, *shapes[s].samples, picks, mlp_grad, &grads[s]);
      count += picks.size();
      CheckFinite(loss, it, "shape " + std::to_string(s));
    }

    mlp_adam.Step(std::span<float>(params.values), mlp_grad, config.lr_mlp * scale);
    for (std::size_t s : chosen) {
      CoordinateField& field = *shapes[s].field;
      latent_adam[s].Step(field.latents(), grads[s].latent, config.lr_latents * scale);
      if (config.model.optimize_frames) {
        grads[s].FinishFrames(field);
        frame_adam[s].Step(field.frame_params(), grads[s].frames, config.lr_frames * scale);
        field.NormalizeFrames();
      }
    }
    for (float v : params.values) {
      if (!std::isfinite(v)) CheckFinite(v, it, "decoder parameters");
    }

    const double mean = loss / static_cast<double>(count);
    result.metadata.loss_history.push_back(static_cast<float>(mean));
    if (progress && (it % config.log_every == 0 || it + 1 == config.iterations)) progress(it, mean);
  }
  result.metadata.iteration = config.iterations;
  return result;
}

FrameInit CheckpointFrameInit(const Checkpoint& checkpoint) {
  return (checkpoint.metadata.frame_flags & TrainingMetadata::kWorldAxisFrames) ? FrameInit::kIdentity
                                                                                 : FrameInit::kPca;
}

std::vector<double> InferFit(const Checkpoint& checkpoint, const SampleSet& samples, CoordinateField& field,
                             const InferConfig& config) {
  if (!(config.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
  if (field.latent_dim() != checkpoint.params.config.latent_dim()) {
    throw Error(ErrorCode::kConfigMismatch, "field latent length differs from the decoder input");
  }
  const auto ranges = SlotRanges(field, samples);
  const bool frames = !(checkpoint.metadata.frame_flags & TrainingMetadata::kFrozenFrames);
  std::vector<Pick> picks;
  for (uint32_t s = 0; s < ranges.size(); ++s) {
    for (uint32_t i = ranges[s].first; i < ranges[s].second; ++i) picks.push_back({s, i});
  }
  AdamState latent_adam(field.latents().size());
  AdamState frame_adam(field.frame_params().size());
  MlpEvaluator<float> eval;
  ShapeGradients grads;
  std::vector<double> history;
  for (uint64_t it = 0; it < config.iterations; ++it) {
    grads.Reset(field);
    const double loss = Accumulate(eval, checkpoint.params, field, samples, picks, {}, &grads);
    CheckFinite(loss, it, "inference fit");
    history.push_back(loss / static_cast<double>(picks.size()));
    latent_adam.Step(field.latents(), grads.latent, config.lr);
    if (frames) {
      grads.FinishFrames(field);
      frame_adam.Step(field.frame_params(), grads.frames, config.lr);
      field.NormalizeFrames();
    }
  }
  return history;
}

CoordinateField FitShape(const Checkpoint& checkpoint, const SampleSet& samples, const ScalarField& oracle,
                         const InferConfig& config, std::vector<double>* history) {
  ModelConfig model;
  model.latent_dim = checkpoint.params.config.latent_dim();
  model.frames = CheckpointFrameInit(checkpoint);
  CoordinateField field = MakeField(samples, oracle, model, config.seed);
  auto h = InferFit(checkpoint, samples, field, config);
  if (history) *history = std::move(h);
  return field;
}

double MeanLoss(const MlpParams& params, const CoordinateField& field, const SampleSet& samples) {
  const auto ranges = SlotRanges(field, samples);
  std::vector<Pick> picks;
  for (uint32_t s = 0; s < ranges.size(); ++s) {
    for (uint32_t i = ranges[s].first; i < ranges[s].second; ++i) picks.push_back({s, i});
  }
  if (picks.empty()) throw Error(ErrorCode::kEmptySet, "no samples");
  MlpEvaluator<float> eval;
  return Accumulate(eval, params, field, samples, picks, {}, nullptr) / static_cast<double>(picks.size());
}

}  // namespace cofield
