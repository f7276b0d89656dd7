// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Auto-decoder training over several shapes and the frozen-decoder fit of a
// new shape. The objective is the plain sum of per-sample L1 errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cofield/field.hpp"
#include "cofield/mlp.hpp"
#include "cofield/sampling.hpp"

namespace cofield {

enum class FrameInit { kPca, kIdentity };

struct ModelConfig {
  int latent_dim = 125;
  int hidden = 128;
  int depth = 5;
  int quadratic_layers = 1;
  FrameInit frames = FrameInit::kPca;
  bool optimize_frames = true;

  MlpConfig Mlp() const { return MlpConfig::Make(latent_dim, hidden, depth, quadratic_layers); }
};

struct TrainConfig {
  ModelConfig model;
  int grid = 32;
  std::size_t samples_per_voxel = 24;  // sampling pool per voxel
  std::size_t shapes_per_batch = 12;
  std::size_t voxels_per_shape = 3000;  // drawn with replacement
  std::size_t points_per_voxel = 24;    // drawn without replacement from the pool
  double lr_mlp = 5e-4;
  double lr_frames = 1e-3;
  double lr_latents = 1e-3;
  uint64_t iterations = 20000;
  uint64_t halving_period = 20000;
  uint64_t seed = 0;
  uint64_t log_every = 100;

  /// Throws InvalidArgument when a count is zero or a rate is not positive.
  void Validate() const;
};

struct InferConfig {
  double lr = 5e-4;
  uint64_t iterations = 800;
  uint64_t seed = 0;
};

/// `key = value` lines with `#` comments. Unknown keys and malformed values
/// raise ParseError with the line number.
TrainConfig ParseTrainConfig(const std::string& text, TrainConfig base = {});
TrainConfig LoadTrainConfig(const std::filesystem::path& path, TrainConfig base = {});
/// Resolved configuration in the same `key = value` format.
std::string FormatTrainConfig(const TrainConfig& config);
void SetTrainConfigValue(TrainConfig& config, const std::string& key, const std::string& value);
const char* FrameInitName(FrameInit init);

struct TrainShape {
  const SampleSet* samples = nullptr;
  CoordinateField* field = nullptr;
};

using ProgressFn = std::function<void(uint64_t iteration, double mean_loss)>;

/// Initial field for one shape: PCA frames from `oracle` or world-axis
/// frames, plus N(0, 0.01^2) latents.
CoordinateField MakeField(const SampleSet& samples, const ScalarField& oracle, const ModelConfig& model,
                          uint64_t seed, std::vector<uint32_t>* degenerate = nullptr);

/// Jointly optimizes the decoder (starting from `init`), the latents and,
/// when enabled, the frames. Fields are updated in place. The loss history
/// holds the mean per-sample L1 of every iteration.
Checkpoint Train(const std::vector<TrainShape>& shapes, const MlpParams& init, const TrainConfig& config,
                 const ProgressFn& progress = {});

/// Frame initialization recorded in a checkpoint by Train.
FrameInit CheckpointFrameInit(const Checkpoint& checkpoint);

/// Optimizes latents and (unless the checkpoint marks them frozen) frames of
/// `field` against `samples` with the decoder fixed, using every sample at
/// every step. Returns the per-iteration mean L1 before each step.
std::vector<double> InferFit(const Checkpoint& checkpoint, const SampleSet& samples, CoordinateField& field,
                             const InferConfig& config);

/// Fresh field for `samples` (frames per the checkpoint, new latents) fitted
/// with InferFit.
CoordinateField FitShape(const Checkpoint& checkpoint, const SampleSet& samples, const ScalarField& oracle,
                         const InferConfig& config, std::vector<double>* history = nullptr);

/// Mean per-sample L1 of the current state.
double MeanLoss(const MlpParams& params, const CoordinateField& field, const SampleSet& samples);

}  // namespace cofield
