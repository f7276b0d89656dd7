// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "cofield/corpus.hpp"
#include "cofield/error.hpp"
#include "cofield/extract.hpp"
#include "cofield/rng.hpp"
#include "cofield/trainer.hpp"

namespace cofield {
namespace {

TrainConfig SmallConfig() {
  TrainConfig cfg;
  cfg.model.latent_dim = 4;
  cfg.model.hidden = 16;
  cfg.model.depth = 4;
  cfg.grid = 8;
  cfg.shapes_per_batch = 1;
  cfg.voxels_per_shape = 32;
  cfg.points_per_voxel = 8;
  cfg.lr_mlp = 2e-3;
  cfg.iterations = 2000;
  cfg.halving_period = 1000;
  return cfg;
}

struct PreparedShape {
  std::unique_ptr<MeshSdf> oracle;
  SampleSet samples;
  CoordinateField field;
};

PreparedShape Prepare(const TriangleMesh& mesh, const TrainConfig& cfg, uint64_t seed) {
  PreparedShape s;
  s.oracle = std::make_unique<MeshSdf>(mesh);
  SamplingOptions options;
  options.per_voxel = cfg.samples_per_voxel;
  s.samples = BuildSampleSet(*s.oracle, BuildGrid(mesh, cfg.grid), options, seed);
  s.field = MakeField(s.samples, *s.oracle, cfg.model, seed);
  return s;
}

TEST(Config, ParseFormatRoundTrip) {
  const TrainConfig cfg = ParseTrainConfig(
      "# desk run\n"
      "latent_dim = 16\n"
      "hidden=32   # narrow\n"
      "\n"
      "quadratic_layers = 0\n"
      "frames = identity\n"
      "lr_mlp = 1e-3\n"
      "iterations = 500\n");
  EXPECT_EQ(cfg.model.latent_dim, 16);
  EXPECT_EQ(cfg.model.hidden, 32);
  EXPECT_EQ(cfg.model.quadratic_layers, 0);
  EXPECT_EQ(cfg.model.frames, FrameInit::kIdentity);
  EXPECT_EQ(cfg.lr_mlp, 1e-3);
  EXPECT_EQ(cfg.iterations, 500u);
  EXPECT_EQ(cfg.voxels_per_shape, 3000u);

  const TrainConfig back = ParseTrainConfig(FormatTrainConfig(cfg));
  EXPECT_EQ(FormatTrainConfig(back), FormatTrainConfig(cfg));
}

TEST(Config, DefaultsMatchProtocol) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.shapes_per_batch, 12u);
  EXPECT_EQ(cfg.voxels_per_shape, 3000u);
  EXPECT_EQ(cfg.points_per_voxel, 24u);
  EXPECT_EQ(cfg.lr_mlp, 5e-4);
  EXPECT_EQ(cfg.lr_frames, 1e-3);
  EXPECT_EQ(cfg.lr_latents, 1e-3);
  EXPECT_EQ(cfg.halving_period, 20000u);
  const InferConfig infer;
  EXPECT_EQ(infer.lr, 5e-4);
  EXPECT_EQ(infer.iterations, 800u);
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto expect_parse_error = [](const std::string& text, const std::string& fragment) {
    try {
      ParseTrainConfig(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParseError);
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_parse_error("hidden = 8\nbogus = 1\n", "line 2");
  expect_parse_error("hidden = eight\n", "line 1");
  expect_parse_error("\n\nhidden 8\n", "line 3");
  expect_parse_error("frames = sideways\n", "line 1");
}

TEST(Config, ValidationRejectsZeroCounts) {
  TrainConfig cfg;
  cfg.points_per_voxel = 0;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg = TrainConfig{};
  cfg.lr_mlp = 0;
  EXPECT_THROW(cfg.Validate(), Error);
}

TEST(Train, ZeroIterationsIsIdentity) {
  TrainConfig cfg = SmallConfig();
  cfg.iterations = 0;
  PreparedShape s = Prepare(MakeIcosphere(2, 0.6), cfg, 1);
  const CoordinateField before = s.field;
  const MlpParams init = InitMlp(cfg.model.Mlp(), 3);
  const Checkpoint ck = Train({{&s.samples, &s.field}}, init, cfg);
  EXPECT_EQ(ck.params.values, init.values);
  EXPECT_TRUE(std::equal(before.latents().begin(), before.latents().end(), s.field.latents().begin()));
  EXPECT_TRUE(std::equal(before.frame_params().begin(), before.frame_params().end(), s.field.frame_params().begin()));
}

TEST(Train, PlaneIsLearnedAndDecodesFlat) {
  const TrainConfig cfg = SmallConfig();
  // Wider than the domain so every sample sees the plane, not its rim.
  const TriangleMesh plane = MakePlane(3.0, 24, 0.05);
  PreparedShape s = Prepare(plane, cfg, 2);
  const Checkpoint ck = Train({{&s.samples, &s.field}}, InitMlp(cfg.model.Mlp(), 4), cfg);
  EXPECT_LT(MeanLoss(ck.params, s.field, s.samples), 1e-3);
  ASSERT_EQ(ck.metadata.loss_history.size(), cfg.iterations);
  EXPECT_EQ(ck.metadata.iteration, cfg.iterations);
  EXPECT_EQ(ck.metadata.grid_resolution, 8u);

  const BlendedSdf sdf(ck, s.field);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(rng.Uniform(-0.9, 0.9), rng.Uniform(-0.9, 0.9), 0.05);
    EXPECT_LT(std::abs(sdf(p)), 1e-2);
  }

  // Decoders of face-adjacent valid cells agree on their shared face.
  const VoxelGrid& grid = s.field.grid();
  double worst = 0;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t slot = rng.Below(s.field.size());
    CellCoord c = grid.Coord(s.field.Cell(slot));
    const int axis = static_cast<int>(rng.Below(2));
    if (c[axis] + 1 >= grid.resolution) continue;
    CellCoord d = c;
    d[axis] += 1;
    const auto other = s.field.Slot(grid.Linear(d));
    if (!other) continue;
    const Aabb box = grid.CellBox(c);
    Vec3 p = box.lower + Vec3(rng.Uniform(), rng.Uniform(), rng.Uniform()).cwiseProduct(box.Extent());
    p[axis] = box.upper[axis];
    if (std::abs(p.z() - 0.05) > 0.5 * grid.CellSize().z()) continue;
    const double a = MlpForward<float>(ck.params, WorldToLocal(s.field.Frame(slot), p), s.field.Latent(slot));
    const double b = MlpForward<float>(ck.params, WorldToLocal(s.field.Frame(*other), p), s.field.Latent(*other));
    worst = std::max(worst, std::abs(a - b));
  }
  EXPECT_LT(worst, 0.1 * grid.CellSize().maxCoeff());
}

TEST(Train, DeterministicForEqualSeeds) {
  TrainConfig cfg = SmallConfig();
  cfg.iterations = 200;
  auto run = [&cfg] {
    PreparedShape a = Prepare(MakeBox(Vec3(0.5, 0.4, 0.3)), cfg, 1);
    PreparedShape b = Prepare(MakeTorus(0.6, 0.25, 24, 12), cfg, 2);
    TrainConfig c = cfg;
    c.shapes_per_batch = 2;
    const Checkpoint ck = Train({{&a.samples, &a.field}, {&b.samples, &b.field}}, InitMlp(c.model.Mlp(), 9), c);
    return std::make_pair(ck.params.values, std::vector<float>(b.field.latents().begin(), b.field.latents().end()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, LossWindowsDecreaseOnToyCorpus) {
  TrainConfig cfg = SmallConfig();
  cfg.shapes_per_batch = 5;
  cfg.voxels_per_shape = 16;
  cfg.iterations = 20000;
  cfg.halving_period = 10000;
  std::vector<PreparedShape> shapes;
  std::vector<TrainShape> train;
  const auto corpus = TrainingCorpus(0);
  for (std::size_t i = 0; i < corpus.size(); ++i) shapes.push_back(Prepare(corpus[i].mesh, cfg, i));
  for (auto& s : shapes) train.push_back({&s.samples, &s.field});
  const Checkpoint ck = Train(train, InitMlp(cfg.model.Mlp(), 1), cfg);
  const auto& h = ck.metadata.loss_history;
  std::vector<double> windows;
  for (std::size_t w = 0; w + 1000 <= h.size(); w += 1000) {
    double sum = 0;
    for (std::size_t i = w; i < w + 1000; ++i) sum += h[i];
    windows.push_back(sum / 1000);
  }
  ASSERT_EQ(windows.size(), 20u);
  int non_increasing = 0;
  for (std::size_t i = 1; i < windows.size(); ++i) non_increasing += windows[i] <= windows[i - 1];
  EXPECT_GE(non_increasing, static_cast<int>(std::ceil(0.9 * (windows.size() - 1))));
  EXPECT_LT(windows.back(), 0.5 * windows.front());
}

TEST(Train, PcaFramesStartBelowWorldAxes) {
  TrainConfig pca = SmallConfig();
  TrainConfig axes = pca;
  axes.model.frames = FrameInit::kIdentity;
  const auto corpus = TrainingCorpus(0);
  const MlpParams init = InitMlp(pca.model.Mlp(), 1);
  double loss_pca = 0, loss_axes = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const PreparedShape a = Prepare(corpus[i].mesh, pca, i);
    const PreparedShape b = Prepare(corpus[i].mesh, axes, i);
    loss_pca += MeanLoss(init, a.field, a.samples);
    loss_axes += MeanLoss(init, b.field, b.samples);
  }
  EXPECT_LE(loss_pca, loss_axes);
}

TEST(Infer, FreezesDecoderAndRefits) {
  const TrainConfig cfg = SmallConfig();
  PreparedShape s = Prepare(MakeIcosphere(2, 0.6), cfg, 3);
  const Checkpoint ck = Train({{&s.samples, &s.field}}, InitMlp(cfg.model.Mlp(), 4), cfg);
  const double trained = MeanLoss(ck.params, s.field, s.samples);

  const auto dir = std::filesystem::temp_directory_path();
  SaveCheckpoint(ck, dir / "cofield_test_before.cfck");
  InferConfig infer;
  infer.lr = 5e-3;
  infer.iterations = 400;
  std::vector<double> history;
  const CoordinateField refit = FitShape(ck, s.samples, *s.oracle, infer, &history);
  SaveCheckpoint(ck, dir / "cofield_test_after.cfck");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "cofield_test_before.cfck"), slurp(dir / "cofield_test_after.cfck"));
  std::filesystem::remove(dir / "cofield_test_before.cfck");
  std::filesystem::remove(dir / "cofield_test_after.cfck");

  ASSERT_EQ(history.size(), infer.iterations);
  EXPECT_LE(MeanLoss(ck.params, refit, s.samples), 2.0 * trained);
}

TEST(Infer, ZeroIterationsReturnsInitialField) {
  const TrainConfig cfg = SmallConfig();
  PreparedShape s = Prepare(MakeBox(Vec3(0.5, 0.5, 0.3)), cfg, 3);
  const Checkpoint ck{InitMlp(cfg.model.Mlp(), 1), {}};
  InferConfig infer;
  infer.iterations = 0;
  infer.seed = 11;
  const CoordinateField fitted = FitShape(ck, s.samples, *s.oracle, infer);
  const CoordinateField fresh = MakeField(s.samples, *s.oracle, cfg.model, 11);
  EXPECT_TRUE(std::equal(fitted.frame_params().begin(), fitted.frame_params().end(), fresh.frame_params().begin()));
  EXPECT_TRUE(std::equal(fitted.latents().begin(), fitted.latents().end(), fresh.latents().begin()));
}

TEST(Infer, LatentMismatchRaises) {
  const TrainConfig cfg = SmallConfig();
  PreparedShape s = Prepare(MakeIcosphere(1, 0.5), cfg, 3);
  const Checkpoint ck{InitMlp(MlpConfig::Make(7, 16, 4, 1), 1), {}};
  try {
    InferFit(ck, s.samples, s.field, InferConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigMismatch);
  }
}

}  // namespace
}  // namespace cofield
