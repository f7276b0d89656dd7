// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cofield/corpus.hpp"
#include "cofield/error.hpp"
#include "cofield/extract.hpp"
#include "cofield/grid.hpp"
#include "cofield/lab.hpp"
#include "cofield/mesh.hpp"
#include "cofield/mesh_sdf.hpp"
#include "cofield/rng.hpp"
#include "cofield/sampling.hpp"
#include "cofield/trainer.hpp"

namespace cofield::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Collects the resolved configuration and the result of one command and
// prints both, as `key = value` lines or as one JSON document.
class Report {
 public:
  explicit Report(std::string command) { config_["command"] = std::move(command); }

  template <typename T>
  void Config(const std::string& key, const T& value) {
    config_[key] = value;
  }
  template <typename T>
  void Result(const std::string& key, const T& value) {
    result_[key] = value;
  }
  void Print(bool as_json) const {
    if (as_json) {
      std::cout << json{{"config", config_}, {"result", result_}}.dump() << "\n";
      return;
    }
    for (const auto& [k, v] : config_.items()) std::cout << "# " << k << " = " << Text(v) << "\n";
    for (const auto& [k, v] : result_.items()) std::cout << k << " = " << Text(v) << "\n";
  }

 private:
  static std::string Text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
      std::string out;
      for (const auto& e : v) out += (out.empty() ? "" : " ") + Text(e);
      return out;
    }
    return v.dump();
  }

  json config_ = json::object();
  json result_ = json::object();
};

bool IsSampleFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in && std::string(magic, 4) == "CFSM";
}

std::vector<fs::path> ExpandSampleInputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const std::string& input : inputs) {
    if (fs::is_directory(input)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.is_regular_file() && IsSampleFile(entry.path())) found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      if (found.empty()) throw Error(ErrorCode::kEmptySet, "no sample files in " + input);
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(input);
    }
  }
  return files;
}

std::vector<double> ParseList(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError("list", "malformed number '" + item + "' in '" + text + "'");
    }
  }
  return out;
}

struct LawOptions {
  double k0 = 1.0;
  std::string law = "uniform";
  double x_lo = -1.0, x_hi = 1.0;
  std::string nodes, weights;
  double y0 = 0.0, y1 = 0.02;

  void Add(CLI::App* app) {
    app->add_option("--k0", k0, "ground-truth curve coefficient")->capture_default_str();
    app->add_option("--law", law, "x law: uniform, two-point or grid")
        ->check(CLI::IsMember({"uniform", "two-point", "grid"}))
        ->capture_default_str();
    app->add_option("--x-lo", x_lo, "uniform law lower end")->capture_default_str();
    app->add_option("--x-hi", x_hi, "uniform law upper end")->capture_default_str();
    app->add_option("--nodes", nodes, "grid law atoms, comma separated");
    app->add_option("--weights", weights, "grid law weights, comma separated");
    app->add_option("--y0", y0, "y law lower end")->capture_default_str();
    app->add_option("--y1", y1, "y law upper end")->capture_default_str();
  }
  SampleLaw Make() const {
    if (law == "uniform") return SampleLaw::Uniform(k0, x_lo, x_hi, y0, y1);
    if (law == "two-point") return SampleLaw::TwoPoint(k0, y0, y1);
    return SampleLaw::Grid(k0, ParseList(nodes), ParseList(weights), y0, y1);
  }
  void Echo(Report& report, const SampleLaw& made) const { report.Config("law", made.Describe()); }
};

}  // namespace

int Run(int argc, char** argv) {
  CLI::App app{"Local neural signed distance fields with per-cell coordinate frames"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable output");
  std::function<void()> action;

  // normalize ---------------------------------------------------------------
  std::string in_path, out_path;
  auto* normalize = app.add_subcommand("normalize", "center a mesh and scale it to max extent 1.9");
  normalize->add_option("in_mesh", in_path)->required();
  normalize->add_option("out_mesh", out_path)->required();
  normalize->callback([&] {
    action = [&] {
      Report report("normalize");
      report.Config("in_mesh", in_path);
      report.Config("out_mesh", out_path);
      const LoadedMesh loaded = LoadMesh(in_path);
      const NormalizedMesh n = NormalizeMesh(loaded.mesh);
      SaveMesh(n.mesh, out_path);
      report.Result("vertices", n.mesh.vertices.size());
      report.Result("triangles", n.mesh.triangles.size());
      report.Result("skipped_lines", loaded.skipped_lines);
      report.Result("scale", n.scale);
      report.Result("offset", std::vector<double>{n.offset.x(), n.offset.y(), n.offset.z()});
      report.Print(as_json);
    };
  });

  // sample --------------------------------------------------------------------
  int grid_res = 32;
  std::size_t per_voxel = 24;
  uint64_t seed = 0;
  auto* sample = app.add_subcommand("sample", "build the per-cell SDF sample set of a normalized mesh");
  sample->add_option("in_mesh", in_path)->required();
  sample->add_option("out_samples", out_path)->required();
  sample->add_option("--grid", grid_res, "cells per axis")->capture_default_str()->check(CLI::Range(2, 1024));
  sample->add_option("--per-voxel", per_voxel, "samples per valid cell")->capture_default_str()->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed)->capture_default_str();
  sample->callback([&] {
    action = [&] {
      Report report("sample");
      SamplingOptions options;
      options.per_voxel = per_voxel;
      report.Config("in_mesh", in_path);
      report.Config("out_samples", out_path);
      report.Config("grid", grid_res);
      report.Config("per_voxel", per_voxel);
      report.Config("radius_factor", options.radius_factor);
      report.Config("near_fraction", options.near_fraction);
      report.Config("sigma_cells", options.sigma_cells);
      report.Config("seed", seed);
      const TriangleMesh mesh = LoadMesh(in_path).mesh;
      const MeshSdf oracle(mesh);
      const VoxelGrid grid = BuildGrid(mesh, grid_res);
      const SampleSet set = BuildSampleSet(oracle, grid, options, seed);
      SaveSampleSet(set, out_path);
      report.Result("valid_cells", grid.valid.size());
      report.Result("samples", set.samples().size());
      report.Result("watertight", oracle.watertight());
      report.Print(as_json);
    };
  });

  // train ---------------------------------------------------------------------
  std::vector<std::string> train_paths;
  std::string config_path;
  std::optional<uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "train the shared decoder on sample sets (last path: output checkpoint)");
  train->add_option("paths", train_paths, "sample files or directories, then the output checkpoint")
      ->required()
      ->expected(2, -1);
  train->add_option("--config", config_path, "key = value training configuration");
  train->add_option("--seed", train_seed);
  train->callback([&] {
    action = [&] {
      Report report("train");
      TrainConfig config;
      if (!config_path.empty()) config = LoadTrainConfig(config_path);
      if (train_seed) config.seed = *train_seed;
      config.Validate();
      const std::string output = train_paths.back();
      const auto files = ExpandSampleInputs({train_paths.begin(), train_paths.end() - 1});
      std::istringstream resolved(FormatTrainConfig(config));
      for (std::string line; std::getline(resolved, line);) {
        const auto eq = line.find(" = ");
        report.Config(line.substr(0, eq), line.substr(eq + 3));
      }
      report.Config("output", output);
      std::vector<std::string> names;
      for (const auto& f : files) names.push_back(f.string());
      report.Config("inputs", names);

      std::vector<SampleSet> sets;
      std::vector<CoordinateField> fields;
      sets.reserve(files.size());
      fields.reserve(files.size());
      for (std::size_t i = 0; i < files.size(); ++i) {
        sets.push_back(LoadSampleSet(files[i]));
        const SampleSdf oracle(sets.back());
        fields.push_back(MakeField(sets.back(), oracle, config.model, MixSeed(config.seed, i + 1)));
      }
      std::vector<TrainShape> shapes;
      for (std::size_t i = 0; i < sets.size(); ++i) shapes.push_back({&sets[i], &fields[i]});
      const Checkpoint ck = Train(shapes, InitMlp(config.model.Mlp(), config.seed), config,
                                  [](uint64_t it, double loss) {
                                    std::fprintf(stderr, "iteration = %llu loss = %.6g\n",
                                                 static_cast<unsigned long long>(it), loss);
                                  });
      SaveCheckpoint(ck, output);
      report.Result("shapes", sets.size());
      report.Result("parameters", ck.params.values.size());
      report.Result("final_loss", ck.metadata.loss_history.empty() ? 0.0 : ck.metadata.loss_history.back());
      report.Print(as_json);
    };
  });

  // fit -----------------------------------------------------------------------
  std::string checkpoint_path, input_path, field_path;
  InferConfig infer;
  auto* fit = app.add_subcommand("fit", "fit latents and frames of a new shape with the decoder frozen");
  fit->add_option("checkpoint", checkpoint_path)->required();
  fit->add_option("input", input_path, "normalized mesh or sample file")->required();
  fit->add_option("out_field", field_path)->required();
  fit->add_option("--iters", infer.iterations)->capture_default_str();
  fit->add_option("--lr", infer.lr)->capture_default_str()->check(CLI::PositiveNumber);
  fit->add_option("--seed", infer.seed)->capture_default_str();
  fit->callback([&] {
    action = [&] {
      Report report("fit");
      const Checkpoint ck = LoadCheckpoint(checkpoint_path);
      report.Config("checkpoint", checkpoint_path);
      report.Config("input", input_path);
      report.Config("out_field", field_path);
      report.Config("iters", infer.iterations);
      report.Config("lr", infer.lr);
      report.Config("seed", infer.seed);
      report.Config("frames", FrameInitName(CheckpointFrameInit(ck)));
      std::vector<double> history;
      CoordinateField field;
      if (IsSampleFile(input_path)) {
        const SampleSet set = LoadSampleSet(input_path);
        const SampleSdf oracle(set);
        field = FitShape(ck, set, oracle, infer, &history);
      } else {
        const TriangleMesh mesh = LoadMesh(input_path).mesh;
        const MeshSdf oracle(mesh);
        const int resolution = ck.metadata.grid_resolution ? static_cast<int>(ck.metadata.grid_resolution) : 32;
        report.Config("grid", resolution);
        const SampleSet set = BuildSampleSet(oracle, BuildGrid(mesh, resolution), SamplingOptions{}, infer.seed);
        field = FitShape(ck, set, oracle, infer, &history);
      }
      SaveField(field, field_path);
      report.Result("cells", field.size());
      if (!history.empty()) {
        report.Result("initial_loss", history.front());
        report.Result("final_loss", history.back());
      }
      report.Print(as_json);
    };
  });

  // extract -------------------------------------------------------------------
  int resolution = 128;
  auto* extract = app.add_subcommand("extract", "extract the zero level set of a fitted field");
  extract->add_option("checkpoint", checkpoint_path)->required();
  extract->add_option("field", field_path)->required();
  extract->add_option("out_mesh", out_path)->required();
  extract->add_option("--res", resolution, "marching-cubes cells per axis")->capture_default_str()->check(CLI::Range(8, 2048));
  extract->callback([&] {
    action = [&] {
      Report report("extract");
      report.Config("checkpoint", checkpoint_path);
      report.Config("field", field_path);
      report.Config("out_mesh", out_path);
      report.Config("res", resolution);
      const Checkpoint ck = LoadCheckpoint(checkpoint_path);
      const CoordinateField field = LoadField(field_path);
      const TriangleMesh mesh = ExtractMesh(ck, field, resolution);
      SaveMesh(mesh, out_path);
      report.Result("vertices", mesh.vertices.size());
      report.Result("triangles", mesh.triangles.size());
      report.Print(as_json);
    };
  });

  // eval ----------------------------------------------------------------------
  std::string gt_path;
  std::size_t points = 30000;
  uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "chamfer-L2 between an extracted mesh and a reference mesh");
  eval->add_option("extracted_mesh", in_path)->required();
  eval->add_option("gt_mesh", gt_path)->required();
  eval->add_option("--points", points)->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed)->capture_default_str();
  eval->callback([&] {
    action = [&] {
      Report report("eval");
      report.Config("extracted_mesh", in_path);
      report.Config("gt_mesh", gt_path);
      report.Config("points", points);
      report.Config("seed", eval_seed);
      const EvalReport r = EvaluateMeshes(LoadMesh(in_path).mesh, LoadMesh(gt_path).mesh, points, eval_seed);
      report.Result("chamfer", r.chamfer);
      report.Result("chamfer_e4", r.chamfer_e4());
      report.Result("points", r.points);
      report.Result("vertices", r.vertices);
      report.Result("triangles", r.triangles);
      report.Print(as_json);
    };
  });

  // corpus --------------------------------------------------------------------
  auto* corpus = app.add_subcommand("corpus", "write the procedural toy shapes");
  corpus->add_option("out_dir", out_path)->required();
  corpus->add_option("--seed", seed)->capture_default_str();
  corpus->callback([&] {
    action = [&] {
      Report report("corpus");
      report.Config("out_dir", out_path);
      report.Config("seed", seed);
      const fs::path root(out_path);
      fs::create_directories(root / "train");
      fs::create_directories(root / "heldout");
      std::vector<std::string> written;
      for (const ToyShape& s : TrainingCorpus(seed)) {
        SaveMesh(s.mesh, root / "train" / (s.name + ".obj"));
        written.push_back("train/" + s.name + ".obj");
      }
      for (const ToyShape& s : HeldOutCorpus(seed)) {
        SaveMesh(s.mesh, root / "heldout" / (s.name + ".obj"));
        written.push_back("heldout/" + s.name + ".obj");
      }
      SaveMesh(SphereShape().mesh, root / "sphere.obj");
      written.push_back("sphere.obj");
      report.Result("meshes", written);
      report.Print(as_json);
    };
  });

  // lab -----------------------------------------------------------------------
  auto* lab = app.add_subcommand("lab", "numerical experiments on quadratic patches");
  lab->require_subcommand(1);

  std::string family = "quadratic", radii_text = "0.2,0.1,0.05,0.025";
  std::size_t trials = 1000;
  auto* sweep = lab->add_subcommand("sweep", "approximation error versus distance");
  sweep->add_option("--family", family)
      ->check(CLI::IsMember({"quadratic", "plane", "sharp-edge", "crease"}))
      ->capture_default_str();
  sweep->add_option("--radii", radii_text, "decreasing, comma separated")->capture_default_str();
  sweep->add_option("--trials", trials)->capture_default_str()->check(CLI::PositiveNumber);
  sweep->add_option("--seed", seed)->capture_default_str();
  sweep->callback([&] {
    action = [&] {
      Report report("lab sweep");
      const auto radii = ParseList(radii_text);
      report.Config("family", family);
      report.Config("radii", radii);
      report.Config("trials", trials);
      report.Config("seed", seed);
      const SweepReport r = ApproxErrorSweep(ParsePatchFamily(family), radii, trials, seed);
      report.Result("max_errors", r.max_errors);
      if (r.exact) {
        report.Result("slope", "exact");
      } else {
        report.Result("slope", r.slope);
      }
      report.Result("non_converged", r.non_converged);
      report.Print(as_json);
    };
  });

  LawOptions law_options;
  std::string point_text;
  auto* landscape = lab->add_subcommand("landscape", "value, gradient and Hessian of the 2-d fitting landscape");
  law_options.Add(landscape);
  landscape->add_option("--point", point_text, "k,tx,ty,theta (default: the spurious critical point)");
  landscape->callback([&] {
    action = [&] {
      Report report("lab landscape");
      const SampleLaw law = law_options.Make();
      law_options.Echo(report, law);
      LandscapePoint pt = CriticalCandidate(law);
      if (!point_text.empty()) {
        const auto v = ParseList(point_text);
        if (v.size() != 4) throw CLI::ValidationError("--point", "expected 4 comma-separated values");
        pt = {v[0], v[1], v[2], v[3]};
      }
      report.Config("point", std::vector<double>{pt.k, pt.tx, pt.ty, pt.theta});
      const LandscapeDerivatives d = LandscapeGradHess(pt, law);
      report.Result("value", d.value);
      report.Result("gradient", std::vector<double>(d.gradient.data(), d.gradient.data() + 4));
      report.Result("hessian", std::vector<double>(d.hessian.data(), d.hessian.data() + 16));
      report.Print(as_json);
    };
  });

  LawOptions critical_law;
  auto* critical = lab->add_subcommand("critical", "certify the spurious critical point (-k0, 0, 2c, pi)");
  critical_law.Add(critical);
  critical->callback([&] {
    action = [&] {
      Report report("lab critical");
      const SampleLaw law = critical_law.Make();
      critical_law.Echo(report, law);
      const CriticalReport r = VerifyCriticalPoint(law);
      const json j = json::parse(r.ToJson());
      for (const auto& [k, v] : j.items()) report.Result(k, v);
      report.Print(as_json);
    };
  });

  std::size_t starts = 20, steps = 20000, n_samples = 200;
  double lr = 0.1;
  uint64_t problem_seed = 0;
  auto* multistart = lab->add_subcommand("multistart", "unaligned patch fitting from random rotations");
  multistart->add_option("--starts", starts)->capture_default_str()->check(CLI::PositiveNumber);
  multistart->add_option("--steps", steps)->capture_default_str();
  multistart->add_option("--lr", lr)->capture_default_str()->check(CLI::PositiveNumber);
  multistart->add_option("--samples", n_samples)->capture_default_str()->check(CLI::PositiveNumber);
  multistart->add_option("--problem-seed", problem_seed)->capture_default_str();
  multistart->add_option("--seed", seed)->capture_default_str();
  multistart->callback([&] {
    action = [&] {
      Report report("lab multistart");
      report.Config("starts", starts);
      report.Config("steps", steps);
      report.Config("lr", lr);
      report.Config("samples", n_samples);
      report.Config("problem_seed", problem_seed);
      report.Config("seed", seed);
      const FittingProblem problem = MakeFittingProblem(problem_seed, n_samples);
      const MultistartReport r = Multistart(problem, starts, steps, lr, seed);
      report.Result("residuals", r.residuals);
      report.Result("clusters", r.clusters);
      report.Result("largest_ratio", r.largest_ratio);
      report.Print(as_json);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    if (action) action();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "IoError: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace cofield::cli
