// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/field.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "cofield/binary_io.hpp"
#include "cofield/error.hpp"
#include "cofield/rng.hpp"

namespace cofield {
namespace {

Quaternion Normalized(const Quaternion& q) {
  const double norm = q.norm();
  if (!(norm >= 1e-12)) throw Error(ErrorCode::kZeroQuaternion, "quaternion norm below 1e-12");
  return q / norm;
}

// dR/dq for the unit quaternion (w, x, y, z), one matrix per component.
std::array<Mat3, 4> RotationJacobian(const Quaternion& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return d;
}

Vec3 AnyPerpendicular(const Vec3& n) {
  Eigen::Index axis;
  n.cwiseAbs().minCoeff(&axis);
  return n.cross(Vec3::Unit(axis)).normalized();
}

}  // namespace

Mat3 QuaternionToRotation(const Quaternion& q) {
  const Quaternion u = Normalized(q);
  const double w = u[0], x = u[1], y = u[2], z = u[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quaternion RotationToQuaternion(const Mat3& rotation) {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  Quaternion out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out;
}

Vec3 WorldToLocal(const CoordinateFrame& frame, const Vec3& p) {
  return QuaternionToRotation(frame.rotation).transpose() * (p - frame.origin);
}

Vec3 LocalToWorld(const CoordinateFrame& frame, const Vec3& x) {
  return QuaternionToRotation(frame.rotation) * x + frame.origin;
}

FrameGradient BackpropFrame(const CoordinateFrame& frame, const Mat3& outer, const Vec3& sum) {
  const double norm = frame.rotation.norm();
  if (!(norm >= 1e-12)) throw Error(ErrorCode::kZeroQuaternion, "quaternion norm below 1e-12");
  const Quaternion unit = frame.rotation / norm;
  const Mat3 r = QuaternionToRotation(unit);
  const auto jac = RotationJacobian(unit);

  // x_k = sum_j R_jk d_j, so dL/dR_jk = sum_s d_j g_k = outer_jk.
  Quaternion d_unit;
  for (int m = 0; m < 4; ++m) d_unit[m] = (jac[m].array() * outer.array()).sum();

  FrameGradient grad;
  grad.rotation = (d_unit - unit * unit.dot(d_unit)) / norm;
  grad.origin = -r * sum;
  return grad;
}

CoordinateField::CoordinateField(VoxelGrid grid, int latent_dim) : grid_(std::move(grid)), latent_dim_(latent_dim) {
  grid_.Validate();
  if (latent_dim_ < 0) throw Error(ErrorCode::kInvalidArgument, "latent length must be >= 0");
  slot_of_cell_.assign(grid_.CellCount(), -1);
  for (std::size_t s = 0; s < grid_.valid.size(); ++s) slot_of_cell_[grid_.valid[s]] = static_cast<int32_t>(s);
  frames_.resize(grid_.valid.size() * kFrameStride);
  for (std::size_t s = 0; s < grid_.valid.size(); ++s) {
    SetFrame(s, CoordinateFrame{Quaternion(1, 0, 0, 0), grid_.CellCenter(grid_.valid[s])});
  }
  latents_.assign(grid_.valid.size() * static_cast<std::size_t>(latent_dim_), 0.0f);
}

std::optional<std::size_t> CoordinateField::Slot(uint32_t cell) const {
  if (cell >= slot_of_cell_.size() || slot_of_cell_[cell] < 0) return std::nullopt;
  return static_cast<std::size_t>(slot_of_cell_[cell]);
}

CoordinateFrame CoordinateField::Frame(std::size_t slot) const {
  const double* f = frames_.data() + slot * kFrameStride;
  return {Quaternion(f[0], f[1], f[2], f[3]), Vec3(f[4], f[5], f[6])};
}

void CoordinateField::SetFrame(std::size_t slot, const CoordinateFrame& frame) {
  double* f = frames_.data() + slot * kFrameStride;
  for (int i = 0; i < 4; ++i) f[i] = frame.rotation[i];
  for (int i = 0; i < 3; ++i) f[4 + i] = frame.origin[i];
}

void CoordinateField::NormalizeFrames() {
  for (std::size_t s = 0; s < size(); ++s) {
    double* f = frames_.data() + s * kFrameStride;
    const Quaternion q = Normalized(Quaternion(f[0], f[1], f[2], f[3]));
    for (int i = 0; i < 4; ++i) f[i] = q[i];
  }
}

void CoordinateField::RandomizeLatents(uint64_t seed, double sigma) {
  Rng rng(seed, 0x1a7e);
  for (float& z : latents_) z = static_cast<float>(rng.Normal(sigma));
}

std::vector<uint32_t> InitFrames(CoordinateField& field, const SampleSet& samples, const ScalarField& oracle,
                                 uint64_t seed) {
  const VoxelGrid& grid = field.grid();
  if (samples.resolution() != grid.resolution) {
    throw Error(ErrorCode::kConfigMismatch, "sample set resolution differs from the field grid");
  }
  const double h = 1e-4 * grid.CellSize().minCoeff();
  std::vector<uint32_t> degenerate;
  std::vector<std::size_t> group_of_slot(field.size(), SIZE_MAX);
  for (std::size_t g = 0; g < samples.groups().size(); ++g) {
    if (auto slot = field.Slot(samples.groups()[g].voxel)) group_of_slot[*slot] = g;
  }

  for (std::size_t s = 0; s < field.size(); ++s) {
    const uint32_t cell = field.Cell(s);
    if (group_of_slot[s] == SIZE_MAX || samples.GroupSamples(group_of_slot[s]).size() < 4) {
      throw Error(ErrorCode::kInvalidArgument, "cell " + std::to_string(cell) + " has fewer than 4 samples");
    }
    const auto group = samples.GroupSamples(group_of_slot[s]);

    Mat3 grad_cov = Mat3::Zero();
    Vec3 grad_mean = Vec3::Zero();
    Vec3 pos_mean = Vec3::Zero();
    for (const SdfSample& sample : group) {
      const Vec3 p = sample.position.cast<double>();
      const Vec3 g = SdfGradient(oracle, p, h);
      grad_cov += g * g.transpose();
      grad_mean += g;
      pos_mean += p;
    }
    pos_mean /= static_cast<double>(group.size());

    CoordinateFrame frame;
    frame.origin = grid.CellCenter(cell);
    Eigen::SelfAdjointEigenSolver<Mat3> grad_eig(grad_cov);
    if (!(grad_eig.eigenvalues()[2] > 1e-20)) {
      degenerate.push_back(cell);
      field.SetFrame(s, frame);
      continue;
    }
    Vec3 n = grad_eig.eigenvectors().col(2).normalized();
    if (n.dot(grad_mean) < 0.0) n = -n;

    Mat3 pos_cov = Mat3::Zero();
    for (const SdfSample& sample : group) {
      const Vec3 d = sample.position.cast<double>() - pos_mean;
      pos_cov += d * d.transpose();
    }
    const Mat3 proj = Mat3::Identity() - n * n.transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> pos_eig(proj * pos_cov * proj);
    Vec3 t = proj * pos_eig.eigenvectors().col(2);
    if (t.norm() < 1e-6) {
      t = AnyPerpendicular(n);
    } else {
      t.normalize();
    }
    Eigen::Index largest;
    t.cwiseAbs().maxCoeff(&largest);
    if (t[largest] < 0.0) t = -t;

    Mat3 r;
    r.col(0) = n;
    r.col(1) = t;
    r.col(2) = n.cross(t);
    frame.rotation = RotationToQuaternion(r);
    field.SetFrame(s, frame);
  }
  field.RandomizeLatents(seed);
  return degenerate;
}

void InitIdentityFrames(CoordinateField& field, uint64_t seed) {
  for (std::size_t s = 0; s < field.size(); ++s) {
    field.SetFrame(s, CoordinateFrame{Quaternion(1, 0, 0, 0), field.grid().CellCenter(field.Cell(s))});
  }
  field.RandomizeLatents(seed);
}

void SaveField(const CoordinateField& field, const std::filesystem::path& path) {
  io::Writer out;
  out.PutMagic("CFFD");
  out.Put<uint32_t>(1);
  const VoxelGrid& grid = field.grid();
  out.Put<uint32_t>(static_cast<uint32_t>(grid.resolution));
  for (int i = 0; i < 3; ++i) out.Put<float>(static_cast<float>(grid.bounds.lower[i]));
  for (int i = 0; i < 3; ++i) out.Put<float>(static_cast<float>(grid.bounds.upper[i]));
  out.Put<uint32_t>(static_cast<uint32_t>(field.latent_dim()));
  out.Put<uint64_t>(field.size());
  for (std::size_t s = 0; s < field.size(); ++s) {
    out.Put<uint32_t>(field.Cell(s));
    const CoordinateFrame f = field.Frame(s);
    for (int i = 0; i < 4; ++i) out.Put<float>(static_cast<float>(f.rotation[i]));
    for (int i = 0; i < 3; ++i) out.Put<float>(static_cast<float>(f.origin[i]));
    for (float z : field.Latent(s)) out.Put<float>(z);
  }
  out.Commit(path);
}

CoordinateField LoadField(const std::filesystem::path& path) {
  io::Reader in(path);
  in.ExpectMagic("CFFD");
  in.ExpectVersion(1);
  VoxelGrid grid;
  grid.resolution = static_cast<int>(in.Get<uint32_t>());
  for (int i = 0; i < 3; ++i) grid.bounds.lower[i] = in.Get<float>();
  for (int i = 0; i < 3; ++i) grid.bounds.upper[i] = in.Get<float>();
  const int latent_dim = static_cast<int>(in.Get<uint32_t>());
  const auto count = in.Get<uint64_t>();
  const std::size_t record = 4 * (1 + 7 + static_cast<std::size_t>(latent_dim));
  if (count > in.remaining() / record) throw Error(ErrorCode::kIoError, path.string() + ": truncated field file");

  struct Record {
    uint32_t cell;
    CoordinateFrame frame;
    std::vector<float> latent;
  };
  std::vector<Record> records(count);
  for (auto& r : records) {
    r.cell = in.Get<uint32_t>();
    for (int i = 0; i < 4; ++i) r.frame.rotation[i] = in.Get<float>();
    for (int i = 0; i < 3; ++i) r.frame.origin[i] = in.Get<float>();
    r.latent.resize(latent_dim);
    for (float& z : r.latent) z = in.Get<float>();
    grid.valid.push_back(r.cell);
  }
  if (!std::is_sorted(grid.valid.begin(), grid.valid.end()) ||
      std::adjacent_find(grid.valid.begin(), grid.valid.end()) != grid.valid.end()) {
    throw Error(ErrorCode::kParseError, path.string() + ": cell indices not strictly increasing");
  }
  if (!grid.valid.empty() && grid.valid.back() >= grid.CellCount()) {
    throw Error(ErrorCode::kParseError, path.string() + ": cell index out of range");
  }
  CoordinateField field(std::move(grid), latent_dim);
  for (std::size_t s = 0; s < records.size(); ++s) {
    records[s].frame.rotation = Normalized(records[s].frame.rotation);
    field.SetFrame(s, records[s].frame);
    std::copy(records[s].latent.begin(), records[s].latent.end(), field.Latent(s).begin());
  }
  return field;
}

}  // namespace cofield
