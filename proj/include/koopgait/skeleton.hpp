#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace koopgait::skeleton {

inline constexpr int kNumJoints = 7;
inline constexpr int kNumLinks = 6;
inline constexpr int kJointVectorSize = 3 * kNumJoints;

using Vector21 = Eigen::Matrix<double, kJointVectorSize, 1>;

/// World vertical (camera frame: x right, y down, z forward).
inline const Eigen::Vector3d kUp{0.0, -1.0, 0.0};

Eigen::Matrix3d hat(const Eigen::Vector3d& v);

/// Element of SO(3) stored as a 3x3 matrix.
class Rotation {
 public:
  Rotation() : matrix_(Eigen::Matrix3d::Identity()) {}

  /// Throws ConfigError if the matrix is not orthonormal with det +1 (1e-10).
  explicit Rotation(const Eigen::Matrix3d& matrix);

  /// Nearest rotation in Frobenius norm (SVD projection).
  static Rotation project(const Eigen::Matrix3d& matrix);

  /// Rotation whose z axis is `direction`, x axis closest to `lateral`.
  static Rotation from_axes(const Eigen::Vector3d& direction, const Eigen::Vector3d& lateral);

  const Eigen::Matrix3d& matrix() const { return matrix_; }
  Rotation inverse() const;
  Rotation operator*(const Rotation& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return matrix_ * v; }

  /// R * Exp(delta), re-orthonormalized.
  Rotation retract(const Eigen::Vector3d& delta) const;

  static constexpr double kTolerance = 1e-10;

 private:
  struct Unchecked {};
  Rotation(const Eigen::Matrix3d& matrix, Unchecked) : matrix_(matrix) {}
  friend Rotation so3_exp(const Eigen::Vector3d& omega);

  Eigen::Matrix3d matrix_;
};

Rotation so3_exp(const Eigen::Vector3d& omega);
Eigen::Vector3d so3_log(const Rotation& r);

/// Right Jacobian of SO(3) and its inverse at omega.
Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& omega);
Eigen::Matrix3d right_jacobian_inverse(const Eigen::Vector3d& omega);

struct Link {
  int parent;
  int child;
};

/// Directed kinematic tree over the lower body.
///
/// Joint order is fixed and normative for every 21-vector:
/// 0 sternum, 1 right hip, 2 right knee, 3 right foot, 4 left hip,
/// 5 left knee, 6 left foot. Links are listed in topological order.
class SkeletonModel {
 public:
  static const SkeletonModel& lower_body();

  const std::array<std::string, kNumJoints>& joint_names() const { return joint_names_; }
  const std::array<Link, kNumLinks>& links() const { return links_; }
  int root() const { return 0; }
  int right_foot() const { return 3; }
  int left_foot() const { return 6; }

  /// Link whose child is `joint`, or -1 for the root.
  int parent_link(int joint) const { return parent_link_[joint]; }

  /// Links on the chain from the root to `joint`, root first.
  const std::vector<int>& chain(int joint) const { return chains_[joint]; }

  /// Hop distance from the root.
  int depth(int joint) const { return static_cast<int>(chains_[joint].size()); }

 private:
  SkeletonModel();

  std::array<std::string, kNumJoints> joint_names_;
  std::array<Link, kNumLinks> links_;
  std::array<int, kNumJoints> parent_link_;
  std::array<std::vector<int>, kNumJoints> chains_;
};

/// Link lengths in meters, indexed like SkeletonModel::links().
class LinkLengths {
 public:
  LinkLengths() { values_.fill(0.45); }
  explicit LinkLengths(const std::array<double, kNumLinks>& values);

  double operator[](int link) const { return values_[link]; }
  const std::array<double, kNumLinks>& values() const { return values_; }

 private:
  std::array<double, kNumLinks> values_;
};

struct GaitState {
  Eigen::Vector3d root = Eigen::Vector3d::Zero();
  std::array<Rotation, kNumLinks> rotations;
};

struct JointSet {
  std::array<Eigen::Vector3d, kNumJoints> positions;

  const Eigen::Vector3d& operator[](int joint) const { return positions[joint]; }
  Eigen::Vector3d& operator[](int joint) { return positions[joint]; }

  /// Joint-major flattening (x0 y0 z0 x1 ...).
  Vector21 flatten() const;
  static JointSet unflatten(const Vector21& x);
  /// The 7 values of one coordinate axis in joint order.
  Eigen::Matrix<double, kNumJoints, 1> coordinate(int axis) const;
  Eigen::Vector3d centroid() const;
};

class NormalizationParams {
 public:
  NormalizationParams(double c_min, double c_max);
  double c_min() const { return c_min_; }
  double c_max() const { return c_max_; }
  double range() const { return c_max_ - c_min_; }

 private:
  double c_min_;
  double c_max_;
};

JointSet forward_kinematics(const GaitState& state, const LinkLengths& lengths,
                            const SkeletonModel& model = SkeletonModel::lower_body());

/// Derivatives of one joint position with respect to every state variable.
/// Rotation blocks use the right perturbation R <- R Exp(delta); blocks of
/// links that are not on the joint's chain are zero.
struct JointJacobian {
  Eigen::Matrix3d root;
  std::array<Eigen::Matrix3d, kNumLinks> rotation;
  std::array<Eigen::Vector3d, kNumLinks> length;
};

JointJacobian joint_jacobians(const GaitState& state, const LinkLengths& lengths, int joint,
                              const SkeletonModel& model = SkeletonModel::lower_body());

/// Center on the right foot and scale into the unit range.
JointSet normalize(const JointSet& joints, const NormalizationParams& params,
                   const SkeletonModel& model = SkeletonModel::lower_body());

/// Inverse of normalize with `anchor` as the centering point.
JointSet denormalize(const JointSet& normalized, const NormalizationParams& params,
                     const Eigen::Vector3d& anchor);

/// Rotation about the world vertical through `pivot`.
JointSet rotate_about_vertical(const JointSet& joints, double angle, const Eigen::Vector3d& pivot);

}  // namespace koopgait::skeleton
