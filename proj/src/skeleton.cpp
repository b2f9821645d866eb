#include "koopgait/skeleton.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "koopgait/error.hpp"

namespace koopgait::skeleton {

namespace {

Eigen::Vector3d vee(const Eigen::Matrix3d& m) {
  return {m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)};
}

bool is_rotation(const Eigen::Matrix3d& m, double tol) {
  if (!m.allFinite()) return false;
  const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

}  // namespace

Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Rotation::Rotation(const Eigen::Matrix3d& matrix) : matrix_(matrix) {
  if (!is_rotation(matrix, kTolerance)) {
    throw ConfigError("matrix is not a rotation (orthonormality or determinant off by more than 1e-10)");
  }
}

Rotation Rotation::project(const Eigen::Matrix3d& matrix) {
  if (!matrix.allFinite()) throw ConfigError("cannot project a non-finite matrix onto SO(3)");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
  return Rotation(u * v.transpose(), Unchecked{});
}

Rotation Rotation::from_axes(const Eigen::Vector3d& direction, const Eigen::Vector3d& lateral) {
  const Eigen::Vector3d z = direction.normalized();
  Eigen::Vector3d x = lateral - lateral.dot(z) * z;
  if (x.norm() < 1e-9) {
    // Lateral hint parallel to the link; fall back to any perpendicular axis.
    x = z.unitOrthogonal();
  }
  x.normalize();
  Eigen::Matrix3d m;
  m.col(0) = x;
  m.col(1) = z.cross(x);
  m.col(2) = z;
  return Rotation(m, Unchecked{});
}

Rotation Rotation::inverse() const { return Rotation(matrix_.transpose(), Unchecked{}); }

Rotation Rotation::operator*(const Rotation& other) const {
  return Rotation(matrix_ * other.matrix_, Unchecked{});
}

Rotation Rotation::retract(const Eigen::Vector3d& delta) const {
  return project(matrix_ * so3_exp(delta).matrix());
}

Rotation so3_exp(const Eigen::Vector3d& omega) {
  if (!omega.allFinite()) throw ConfigError("so3_exp: non-finite rotation vector");
  const double theta = omega.norm();
  const Eigen::Matrix3d w = hat(omega);
  if (theta < 1e-8) {
    return Rotation(Eigen::Matrix3d::Identity() + w + 0.5 * w * w, Rotation::Unchecked{});
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Rotation(Eigen::Matrix3d::Identity() + a * w + b * w * w, Rotation::Unchecked{});
}

Eigen::Vector3d so3_log(const Rotation& r) {
  const Eigen::Matrix3d& m = r.matrix();
  const Eigen::Vector3d w = 0.5 * vee(m);  // sin(theta) * axis
  const double s = w.norm();
  const double c = std::clamp(0.5 * (m.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);

  if (theta < 1e-8) {
    return w * (1.0 + theta * theta / 6.0);
  }
  if (s < 1e-7 && c < 0.0) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 - cos) a a^T.
    const Eigen::Matrix3d b = 0.5 * (m + m.transpose()) - c * Eigen::Matrix3d::Identity();
    int i = 0;
    b.diagonal().maxCoeff(&i);
    const double ai = std::sqrt(std::max(b(i, i), 0.0) / (1.0 - c));
    Eigen::Vector3d axis = b.col(i) / (ai * (1.0 - c));
    axis.normalize();
    if (axis.dot(w) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / s) * w;
}

Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  const Eigen::Matrix3d w = hat(omega);
  if (theta < 1e-5) {
    return Eigen::Matrix3d::Identity() - 0.5 * w + w * w / 6.0;
  }
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() - (1.0 - std::cos(theta)) / t2 * w +
         (theta - std::sin(theta)) / (t2 * theta) * w * w;
}

Eigen::Matrix3d right_jacobian_inverse(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  const Eigen::Matrix3d w = hat(omega);
  double coeff;
  if (theta < 1e-5) {
    coeff = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    coeff = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Eigen::Matrix3d::Identity() + 0.5 * w + coeff * w * w;
}

SkeletonModel::SkeletonModel()
    : joint_names_{"sternum", "right_hip", "right_knee", "right_foot",
                   "left_hip", "left_knee", "left_foot"},
      links_{{{0, 1}, {1, 2}, {2, 3}, {0, 4}, {4, 5}, {5, 6}}} {
  parent_link_.fill(-1);
  for (int l = 0; l < kNumLinks; ++l) parent_link_[links_[l].child] = l;
  for (int j = 0; j < kNumJoints; ++j) {
    std::vector<int> chain;
    for (int node = j; parent_link_[node] >= 0; node = links_[parent_link_[node]].parent) {
      chain.insert(chain.begin(), parent_link_[node]);
    }
    chains_[j] = std::move(chain);
  }
}

const SkeletonModel& SkeletonModel::lower_body() {
  static const SkeletonModel model;
  return model;
}

LinkLengths::LinkLengths(const std::array<double, kNumLinks>& values) : values_(values) {
  for (double v : values_) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("link lengths must be finite and positive");
  }
}

Vector21 JointSet::flatten() const {
  Vector21 x;
  for (int j = 0; j < kNumJoints; ++j) x.segment<3>(3 * j) = positions[j];
  return x;
}

JointSet JointSet::unflatten(const Vector21& x) {
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) out.positions[j] = x.segment<3>(3 * j);
  return out;
}

Eigen::Matrix<double, kNumJoints, 1> JointSet::coordinate(int axis) const {
  Eigen::Matrix<double, kNumJoints, 1> c;
  for (int j = 0; j < kNumJoints; ++j) c[j] = positions[j][axis];
  return c;
}

Eigen::Vector3d JointSet::centroid() const {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : positions) c += p;
  return c / kNumJoints;
}

NormalizationParams::NormalizationParams(double c_min, double c_max) : c_min_(c_min), c_max_(c_max) {
  if (!std::isfinite(c_min) || !std::isfinite(c_max) || !(c_max > c_min)) {
    throw ConfigError("normalization requires finite c_min < c_max");
  }
}

JointSet forward_kinematics(const GaitState& state, const LinkLengths& lengths, const SkeletonModel& model) {
  JointSet joints;
  joints[model.root()] = state.root;
  for (int l = 0; l < kNumLinks; ++l) {
    const Link& link = model.links()[l];
    joints[link.child] = joints[link.parent] + lengths[l] * state.rotations[l].matrix().col(2);
  }
  return joints;
}

JointJacobian joint_jacobians(const GaitState& state, const LinkLengths& lengths, int joint,
                              const SkeletonModel& model) {
  if (joint < 0 || joint >= kNumJoints) throw ConfigError("joint index out of range");
  JointJacobian jac;
  jac.root = Eigen::Matrix3d::Identity();
  for (int l = 0; l < kNumLinks; ++l) {
    jac.rotation[l].setZero();
    jac.length[l].setZero();
  }
  for (int l : model.chain(joint)) {
    const Eigen::Matrix3d& r = state.rotations[l].matrix();
    jac.rotation[l].col(0) = -lengths[l] * r.col(1);
    jac.rotation[l].col(1) = lengths[l] * r.col(0);
    jac.length[l] = r.col(2);
  }
  return jac;
}

JointSet normalize(const JointSet& joints, const NormalizationParams& params, const SkeletonModel& model) {
  const Eigen::Vector3d anchor = joints[model.right_foot()];
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) {
    out[j] = ((joints[j] - anchor).array() - params.c_min()) / params.range();
  }
  return out;
}

JointSet denormalize(const JointSet& normalized, const NormalizationParams& params,
                     const Eigen::Vector3d& anchor) {
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) {
    out[j] = (normalized[j].array() * params.range() + params.c_min()).matrix() + anchor;
  }
  return out;
}

JointSet rotate_about_vertical(const JointSet& joints, double angle, const Eigen::Vector3d& pivot) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(angle, kUp).toRotationMatrix();
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = pivot + r * (joints[j] - pivot);
  return out;
}

}  // namespace koopgait::skeleton
