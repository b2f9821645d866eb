#include "koopgait/state_binding.hpp"

namespace koopgait::binding {

using fg::VariableKey;
using skeleton::kNumLinks;

std::vector<VariableKey> keyframe_keys(int keyframe) {
  std::vector<VariableKey> keys{VariableKey::root(keyframe)};
  for (int l = 0; l < kNumLinks; ++l) keys.push_back(VariableKey::rotation(keyframe, l));
  return keys;
}

std::vector<VariableKey> length_keys() {
  std::vector<VariableKey> keys;
  for (int l = 0; l < kNumLinks; ++l) keys.push_back(VariableKey::length(l));
  return keys;
}

std::vector<VariableKey> joint_keys(int keyframe, int joint) {
  const auto& chain = skeleton::SkeletonModel::lower_body().chain(joint);
  std::vector<VariableKey> keys{VariableKey::root(keyframe)};
  for (int l : chain) keys.push_back(VariableKey::rotation(keyframe, l));
  for (int l : chain) keys.push_back(VariableKey::length(l));
  return keys;
}

skeleton::GaitState gait_state(const fg::Values& values, int keyframe) {
  skeleton::GaitState s;
  s.root = values.position(VariableKey::root(keyframe));
  for (int l = 0; l < kNumLinks; ++l) s.rotations[l] = values.rotation(VariableKey::rotation(keyframe, l));
  return s;
}

skeleton::LinkLengths link_lengths(const fg::Values& values) {
  std::array<double, kNumLinks> v{};
  for (int l = 0; l < kNumLinks; ++l) v[l] = values.length(VariableKey::length(l));
  return skeleton::LinkLengths(v);
}

void insert_state(fg::Values& values, int keyframe, const skeleton::GaitState& state) {
  values.insert(VariableKey::root(keyframe), state.root);
  for (int l = 0; l < kNumLinks; ++l) values.insert(VariableKey::rotation(keyframe, l), state.rotations[l]);
}

void insert_lengths(fg::Values& values, const skeleton::LinkLengths& lengths) {
  for (int l = 0; l < kNumLinks; ++l) values.insert(VariableKey::length(l), lengths[l]);
}

JointLinearization linearize_joint(const fg::Values& values, int keyframe, int joint) {
  const auto& model = skeleton::SkeletonModel::lower_body();
  const auto& chain = model.chain(joint);
  const int n = static_cast<int>(3 + 3 * chain.size() + chain.size());
  JointLinearization out;
  out.jacobian.resize(3, n);
  out.position = values.position(VariableKey::root(keyframe));
  out.jacobian.leftCols<3>().setIdentity();
  int col = 3;
  for (int l : chain) {
    const Eigen::Matrix3d& r = values.rotation(VariableKey::rotation(keyframe, l)).matrix();
    const double len = values.length(VariableKey::length(l));
    out.position += len * r.col(2);
    out.jacobian.col(col) = -len * r.col(1);
    out.jacobian.col(col + 1) = len * r.col(0);
    out.jacobian.col(col + 2).setZero();
    col += 3;
  }
  for (int l : chain) {
    out.jacobian.col(col++) = values.rotation(VariableKey::rotation(keyframe, l)).matrix().col(2);
  }
  return out;
}

std::vector<Eigen::MatrixXd> split_columns(const Eigen::MatrixXd& jacobian, const std::vector<VariableKey>& keys) {
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(keys.size());
  int col = 0;
  for (const auto& k : keys) {
    blocks.push_back(jacobian.middleCols(col, k.tangent_dim()));
    col += k.tangent_dim();
  }
  return blocks;
}

}  // namespace koopgait::binding
