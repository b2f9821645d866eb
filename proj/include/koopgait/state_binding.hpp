#pragma once

#include <vector>

#include <Eigen/Core>

#include "koopgait/fgcore.hpp"
#include "koopgait/skeleton.hpp"

// Glue between the skeleton state (root, link rotations, lengths) and the
// factor-graph variables that hold it.
namespace koopgait::binding {

/// Keys of every state variable of one keyframe: root, then the six rotations.
std::vector<fg::VariableKey> keyframe_keys(int keyframe);
std::vector<fg::VariableKey> length_keys();

/// Variables a joint position depends on: root, chain rotations, chain lengths.
std::vector<fg::VariableKey> joint_keys(int keyframe, int joint);

skeleton::GaitState gait_state(const fg::Values& values, int keyframe);
skeleton::LinkLengths link_lengths(const fg::Values& values);

void insert_state(fg::Values& values, int keyframe, const skeleton::GaitState& state);
void insert_lengths(fg::Values& values, const skeleton::LinkLengths& lengths);

/// Joint position and its 3 x n Jacobian, columns ordered like joint_keys().
struct JointLinearization {
  Eigen::Vector3d position;
  Eigen::Matrix<double, 3, Eigen::Dynamic> jacobian;
};

JointLinearization linearize_joint(const fg::Values& values, int keyframe, int joint);

/// Splits a stacked Jacobian into one block per key.
std::vector<Eigen::MatrixXd> split_columns(const Eigen::MatrixXd& jacobian, const std::vector<fg::VariableKey>& keys);

}  // namespace koopgait::binding
