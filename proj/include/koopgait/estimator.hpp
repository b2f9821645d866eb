#pragma once

#include <array>
#include <optional>
#include <vector>

#include "koopgait/config.hpp"
#include "koopgait/gaitsim.hpp"
#include "koopgait/koopman.hpp"
#include "koopgait/sensors.hpp"
#include "koopgait/stgcn.hpp"

namespace koopgait {

/// Learned components; only those needed by the config must be present.
struct Models {
  std::optional<koopman::KoopmanBank> bank;
  std::optional<stgcn::StgcnModel> classifier;
  std::optional<sensors::ContactModel> contact;

  /// Loads the files named in `config` for the enabled factors.
  static Models load(const EstimatorConfig& config);
};

struct WindowSolve {
  int keyframe = 0;  // newest keyframe of the window
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::string termination;
};

struct EstimateResult {
  std::vector<skeleton::GaitState> states;
  std::vector<skeleton::JointSet> joints;
  skeleton::LinkLengths lengths;
  std::vector<Activity> activities;           // labels fed to the Koopman factors
  std::vector<std::array<bool, 2>> contacts;  // contact decisions per keyframe
  std::vector<WindowSolve> solves;
};

/// JSON document "koopgait-estimate" v1.
std::string estimate_to_json(const EstimateResult& result);
EstimateResult estimate_from_json(const std::string& text);

/// Sliding-window estimation over every keyframe. A keyframe's estimate is
/// final when it leaves the window. Throws SolverError naming the keyframe
/// when a window cannot be solved.
EstimateResult estimate(const gaitsim::SimulatedRecording& recording, const EstimatorConfig& config,
                        const Models& models);

/// Joint positions from keypoints and depths, n = (u z, v z, z); nullopt if
/// any joint lacks a valid measurement.
std::optional<skeleton::JointSet> vision_joints(const gaitsim::KeyframeRecord& keyframe);

/// Contact training features and labels over a set of recordings.
struct ContactDataset {
  Eigen::MatrixXd features;  // n x 8
  std::vector<std::array<bool, 2>> labels;
};
ContactDataset contact_dataset(const std::vector<gaitsim::SimulatedRecording>& recordings);

}  // namespace koopgait
