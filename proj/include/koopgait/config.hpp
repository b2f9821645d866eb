#pragma once

#include <string>

#include "koopgait/fgcore.hpp"

namespace koopgait {

/// Environment variable naming the default estimator config file.
inline constexpr const char* kConfigEnvVar = "KOOPGAIT_CONFIG";

struct FactorSigmas {
  double image = 0.01;          // normalized image units
  double depth_sigma0 = 0.01;   // m, depth sigma(d) = sigma0 + kappa d^2
  double depth_kappa = 0.004;   // 1/m
  double imu = 0.01;            // rad
  double contact = 0.005;       // m
  double koopman = 0.05;        // m per joint coordinate
  double twist = 0.05;          // rad, hip-link twist regularizer
};

struct EstimatorConfig {
  int window = 10;
  bool use_imu = true;
  bool use_image = true;
  bool use_depth = true;
  bool use_contact = true;
  bool use_koopman = true;
  FactorSigmas sigmas;
  fg::SolverConfig solver;
  fg::SlidingWindow::Anchoring anchoring;
  double initial_length = 0.45;
  double contact_threshold = 0.5;
  // "detector" or "ground_truth" (the recording's contact flags).
  std::string contact_source = "detector";
  // "classifier" or "ground_truth" (the recording's labels).
  std::string activity_source = "classifier";
  std::string koopman_bank;
  std::string stgcn_model;
  std::string contact_model;

  /// Throws ConfigError: no factor enabled, missing model paths for enabled
  /// learned factors, nonpositive sigmas, unknown sources.
  void validate() const;

  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static EstimatorConfig from_json(const std::string& text);

  /// Image and depth factors only.
  static EstimatorConfig vision_only();
  /// Every factor except the Koopman prediction.
  static EstimatorConfig baseline();
};

}  // namespace koopgait
