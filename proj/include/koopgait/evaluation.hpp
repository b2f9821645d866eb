#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "koopgait/activity.hpp"
#include "koopgait/skeleton.hpp"

namespace koopgait {

struct Percentiles {
  double p50 = 0.0;
  double p90 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

/// Linear interpolation between order statistics. Throws DataError on an
/// empty list.
Percentiles percentiles(std::vector<double> values);

struct EvaluationReport {
  std::string name;
  std::vector<std::array<double, skeleton::kNumJoints>> errors;  // centroid-centered, m
  Percentiles error_percentiles;
  double joint_rmse = 0.0;             // uncentered joint RMSE, m
  std::vector<double> depth;           // estimated centroid depth per keyframe
  std::vector<double> truth_depth;
  double smoothness = 0.0;             // RMS second difference of depth
  double truth_smoothness = 0.0;
  double max_centroid_jump = 0.0;      // largest centroid move between keyframes, m
  Eigen::MatrixXi confusion;           // empty unless labels were given

  std::vector<double> flat_errors() const;
};

/// RMS of second differences; zero for fewer than three samples.
double second_difference_rms(const std::vector<double>& series);

EvaluationReport evaluate(const std::vector<skeleton::JointSet>& estimate, const std::vector<skeleton::JointSet>& truth,
                          const std::string& name = "estimate");

/// Adds the per-frame activity confusion matrix (rows truth).
void add_confusion(EvaluationReport& report, const std::vector<Activity>& predicted,
                   const std::vector<Activity>& truth);

/// JSON document "koopgait-evaluation" v1 holding every field.
std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const std::string& text);

/// errors.csv, boxplot.svg, depth_traj.svg, summary.json.
void write_report(const std::vector<EvaluationReport>& reports, const std::filesystem::path& dir);

std::string errors_csv(const std::vector<EvaluationReport>& reports);

/// Re-reads errors.csv into per-report flat error lists, in file order.
std::vector<std::pair<std::string, std::vector<double>>> read_errors_csv(const std::string& text);

}  // namespace koopgait
