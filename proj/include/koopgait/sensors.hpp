#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "koopgait/fgcore.hpp"
#include "koopgait/skeleton.hpp"

namespace koopgait::sensors {

inline constexpr double kGravity = 9.81;

/// Links carrying an IMU, in feature order: right thigh, right shank,
/// left thigh, left shank.
inline constexpr std::array<int, 4> kImuLinks{1, 2, 4, 5};

struct ImuSample {
  double timestamp = 0.0;                           // s
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();   // rad/s, body frame
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();  // m/s^2, body frame (specific force)
  int link = 0;
};

/// Samples of one link, strictly increasing in time.
using ImuStream = std::vector<ImuSample>;
using ImuStreams = std::map<int, ImuStream>;

struct PreintegratedRotation {
  skeleton::Rotation delta;
  double t_start = 0.0;
  double t_end = 0.0;
  int link = 0;
  bool empty = false;  // no sample overlapped the interval; delta is identity
};

/// Product of Exp(w_i dt_i) over the samples overlapping [t_start, t_end].
/// Each sample holds until the next timestamp; the last one for the median
/// sample period.
PreintegratedRotation preintegrate_rotation(std::span<const ImuSample> samples, double t_start, double t_end);

struct Keypoint2D {
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();  // x/z, y/z
  int joint = 0;
  int keyframe = 0;
  bool valid = false;
};

struct DepthMeasurement {
  double depth = 0.0;  // m
  int joint = 0;
  int keyframe = 0;
  bool valid = false;
};

// Residuals with Jacobians. Rotation Jacobians are w.r.t. R <- R Exp(d).

struct ImuResidual {
  Eigen::Vector3d residual;
  Eigen::Matrix3d d_rk;
  Eigen::Matrix3d d_rk1;
};

/// r = Log(dR^T R_k^T R_k+1).
ImuResidual imu_factor_residual(const skeleton::Rotation& rk, const skeleton::Rotation& rk1,
                                const PreintegratedRotation& meas);

struct ImageResidual {
  Eigen::Vector2d residual;
  Eigen::Matrix<double, 2, 3> d_joint;
};

inline constexpr double kDefaultMinDepth = 0.1;

/// Projection error of a camera-frame joint; nullopt when the joint is not
/// in front of the camera (z <= z_min).
std::optional<ImageResidual> image_factor_residual(const Eigen::Vector3d& joint, const Keypoint2D& kp,
                                                   double z_min = kDefaultMinDepth);

struct DepthResidual {
  double residual;
  Eigen::RowVector3d d_joint;
};

DepthResidual depth_factor_residual(const Eigen::Vector3d& joint, const DepthMeasurement& meas);

struct ContactResidual {
  Eigen::Vector3d residual;
  Eigen::Matrix3d d_foot_k;
  Eigen::Matrix3d d_foot_k1;
};

ContactResidual contact_factor_residual(const Eigen::Vector3d& foot_k, const Eigen::Vector3d& foot_k1);

// Graph factors over the skeleton state variables.

class ImuFactor : public fg::Factor {
 public:
  ImuFactor(int keyframe, PreintegratedRotation meas, double sigma);
  void evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  PreintegratedRotation meas_;
};

class ImageFactor : public fg::Factor {
 public:
  ImageFactor(Keypoint2D kp, double sigma, double z_min = kDefaultMinDepth);
  void evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Keypoint2D kp_;
  double z_min_;
};

class DepthFactor : public fg::Factor {
 public:
  DepthFactor(DepthMeasurement meas, double sigma);
  void evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  DepthMeasurement meas_;
};

/// Pins a foot between keyframes k and k+1.
class ContactFactor : public fg::Factor {
 public:
  ContactFactor(int keyframe, int foot_joint, double sigma);
  void evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  int keyframe_;
  int foot_;
  int split_;  // number of keys belonging to keyframe k
};

/// Weak penalty on the twist (rotation about the link axis) between adjacent
/// keyframes. Joint positions do not observe twist, so links without an IMU
/// would otherwise leave a null direction in the normal equations.
class TwistGaugeFactor : public fg::Factor {
 public:
  TwistGaugeFactor(int keyframe, int link, double sigma);
  void evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;
};

// Contact detection.

inline constexpr int kNumContactFeatures = 8;
using ContactFeatures = Eigen::Matrix<double, kNumContactFeatures, 1>;

/// Per IMU link: mean |w| and mean | |a| - g | over [t - half_window, t + half_window].
ContactFeatures imu_feature_vector(const ImuStreams& streams, double t, double half_window = 0.1);

struct LogisticClassifier {
  Eigen::VectorXd weights;
  double bias = 0.0;

  double probability(const Eigen::VectorXd& x) const;
};

struct ContactTrainingConfig {
  double l2 = 1e-3;
  double gradient_tolerance = 1e-6;
  int max_iterations = 200000;
  std::uint64_t seed = 0;
};

struct ContactTrainingReport {
  std::array<int, 2> iterations{};
  std::array<double, 2> gradient_norm{};
  std::array<double, 2> train_accuracy{};
};

/// One classifier per foot (0 right, 1 left) over standardized features.
class ContactModel {
 public:
  ContactModel() = default;
  ContactModel(Eigen::VectorXd mean, Eigen::VectorXd stddev, std::array<LogisticClassifier, 2> feet,
               double threshold);

  Eigen::VectorXd standardize(const ContactFeatures& raw) const;
  double probability(const ContactFeatures& raw, int foot) const;
  bool in_contact(const ContactFeatures& raw, int foot) const { return probability(raw, foot) > threshold_; }

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& stddev() const { return stddev_; }
  const std::array<LogisticClassifier, 2>& feet() const { return feet_; }
  double threshold() const { return threshold_; }

  std::string to_json() const;
  static ContactModel from_json(const std::string& text);

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd stddev_;
  std::array<LogisticClassifier, 2> feet_;
  double threshold_ = 0.5;
};

/// L2-regularized logistic regression fit by gradient descent.
LogisticClassifier fit_logistic(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                const ContactTrainingConfig& config, int* iterations = nullptr,
                                double* gradient_norm = nullptr);

/// `features` is n x 8 raw; labels[i][foot] is ground-truth contact.
ContactModel train_contact_model(const Eigen::MatrixXd& features, const std::vector<std::array<bool, 2>>& labels,
                                 const ContactTrainingConfig& config, ContactTrainingReport* report = nullptr);

}  // namespace koopgait::sensors
