#include "koopgait/sensors.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "koopgait/error.hpp"
#include "koopgait/state_binding.hpp"

namespace koopgait::sensors {

using fg::VariableKey;
using skeleton::Rotation;

PreintegratedRotation preintegrate_rotation(std::span<const ImuSample> samples, double t_start, double t_end) {
  PreintegratedRotation out;
  out.t_start = t_start;
  out.t_end = t_end;
  out.link = samples.empty() ? 0 : samples.front().link;
  if (samples.empty() || !(t_end > t_start)) {
    out.empty = true;
    return out;
  }

  double nominal_dt = 1.0 / 120.0;
  if (samples.size() > 1) {
    std::vector<double> dts;
    dts.reserve(samples.size() - 1);
    for (std::size_t i = 1; i < samples.size(); ++i) dts.push_back(samples[i].timestamp - samples[i - 1].timestamp);
    std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
    nominal_dt = dts[dts.size() / 2];
  }

  // First sample whose hold interval can reach t_start.
  auto it = std::upper_bound(samples.begin(), samples.end(), t_start,
                             [](double t, const ImuSample& s) { return t < s.timestamp; });
  std::size_t i = it == samples.begin() ? 0 : static_cast<std::size_t>(it - samples.begin()) - 1;

  Eigen::Matrix3d acc = Eigen::Matrix3d::Identity();
  bool any = false;
  for (; i < samples.size(); ++i) {
    const double t0 = samples[i].timestamp;
    if (t0 >= t_end) break;
    const double t1 = i + 1 < samples.size() ? samples[i + 1].timestamp : t0 + nominal_dt;
    const double a = std::max(t0, t_start);
    const double b = std::min(t1, t_end);
    if (b <= a) continue;
    acc = acc * skeleton::so3_exp(samples[i].gyro * (b - a)).matrix();
    any = true;
  }
  if (!any) {
    out.empty = true;
    return out;
  }
  out.delta = Rotation::project(acc);
  return out;
}

ImuResidual imu_factor_residual(const Rotation& rk, const Rotation& rk1, const PreintegratedRotation& meas) {
  const Rotation rel = rk.inverse() * rk1;
  const Rotation err = meas.delta.inverse() * rel;
  ImuResidual out;
  out.residual = skeleton::so3_log(err);
  const Eigen::Matrix3d jr_inv = skeleton::right_jacobian_inverse(out.residual);
  out.d_rk1 = jr_inv;
  out.d_rk = -jr_inv * rel.matrix().transpose();
  return out;
}

std::optional<ImageResidual> image_factor_residual(const Eigen::Vector3d& joint, const Keypoint2D& kp, double z_min) {
  const double z = joint.z();
  if (!(z > z_min)) return std::nullopt;
  ImageResidual out;
  out.residual = Eigen::Vector2d(joint.x() / z - kp.uv.x(), joint.y() / z - kp.uv.y());
  out.d_joint << 1.0 / z, 0.0, -joint.x() / (z * z),
                 0.0, 1.0 / z, -joint.y() / (z * z);
  return out;
}

DepthResidual depth_factor_residual(const Eigen::Vector3d& joint, const DepthMeasurement& meas) {
  return {joint.z() - meas.depth, Eigen::RowVector3d(0.0, 0.0, 1.0)};
}

ContactResidual contact_factor_residual(const Eigen::Vector3d& foot_k, const Eigen::Vector3d& foot_k1) {
  return {foot_k1 - foot_k, -Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity()};
}

ImuFactor::ImuFactor(int keyframe, PreintegratedRotation meas, double sigma)
    : fg::Factor({VariableKey::rotation(keyframe, meas.link), VariableKey::rotation(keyframe + 1, meas.link)}, 3,
                 fg::isotropic_information(3, sigma), "imu"),
      meas_(std::move(meas)) {}

void ImuFactor::evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                         std::vector<Eigen::MatrixXd>* jacobians) const {
  const auto r = imu_factor_residual(values.rotation(keys()[0]), values.rotation(keys()[1]), meas_);
  residual = r.residual;
  if (jacobians) *jacobians = {r.d_rk, r.d_rk1};
}

ImageFactor::ImageFactor(Keypoint2D kp, double sigma, double z_min)
    : fg::Factor(binding::joint_keys(kp.keyframe, kp.joint), 2, fg::isotropic_information(2, sigma), "image"),
      kp_(std::move(kp)),
      z_min_(z_min) {}

void ImageFactor::evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                           std::vector<Eigen::MatrixXd>* jacobians) const {
  const auto joint = binding::linearize_joint(values, kp_.keyframe, kp_.joint);
  const auto r = image_factor_residual(joint.position, kp_, z_min_);
  if (!r) {
    // Behind the camera: the factor contributes nothing at this estimate.
    residual = Eigen::VectorXd::Zero(2);
    if (jacobians) *jacobians = binding::split_columns(Eigen::MatrixXd::Zero(2, joint.jacobian.cols()), keys());
    return;
  }
  residual = r->residual;
  if (jacobians) *jacobians = binding::split_columns(r->d_joint * joint.jacobian, keys());
}

DepthFactor::DepthFactor(DepthMeasurement meas, double sigma)
    : fg::Factor(binding::joint_keys(meas.keyframe, meas.joint), 1, fg::isotropic_information(1, sigma), "depth"),
      meas_(std::move(meas)) {}

void DepthFactor::evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                           std::vector<Eigen::MatrixXd>* jacobians) const {
  const auto joint = binding::linearize_joint(values, meas_.keyframe, meas_.joint);
  const auto r = depth_factor_residual(joint.position, meas_);
  residual.resize(1);
  residual[0] = r.residual;
  if (jacobians) *jacobians = binding::split_columns(r.d_joint * joint.jacobian, keys());
}

namespace {

std::vector<VariableKey> contact_keys(int keyframe, int foot) {
  const auto& chain = skeleton::SkeletonModel::lower_body().chain(foot);
  std::vector<VariableKey> keys;
  for (int k : {keyframe, keyframe + 1}) {
    keys.push_back(VariableKey::root(k));
    for (int l : chain) keys.push_back(VariableKey::rotation(k, l));
  }
  for (int l : chain) keys.push_back(VariableKey::length(l));
  return keys;
}

}  // namespace

ContactFactor::ContactFactor(int keyframe, int foot_joint, double sigma)
    : fg::Factor(contact_keys(keyframe, foot_joint), 3, fg::isotropic_information(3, sigma), "contact"),
      keyframe_(keyframe),
      foot_(foot_joint),
      split_(1 + static_cast<int>(skeleton::SkeletonModel::lower_body().chain(foot_joint).size())) {}

void ContactFactor::evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                             std::vector<Eigen::MatrixXd>* jacobians) const {
  const auto a = binding::linearize_joint(values, keyframe_, foot_);
  const auto b = binding::linearize_joint(values, keyframe_ + 1, foot_);
  const auto r = contact_factor_residual(a.position, b.position);
  residual = r.residual;
  if (!jacobians) return;
  const int state_cols = 3 * split_;
  const int length_cols = static_cast<int>(a.jacobian.cols()) - state_cols;
  Eigen::MatrixXd j(3, 2 * state_cols + length_cols);
  j.leftCols(state_cols) = r.d_foot_k * a.jacobian.leftCols(state_cols);
  j.middleCols(state_cols, state_cols) = r.d_foot_k1 * b.jacobian.leftCols(state_cols);
  j.rightCols(length_cols) = r.d_foot_k * a.jacobian.rightCols(length_cols) + r.d_foot_k1 * b.jacobian.rightCols(length_cols);
  *jacobians = binding::split_columns(j, keys());
}

TwistGaugeFactor::TwistGaugeFactor(int keyframe, int link, double sigma)
    : fg::Factor({VariableKey::rotation(keyframe, link), VariableKey::rotation(keyframe + 1, link)}, 1,
                 fg::isotropic_information(1, sigma), "twist_gauge") {}

void TwistGaugeFactor::evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                                std::vector<Eigen::MatrixXd>* jacobians) const {
  PreintegratedRotation identity;
  const auto r = imu_factor_residual(values.rotation(keys()[0]), values.rotation(keys()[1]), identity);
  residual.resize(1);
  residual[0] = r.residual.z();
  if (jacobians) *jacobians = {r.d_rk.row(2), r.d_rk1.row(2)};
}

ContactFeatures imu_feature_vector(const ImuStreams& streams, double t, double half_window) {
  ContactFeatures f;
  for (std::size_t i = 0; i < kImuLinks.size(); ++i) {
    const int link = kImuLinks[i];
    auto it = streams.find(link);
    if (it == streams.end() || it->second.empty()) {
      throw DataError("IMU stream for link " + std::to_string(link) + " (" +
                      skeleton::SkeletonModel::lower_body().joint_names()[
                          skeleton::SkeletonModel::lower_body().links()[link].child] +
                      " segment) is missing");
    }
    const auto& s = it->second;
    auto lo = std::lower_bound(s.begin(), s.end(), t - half_window - 1e-12,
                               [](const ImuSample& a, double v) { return a.timestamp < v; });
    double w_sum = 0.0;
    double a_sum = 0.0;
    int count = 0;
    for (auto p = lo; p != s.end() && p->timestamp <= t + half_window + 1e-12; ++p) {
      w_sum += p->gyro.norm();
      a_sum += std::abs(p->accel.norm() - kGravity);
      ++count;
    }
    if (count == 0) {
      throw DataError("no IMU samples on link " + std::to_string(link) + " near t=" + std::to_string(t));
    }
    f[2 * i] = w_sum / count;
    f[2 * i + 1] = a_sum / count;
  }
  return f;
}

double LogisticClassifier::probability(const Eigen::VectorXd& x) const {
  const double z = (weights.size() == 0 ? 0.0 : weights.dot(x)) + bias;
  return 1.0 / (1.0 + std::exp(-z));
}

ContactModel::ContactModel(Eigen::VectorXd mean, Eigen::VectorXd stddev, std::array<LogisticClassifier, 2> feet,
                           double threshold)
    : mean_(std::move(mean)), stddev_(std::move(stddev)), feet_(std::move(feet)), threshold_(threshold) {
  if (mean_.size() != kNumContactFeatures || stddev_.size() != kNumContactFeatures) {
    throw ConfigError("contact model standardization has wrong size");
  }
  for (const auto& f : feet_) {
    if (f.weights.size() != kNumContactFeatures || !f.weights.allFinite() || !std::isfinite(f.bias)) {
      throw ConfigError("contact model weights must be finite with 8 entries");
    }
  }
  if (!(stddev_.array() > 0.0).all()) throw ConfigError("contact model stddev must be positive");
}

Eigen::VectorXd ContactModel::standardize(const ContactFeatures& raw) const {
  return ((raw - mean_).array() / stddev_.array()).matrix();
}

double ContactModel::probability(const ContactFeatures& raw, int foot) const {
  return feet_.at(foot).probability(standardize(raw));
}

std::string ContactModel::to_json() const {
  nlohmann::json j;
  j["format"] = "koopgait-contact-model";
  j["version"] = 1;
  j["features"] = "per IMU link (right thigh, right shank, left thigh, left shank): mean |gyro|, mean ||accel|-g|";
  j["mean"] = std::vector<double>(mean_.data(), mean_.data() + mean_.size());
  j["stddev"] = std::vector<double>(stddev_.data(), stddev_.data() + stddev_.size());
  j["threshold"] = threshold_;
  for (int foot = 0; foot < 2; ++foot) {
    const auto& c = feet_[foot];
    j["feet"][foot]["weights"] = std::vector<double>(c.weights.data(), c.weights.data() + c.weights.size());
    j["feet"][foot]["bias"] = c.bias;
  }
  return j.dump(1);
}

ContactModel ContactModel::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "koopgait-contact-model") throw DataError("not a contact model file");
    if (j.at("version") != 1) throw DataError("unsupported contact model version");
    auto vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    std::array<LogisticClassifier, 2> feet;
    for (int foot = 0; foot < 2; ++foot) {
      feet[foot].weights = vec(j.at("feet").at(foot).at("weights"));
      feet[foot].bias = j.at("feet").at(foot).at("bias").get<double>();
    }
    return ContactModel(vec(j.at("mean")), vec(j.at("stddev")), feet, j.at("threshold").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed contact model: ") + e.what());
  }
}

LogisticClassifier fit_logistic(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                const ContactTrainingConfig& config, int* iterations, double* gradient_norm) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n == 0 || static_cast<Eigen::Index>(labels.size()) != n) throw DataError("logistic regression: empty or mismatched data");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == n) throw DataError("logistic regression needs both classes present");

  // Augmented design matrix with a bias column; the bias is not regularized.
  Eigen::MatrixXd a(n, d + 1);
  a.leftCols(d) = x;
  a.col(d).setOnes();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[i] ? 1.0 : 0.0;
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, config.l2);
  reg[d] = 0.0;

  auto gradient = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd z = a * w;
    const Eigen::VectorXd p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    return Eigen::VectorXd(a.transpose() * (p - y) / static_cast<double>(n) + reg.cwiseProduct(w));
  };

  const Eigen::MatrixXd gram = a.transpose() * a / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = 0.25 * eig.eigenvalues().maxCoeff() + config.l2;
  const double step = 1.0 / lipschitz;

  // Nesterov-accelerated gradient descent with gradient-based restarts.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd v = w;
  double t = 1.0;
  int it = 0;
  double gnorm = gradient(w).norm();
  for (; it < config.max_iterations && gnorm >= config.gradient_tolerance; ++it) {
    const Eigen::VectorXd g = gradient(v);
    const Eigen::VectorXd w_next = v - step * g;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (g.dot(w_next - w) > 0.0) {
      v = w_next;
      t = 1.0;
    } else {
      v = w_next + ((t - 1.0) / t_next) * (w_next - w);
      t = t_next;
    }
    w = w_next;
    gnorm = gradient(w).norm();
  }
  if (iterations) *iterations = it;
  if (gradient_norm) *gradient_norm = gnorm;

  LogisticClassifier out;
  out.weights = w.head(d);
  out.bias = w[d];
  return out;
}

ContactModel train_contact_model(const Eigen::MatrixXd& features, const std::vector<std::array<bool, 2>>& labels,
                                 const ContactTrainingConfig& config, ContactTrainingReport* report) {
  if (features.cols() != kNumContactFeatures) throw DataError("contact features must have 8 columns");
  if (features.rows() != static_cast<Eigen::Index>(labels.size()) || features.rows() < 2) {
    throw DataError("contact training needs matching features and labels");
  }
  const Eigen::VectorXd mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - mean.transpose();
  Eigen::VectorXd stddev =
      (centered.array().square().colwise().sum() / static_cast<double>(features.rows())).sqrt().transpose();
  for (Eigen::Index i = 0; i < stddev.size(); ++i) {
    if (!(stddev[i] > 1e-12)) stddev[i] = 1.0;
  }
  const Eigen::MatrixXd x = (centered.array().rowwise() / stddev.transpose().array()).matrix();

  std::array<LogisticClassifier, 2> feet;
  for (int foot = 0; foot < 2; ++foot) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i][foot] ? 1 : 0;
    int iters = 0;
    double gnorm = 0.0;
    try {
      feet[foot] = fit_logistic(x, y, config, &iters, &gnorm);
    } catch (const DataError& e) {
      throw DataError(std::string(foot == 0 ? "right" : "left") + " foot: " + e.what());
    }
    if (report) {
      report->iterations[foot] = iters;
      report->gradient_norm[foot] = gnorm;
      int correct = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        correct += (feet[foot].probability(x.row(i).transpose()) > 0.5) == (y[i] == 1);
      }
      report->train_accuracy[foot] = static_cast<double>(correct) / static_cast<double>(x.rows());
    }
  }
  return ContactModel(mean, stddev, feet, 0.5);
}

}  // namespace koopgait::sensors
