#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "koopgait/activity.hpp"
#include "koopgait/fgcore.hpp"
#include "koopgait/skeleton.hpp"

namespace koopgait::koopman {

/// Coefficient vectors c in {0..n}^d, enumerated lexicographically with the
/// first component most significant.
class FourierBasis {
 public:
  FourierBasis(int dim, int order);

  int dim() const { return dim_; }
  int order() const { return order_; }
  int size() const { return static_cast<int>(coefficients_.cols()); }
  /// Length of the lifted vector: identity block plus one entry per function.
  int observable_size() const { return dim_ + size(); }
  /// d x (n+1)^d, one coefficient vector per column.
  const Eigen::MatrixXd& coefficients() const { return coefficients_; }

  static constexpr long kMaxFunctions = 1'000'000;

 private:
  int dim_;
  int order_;
  Eigen::MatrixXd coefficients_;
};

FourierBasis enumerate_basis(int dim, int order);

/// [x; cos(pi c_1^T x); ...].
Eigen::VectorXd eval_observables(const Eigen::VectorXd& x, const FourierBasis& basis);

/// d(observables)/dx: [I; -sin(pi c_m^T x) pi c_m^T].
Eigen::MatrixXd observables_jacobian(const Eigen::VectorXd& x, const FourierBasis& basis);

/// Accumulates the EDMD Gram matrices for one Koopman matrix.
class EdmdAccumulator {
 public:
  explicit EdmdAccumulator(const FourierBasis& basis);

  void add(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double weight = 1.0);
  /// Columns of `xs`/`ys` are samples.
  void add_batch(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys, const Eigen::VectorXd& weights);

  double sample_weight() const { return total_weight_; }
  long sample_count() const { return count_; }

  /// K = A (G + ridge I)^-1 with G and A the weighted sample averages; the
  /// ridge-regularized least-squares fit of Psi(y) ~ K Psi(x). Throws DataError for a singular Gram matrix.
  Eigen::MatrixXd solve(double ridge) const;

 private:
  const FourierBasis* basis_;
  Eigen::MatrixXd gram_;   // sum Psi(x) Psi(x)^T
  Eigen::MatrixXd cross_;  // sum Psi(y) Psi(x)^T
  double total_weight_ = 0.0;
  long count_ = 0;
};

/// Convenience wrapper over EdmdAccumulator.
Eigen::MatrixXd train_edmd(const std::vector<Eigen::VectorXd>& xs, const std::vector<Eigen::VectorXd>& ys,
                           const FourierBasis& basis, double ridge);

/// Per-activity Koopman matrices over per-coordinate 7-joint observables.
/// In shared mode one matrix per activity serves all three coordinates; in
/// per-coordinate mode there is one per (activity, axis).
class KoopmanBank {
 public:
  KoopmanBank(FourierBasis basis, skeleton::NormalizationParams norm, double ridge, bool per_coordinate);

  const FourierBasis& basis() const { return basis_; }
  const skeleton::NormalizationParams& normalization() const { return norm_; }
  double ridge() const { return ridge_; }
  bool per_coordinate() const { return per_coordinate_; }

  bool has(Activity a) const;
  void set(Activity a, std::vector<Eigen::MatrixXd> matrices);
  /// Matrix used for `axis` (0 x, 1 y, 2 z). Throws ConfigError if untrained.
  const Eigen::MatrixXd& matrix(Activity a, int axis) const;

  std::string to_json() const;
  static KoopmanBank from_json(const std::string& text);

 private:
  FourierBasis basis_;
  skeleton::NormalizationParams norm_;
  double ridge_;
  bool per_coordinate_;
  std::array<std::vector<Eigen::MatrixXd>, kNumActivities> matrices_;
};

/// One-step prediction: normalize on the right foot, lift each coordinate,
/// apply the first 7 rows of K, stack, and undo the normalization with the
/// same anchor.
skeleton::JointSet predict_next(const skeleton::JointSet& x, const KoopmanBank& bank, Activity activity);

struct KoopmanResidual {
  skeleton::Vector21 residual;  // joint-major
  Eigen::Matrix<double, 21, 21> d_state_k;   // columns: root, then rotations 0..5 (3 each)
  Eigen::Matrix<double, 21, 21> d_state_k1;
  Eigen::Matrix<double, 21, 6> d_lengths;
};

/// r = predict_next(x_k) - x_k+1 with Jacobians w.r.t. both keyframes' state
/// and the link lengths. The activity is a constant selector.
KoopmanResidual koopman_factor_residual(const skeleton::GaitState& sk, const skeleton::GaitState& sk1,
                                        const skeleton::LinkLengths& lengths, const KoopmanBank& bank,
                                        Activity activity);

class KoopmanFactor : public fg::Factor {
 public:
  KoopmanFactor(int keyframe, const KoopmanBank& bank, Activity activity, double sigma);
  void evaluate(const fg::Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

  int keyframe() const { return keyframe_; }
  Activity activity() const { return activity_; }
  void set_activity(Activity a) { activity_ = a; }

 private:
  int keyframe_;
  const KoopmanBank* bank_;
  Activity activity_;
};

/// A ground-truth or estimated trajectory with per-frame activity labels.
struct LabeledTrajectory {
  std::vector<skeleton::JointSet> frames;
  std::vector<Activity> labels;
};

struct KoopmanTrainingConfig {
  int order = 1;
  double ridge = 1e-8;
  int rotations = 24;  // original plus 23 copies at 15 degree steps
  bool per_coordinate = false;
};

/// Trains one matrix per activity present in the data. Pairs (x_k, x_k+1)
/// are both centered on x_k's right foot and labeled with x_k's activity.
KoopmanBank train_bank(const std::vector<LabeledTrajectory>& trajectories, const KoopmanTrainingConfig& config);

}  // namespace koopgait::koopman
