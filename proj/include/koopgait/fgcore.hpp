#pragma once

#include <compare>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "koopgait/skeleton.hpp"

namespace koopgait::fg {

enum class VariableKind { RootPosition = 0, LinkRotation = 1, LinkLength = 2 };

/// Identifies one optimization variable. Lengths are window-global and carry
/// keyframe -1.
struct VariableKey {
  VariableKind kind;
  int keyframe;
  int link;

  static VariableKey root(int keyframe) { return {VariableKind::RootPosition, keyframe, -1}; }
  static VariableKey rotation(int keyframe, int link) { return {VariableKind::LinkRotation, keyframe, link}; }
  static VariableKey length(int link) { return {VariableKind::LinkLength, -1, link}; }

  int tangent_dim() const { return kind == VariableKind::LinkLength ? 1 : 3; }
  std::string str() const;

  auto operator<=>(const VariableKey&) const = default;
};

using Value = std::variant<Eigen::Vector3d, skeleton::Rotation, double>;

/// Assignment of values to variables.
class Values {
 public:
  void insert(const VariableKey& key, Value value);
  bool contains(const VariableKey& key) const { return values_.count(key) > 0; }
  void erase(const VariableKey& key) { values_.erase(key); }
  std::size_t size() const { return values_.size(); }

  const Eigen::Vector3d& position(const VariableKey& key) const;
  const skeleton::Rotation& rotation(const VariableKey& key) const;
  double length(const VariableKey& key) const;
  const Value& at(const VariableKey& key) const;

  /// Apply a tangent step: R Exp(d) for rotations, addition otherwise.
  void retract(const VariableKey& key, const Eigen::Ref<const Eigen::VectorXd>& delta);

  const std::map<VariableKey, Value>& entries() const { return values_; }

 private:
  std::map<VariableKey, Value> values_;
};

/// A weighted residual over a handful of variables. Cost contribution is
/// r^T W r with W the information matrix (inverse covariance).
class Factor {
 public:
  Factor(std::vector<VariableKey> keys, int residual_dim, Eigen::MatrixXd information, std::string name);
  virtual ~Factor() = default;

  const std::vector<VariableKey>& keys() const { return keys_; }
  int residual_dim() const { return residual_dim_; }
  const Eigen::MatrixXd& information() const { return information_; }
  const std::string& name() const { return name_; }

  /// Residual and, if requested, one Jacobian per key
  /// (residual_dim x tangent_dim of that key).
  virtual void evaluate(const Values& values, Eigen::VectorXd& residual,
                        std::vector<Eigen::MatrixXd>* jacobians) const = 0;

  /// Upper-triangular U with U^T U = information.
  const Eigen::MatrixXd& sqrt_information() const { return sqrt_information_; }

  void set_information(Eigen::MatrixXd information);

 private:
  std::vector<VariableKey> keys_;
  int residual_dim_;
  Eigen::MatrixXd information_;
  Eigen::MatrixXd sqrt_information_;
  std::string name_;
};

using FactorPtr = std::shared_ptr<Factor>;

/// Isotropic information matrix for standard deviation sigma.
Eigen::MatrixXd isotropic_information(int dim, double sigma);

class PositionPrior : public Factor {
 public:
  PositionPrior(VariableKey key, Eigen::Vector3d target, double sigma, std::string name = "position_prior");
  void evaluate(const Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  Eigen::Vector3d target_;
};

/// r = Log(target^T R).
class RotationPrior : public Factor {
 public:
  RotationPrior(VariableKey key, skeleton::Rotation target, double sigma, std::string name = "rotation_prior");
  void evaluate(const Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  skeleton::Rotation target_;
};

class LengthPrior : public Factor {
 public:
  LengthPrior(VariableKey key, double target, double sigma, std::string name = "length_prior");
  void evaluate(const Values& values, Eigen::VectorXd& residual,
                std::vector<Eigen::MatrixXd>* jacobians) const override;

 private:
  double target_;
};

/// Variables and factors of one estimation window.
class WindowGraph {
 public:
  void add_variable(const VariableKey& key);
  void add_factor(FactorPtr factor);

  /// Removes a keyframe's variables and every factor touching them.
  void remove_keyframe(int keyframe);
  /// Removes factors for which `pred` holds.
  template <typename Pred>
  void remove_factors_if(Pred pred) {
    std::erase_if(factors_, pred);
  }

  const std::vector<VariableKey>& variables() const { return variables_; }
  const std::vector<FactorPtr>& factors() const { return factors_; }
  bool has_variable(const VariableKey& key) const;

  /// Distinct keyframes present, ascending.
  std::vector<int> keyframes() const;
  int span() const { return static_cast<int>(keyframes().size()); }
  int tangent_dim() const;

  /// Throws ConfigError on a dangling key or a disconnected graph.
  void validate() const;

 private:
  std::vector<VariableKey> variables_;
  std::vector<FactorPtr> factors_;
};

/// Gauss-Newton normal equations H dx = b at the current estimate.
struct NormalSystem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;  // b = -J^T W r
  double cost = 0.0;
  std::map<VariableKey, int> offsets;
};

NormalSystem linearize(const WindowGraph& graph, const Values& estimate);
double total_cost(const WindowGraph& graph, const Values& estimate);

struct SolverConfig {
  int max_iterations = 50;
  double initial_damping = 1e-4;
  double damping_increase = 10.0;
  double damping_decrease = 0.1;
  double max_damping = 1e12;
  double cost_tolerance = 1e-12;  // relative decrease
  double step_tolerance = 1e-10;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double damping = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
  double gain_ratio = 0.0;
  double predicted_decrease = 0.0;
  double actual_decrease = 0.0;
};

struct SolveResult {
  Values estimate;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted steps
  std::string termination;
  std::vector<IterationRecord> report;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling. Rotations retract as
/// R Exp(d), positions and lengths additively.
SolveResult solve_lm(const WindowGraph& graph, const Values& initial, const SolverConfig& config);

/// CSV: iteration,cost,damping,step_norm
void write_iteration_csv(std::ostream& out, const std::vector<IterationRecord>& report);

/// Fixed-lag window: when full, the oldest keyframe is dropped and the new
/// oldest keyframe is pinned to its current estimate by unary priors.
class SlidingWindow {
 public:
  struct Anchoring {
    double position_sigma = 0.005;
    double rotation_sigma = 0.005;
  };

  struct Keyframe {
    int index = 0;
    Values initial;                // values for this keyframe's variables
    std::vector<FactorPtr> factors;
  };

  SlidingWindow(int capacity, Anchoring anchoring);

  /// Adds global variables (link lengths). Call before the first keyframe.
  void add_global(const VariableKey& key, const Value& initial);

  /// Appends a keyframe, dropping the oldest one first if at capacity.
  /// Returns the dropped keyframe's values.
  std::optional<Values> slide(Keyframe keyframe);

  /// Adds an extra factor to the current window.
  void add_factor(FactorPtr factor) { graph_.add_factor(std::move(factor)); }

  const WindowGraph& graph() const { return graph_; }
  const Values& estimate() const { return estimate_; }
  void set_estimate(Values values) { estimate_ = std::move(values); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  Anchoring anchoring_;
  WindowGraph graph_;
  Values estimate_;
};

}  // namespace koopgait::fg
