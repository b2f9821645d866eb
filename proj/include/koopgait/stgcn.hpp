#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "koopgait/activity.hpp"
#include "koopgait/skeleton.hpp"

namespace koopgait::stgcn {

inline constexpr int kWindowLength = 13;
inline constexpr int kHalfWindow = 6;
inline constexpr int kNumPartitions = 3;  // root, centripetal, centrifugal
inline constexpr double kDefaultAlpha = 0.001;

/// Dense [B, C, N, T] array.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int batch, int channels, int nodes, int frames);

  int batch() const { return shape_[0]; }
  int channels() const { return shape_[1]; }
  int nodes() const { return shape_[2]; }
  int frames() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }

  double& operator()(int b, int c, int n, int t) { return data_[index(b, c, n, t)]; }
  double operator()(int b, int c, int n, int t) const { return data_[index(b, c, n, t)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  /// Copies sample `b` of `other` into sample `dst` of this tensor.
  void set_sample(int dst, const Tensor& other, int b);

 private:
  std::size_t index(int b, int c, int n, int t) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + n) * shape_[3] + t;
  }

  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

/// Undirected tree with a designated root.
struct Graph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  int root = 0;

  static Graph from_skeleton(const skeleton::SkeletonModel& model);
};

struct PartitionTensors {
  std::array<Eigen::MatrixXd, kNumPartitions> adjacency;  // entries in {0, 1}
  std::array<Eigen::VectorXd, kNumPartitions> degree;     // row sums + alpha
  double alpha = kDefaultAlpha;

  int nodes() const { return static_cast<int>(adjacency[0].rows()); }
  /// Lambda^-1/2 (A_j .* M) Lambda^-1/2.
  Eigen::MatrixXd normalized(int j, const Eigen::MatrixXd& mask) const;
};

/// Hop distance from the root for each node. Throws ConfigError unless the
/// graph is a tree.
std::vector<int> hop_distances(const Graph& graph);

PartitionTensors build_partitions(const Graph& graph, double alpha = kDefaultAlpha);
PartitionTensors build_partitions(const skeleton::SkeletonModel& model, double alpha = kDefaultAlpha);

/// labels(i, j): partition of neighbor j seen from center i, -1 if j is not
/// in the neighbor set of i.
Eigen::MatrixXi partition_labels(const Graph& graph);

/// Sum over partitions of the normalized adjacency applied per frame, times W_j.
/// `weights[j]` is C_in x C_out; `mask` is N x N.
Tensor spatial_conv(const Tensor& input, const PartitionTensors& parts,
                    const std::array<Eigen::MatrixXd, kNumPartitions>& weights, const Eigen::MatrixXd& mask);

/// Node-by-node form: f_out(v_i) = sum_j M_ij / Z_ij f_in(v_j) W_l(i,j), with
/// Z_ij = sqrt(Lambda_l^ii Lambda_l^jj). For small graphs (oracle use).
Tensor spatial_conv_reference(const Tensor& input, const Eigen::MatrixXi& labels,
                              const std::array<Eigen::MatrixXd, kNumPartitions>& weights, const Eigen::MatrixXd& mask,
                              double alpha = kDefaultAlpha);

/// Depthwise temporal filter: out[t] = bias + sum_g kernel(g) in[t + g - (G-1)/2],
/// zero padded. `kernel` is G x C.
Tensor temporal_conv(const Tensor& input, const Eigen::MatrixXd& kernel, const Eigen::VectorXd& bias);

struct StgcnConfig {
  int in_channels = 3;
  std::vector<int> channels{128, 256};
  int kernel = 7;
  int classes = kNumActivities;
  double alpha = kDefaultAlpha;

  void validate() const;
};

struct StLayer {
  std::array<Eigen::MatrixXd, kNumPartitions> spatial;  // C_in x C_out
  Eigen::MatrixXd mask;                                 // N x N
  Eigen::MatrixXd temporal;                             // G x C_out
  Eigen::VectorXd bias;                                 // C_out
};

struct StgcnParameters {
  std::vector<StLayer> layers;
  Eigen::MatrixXd fc_weight;  // classes x C_last
  Eigen::VectorXd fc_bias;

  /// Flat views of every parameter array, in a fixed order.
  std::vector<Eigen::Map<Eigen::VectorXd>> views();
  std::vector<Eigen::Map<const Eigen::VectorXd>> views() const;
  /// Same shapes, all zero.
  StgcnParameters zeros_like() const;
};

class StgcnModel {
 public:
  /// Random initialization; masks start at one.
  StgcnModel(StgcnConfig config, Graph graph, skeleton::NormalizationParams norm, std::uint64_t seed);

  const StgcnConfig& config() const { return config_; }
  const Graph& graph() const { return graph_; }
  const PartitionTensors& partitions() const { return parts_; }
  const skeleton::NormalizationParams& normalization() const { return norm_; }
  StgcnParameters& parameters() { return params_; }
  const StgcnParameters& parameters() const { return params_; }

  /// Fixed affine map applied to the input, (x - mean) / stddev per channel
  /// and node (C_in x N each). Defaults to the identity.
  void set_input_standardization(Eigen::MatrixXd mean, Eigen::MatrixXd stddev);
  const Eigen::MatrixXd& input_mean() const { return input_mean_; }
  const Eigen::MatrixXd& input_stddev() const { return input_stddev_; }

  /// B x classes.
  Eigen::MatrixXd logits(const Tensor& input) const;
  /// Row-wise softmax of the logits.
  Eigen::MatrixXd probabilities(const Tensor& input) const;

  /// Class-weighted mean cross-entropy; fills `grad` (same layout as
  /// parameters()) and the softmax output when non-null.
  double loss(const Tensor& input, const std::vector<int>& labels, const Eigen::VectorXd& class_weights,
              StgcnParameters* grad, Eigen::MatrixXd* probabilities = nullptr) const;

  std::string to_json() const;
  static StgcnModel from_json(const std::string& text);

 private:
  StgcnConfig config_;
  Graph graph_;
  PartitionTensors parts_;
  skeleton::NormalizationParams norm_;
  StgcnParameters params_;
  Eigen::MatrixXd input_mean_;
  Eigen::MatrixXd input_stddev_;

  Eigen::MatrixXd input_rows(const Tensor& input) const;
};

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

/// Normalized [1, 3, 7, 13] window centered on frame k with edge replication.
Tensor window_tensor(const std::vector<skeleton::JointSet>& frames, int k, const skeleton::NormalizationParams& norm);

/// Rotates a normalized window about the vertical through the anchor.
Tensor rotate_window(const Tensor& window, double angle, const skeleton::NormalizationParams& norm);

struct LabeledWindow {
  Tensor window;  // [1, 3, 7, 13]
  Activity label = Activity::Standing;
};

/// One window per frame (or every `stride`-th frame).
std::vector<LabeledWindow> make_windows(const std::vector<skeleton::JointSet>& frames,
                                        const std::vector<Activity>& labels, const skeleton::NormalizationParams& norm,
                                        int stride = 1);

/// Min/max of right-foot-centered coordinates, padded to cover rotations
/// about the vertical.
skeleton::NormalizationParams window_normalization(const std::vector<std::vector<skeleton::JointSet>>& trajectories);

struct StgcnTrainingConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double test_fraction = 0.2;
  int rotations = 8;                // augmentation copies about the vertical
  int max_train_per_class = 0;      // 0: use every training window
  bool standardize_inputs = true;   // fit the input standardization on the training split
  bool cosine_decay = true;         // anneal the step to zero over the epochs
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct StgcnTrainingReport {
  std::vector<EpochRecord> epochs;
  double test_accuracy = 0.0;
  Eigen::MatrixXi confusion;  // rows truth, columns prediction (test split)
  int train_size = 0;
  int test_size = 0;
};

/// Stratified train/test split, momentum SGD on the class-weighted loss.
/// Throws DataError unless every class is present.
StgcnModel train(StgcnModel model, const std::vector<LabeledWindow>& data, const StgcnTrainingConfig& config,
                 StgcnTrainingReport* report = nullptr);

/// CSV: epoch,loss,train_accuracy,test_accuracy
void write_training_csv(std::ostream& out, const StgcnTrainingReport& report);

double accuracy(const StgcnModel& model, const std::vector<LabeledWindow>& data, Eigen::MatrixXi* confusion = nullptr);

Activity classify_frame(const StgcnModel& model, const std::vector<skeleton::JointSet>& frames, int k);
/// Batched classify_frame.
std::vector<Activity> classify_frames(const StgcnModel& model, const std::vector<skeleton::JointSet>& frames,
                                      const std::vector<int>& ks);

}  // namespace koopgait::stgcn
