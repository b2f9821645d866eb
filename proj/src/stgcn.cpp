#include "koopgait/stgcn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <random>

#include <Eigen/Geometry>
#include <json.hpp>

#include "koopgait/error.hpp"

namespace koopgait::stgcn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Tensor::Tensor(int batch, int channels, int nodes, int frames) : shape_{batch, channels, nodes, frames} {
  if (batch < 0 || channels < 0 || nodes < 0 || frames < 0) throw ConfigError("negative tensor dimension");
  data_.assign(static_cast<std::size_t>(batch) * channels * nodes * frames, 0.0);
}

void Tensor::set_sample(int dst, const Tensor& other, int b) {
  if (other.channels() != channels() || other.nodes() != nodes() || other.frames() != frames()) {
    throw ConfigError("set_sample: tensor shapes differ");
  }
  const std::size_t stride = static_cast<std::size_t>(channels()) * nodes() * frames();
  std::copy_n(other.data_.begin() + b * stride, stride, data_.begin() + dst * stride);
}

Graph Graph::from_skeleton(const skeleton::SkeletonModel& model) {
  Graph g;
  g.num_nodes = skeleton::kNumJoints;
  g.root = model.root();
  for (const auto& l : model.links()) g.edges.emplace_back(l.parent, l.child);
  return g;
}

std::vector<int> hop_distances(const Graph& graph) {
  const int n = graph.num_nodes;
  if (n < 1 || graph.root < 0 || graph.root >= n) throw ConfigError("graph needs a root inside its node range");
  if (static_cast<int>(graph.edges.size()) != n - 1) throw ConfigError("graph is not a tree (edge count)");
  std::vector<std::vector<int>> adj(n);
  for (const auto& [a, b] : graph.edges) {
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw ConfigError("graph edge out of range");
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<int> hop(n, -1);
  std::queue<int> q;
  hop[graph.root] = 0;
  q.push(graph.root);
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int w : adj[v]) {
      if (hop[w] < 0) {
        hop[w] = hop[v] + 1;
        q.push(w);
      }
    }
  }
  if (std::ranges::any_of(hop, [](int h) { return h < 0; })) throw ConfigError("graph is not connected");
  return hop;
}

Eigen::MatrixXi partition_labels(const Graph& graph) {
  const auto hop = hop_distances(graph);
  Eigen::MatrixXi labels = Eigen::MatrixXi::Constant(graph.num_nodes, graph.num_nodes, -1);
  for (int i = 0; i < graph.num_nodes; ++i) labels(i, i) = 0;
  for (const auto& [a, b] : graph.edges) {
    labels(a, b) = hop[b] < hop[a] ? 1 : 2;
    labels(b, a) = hop[a] < hop[b] ? 1 : 2;
  }
  return labels;
}

PartitionTensors build_partitions(const Graph& graph, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("partition alpha must be positive");
  const Eigen::MatrixXi labels = partition_labels(graph);
  PartitionTensors p;
  p.alpha = alpha;
  for (int j = 0; j < kNumPartitions; ++j) {
    p.adjacency[j] = (labels.array() == j).cast<double>().matrix();
    p.degree[j] = p.adjacency[j].rowwise().sum().array() + alpha;
  }
  return p;
}

PartitionTensors build_partitions(const skeleton::SkeletonModel& model, double alpha) {
  return build_partitions(Graph::from_skeleton(model), alpha);
}

MatrixXd PartitionTensors::normalized(int j, const MatrixXd& mask) const {
  const VectorXd d = degree[j].array().rsqrt();
  return d.asDiagonal() * adjacency[j].cwiseProduct(mask) * d.asDiagonal();
}

namespace {

// Activations are stored as (B*T*N) x C matrices, rows ordered (b, t, n) with
// n fastest. A column-major reshape to N x (B*T*C) then exposes every frame's
// node dimension to a single matrix product.
MatrixXd to_rows(const Tensor& x) {
  const int b = x.batch(), c = x.channels(), n = x.nodes(), t = x.frames();
  MatrixXd m(static_cast<Eigen::Index>(b) * t * n, c);
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci)
      for (int ni = 0; ni < n; ++ni)
        for (int ti = 0; ti < t; ++ti) m((bi * t + ti) * n + ni, ci) = x(bi, ci, ni, ti);
  return m;
}

Tensor from_rows(const MatrixXd& m, int b, int n, int t) {
  Tensor x(b, static_cast<int>(m.cols()), n, t);
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < m.cols(); ++ci)
      for (int ni = 0; ni < n; ++ni)
        for (int ti = 0; ti < t; ++ti) x(bi, ci, ni, ti) = m((bi * t + ti) * n + ni, ci);
  return x;
}

Eigen::Map<MatrixXd> node_view(MatrixXd& m, int n) { return {m.data(), n, m.size() / n}; }
Eigen::Map<const MatrixXd> node_view(const MatrixXd& m, int n) { return {m.data(), n, m.size() / n}; }

MatrixXd spatial_forward(const MatrixXd& x, int n, const std::array<MatrixXd, kNumPartitions>& ahat,
                         const std::array<MatrixXd, kNumPartitions>& w, std::array<MatrixXd, kNumPartitions>* projected) {
  MatrixXd out = MatrixXd::Zero(x.rows(), w[0].cols());
  for (int j = 0; j < kNumPartitions; ++j) {
    MatrixXd y = x * w[j];
    node_view(out, n).noalias() += ahat[j] * node_view(y, n);
    if (projected) (*projected)[j] = std::move(y);
  }
  return out;
}

MatrixXd temporal_forward(const MatrixXd& x, int batch, int frames, int n, const MatrixXd& kernel,
                          const VectorXd& bias) {
  const int pad = static_cast<int>(kernel.rows()) / 2;
  const int tn = frames * n;
  MatrixXd out(x.rows(), x.cols());
  out.rowwise() = bias.transpose();
  for (int b = 0; b < batch; ++b) {
    for (int g = 0; g < kernel.rows(); ++g) {
      const int s = g - pad;
      const int t0 = std::max(0, -s);
      const int t1 = std::min(frames, frames - s);
      if (t1 <= t0) continue;
      const int count = (t1 - t0) * n;
      out.middleRows(b * tn + t0 * n, count).noalias() +=
          x.middleRows(b * tn + (t0 + s) * n, count) * kernel.row(g).asDiagonal();
    }
  }
  return out;
}

void check_input(const Tensor& x, int channels, int nodes) {
  if (x.channels() != channels || x.nodes() != nodes || x.batch() < 1 || x.frames() < 1) {
    throw ConfigError("input tensor shape does not match the model");
  }
}

}  // namespace

Tensor spatial_conv(const Tensor& input, const PartitionTensors& parts,
                    const std::array<MatrixXd, kNumPartitions>& weights, const MatrixXd& mask) {
  const int n = parts.nodes();
  if (input.nodes() != n || mask.rows() != n || mask.cols() != n) throw ConfigError("spatial_conv: node count mismatch");
  for (const auto& w : weights) {
    if (w.rows() != input.channels() || w.cols() != weights[0].cols()) {
      throw ConfigError("spatial_conv: weight shape mismatch");
    }
  }
  std::array<MatrixXd, kNumPartitions> ahat;
  for (int j = 0; j < kNumPartitions; ++j) ahat[j] = parts.normalized(j, mask);
  return from_rows(spatial_forward(to_rows(input), n, ahat, weights, nullptr), input.batch(), n, input.frames());
}

Tensor spatial_conv_reference(const Tensor& input, const Eigen::MatrixXi& labels,
                              const std::array<MatrixXd, kNumPartitions>& weights, const MatrixXd& mask,
                              double alpha) {
  const int n = input.nodes();
  const int c_out = static_cast<int>(weights[0].cols());
  // Lambda_l^ii: neighbors of i with label l, plus alpha.
  MatrixXd lambda = MatrixXd::Constant(n, kNumPartitions, alpha);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (labels(i, j) >= 0) lambda(i, labels(i, j)) += 1.0;

  Tensor out(input.batch(), c_out, n, input.frames());
  for (int b = 0; b < input.batch(); ++b) {
    for (int t = 0; t < input.frames(); ++t) {
      for (int i = 0; i < n; ++i) {
        VectorXd acc = VectorXd::Zero(c_out);
        for (int j = 0; j < n; ++j) {
          const int l = labels(i, j);
          if (l < 0) continue;
          const double z = std::sqrt(lambda(i, l) * lambda(j, l));
          VectorXd f(input.channels());
          for (int c = 0; c < input.channels(); ++c) f[c] = input(b, c, j, t);
          acc += (mask(i, j) / z) * (weights[l].transpose() * f);
        }
        for (int c = 0; c < c_out; ++c) out(b, c, i, t) = acc[c];
      }
    }
  }
  return out;
}

Tensor temporal_conv(const Tensor& input, const MatrixXd& kernel, const VectorXd& bias) {
  if (kernel.rows() % 2 == 0) throw ConfigError("temporal kernel size must be odd");
  if (kernel.cols() != input.channels() || bias.size() != input.channels()) {
    throw ConfigError("temporal kernel shape mismatch");
  }
  return from_rows(temporal_forward(to_rows(input), input.batch(), input.frames(), input.nodes(), kernel, bias),
                   input.batch(), input.nodes(), input.frames());
}

void StgcnConfig::validate() const {
  if (in_channels < 1 || channels.empty() || classes < 2) throw ConfigError("invalid ST-GCN channel plan");
  if (std::ranges::any_of(channels, [](int c) { return c < 1; })) throw ConfigError("invalid ST-GCN channel plan");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("temporal kernel size must be odd and positive");
  if (!(alpha > 0.0)) throw ConfigError("partition alpha must be positive");
}

std::vector<Eigen::Map<VectorXd>> StgcnParameters::views() {
  std::vector<Eigen::Map<VectorXd>> v;
  auto add = [&](auto& m) { v.emplace_back(m.data(), m.size()); };
  for (auto& l : layers) {
    for (auto& w : l.spatial) add(w);
    add(l.mask);
    add(l.temporal);
    add(l.bias);
  }
  add(fc_weight);
  add(fc_bias);
  return v;
}

std::vector<Eigen::Map<const VectorXd>> StgcnParameters::views() const {
  std::vector<Eigen::Map<const VectorXd>> v;
  auto add = [&](const auto& m) { v.emplace_back(m.data(), m.size()); };
  for (const auto& l : layers) {
    for (const auto& w : l.spatial) add(w);
    add(l.mask);
    add(l.temporal);
    add(l.bias);
  }
  add(fc_weight);
  add(fc_bias);
  return v;
}

StgcnParameters StgcnParameters::zeros_like() const {
  StgcnParameters z = *this;
  for (auto v : z.views()) v.setZero();
  return z;
}

StgcnModel::StgcnModel(StgcnConfig config, Graph graph, skeleton::NormalizationParams norm, std::uint64_t seed)
    : config_(std::move(config)), graph_(std::move(graph)), norm_(norm) {
  config_.validate();
  parts_ = build_partitions(graph_, config_.alpha);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto randn = [&](int r, int c, double scale) {
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
    return m;
  };
  const int n = graph_.num_nodes;
  int c_in = config_.in_channels;
  for (int c_out : config_.channels) {
    StLayer l;
    for (auto& w : l.spatial) w = randn(c_in, c_out, std::sqrt(2.0 / (kNumPartitions * c_in)));
    l.mask = MatrixXd::Ones(n, n);
    l.temporal = randn(config_.kernel, c_out, 0.1 / std::sqrt(config_.kernel));
    l.temporal.row(config_.kernel / 2).array() += 1.0;
    l.bias = VectorXd::Zero(c_out);
    params_.layers.push_back(std::move(l));
    c_in = c_out;
  }
  params_.fc_weight = randn(config_.classes, c_in, std::sqrt(1.0 / c_in));
  params_.fc_bias = VectorXd::Zero(config_.classes);
  input_mean_ = MatrixXd::Zero(config_.in_channels, n);
  input_stddev_ = MatrixXd::Ones(config_.in_channels, n);
}

void StgcnModel::set_input_standardization(MatrixXd mean, MatrixXd stddev) {
  if (mean.rows() != config_.in_channels || mean.cols() != graph_.num_nodes || stddev.rows() != mean.rows() ||
      stddev.cols() != mean.cols()) {
    throw ConfigError("input standardization must be C_in x N");
  }
  if (!(stddev.array() > 0.0).all()) throw ConfigError("input standard deviations must be positive");
  input_mean_ = std::move(mean);
  input_stddev_ = std::move(stddev);
}

MatrixXd StgcnModel::input_rows(const Tensor& input) const {
  MatrixXd x = to_rows(input);
  const int n = graph_.num_nodes;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int node = static_cast<int>(r % n);
    x.row(r) = (x.row(r) - input_mean_.col(node).transpose()).cwiseQuotient(input_stddev_.col(node).transpose());
  }
  return x;
}

MatrixXd softmax_rows(const MatrixXd& logits) {
  MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

namespace {

struct LayerCache {
  MatrixXd input;
  std::array<MatrixXd, kNumPartitions> projected;
  std::array<MatrixXd, kNumPartitions> ahat;
  MatrixXd spatial;
  MatrixXd pre_activation;
};

}  // namespace

MatrixXd StgcnModel::logits(const Tensor& input) const {
  check_input(input, config_.in_channels, graph_.num_nodes);
  const int n = graph_.num_nodes, b = input.batch(), t = input.frames();
  MatrixXd x = input_rows(input);
  for (const auto& l : params_.layers) {
    std::array<MatrixXd, kNumPartitions> ahat;
    for (int j = 0; j < kNumPartitions; ++j) ahat[j] = parts_.normalized(j, l.mask);
    x = temporal_forward(spatial_forward(x, n, ahat, l.spatial, nullptr), b, t, n, l.temporal, l.bias)
            .cwiseMax(0.0);
  }
  MatrixXd pooled(b, x.cols());
  for (int bi = 0; bi < b; ++bi) pooled.row(bi) = x.middleRows(bi * t * n, t * n).colwise().mean();
  return (pooled * params_.fc_weight.transpose()).rowwise() + params_.fc_bias.transpose();
}

MatrixXd StgcnModel::probabilities(const Tensor& input) const { return softmax_rows(logits(input)); }

double StgcnModel::loss(const Tensor& input, const std::vector<int>& labels, const VectorXd& class_weights,
                        StgcnParameters* grad, MatrixXd* probabilities) const {
  check_input(input, config_.in_channels, graph_.num_nodes);
  const int n = graph_.num_nodes, b = input.batch(), t = input.frames(), tn = t * n;
  if (static_cast<int>(labels.size()) != b) throw ConfigError("label count does not match batch size");
  if (class_weights.size() != config_.classes) throw ConfigError("class weight count does not match classes");

  std::vector<LayerCache> caches(params_.layers.size());
  MatrixXd x = input_rows(input);
  for (std::size_t li = 0; li < params_.layers.size(); ++li) {
    const auto& l = params_.layers[li];
    auto& c = caches[li];
    c.input = x;
    for (int j = 0; j < kNumPartitions; ++j) c.ahat[j] = parts_.normalized(j, l.mask);
    c.spatial = spatial_forward(x, n, c.ahat, l.spatial, &c.projected);
    c.pre_activation = temporal_forward(c.spatial, b, t, n, l.temporal, l.bias);
    x = c.pre_activation.cwiseMax(0.0);
  }
  MatrixXd pooled(b, x.cols());
  for (int bi = 0; bi < b; ++bi) pooled.row(bi) = x.middleRows(bi * tn, tn).colwise().mean();
  const MatrixXd logit = (pooled * params_.fc_weight.transpose()).rowwise() + params_.fc_bias.transpose();
  const MatrixXd p = softmax_rows(logit);
  if (probabilities) *probabilities = p;

  double total_weight = 0.0;
  double loss = 0.0;
  for (int bi = 0; bi < b; ++bi) {
    const int y = labels[bi];
    if (y < 0 || y >= config_.classes) throw ConfigError("class label out of range");
    total_weight += class_weights[y];
    loss -= class_weights[y] * std::log(std::max(p(bi, y), 1e-300));
  }
  if (!(total_weight > 0.0)) throw ConfigError("class weights of the batch sum to zero");
  loss /= total_weight;
  if (!grad) return loss;

  *grad = params_.zeros_like();
  MatrixXd dlogit = p;
  for (int bi = 0; bi < b; ++bi) {
    dlogit(bi, labels[bi]) -= 1.0;
    dlogit.row(bi) *= class_weights[labels[bi]] / total_weight;
  }
  grad->fc_weight = dlogit.transpose() * pooled;
  grad->fc_bias = dlogit.colwise().sum().transpose();
  const MatrixXd dpooled = dlogit * params_.fc_weight;

  MatrixXd dx(x.rows(), x.cols());
  for (int bi = 0; bi < b; ++bi) dx.middleRows(bi * tn, tn).rowwise() = dpooled.row(bi) / tn;

  for (int li = static_cast<int>(params_.layers.size()) - 1; li >= 0; --li) {
    const auto& l = params_.layers[li];
    const auto& c = caches[li];
    auto& g = grad->layers[li];
    // ReLU
    const MatrixXd dpre = dx.cwiseProduct((c.pre_activation.array() > 0.0).cast<double>().matrix());
    const MatrixXd& spatial = c.spatial;
    g.bias = dpre.colwise().sum().transpose();
    MatrixXd dspatial = MatrixXd::Zero(spatial.rows(), spatial.cols());
    const int pad = static_cast<int>(l.temporal.rows()) / 2;
    for (int bi = 0; bi < b; ++bi) {
      for (int gi = 0; gi < l.temporal.rows(); ++gi) {
        const int s = gi - pad;
        const int t0 = std::max(0, -s);
        const int t1 = std::min(t, t - s);
        if (t1 <= t0) continue;
        const int count = (t1 - t0) * n;
        const auto dst = dpre.middleRows(bi * tn + t0 * n, count);
        const auto src = spatial.middleRows(bi * tn + (t0 + s) * n, count);
        g.temporal.row(gi) += src.cwiseProduct(dst).colwise().sum();
        dspatial.middleRows(bi * tn + (t0 + s) * n, count).noalias() += dst * l.temporal.row(gi).asDiagonal();
      }
    }
    // Spatial conv.
    MatrixXd dinput = MatrixXd::Zero(c.input.rows(), c.input.cols());
    MatrixXd dahat(n, n);
    for (int j = 0; j < kNumPartitions; ++j) {
      MatrixXd dy(dspatial.rows(), dspatial.cols());
      node_view(dy, n).noalias() = c.ahat[j].transpose() * node_view(dspatial, n);
      g.spatial[j].noalias() = c.input.transpose() * dy;
      dinput.noalias() += dy * l.spatial[j].transpose();
      dahat.noalias() = node_view(dspatial, n) * node_view(c.projected[j], n).transpose();
      const VectorXd d = parts_.degree[j].array().rsqrt();
      g.mask += parts_.adjacency[j].cwiseProduct(d.asDiagonal() * dahat * d.asDiagonal());
    }
    dx = std::move(dinput);
  }
  return loss;
}

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(rm.data(), rm.data() + rm.size())}};
}

MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols) {
    throw DataError("ST-GCN weight payload has unexpected shape");
  }
  const auto v = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw DataError("ST-GCN weight payload has wrong length");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), rows,
                                                                                                   cols);
}

}  // namespace

std::string StgcnModel::to_json() const {
  nlohmann::json j;
  j["format"] = "koopgait-stgcn-model";
  j["version"] = 1;
  j["config"] = {{"in_channels", config_.in_channels}, {"channels", config_.channels},
                 {"kernel", config_.kernel},           {"classes", config_.classes},
                 {"alpha", config_.alpha},             {"layout", "row-major"}};
  std::vector<std::string> names;
  for (int c = 0; c < config_.classes; ++c) {
    names.emplace_back(c < kNumActivities ? std::string(activity_name(static_cast<Activity>(c)))
                                          : "class_" + std::to_string(c));
  }
  j["class_names"] = names;
  j["graph"] = {{"num_nodes", graph_.num_nodes}, {"root", graph_.root}, {"edges", graph_.edges}};
  j["normalization"] = {{"c_min", norm_.c_min()}, {"c_max", norm_.c_max()}};
  j["layers"] = nlohmann::json::array();
  for (const auto& l : params_.layers) {
    nlohmann::json lj;
    for (const auto& w : l.spatial) lj["spatial"].push_back(matrix_json(w));
    lj["mask"] = matrix_json(l.mask);
    lj["temporal_kernel"] = matrix_json(l.temporal);
    lj["temporal_bias"] = matrix_json(l.bias);
    j["layers"].push_back(lj);
  }
  j["fc"] = {{"weight", matrix_json(params_.fc_weight)}, {"bias", matrix_json(params_.fc_bias)}};
  j["input_standardization"] = {{"mean", matrix_json(input_mean_)}, {"stddev", matrix_json(input_stddev_)}};
  return j.dump();
}

StgcnModel StgcnModel::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "koopgait-stgcn-model") throw DataError("not an ST-GCN model file");
    if (j.at("version") != 1) throw DataError("unsupported ST-GCN model version");
    StgcnConfig cfg;
    const auto& c = j.at("config");
    cfg.in_channels = c.at("in_channels");
    cfg.channels = c.at("channels").get<std::vector<int>>();
    cfg.kernel = c.at("kernel");
    cfg.classes = c.at("classes");
    cfg.alpha = c.at("alpha");
    Graph g;
    g.num_nodes = j.at("graph").at("num_nodes");
    g.root = j.at("graph").at("root");
    g.edges = j.at("graph").at("edges").get<std::vector<std::pair<int, int>>>();
    const auto& nj = j.at("normalization");
    StgcnModel model(cfg, g, skeleton::NormalizationParams(nj.at("c_min"), nj.at("c_max")), 0);
    auto& p = model.params_;
    const auto& layers = j.at("layers");
    if (layers.size() != p.layers.size()) throw DataError("ST-GCN layer count does not match channel plan");
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto& l = p.layers[li];
      const auto& lj = layers[li];
      if (lj.at("spatial").size() != kNumPartitions) throw DataError("ST-GCN layer needs three spatial weights");
      for (int k = 0; k < kNumPartitions; ++k) {
        l.spatial[k] = matrix_from_json(lj.at("spatial")[k], l.spatial[k].rows(), l.spatial[k].cols());
      }
      l.mask = matrix_from_json(lj.at("mask"), l.mask.rows(), l.mask.cols());
      l.temporal = matrix_from_json(lj.at("temporal_kernel"), l.temporal.rows(), l.temporal.cols());
      l.bias = matrix_from_json(lj.at("temporal_bias"), l.bias.size(), 1);
    }
    p.fc_weight = matrix_from_json(j.at("fc").at("weight"), p.fc_weight.rows(), p.fc_weight.cols());
    p.fc_bias = matrix_from_json(j.at("fc").at("bias"), p.fc_bias.size(), 1);
    const auto& sj = j.at("input_standardization");
    model.set_input_standardization(matrix_from_json(sj.at("mean"), cfg.in_channels, g.num_nodes),
                                    matrix_from_json(sj.at("stddev"), cfg.in_channels, g.num_nodes));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ST-GCN model: ") + e.what());
  }
}

Tensor window_tensor(const std::vector<skeleton::JointSet>& frames, int k, const skeleton::NormalizationParams& norm) {
  if (frames.empty()) throw DataError("cannot build a window from an empty trajectory");
  const int last = static_cast<int>(frames.size()) - 1;
  if (k < 0 || k > last) throw DataError("window center out of range");
  Tensor w(1, 3, skeleton::kNumJoints, kWindowLength);
  for (int t = 0; t < kWindowLength; ++t) {
    const auto f = skeleton::normalize(frames[std::clamp(k + t - kHalfWindow, 0, last)], norm);
    for (int n = 0; n < skeleton::kNumJoints; ++n)
      for (int c = 0; c < 3; ++c) w(0, c, n, t) = f[n][c];
  }
  return w;
}

Tensor rotate_window(const Tensor& window, double angle, const skeleton::NormalizationParams& norm) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(angle, skeleton::kUp).toRotationMatrix();
  Tensor out = window;
  for (int b = 0; b < window.batch(); ++b) {
    for (int n = 0; n < window.nodes(); ++n) {
      for (int t = 0; t < window.frames(); ++t) {
        Eigen::Vector3d centered;
        for (int c = 0; c < 3; ++c) centered[c] = window(b, c, n, t) * norm.range() + norm.c_min();
        const Eigen::Vector3d rotated = r * centered;
        for (int c = 0; c < 3; ++c) out(b, c, n, t) = (rotated[c] - norm.c_min()) / norm.range();
      }
    }
  }
  return out;
}

std::vector<LabeledWindow> make_windows(const std::vector<skeleton::JointSet>& frames,
                                        const std::vector<Activity>& labels, const skeleton::NormalizationParams& norm,
                                        int stride) {
  if (frames.size() != labels.size()) throw DataError("frames and labels differ in length");
  if (stride < 1) throw ConfigError("window stride must be positive");
  std::vector<LabeledWindow> out;
  for (int k = 0; k < static_cast<int>(frames.size()); k += stride) {
    out.push_back({window_tensor(frames, k, norm), labels[k]});
  }
  return out;
}

skeleton::NormalizationParams window_normalization(const std::vector<std::vector<skeleton::JointSet>>& trajectories) {
  const int foot = skeleton::SkeletonModel::lower_body().right_foot();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& traj : trajectories) {
    for (const auto& f : traj) {
      for (int n = 0; n < skeleton::kNumJoints; ++n) {
        const Eigen::Vector3d c = f[n] - f[foot];
        const double horizontal = std::hypot(c.x(), c.z());
        lo = std::min({lo, c.y(), -horizontal});
        hi = std::max({hi, c.y(), horizontal});
      }
    }
  }
  if (!(hi > lo)) throw DataError("cannot derive window normalization from degenerate data");
  return {lo, hi};
}

namespace {

std::vector<int> predict(const StgcnModel& model, const std::vector<const Tensor*>& windows) {
  constexpr int kBatch = 64;
  std::vector<int> out;
  out.reserve(windows.size());
  for (std::size_t start = 0; start < windows.size(); start += kBatch) {
    const int count = static_cast<int>(std::min<std::size_t>(kBatch, windows.size() - start));
    const Tensor& first = *windows[start];
    Tensor batch(count, first.channels(), first.nodes(), first.frames());
    for (int i = 0; i < count; ++i) batch.set_sample(i, *windows[start + i], 0);
    const MatrixXd logits = model.logits(batch);
    for (int i = 0; i < count; ++i) {
      Eigen::Index arg;
      logits.row(i).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

double accuracy_of(const StgcnModel& model, const std::vector<LabeledWindow>& data, const std::vector<int>& idx,
                   Eigen::MatrixXi* confusion) {
  std::vector<const Tensor*> windows;
  for (int i : idx) windows.push_back(&data[i].window);
  const auto pred = predict(model, windows);
  const int k = model.config().classes;
  if (confusion) *confusion = Eigen::MatrixXi::Zero(k, k);
  int correct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int truth = static_cast<int>(data[idx[i]].label);
    correct += pred[i] == truth;
    if (confusion) (*confusion)(truth, pred[i]) += 1;
  }
  return idx.empty() ? 0.0 : static_cast<double>(correct) / idx.size();
}

}  // namespace

double accuracy(const StgcnModel& model, const std::vector<LabeledWindow>& data, Eigen::MatrixXi* confusion) {
  std::vector<int> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return accuracy_of(model, data, idx, confusion);
}

StgcnModel train(StgcnModel model, const std::vector<LabeledWindow>& data, const StgcnTrainingConfig& config,
                 StgcnTrainingReport* report) {
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0) || config.momentum < 0.0 ||
      config.momentum >= 1.0 || config.test_fraction < 0.0 || config.test_fraction >= 1.0 || config.rotations < 1) {
    throw ConfigError("invalid ST-GCN training configuration");
  }
  const int k = model.config().classes;
  std::vector<std::vector<int>> by_class(k);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int c = static_cast<int>(data[i].label);
    if (c >= k) throw DataError("window label exceeds the model's class count");
    by_class[c].push_back(static_cast<int>(i));
  }
  for (int c = 0; c < k; ++c) {
    if (by_class[c].empty()) {
      throw DataError("training data lacks class '" +
                      std::string(c < kNumActivities ? activity_name(static_cast<Activity>(c)) : "?") + "'");
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<int> train_idx;
  std::vector<int> test_idx;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    int n_test = static_cast<int>(std::lround(config.test_fraction * members.size()));
    if (config.test_fraction > 0.0 && members.size() > 1) n_test = std::max(n_test, 1);
    n_test = std::min<int>(n_test, static_cast<int>(members.size()) - 1);
    test_idx.insert(test_idx.end(), members.begin(), members.begin() + n_test);
    auto train_end = members.end();
    if (config.max_train_per_class > 0 && members.size() - n_test > static_cast<std::size_t>(config.max_train_per_class)) {
      train_end = members.begin() + n_test + config.max_train_per_class;
    }
    train_idx.insert(train_idx.end(), members.begin() + n_test, train_end);
  }

  if (config.standardize_inputs) {
    // Moments over every training window in every augmentation rotation.
    const auto& shape = data.front().window;
    const int c_in = shape.channels(), nodes = shape.nodes();
    MatrixXd sum = MatrixXd::Zero(c_in, nodes), sq = sum;
    double count = 0.0;
    for (int i : train_idx) {
      for (int r = 0; r < config.rotations; ++r) {
        const Tensor w = r == 0 ? data[i].window
                                : rotate_window(data[i].window, 2.0 * std::numbers::pi * r / config.rotations,
                                                model.normalization());
        for (int c = 0; c < c_in; ++c)
          for (int v = 0; v < nodes; ++v)
            for (int t = 0; t < w.frames(); ++t) {
              sum(c, v) += w(0, c, v, t);
              sq(c, v) += w(0, c, v, t) * w(0, c, v, t);
            }
        count += w.frames();
      }
    }
    const MatrixXd mean = sum / count;
    const MatrixXd var = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0);
    // Coordinates that never move (the anchor foot) keep unit scale.
    model.set_input_standardization(mean, var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-6 ? s : 1.0; }));
  }

  VectorXd counts = VectorXd::Zero(k);
  for (int i : train_idx) counts[static_cast<int>(data[i].label)] += 1.0;
  const VectorXd class_weights = (static_cast<double>(train_idx.size()) / k) * counts.cwiseInverse();

  StgcnParameters velocity = model.parameters().zeros_like();
  StgcnParameters grad;
  std::uniform_int_distribution<int> pick_rotation(0, config.rotations - 1);
  StgcnTrainingReport rep;
  rep.train_size = static_cast<int>(train_idx.size());
  rep.test_size = static_cast<int>(test_idx.size());
  const auto& first = data.front().window;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    const double lr = config.cosine_decay
                          ? 0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * (epoch - 1) / config.epochs))
                          : config.learning_rate;
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      const int count = static_cast<int>(std::min<std::size_t>(config.batch_size, train_idx.size() - start));
      Tensor batch(count, first.channels(), first.nodes(), first.frames());
      std::vector<int> labels(count);
      for (int i = 0; i < count; ++i) {
        const auto& w = data[train_idx[start + i]];
        const int rot = pick_rotation(rng);
        if (rot == 0) {
          batch.set_sample(i, w.window, 0);
        } else {
          batch.set_sample(i, rotate_window(w.window, 2.0 * std::numbers::pi * rot / config.rotations,
                                            model.normalization()),
                           0);
        }
        labels[i] = static_cast<int>(w.label);
      }
      MatrixXd probs;
      loss_sum += count * model.loss(batch, labels, class_weights, &grad, &probs);
      for (int i = 0; i < count; ++i) {
        Eigen::Index arg;
        probs.row(i).maxCoeff(&arg);
        correct += arg == labels[i];
      }
      auto p = model.parameters().views();
      auto v = velocity.views();
      const auto g = grad.views();
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = config.momentum * v[i] - lr * g[i];
        p[i] += v[i];
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = train_idx.empty() ? 0.0 : loss_sum / train_idx.size();
    rec.train_accuracy = train_idx.empty() ? 0.0 : static_cast<double>(correct) / train_idx.size();
    rec.test_accuracy = accuracy_of(model, data, test_idx, nullptr);
    rep.epochs.push_back(rec);
  }
  rep.test_accuracy = accuracy_of(model, data, test_idx, &rep.confusion);
  if (report) *report = std::move(rep);
  return model;
}

void write_training_csv(std::ostream& out, const StgcnTrainingReport& report) {
  out << "epoch,loss,train_accuracy,test_accuracy\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.loss << ',' << e.train_accuracy << ',' << e.test_accuracy << '\n';
  }
}

std::vector<Activity> classify_frames(const StgcnModel& model, const std::vector<skeleton::JointSet>& frames,
                                      const std::vector<int>& ks) {
  std::vector<Tensor> windows;
  windows.reserve(ks.size());
  for (int k : ks) windows.push_back(window_tensor(frames, k, model.normalization()));
  std::vector<const Tensor*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  std::vector<Activity> out;
  for (int c : predict(model, ptrs)) out.push_back(activity_from_index(c));
  return out;
}

Activity classify_frame(const StgcnModel& model, const std::vector<skeleton::JointSet>& frames, int k) {
  return classify_frames(model, frames, {k}).front();
}

}  // namespace koopgait::stgcn
