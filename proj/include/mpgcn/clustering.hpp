#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/graphs.hpp"
#include "mpgcn/kmeans.hpp"
#include "mpgcn/modelutil.hpp"
#include "mpgcn/optim.hpp"
#include "mpgcn/tape.hpp"

namespace mpgcn {

// --- configuration -------------------------------------------------------------

enum class Activation { Relu, Sigmoid, Identity };

struct ClusterTrainConfig {
  std::vector<std::size_t> widths{100, 100, 500, 16};  // encoder layer widths
  std::size_t k = 4;
  double alpha = 0.5;        // GCN/AE fusion coefficient
  int dof = 1;               // Student-t degrees of freedom
  double theta1 = 1.0;
  double theta2 = 0.5;
  double theta3 = 0.05;
  double learning_rate = 1e-3;
  int pretrain_epochs = 30;
  int epochs = 100;
  // Decoder output activation. Sigmoid suits (0,1)-valued features; unit-norm
  // adjacency rows sit deep in its flat region, where relu trains far faster.
  Activation ae_output = Activation::Sigmoid;
  std::uint64_t seed = 1;

  void validate() const {
    if (widths.empty()) throw ConfigError("clustering: empty layer widths");
    if (k == 0) throw ConfigError("clustering: k must be positive");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("clustering: alpha outside [0,1]");
    if (dof < 1) throw ConfigError("clustering: dof must be >= 1");
    if (theta1 < 0 || theta2 < 0 || theta3 < 0)
      throw ConfigError("clustering: loss weights must be non-negative");
  }
};

// --- models ----------------------------------------------------------------------

// Symmetric autoencoder; decoder widths mirror the encoder's. Hidden layers
// use ReLU and the decoder output a sigmoid unless overridden.
struct AutoencoderModel {
  std::size_t input_width = 0;
  std::vector<std::size_t> widths;
  Activation hidden_act = Activation::Relu;
  Activation output_act = Activation::Sigmoid;
  ParamSet params;  // enc{i}.w/b, dec{i}.w/b

  std::size_t layers() const { return widths.size(); }

  static AutoencoderModel init(std::size_t input_width, const std::vector<std::size_t>& widths,
                               Rng& rng) {
    AutoencoderModel m;
    m.input_width = input_width;
    m.widths = widths;
    std::size_t prev = input_width;
    for (std::size_t l = 0; l < widths.size(); ++l) {
      m.params.add("enc" + std::to_string(l + 1) + ".w", glorot({prev, widths[l]}, rng));
      m.params.add("enc" + std::to_string(l + 1) + ".b", Tensor({widths[l]}));
      prev = widths[l];
    }
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const std::size_t out = l + 1 < widths.size() ? widths[widths.size() - 2 - l] : input_width;
      m.params.add("dec" + std::to_string(l + 1) + ".w", glorot({prev, out}, rng));
      m.params.add("dec" + std::to_string(l + 1) + ".b", Tensor({out}));
      prev = out;
    }
    return m;
  }

  static Tensor glorot(Shape s, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
    return Tensor::random_uniform(std::move(s), rng, -bound, bound);
  }
};

// GCN branch whose layer widths mirror the encoder, plus a K-way softmax head.
struct GcnEncoderModel {
  std::size_t input_width = 0;
  std::vector<std::size_t> widths;
  std::size_t k = 0;
  double alpha = 0.5;
  ParamSet params;  // l{i}.w, head.w

  static GcnEncoderModel init(std::size_t input_width, const std::vector<std::size_t>& widths,
                              std::size_t k, double alpha, Rng& rng) {
    GcnEncoderModel m;
    m.input_width = input_width;
    m.widths = widths;
    m.k = k;
    m.alpha = alpha;
    std::size_t prev = input_width;
    for (std::size_t l = 0; l < widths.size(); ++l) {
      m.params.add("l" + std::to_string(l + 1) + ".w", AutoencoderModel::glorot({prev, widths[l]}, rng));
      prev = widths[l];
    }
    m.params.add("head.w", AutoencoderModel::glorot({prev, k}, rng));
    return m;
  }
};

struct ClusterAssignment {
  Tensor centers;  // K x d
  Tensor q;        // N x K soft assignment (Student-t)
  Tensor p;        // N x K sharpened target
  Tensor h;        // N x K GCN distribution
  int dof = 1;
  std::vector<int> labels;  // argmax_j h[i][j], ties to the lowest index
};

// --- plain (eager) operations ----------------------------------------------------

// L2-normalized sharing-stop adjacency rows, the clustering input features.
inline Tensor features_from_graph(const SharingStopGraph& g) {
  const std::size_t n = g.node_count();
  Tensor x({n, n});
  for (const auto& e : g.adjacency.entries()) x.at(e.row, e.col) = e.value;
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) norm += x.at(i, j) * x.at(i, j);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) x.at(i, j) /= norm;
  }
  return x;
}

inline SparseMatrix sparsify(const Tensor& x) {
  std::vector<SparseEntry> t;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (x.at(i, j) != 0.0) t.push_back({i, j, x.at(i, j)});
  return SparseMatrix::from_triplets(x.rows(), x.cols(), std::move(t));
}

struct AeForward {
  std::vector<Tensor> latents;  // Y^(1..L)
  Tensor reconstruction;        // X-hat
};

struct GcnForward {
  std::vector<Tensor> hidden;  // H^(1..L)
  Tensor h;                    // softmax head output, N x K
};

// Eq. 2: squared Frobenius distance over 2N.
inline double reconstruction_loss(const Tensor& x, const Tensor& xhat) {
  if (!x.same_shape(xhat)) throw ShapeError("reconstruction_loss: shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - xhat[i];
    s += d * d;
  }
  return s / (2.0 * static_cast<double>(x.rows()));
}

// Row-normalized Student-t kernel similarities (Eq. 6).
inline Tensor soft_assign(const Tensor& latents, const Tensor& centers, int dof) {
  if (latents.cols() != centers.cols())
    throw ShapeError("soft_assign: latent width " + std::to_string(latents.cols()) +
                     " vs center width " + std::to_string(centers.cols()));
  if (dof < 1) throw ContractError("soft_assign: dof must be >= 1");
  const std::size_t n = latents.rows(), k = centers.rows(), d = latents.cols();
  const double nd = static_cast<double>(dof);
  Tensor q({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double dist2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double v = latents.at(i, c) - centers.at(j, c);
        dist2 += v * v;
      }
      const double val = std::pow(1.0 + dist2 / nd, -(nd + 1.0) / 2.0);
      q.at(i, j) = val;
      row_sum += val;
    }
    for (std::size_t j = 0; j < k; ++j) q.at(i, j) /= row_sum;
  }
  return q;
}

// Eq. 7: squared, frequency-normalized, row-renormalized target distribution.
inline Tensor target_distribution(const Tensor& q) {
  const std::size_t n = q.rows(), k = q.cols();
  std::vector<double> freq(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) freq[j] += q.at(i, j) * q.at(i, j);
  for (double& f : freq) f = std::max(f, 1e-300);
  Tensor p({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p.at(i, j) = q.at(i, j) * q.at(i, j) / freq[j];
      row_sum += p.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) p.at(i, j) /= row_sum;
  }
  return p;
}

// KL(P||Q) with 0 log 0 = 0; Q clamped away from zero.
inline double kl_divergence(const Tensor& p, const Tensor& q) {
  if (!p.same_shape(q)) throw ShapeError("kl_divergence: shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-300)));
  }
  return s;
}

inline double max_rowsum_deviation(const Tensor& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m.at(i, j);
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

inline std::vector<int> argmax_labels(const Tensor& h) {
  std::vector<int> labels(h.rows(), 0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double best = h.at(i, 0);
    for (std::size_t j = 1; j < h.cols(); ++j)
      if (h.at(i, j) > best) {
        best = h.at(i, j);
        labels[i] = static_cast<int>(j);
      }
  }
  return labels;
}

// --- tape builders ----------------------------------------------------------------

namespace graphnodes {

using NodeId = Tape::NodeId;

struct AeNodes {
  std::vector<NodeId> latents;
  NodeId recon = 0;
};

inline NodeId apply_activation(Tape& t, NodeId x, Activation a) {
  switch (a) {
    case Activation::Relu:
      return t.relu(x);
    case Activation::Sigmoid:
      return t.sigmoid(x);
    case Activation::Identity:
      return x;
  }
  return x;
}

// Encoder/decoder stack. x_sparse, when provided, carries the first
// multiplication.
inline AeNodes build_ae(Tape& t, const AutoencoderModel& m, const std::vector<NodeId>& p,
                        NodeId x_dense, const SparseMatrix* x_sparse) {
  AeNodes out;
  const std::size_t L = m.layers();
  NodeId h = x_dense;
  for (std::size_t l = 0; l < L; ++l) {
    NodeId lin = (l == 0 && x_sparse) ? t.spmm(*x_sparse, p[2 * l])
                                      : t.matmul(h, p[2 * l]);
    h = apply_activation(t, t.bias_add(lin, p[2 * l + 1]), m.hidden_act);
    out.latents.push_back(h);
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t wi = 2 * L + 2 * l;
    NodeId lin = t.bias_add(t.matmul(h, p[wi]), p[wi + 1]);
    h = apply_activation(t, lin, l + 1 < L ? m.hidden_act : m.output_act);
  }
  out.recon = h;
  return out;
}

struct GcnNodes {
  std::vector<NodeId> hidden;
  NodeId h = 0;
};

// Eqs. 3-5 with the AE fusion of Eq. 4: layer 1 consumes X, deeper layers an
// alpha-blend of the previous GCN output and the matching AE latent; the head
// applies propagation, weight, then a row softmax.
inline GcnNodes build_gcn(Tape& t, const GcnEncoderModel& m, const std::vector<NodeId>& p,
                          const SparseMatrix& prop, NodeId x_dense, const SparseMatrix* x_sparse,
                          const std::vector<NodeId>& ae_latents) {
  GcnNodes out;
  const std::size_t L = m.widths.size();
  if (ae_latents.size() != L)
    throw ShapeError("gcn fusion: " + std::to_string(ae_latents.size()) + " AE latents for " +
                     std::to_string(L) + " layers");
  NodeId h = 0;
  for (std::size_t l = 0; l < L; ++l) {
    NodeId input;
    if (l == 0) {
      input = x_sparse ? t.spmm(*x_sparse, p[l]) : t.matmul(x_dense, p[l]);
      input = t.spmm(prop, input);
    } else {
      NodeId blend = t.add(t.scale(h, m.alpha), t.scale(ae_latents[l - 1], 1.0 - m.alpha));
      input = t.spmm(prop, t.matmul(blend, p[l]));
    }
    h = t.relu(input);
    out.hidden.push_back(h);
  }
  out.h = t.softmax_rows(t.spmm(prop, t.matmul(h, p[L])));
  return out;
}

// Eq. 6 composed from primitives: the row-normalized Student-t kernel equals a
// row softmax of the log-kernel. centers_t is the d x K parameter node.
inline NodeId build_soft_assign(Tape& t, NodeId latents, NodeId centers_t, int dof) {
  const std::size_t d = t.value(latents).cols();
  const std::size_t k = t.value(centers_t).cols();
  const double nd = static_cast<double>(dof);
  NodeId ones_d1 = t.constant(Tensor::ones({d, 1}));
  NodeId ones_1k = t.constant(Tensor::ones({1, k}));
  NodeId ones_1d = t.constant(Tensor::ones({1, d}));
  NodeId row_norms = t.matmul(t.matmul(t.square(latents), ones_d1), ones_1k);  // N x K
  NodeId col_norms = t.reshape(t.matmul(ones_1d, t.square(centers_t)), {k});   // K
  NodeId cross = t.matmul(latents, centers_t);                                 // N x K
  NodeId dist2 = t.bias_add(t.add(row_norms, t.scale(cross, -2.0)), col_norms);
  NodeId logkernel = t.scale(t.log(t.add_scalar(t.scale(dist2, 1.0 / nd), 1.0)),
                             -(nd + 1.0) / 2.0);
  return t.softmax_rows(logkernel);
}

// KL(P||Q) with P frozen: sum(P log P) - sum(P log Q).
inline NodeId build_kl_vs_const(Tape& t, const Tensor& p, NodeId q) {
  double plogp = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (p[i] > 0.0) plogp += p[i] * std::log(p[i]);
  NodeId logq = t.log(clamp_min(t, q, 1e-300));
  NodeId cross = t.sum(t.mul(t.constant(p), logq));
  return t.add_scalar(t.scale(cross, -1.0), plogp);
}

}  // namespace graphnodes

// --- public forward wrappers --------------------------------------------------------

inline AeForward ae_forward(const AutoencoderModel& m, const Tensor& x) {
  if (x.cols() != m.input_width)
    throw ShapeError("ae_forward: input width " + std::to_string(x.cols()) + " vs model " +
                     std::to_string(m.input_width));
  Tape t;
  auto p = graphnodes::register_params(t, m.params);
  auto nodes = graphnodes::build_ae(t, m, p, t.constant(x), nullptr);
  AeForward out;
  for (auto id : nodes.latents) out.latents.push_back(t.value(id));
  out.reconstruction = t.value(nodes.recon);
  return out;
}

inline GcnForward gcn_forward(const GcnEncoderModel& m, const NormalizedPropagation& prop,
                              const Tensor& x, const std::vector<Tensor>& ae_latents) {
  Tape t;
  auto p = graphnodes::register_params(t, m.params);
  std::vector<Tape::NodeId> lat;
  for (const auto& y : ae_latents) lat.push_back(t.constant(y));
  auto nodes = graphnodes::build_gcn(t, m, p, prop.matrix, t.constant(x), nullptr, lat);
  GcnForward out;
  for (auto id : nodes.hidden) out.hidden.push_back(t.value(id));
  out.h = t.value(nodes.h);
  return out;
}

// Joint loss value (Eq. 8) on given distributions; P is the constant target.
inline double joint_loss(const Tensor& x, const Tensor& xhat, const Tensor& p, const Tensor& q,
                         const Tensor& h, const ClusterTrainConfig& cfg) {
  return cfg.theta1 * reconstruction_loss(x, xhat) + cfg.theta2 * kl_divergence(p, q) +
         cfg.theta3 * kl_divergence(p, h);
}

// --- training --------------------------------------------------------------------------

struct ClusterTrainReport {
  std::vector<double> pretrain_loss;
  std::vector<double> joint_loss;
  std::vector<double> loss_l1, loss_l2, loss_l3;
  double max_rowsum_dev_q = 0.0;
  double max_rowsum_dev_p = 0.0;
  double max_rowsum_dev_h = 0.0;
};

struct ClusteringResult {
  AutoencoderModel ae;
  GcnEncoderModel gcn;
  Tensor centers_t;  // d x K (parameter layout)
  ClusterAssignment assignment;
  ClusterTrainReport report;
};

// The parameter stores centers column-wise (d x K); the public layout is K x d.
inline Tensor centers_from_param(const Tensor& centers_t) {
  Tensor c({centers_t.cols(), centers_t.rows()});
  for (std::size_t i = 0; i < centers_t.rows(); ++i)
    for (std::size_t j = 0; j < centers_t.cols(); ++j) c.at(j, i) = centers_t.at(i, j);
  return c;
}

// Pretrains the autoencoder on reconstruction alone, seeds the cluster
// centers with K-means on the bottleneck latents, then jointly trains the
// autoencoder, GCN, and centers on the three-term loss, recomputing the
// target distribution once per epoch.
inline ClusteringResult train_clustering(const SharingStopGraph& graph, const Tensor& x,
                                         const ClusterTrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = graph.node_count();
  if (x.rows() != n)
    throw ShapeError("train_clustering: feature rows " + std::to_string(x.rows()) +
                     " vs graph nodes " + std::to_string(n));
  if (cfg.k > n) throw ConfigError("train_clustering: k exceeds node count");

  auto prop = normalize(graph.adjacency);
  SparseMatrix xs = sparsify(x);

  ClusteringResult res;
  {
    Rng rng(sub_seed(cfg.seed, "ae-init"));
    res.ae = AutoencoderModel::init(x.cols(), cfg.widths, rng);
    res.ae.output_act = cfg.ae_output;
  }
  {
    Rng rng(sub_seed(cfg.seed, "gcn-init"));
    res.gcn = GcnEncoderModel::init(x.cols(), cfg.widths, cfg.k, cfg.alpha, rng);
  }

  // Stage 1: autoencoder pretraining on L1.
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    Tape t;
    auto p = graphnodes::register_params(t, res.ae.params);
    auto xc = t.constant(x);
    auto nodes = graphnodes::build_ae(t, res.ae, p, xc, &xs);
    auto loss = t.scale(t.sum(t.square(t.sub(nodes.recon, xc))), 1.0 / (2.0 * n));
    const double lv = t.value(loss)[0];
    if (!std::isfinite(lv))
      throw TrainingError("pretrain loss non-finite at epoch " + std::to_string(epoch));
    res.report.pretrain_loss.push_back(lv);
    t.backward(loss);
    std::vector<Tensor> grads;
    for (auto id : p) grads.push_back(t.grad(id));
    res.ae.params.apply_adam(grads, cfg.learning_rate);
  }

  // Stage 2: K-means on the bottleneck latents.
  {
    auto fwd = ae_forward(res.ae, x);
    auto km = kmeans_init(fwd.latents.back(), cfg.k, sub_seed(cfg.seed, "kmeans"));
    res.centers_t = Tensor({cfg.widths.back(), cfg.k});
    for (std::size_t j = 0; j < cfg.k; ++j)
      for (std::size_t c = 0; c < cfg.widths.back(); ++c)
        res.centers_t.at(c, j) = km.centers.at(j, c);
  }
  ParamSet center_param;
  center_param.add("centers", res.centers_t);

  // Stage 3: joint training on Eq. 8.
  Tensor p_target;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    {  // refresh the self-supervision target from the current Q
      auto fwd = ae_forward(res.ae, x);
      Tensor centers = centers_from_param(center_param.tensor(0));
      Tensor q = soft_assign(fwd.latents.back(), centers, cfg.dof);
      p_target = target_distribution(q);
      res.report.max_rowsum_dev_q =
          std::max(res.report.max_rowsum_dev_q, max_rowsum_deviation(q));
      res.report.max_rowsum_dev_p =
          std::max(res.report.max_rowsum_dev_p, max_rowsum_deviation(p_target));
    }
    Tape t;
    auto pa = graphnodes::register_params(t, res.ae.params);
    auto pg = graphnodes::register_params(t, res.gcn.params);
    auto pc = t.parameter(center_param.tensor(0));
    auto xc = t.constant(x);
    auto ae_nodes = graphnodes::build_ae(t, res.ae, pa, xc, &xs);
    auto gcn_nodes = graphnodes::build_gcn(t, res.gcn, pg, prop.matrix, xc, &xs, ae_nodes.latents);
    auto q_node = graphnodes::build_soft_assign(t, ae_nodes.latents.back(), pc, cfg.dof);
    auto l1 = t.scale(t.sum(t.square(t.sub(ae_nodes.recon, xc))), 1.0 / (2.0 * n));
    auto l2 = graphnodes::build_kl_vs_const(t, p_target, q_node);
    auto l3 = graphnodes::build_kl_vs_const(t, p_target, gcn_nodes.h);
    auto loss = t.add(t.add(t.scale(l1, cfg.theta1), t.scale(l2, cfg.theta2)),
                      t.scale(l3, cfg.theta3));
    const double lv = t.value(loss)[0];
    if (!std::isfinite(lv))
      throw TrainingError("joint loss non-finite at epoch " + std::to_string(epoch));
    res.report.joint_loss.push_back(lv);
    res.report.loss_l1.push_back(t.value(l1)[0]);
    res.report.loss_l2.push_back(t.value(l2)[0]);
    res.report.loss_l3.push_back(t.value(l3)[0]);
    res.report.max_rowsum_dev_h =
        std::max(res.report.max_rowsum_dev_h, max_rowsum_deviation(t.value(gcn_nodes.h)));

    t.backward(loss);
    std::vector<Tensor> ga, gg;
    for (auto id : pa) ga.push_back(t.grad(id));
    for (auto id : pg) gg.push_back(t.grad(id));
    res.ae.params.apply_adam(ga, cfg.learning_rate);
    res.gcn.params.apply_adam(gg, cfg.learning_rate);
    center_param.apply_adam({t.grad(pc)}, cfg.learning_rate);
  }
  res.centers_t = center_param.tensor(0);

  // Final assignment.
  auto fwd = ae_forward(res.ae, x);
  auto gcn_fwd = gcn_forward(res.gcn, prop, x, fwd.latents);
  ClusterAssignment& a = res.assignment;
  a.dof = cfg.dof;
  a.centers = centers_from_param(res.centers_t);
  a.q = soft_assign(fwd.latents.back(), a.centers, cfg.dof);
  a.p = target_distribution(a.q);
  a.h = gcn_fwd.h;
  a.labels = argmax_labels(a.h);
  return res;
}

// Disjoint passenger-id sets per pattern, in label order.
inline std::vector<std::set<std::string>> split_patterns(const PassengerStopProfile& profile,
                                                         const std::vector<std::string>& node_ids,
                                                         const std::vector<int>& labels) {
  if (node_ids.size() != labels.size())
    throw ContractError("split_patterns: label count does not match node count");
  std::map<std::string, int> by_card;
  for (std::size_t i = 0; i < node_ids.size(); ++i) by_card[node_ids[i]] = labels[i];
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::set<std::string>> groups(static_cast<std::size_t>(max_label) + 1);
  for (const auto& [card, boardings] : profile.passengers) {
    auto it = by_card.find(card);
    if (it == by_card.end())
      throw ContractError("split_patterns: profile passenger '" + card + "' lacks a label");
    groups[it->second].insert(card);
  }
  return groups;
}

}  // namespace mpgcn
