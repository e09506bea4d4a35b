#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earcan/features.hpp"

namespace earcan {

// Two conv layers over time, statistics pooling, linear projection,
// L2 normalization. Small enough that every gradient is hand-derived and
// checkable against finite differences.
struct NetConfig {
  std::size_t in_bands = 40;
  std::size_t conv1_ch = 32;
  std::size_t conv1_k = 5;
  std::size_t conv2_ch = 32;
  std::size_t conv2_k = 3;
  std::size_t emb_dim = 32;
  double var_eps = 1e-8;  // inside the pooling sqrt

  std::size_t receptive_span() const { return conv1_k + conv2_k - 1; }
};

// Tensor layouts (row-major):
//   conv1_w[(c*in_bands + i)*conv1_k + k]   conv1_b[c]
//   conv2_w[(c*conv1_ch + i)*conv2_k + k]   conv2_b[c]
//   proj_w[e*(2*conv2_ch) + j]              proj_b[e]
//   class_w[cls*emb_dim + e]                (rows unit-norm after every update)
struct NetParams {
  NetConfig cfg;
  std::size_t n_classes = 0;
  std::vector<double> conv1_w, conv1_b;
  std::vector<double> conv2_w, conv2_b;
  std::vector<double> proj_w, proj_b;
  std::vector<double> class_w;
};

struct Embedding {
  std::vector<double> v;  // unit L2 norm
};

NetParams init_net(std::uint64_t seed, const NetConfig& cfg, std::size_t n_classes);

// Mean and population-std over frames, concatenated. Order-invariant and
// invariant under duplicating the frame set.
std::vector<double> stats_pool(const std::vector<double>& h, std::size_t n_frames,
                               std::size_t n_ch, double var_eps);

Embedding forward(const NetParams& params, const FeatureMatrix& feats);

struct AamHyper {
  double scale = 30.0;
  double margin = 0.2;
};

struct AamResult {
  double loss = 0.0;
  std::vector<double> logits;
};

// Additive-angular-margin softmax on cosine logits.
AamResult aam_loss(const Embedding& emb, std::size_t label, const std::vector<double>& class_w,
                   std::size_t n_classes, const AamHyper& hyper);

struct NetGrads {
  std::vector<double> conv1_w, conv1_b;
  std::vector<double> conv2_w, conv2_b;
  std::vector<double> proj_w, proj_b;
  std::vector<double> class_w;

  void resize_like(const NetParams& p);
  void zero();
  void axpy(double a, const NetGrads& other);  // this += a * other
  void scale(double a);
};

// Analytic gradient of aam_loss(forward(feats)) w.r.t. every parameter;
// accumulates into grads. Optionally also fills d(loss)/d(feats).
double backward(const NetParams& params, const FeatureMatrix& feats, std::size_t label,
                const AamHyper& hyper, NetGrads& grads, std::vector<double>* input_grad = nullptr);

// Cosine-score head used by the watermark optimizer: returns
// dot(forward(feats), target) and its gradient w.r.t. the input features.
double cosine_score_backward(const NetParams& params, const FeatureMatrix& feats,
                             const std::vector<double>& target, std::vector<double>* input_grad);

struct TrainSample {
  FeatureMatrix feats;
  std::size_t label = 0;
};

struct TrainHyper {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 25;
  std::size_t batch = 16;
  AamHyper aam;
};

struct TrainResult {
  NetParams params;
  std::vector<double> epoch_loss;
};

// SGD with momentum over seeded shuffles; class rows renormalized after
// every update. Deterministic in (dataset order, seed).
TrainResult train(const std::vector<TrainSample>& dataset, const NetConfig& arch,
                  const TrainHyper& hyper, std::uint64_t seed);

// Versioned JSON checkpoint, tensors in declared order.
std::string checkpoint_to_json(const NetParams& params);
NetParams checkpoint_from_json(const std::string& text);

}  // namespace earcan
