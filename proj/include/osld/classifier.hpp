#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "osld/embeddings.hpp"

namespace osld {

// Linear map in_dim -> N with bias; logits = W e + b.
struct ClassifierHead {
  std::size_t in_dim = 0;
  std::vector<std::string> class_order;
  std::vector<float> weight;  // N x in_dim, row-major
  std::vector<float> bias;    // N

  std::size_t classes() const { return class_order.size(); }
  bool operator==(const ClassifierHead&) const = default;
};

// W, b ~ U(-1/sqrt(in_dim), 1/sqrt(in_dim)).
ClassifierHead init_head(std::vector<std::string> class_order, std::size_t in_dim, std::uint64_t seed);

std::vector<double> logits(const ClassifierHead& head, std::span<const float> e);

struct HeadGradient {
  double loss = 0.0;
  std::vector<double> weight;
  std::vector<double> bias;
};

// Mean softmax cross-entropy of the rows of X against their labels.
HeadGradient ce_loss_and_grad(const ClassifierHead& head, const EmbeddingMatrix& X, std::span<const int> labels);

// First index of the maximum; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);
std::size_t predict_index(const ClassifierHead& head, std::span<const float> e);
const std::string& predict(const ClassifierHead& head, std::span<const float> e);

struct TrainConfig {
  std::string profile = "default";
  double learning_rate = 1e-2;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool hidden_layer = false;
  std::size_t hidden_width = 128;
  std::uint64_t seed = 0;

  // Optimizer values used for full encoder fine-tuning.
  static TrainConfig finetune_profile();
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> weight;  // out x in
  std::vector<float> bias;    // out

  bool operator==(const DenseLayer&) const = default;
};

// Optional identity-initialised projection, optional tanh hidden layer, then
// the linear head. The projection output is the representation that
// representation-level losses act on.
struct Network {
  std::optional<DenseLayer> projection;
  std::optional<DenseLayer> hidden;
  ClassifierHead head;

  std::size_t input_dim() const;
  std::size_t classes() const { return head.classes(); }
  const std::vector<std::string>& class_order() const { return head.class_order; }

  std::vector<double> representation(std::span<const float> e) const;
  std::vector<double> logits(std::span<const float> e) const;
  std::size_t predict_index(std::span<const float> e) const;

  void add_identity_projection();
  // Appends classes with freshly initialised head rows; existing rows are kept.
  void expand(const std::vector<std::string>& new_classes, std::uint64_t seed);

  bool operator==(const Network&) const = default;
};

Network make_network(std::vector<std::string> class_order, std::size_t input_dim, const TrainConfig& config);

// Loss on the representation of a batch. reps[b] belongs to X row rows[b];
// the hook fills grad (same shape as reps) and returns its loss value.
using RepresentationLoss = std::function<double(std::span<const std::size_t> rows,
                                                const std::vector<std::vector<double>>& reps,
                                                std::vector<std::vector<double>>& grad)>;

struct TrainOptions {
  bool train_projection = true;
  double aux_weight = 0.0;
  RepresentationLoss aux;
};

struct NetworkGradient {
  double loss = 0.0;
  double ce_loss = 0.0;
  double aux_loss = 0.0;
  // One entry per parameter tensor in Network parameter order.
  std::vector<std::vector<double>> tensors;
};

// Parameter tensors in fixed order: projection.weight, hidden.weight,
// hidden.bias, head.weight, head.bias (absent layers skipped).
std::vector<std::span<float>> parameter_tensors(Network& net);
std::vector<std::string> parameter_names(const Network& net);

NetworkGradient network_loss_and_grad(const Network& net, const EmbeddingMatrix& X, std::span<const std::size_t> rows,
                                      std::span<const int> labels, const TrainOptions& options);

struct TrainResult {
  std::vector<double> loss_curve;
  std::size_t steps = 0;
};

// Minibatch AdamW with linear warmup then a constant rate. Deterministic:
// each epoch's order comes from a seed-derived shuffle.
TrainResult train(Network& net, const EmbeddingMatrix& X, std::span<const int> labels, const TrainConfig& config,
                  const TrainOptions& options = {});

struct HeadTraining {
  ClassifierHead head;
  std::vector<double> loss_curve;
};
HeadTraining train(ClassifierHead head, const EmbeddingMatrix& X, std::span<const int> labels, const TrainConfig& config);

double accuracy(const Network& net, const EmbeddingMatrix& X, std::span<const int> labels);

inline constexpr char kCheckpointMagic[8] = {'O', 'S', 'L', 'D', 'H', 'E', 'D', '1'};

std::string serialize_network(const Network& net, const nlohmann::json& config_echo = {});
Network parse_network(std::string_view bytes, const std::string& source_name = "<memory>");
void write_network(const std::filesystem::path& path, const Network& net, const nlohmann::json& config_echo = {});
Network load_network(const std::filesystem::path& path);

}  // namespace osld
